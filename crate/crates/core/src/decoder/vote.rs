//! Majority voting across the K samples of one chunk.

use std::borrow::Cow;
use std::collections::HashMap;

use super::GroundedEntity;

/// `(type_path, collapsed value, identifiers)`; groups carry no value.
pub type EntityKey = (Vec<String>, Option<String>, Vec<String>);

/// Borrowed form of [`EntityKey`] used while tallying.
type KeyRef<'a> = (&'a [String], Option<Cow<'a, str>>, Vec<&'a str>);

fn collapsed(s: &str) -> Cow<'_, str> {
    let clean = !s.starts_with(char::is_whitespace)
        && !s.ends_with(char::is_whitespace)
        && !s.contains(|c: char| c.is_whitespace() && c != ' ')
        && !s.contains("  ");
    if clean {
        Cow::Borrowed(s)
    } else {
        Cow::Owned(crate::document::collapse_whitespace(s))
    }
}

fn key_ref(e: &GroundedEntity) -> KeyRef<'_> {
    (
        &e.type_path,
        e.value_text.as_deref().map(collapsed),
        e.segment_refs.iter().map(|r| r.identifier.as_str()).collect(),
    )
}

fn key(e: &GroundedEntity) -> EntityKey {
    let (path, value, ids) = key_ref(e);
    (path.to_vec(), value.map(Cow::into_owned), ids.into_iter().map(str::to_string).collect())
}

fn argmax_lowest(votes: &[usize]) -> usize {
    let mut best = 0;
    for (i, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = i;
        }
    }
    best
}

/// Index of the winning candidate list. Each candidate scores one vote per
/// other candidate equal to it; ties go to the lowest index.
///
/// Returns 0 for an empty slice.
pub fn majority_vote_leaf(candidates: &[Vec<GroundedEntity>]) -> usize {
    let keys: Vec<Vec<KeyRef>> = candidates.iter().map(|c| c.iter().map(key_ref).collect()).collect();
    let mut votes = vec![0usize; keys.len()];
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            if keys[i] == keys[j] {
                votes[i] += 1;
                votes[j] += 1;
            }
        }
    }
    argmax_lowest(&votes)
}

/// Every node of every tree, as keys.
pub fn flatten_keys(trees: &[GroundedEntity]) -> Vec<EntityKey> {
    fn walk(e: &GroundedEntity, out: &mut Vec<EntityKey>) {
        out.push(key(e));
        for c in &e.children {
            walk(c, out);
        }
    }
    let mut out = Vec::new();
    for t in trees {
        walk(t, &mut out);
    }
    out
}

/// Index of the sample whose trees share the most flattened nodes with the
/// other samples, counted as multiset intersections; ties go to the lowest
/// index.
///
/// Returns 0 for an empty slice.
pub fn majority_vote_hierarchical(candidates: &[Vec<GroundedEntity>]) -> usize {
    fn walk<'a>(e: &'a GroundedEntity, bag: &mut HashMap<KeyRef<'a>, usize>) {
        *bag.entry(key_ref(e)).or_insert(0) += 1;
        for c in &e.children {
            walk(c, bag);
        }
    }
    let bags: Vec<HashMap<KeyRef, usize>> = candidates
        .iter()
        .map(|c| {
            let mut m = HashMap::new();
            c.iter().for_each(|e| walk(e, &mut m));
            m
        })
        .collect();
    let overlap = |a: &HashMap<KeyRef, usize>, b: &HashMap<KeyRef, usize>| -> usize {
        a.iter().map(|(k, n)| (*n).min(b.get(k).copied().unwrap_or(0))).sum()
    };
    let mut votes = vec![0usize; bags.len()];
    for i in 0..bags.len() {
        for j in i + 1..bags.len() {
            let o = overlap(&bags[i], &bags[j]);
            votes[i] += o;
            votes[j] += o;
        }
    }
    argmax_lowest(&votes)
}
