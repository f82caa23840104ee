use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::geometry::{union_area, BoundingBox};
use crate::schema::ExtractionSchema;

use super::{normalize, EvalDocument, EvalEntity, EvalError};

pub const METRIC_LABEL: &str = "internal metric";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMatching {
    /// Predictions claim the first equal unclaimed gold group, in order.
    #[default]
    Greedy,
    /// Maximum one-to-one matching.
    Optimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    pub case_sensitive: bool,
    pub grouping: GroupMatching,
    /// A box is localized when strictly more than this share of it is covered.
    pub coverage_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self { case_sensitive: true, grouping: GroupMatching::Greedy, coverage_threshold: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRow {
    pub type_path: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupCounts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl GroupCounts {
    pub fn f1(&self) -> f64 {
        if self.predicted + self.gold == 0 {
            return 1.0;
        }
        2.0 * self.matched as f64 / (self.predicted + self.gold) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    /// `None` when no entity was both correct and localizable.
    pub accuracy: Option<f64>,
    pub n_e: usize,
    pub n_el: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub documents: usize,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub per_type: Vec<TypeRow>,
    pub group_f1: BTreeMap<String, f64>,
    pub localization: LocalizationReport,
}

/// Precision, recall and F1. With nothing predicted and nothing expected
/// all three are 1; otherwise 0/0 is 0.
pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    if tp + fp + fn_ == 0 {
        return (1.0, 1.0, 1.0);
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Documents paired by id; a side missing a document contributes nothing.
fn pair_docs<'a>(
    preds: &'a [EvalDocument],
    gold: &'a [EvalDocument],
) -> Vec<(Option<&'a EvalDocument>, Option<&'a EvalDocument>)> {
    let mut ids: Vec<&str> = gold.iter().map(|d| d.doc_id.as_str()).collect();
    for p in preds {
        if !ids.contains(&p.doc_id.as_str()) {
            ids.push(&p.doc_id);
        }
    }
    ids.into_iter()
        .map(|id| (preds.iter().find(|d| d.doc_id == id), gold.iter().find(|d| d.doc_id == id)))
        .collect()
}

fn leaf_bag(doc: Option<&EvalDocument>, path: &[String], cs: bool) -> HashMap<String, usize> {
    let mut bag = HashMap::new();
    for l in doc.into_iter().flat_map(|d| d.leaves()) {
        if l.type_path == path {
            *bag.entry(normalize(l.text.as_deref().unwrap_or(""), cs)).or_insert(0) += 1;
        }
    }
    bag
}

fn check_paths(docs: &[EvalDocument], schema: &ExtractionSchema) -> Result<(), EvalError> {
    let paths = schema.leaf_paths();
    for d in docs {
        for l in d.leaves() {
            if !paths.contains(&l.type_path) {
                return Err(EvalError::SchemaMismatch {
                    doc_id: d.doc_id.clone(),
                    detail: format!("{:?} is not a leaf type", l.type_path),
                });
            }
        }
    }
    Ok(())
}

/// Leaf entities matched per type path as multisets of normalized text.
pub fn micro_f1(
    preds: &[EvalDocument],
    gold: &[EvalDocument],
    schema: &ExtractionSchema,
    config: &MatchConfig,
) -> Result<(usize, usize, usize, Vec<TypeRow>), EvalError> {
    check_paths(preds, schema)?;
    check_paths(gold, schema)?;
    let pairs = pair_docs(preds, gold);
    let mut rows = Vec::new();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for path in schema.leaf_paths() {
        let (mut t, mut f, mut n) = (0, 0, 0);
        for (p, g) in &pairs {
            let pb = leaf_bag(*p, &path, config.case_sensitive);
            let gb = leaf_bag(*g, &path, config.case_sensitive);
            let hit: usize = pb.iter().map(|(k, c)| (*c).min(gb.get(k).copied().unwrap_or(0))).sum();
            t += hit;
            f += pb.values().sum::<usize>() - hit;
            n += gb.values().sum::<usize>() - hit;
        }
        let (precision, recall, f1) = prf(t, f, n);
        rows.push(TypeRow { type_path: path.join("."), tp: t, fp: f, fn_: n, precision, recall, f1 });
        tp += t;
        fp += f;
        fn_ += n;
    }
    Ok((tp, fp, fn_, rows))
}

type Signature = Vec<(Vec<String>, String)>;

fn signature(e: &EvalEntity, cs: bool) -> Signature {
    let mut s: Signature =
        e.leaves().iter().map(|l| (l.type_path.clone(), normalize(l.text.as_deref().unwrap_or(""), cs))).collect();
    s.sort();
    s
}

/// Group matching for one hierarchical root: two groups match when their
/// leaf multisets are equal.
pub fn group_f1(root: &str, preds: &[EvalDocument], gold: &[EvalDocument], config: &MatchConfig) -> GroupCounts {
    let mut counts = GroupCounts::default();
    for (p, g) in pair_docs(preds, gold) {
        let sigs = |d: Option<&EvalDocument>| -> Vec<Signature> {
            d.into_iter()
                .flat_map(|d| &d.entities)
                .filter(|e| e.type_path.len() == 1 && e.type_path[0] == root && e.text.is_none())
                .map(|e| signature(e, config.case_sensitive))
                .collect()
        };
        let (ps, gs) = (sigs(p), sigs(g));
        counts.predicted += ps.len();
        counts.gold += gs.len();
        counts.matched += match config.grouping {
            GroupMatching::Greedy => {
                let mut used = vec![false; gs.len()];
                ps.iter()
                    .filter(|s| match (0..gs.len()).find(|&j| !used[j] && &gs[j] == *s) {
                        Some(j) => {
                            used[j] = true;
                            true
                        }
                        None => false,
                    })
                    .count()
            }
            GroupMatching::Optimal => {
                // group equality is an equivalence, so the maximum matching
                // pairs min(pred, gold) members of every class
                let mut classes: HashMap<&Signature, (usize, usize)> = HashMap::new();
                for s in &ps {
                    classes.entry(s).or_default().0 += 1;
                }
                for s in &gs {
                    classes.entry(s).or_default().1 += 1;
                }
                classes.values().map(|(a, b)| (*a).min(*b)).sum()
            }
        };
    }
    counts
}

/// Share of `pred` covered by the union of `gold` must exceed `threshold`.
/// A degenerate box is judged by its center point.
pub fn is_localized(pred: &BoundingBox, gold: &[BoundingBox], threshold: f64) -> bool {
    let area = pred.area();
    if area <= 0.0 {
        return gold.iter().any(|g| g.contains_point(pred.x_center(), pred.y_center()));
    }
    let clipped: Vec<BoundingBox> = gold.iter().filter_map(|g| g.intersection(pred)).collect();
    union_area(&clipped) / area > threshold
}

/// Correct leaves (same type path and normalized text, paired in order) whose
/// gold side carries line boxes enter the denominator; those whose predicted
/// box is covered enter the numerator.
pub fn localization_accuracy(preds: &[EvalDocument], gold: &[EvalDocument], config: &MatchConfig) -> LocalizationReport {
    let (mut n_e, mut n_el) = (0, 0);
    for (p, g) in pair_docs(preds, gold) {
        let (Some(p), Some(g)) = (p, g) else { continue };
        let gold_leaves = g.leaves();
        let mut used = vec![false; gold_leaves.len()];
        let key = |e: &EvalEntity| (e.type_path.clone(), normalize(e.text.as_deref().unwrap_or(""), config.case_sensitive));
        for pl in p.leaves() {
            let k = key(pl);
            let Some(j) = (0..gold_leaves.len()).find(|&j| !used[j] && key(gold_leaves[j]) == k) else { continue };
            used[j] = true;
            let gl = gold_leaves[j];
            if gl.boxes.is_empty() {
                continue;
            }
            n_e += 1;
            if pl.page == gl.page && pl.boxes.first().is_some_and(|b| is_localized(b, &gl.boxes, config.coverage_threshold)) {
                n_el += 1;
            }
        }
    }
    LocalizationReport { accuracy: (n_e > 0).then(|| n_el as f64 / n_e as f64), n_e, n_el }
}

/// Full report: micro-F1 with per-type rows, group F1 per hierarchical root
/// and localization accuracy.
pub fn evaluate(
    preds: &[EvalDocument],
    gold: &[EvalDocument],
    schema: &ExtractionSchema,
    config: &MatchConfig,
) -> Result<MetricsReport, EvalError> {
    let (tp, fp, fn_, per_type) = micro_f1(preds, gold, schema, config)?;
    let (micro_precision, micro_recall, micro_f1) = prf(tp, fp, fn_);
    let group_f1 = schema
        .roots
        .iter()
        .filter(|r| !r.is_leaf())
        .map(|r| (r.name.clone(), group_f1(&r.name, preds, gold, config).f1()))
        .collect();
    Ok(MetricsReport {
        label: METRIC_LABEL.to_string(),
        documents: pair_docs(preds, gold).len(),
        micro_precision,
        micro_recall,
        micro_f1,
        tp,
        fp,
        fn_,
        per_type,
        group_f1,
        localization: localization_accuracy(preds, gold, config),
    })
}

impl MetricsReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "# {} over {} documents\nmicro  P {:.4}  R {:.4}  F1 {:.4}  (tp {} fp {} fn {})\n",
            self.label, self.documents, self.micro_precision, self.micro_recall, self.micro_f1, self.tp, self.fp, self.fn_
        );
        let w = self.per_type.iter().map(|r| r.type_path.len()).max().unwrap_or(4).max(4);
        out.push_str(&format!("{:<w$}  {:>6}  {:>6}  {:>6}  {:>4}  {:>4}  {:>4}\n", "type", "P", "R", "F1", "tp", "fp", "fn"));
        for r in &self.per_type {
            out.push_str(&format!(
                "{:<w$}  {:>6.4}  {:>6.4}  {:>6.4}  {:>4}  {:>4}  {:>4}\n",
                r.type_path, r.precision, r.recall, r.f1, r.tp, r.fp, r.fn_
            ));
        }
        for (root, f1) in &self.group_f1 {
            out.push_str(&format!("group F1 {root}: {f1:.4}\n"));
        }
        let l = &self.localization;
        match l.accuracy {
            Some(a) => out.push_str(&format!("localization {a:.4} ({}/{})\n", l.n_el, l.n_e)),
            None => out.push_str("localization n/a (0 correct entities with gold boxes)\n"),
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::load_schema;

    fn bb(a: f64, b: f64, c: f64, d: f64) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    fn leaf(path: &[&str], text: &str) -> EvalEntity {
        EvalEntity {
            type_path: path.iter().map(|s| s.to_string()).collect(),
            text: Some(text.into()),
            boxes: Vec::new(),
            page: 0,
            children: Vec::new(),
        }
    }

    fn doc(entities: Vec<EvalEntity>) -> Vec<EvalDocument> {
        vec![EvalDocument { doc_id: "d".into(), entities }]
    }

    fn group(children: Vec<EvalEntity>) -> EvalEntity {
        EvalEntity { type_path: vec!["g".into()], text: None, boxes: Vec::new(), page: 0, children }
    }

    #[test]
    fn multiset_counts() {
        let schema = load_schema(r#"{"a": []}"#).unwrap();
        let gold = doc(vec![leaf(&["a"], "x"), leaf(&["a"], "x"), leaf(&["a"], "y")]);
        let pred = doc(vec![leaf(&["a"], "x"), leaf(&["a"], "y"), leaf(&["a"], "y")]);
        let r = evaluate(&pred, &gold, &schema, &MatchConfig::default()).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (2, 1, 1));
        assert!((r.micro_f1 - 2.0 / 3.0).abs() < 1e-12);

        let r = evaluate(&doc(vec![leaf(&["a"], "y")]), &doc(vec![leaf(&["a"], "x")]), &schema, &MatchConfig::default())
            .unwrap();
        assert_eq!(r.micro_f1, 0.0);
        let r = evaluate(&gold, &gold, &schema, &MatchConfig::default()).unwrap();
        assert_eq!(r.micro_f1, 1.0);
        assert!(evaluate(&doc(vec![leaf(&["zz"], "x")]), &gold, &schema, &MatchConfig::default()).is_err());
    }

    #[test]
    fn group_matching() {
        let g1 = group(vec![leaf(&["g", "x"], "1"), leaf(&["g", "y"], "2")]);
        let g2 = group(vec![leaf(&["g", "x"], "3"), leaf(&["g", "y"], "4")]);
        let partial = group(vec![leaf(&["g", "x"], "1")]);
        for grouping in [GroupMatching::Greedy, GroupMatching::Optimal] {
            let cfg = MatchConfig { grouping, ..Default::default() };
            assert_eq!(group_f1("g", &doc(vec![g1.clone()]), &doc(vec![g1.clone()]), &cfg).f1(), 1.0);
            assert_eq!(group_f1("g", &doc(vec![partial.clone()]), &doc(vec![g1.clone()]), &cfg).f1(), 0.0);
            let swapped = group_f1("g", &doc(vec![g2.clone(), g1.clone()]), &doc(vec![g1.clone(), g2.clone()]), &cfg);
            assert_eq!(swapped.f1(), 1.0);
        }
    }

    #[test]
    fn localization_cases() {
        // dyadic coordinates keep the area ratios exact
        let gold = bb(0.0, 0.0, 0.5, 0.5);
        assert!(is_localized(&gold, &[gold], 0.8));
        // half of the prediction lies outside the gold line
        assert!(!is_localized(&bb(0.25, 0.0, 0.75, 0.5), &[gold], 0.8));
        // coverage exactly 0.8 is not enough
        assert!(!is_localized(&bb(0.0, 0.0, 0.625, 0.5), &[gold], 0.8));
        assert!(is_localized(&bb(0.0, 0.0, 0.5625, 0.5), &[gold], 0.8));
        // a two-line gold region
        let second = bb(0.0, 0.5, 0.5, 1.0);
        assert!(is_localized(&bb(0.0, 0.25, 0.5, 0.75), &[gold, second], 0.8));
        assert!(!is_localized(&bb(0.0, 0.25, 0.5, 0.75), &[gold], 0.8));
        // degenerate boxes use their center point
        assert!(is_localized(&bb(0.2, 0.25, 0.2, 0.25), &[gold], 0.8));
        assert!(!is_localized(&bb(0.7, 0.25, 0.7, 0.25), &[gold], 0.8));
    }

    #[test]
    fn localization_report_empty() {
        let r = localization_accuracy(&[], &[], &MatchConfig::default());
        assert_eq!(r, LocalizationReport { accuracy: None, n_e: 0, n_el: 0 });
    }

    #[test]
    fn prf_edges() {
        assert_eq!(prf(0, 0, 0), (1.0, 1.0, 1.0));
        assert_eq!(prf(0, 1, 0), (0.0, 0.0, 0.0));
        assert_eq!(prf(0, 0, 1), (0.0, 0.0, 0.0));
    }
}
