//! Synthetic documents with planted groundtruth, and an independent oracle
//! that renders the completion a perfect model would produce.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use lmdx::document::{load_document, Document};
use lmdx::prompt::{CoordinateScheme, IdentifierStyle};
use lmdx::schema::{load_schema, ExtractionSchema};

pub const SCHEMA: &str = r#"{"invoice_id": "", "date": "", "note": [], "vendor": {"name": "", "address": ""}, "line_item": [{"description": "", "quantity": "", "price": ""}]}"#;

pub const PAGE_W: f64 = 1000.0;
pub const PAGE_H: f64 = 1400.0;

pub fn schema() -> ExtractionSchema {
    load_schema(SCHEMA).unwrap()
}

pub fn scheme(s: &str) -> CoordinateScheme {
    s.parse().unwrap()
}

/// Schemes under which planted lines must be uniquely identified.
pub const ORACLE_SCHEMES: [&str; 5] =
    ["line:center_2:100", "line:corners_4:100", "line:line_index:100", "line:center_2:1000", "line:corners_4:1000"];

#[derive(Debug, Clone)]
pub struct Line {
    /// Word texts and pixel boxes.
    pub words: Vec<(String, [f64; 4])>,
}

impl Line {
    pub fn text(&self) -> String {
        self.words.iter().map(|w| w.0.as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn px_box(&self) -> [f64; 4] {
        let f = &self.words[0].1;
        let l = &self.words[self.words.len() - 1].1;
        [f[0], f[1], l[2], l[3]]
    }
}

/// Inclusive word range on one line.
#[derive(Debug, Clone, Copy)]
pub struct Part {
    pub line: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub type_path: Vec<String>,
    pub page: usize,
    /// Leaf text lines; empty for groups.
    pub parts: Vec<Part>,
    pub children: Vec<Planted>,
}

#[derive(Debug, Clone, Copy)]
pub struct GenConfig {
    pub min_pages: usize,
    pub max_pages: usize,
    pub max_lines: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { min_pages: 1, max_pages: 3, max_lines: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub doc_id: String,
    pub pages: Vec<Vec<Line>>,
    pub planted: Vec<Planted>,
}

fn norm(b: [f64; 4]) -> [f64; 4] {
    [b[0] / PAGE_W, b[1] / PAGE_H, b[2] / PAGE_W, b[3] / PAGE_H]
}

fn q(v: f64, b: u32) -> u32 {
    ((v * b as f64).floor() as u32).min(b - 1)
}

fn envelope(boxes: impl IntoIterator<Item = [f64; 4]>) -> [f64; 4] {
    boxes.into_iter().fold([f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY], |a, b| {
        [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])]
    })
}

const ALPHABET: &[char] = &[
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'k', 'm', 'n', 'p', 'r', 's', 't', 'w', 'x', 'z', 'A', 'B', 'K', 'Q', 'T',
    '0', '1', '2', '3', '4', '5', '7', '9', '$', '.', '/', '-', ':', '#', 'é', 'ü', '€',
];

fn fresh_word(rng: &mut ChaCha8Rng, seen: &mut Vec<String>) -> String {
    loop {
        let len = rng.gen_range(2..=8);
        let w: String = (0..len).map(|_| *ALPHABET.choose(rng).unwrap()).collect();
        if seen.iter().all(|s| !s.contains(&w) && !w.contains(s.as_str())) {
            seen.push(w.clone());
            return w;
        }
    }
}

fn make_line(rng: &mut ChaCha8Rng, seen: &mut Vec<String>, x0: f64, y0: f64, max_words: usize) -> Line {
    let n = rng.gen_range(1..=max_words);
    let mut x = x0;
    let words = (0..n)
        .map(|_| {
            let w = fresh_word(rng, seen);
            let width = 9.0 * w.chars().count() as f64;
            let b = [x, y0, x + width, y0 + 14.0];
            x += width + 6.0;
            (w, b)
        })
        .collect();
    Line { words }
}

impl Synthetic {
    pub fn generate(seed: u64, cfg: GenConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = Vec::new();
        let n_pages = rng.gen_range(cfg.min_pages..=cfg.max_pages);
        let mut pages = Vec::with_capacity(n_pages);
        for _ in 0..n_pages {
            let target = rng.gen_range(1..=cfg.max_lines);
            let mut lines = Vec::new();
            let mut y = 30.0;
            while lines.len() < target {
                let x = *[40.0, 40.0, 41.0, 60.0].choose(&mut rng).unwrap();
                let two = lines.len() + 1 < target && rng.gen_bool(0.3);
                lines.push(make_line(&mut rng, &mut seen, x, y, if two { 3 } else { 6 }));
                if two {
                    let x = 540.0 + rng.gen_range(0..3) as f64 * 10.0;
                    lines.push(make_line(&mut rng, &mut seen, x, y, 3));
                }
                y += rng.gen_range(9..=22) as f64;
            }
            pages.push(lines);
        }
        let mut s = Synthetic { doc_id: format!("synth-{seed}"), pages, planted: Vec::new() };
        s.plant(&mut rng);
        s
    }

    /// Identifier of a line under `scheme`, computed from pixel geometry.
    pub fn identifier(&self, page: usize, line: usize, scheme: &CoordinateScheme) -> String {
        let b = norm(self.pages[page][line].px_box());
        let buckets = scheme.buckets.get();
        let w = (buckets - 1).to_string().len();
        match scheme.identifier_style {
            IdentifierStyle::Center2 => {
                format!("{:0w$}|{:0w$}", q((b[0] + b[2]) / 2.0, buckets), q((b[1] + b[3]) / 2.0, buckets))
            }
            IdentifierStyle::Corners4 => b.iter().map(|v| format!("{:0w$}", q(*v, buckets))).collect::<Vec<_>>().join("|"),
            IdentifierStyle::LineIndex => format!("<{line}>"),
        }
    }

    /// Lines whose identifier is unique on their page under every oracle scheme.
    fn plantable(&self, page: usize) -> Vec<usize> {
        let n = self.pages[page].len();
        let mut ok: Vec<bool> = vec![true; n];
        for s in ORACLE_SCHEMES {
            let sc = scheme(s);
            let ids: Vec<String> = (0..n).map(|i| self.identifier(page, i, &sc)).collect();
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for id in &ids {
                *counts.entry(id).or_default() += 1;
            }
            for (i, id) in ids.iter().enumerate() {
                if counts[id.as_str()] > 1 {
                    ok[i] = false;
                }
            }
        }
        (0..n).filter(|&i| ok[i]).collect()
    }

    fn leaf(&self, rng: &mut ChaCha8Rng, pool: &mut Vec<usize>, path: &[&str], page: usize) -> Option<Planted> {
        let part = |rng: &mut ChaCha8Rng, line: usize| {
            let n = self.pages[page][line].words.len();
            let start = rng.gen_range(0..n);
            let end = rng.gen_range(start..n);
            Part { line, start, end }
        };
        let first = pool.pop()?;
        let mut parts = vec![part(rng, first)];
        if !pool.is_empty() && rng.gen_bool(0.2) {
            let second = pool.pop().unwrap();
            parts.push(part(rng, second));
        }
        Some(Planted { type_path: path.iter().map(|s| s.to_string()).collect(), page, parts, children: Vec::new() })
    }

    fn group(
        &self,
        rng: &mut ChaCha8Rng,
        pool: &mut Vec<usize>,
        root: &str,
        children: &[&str],
        page: usize,
    ) -> Option<Planted> {
        let mut kids = Vec::new();
        for c in children {
            if rng.gen_bool(0.7) {
                kids.extend(self.leaf(rng, pool, &[root, c], page));
            }
        }
        if kids.is_empty() {
            kids.extend(self.leaf(rng, pool, &[root, children[0]], page));
        }
        (!kids.is_empty()).then(|| Planted { type_path: vec![root.to_string()], page, parts: Vec::new(), children: kids })
    }

    fn plant(&mut self, rng: &mut ChaCha8Rng) {
        let n_pages = self.pages.len();
        let mut pools: Vec<Vec<usize>> = (0..n_pages)
            .map(|p| {
                let mut v = self.plantable(p);
                v.shuffle(rng);
                v
            })
            .collect();
        let mut planted = Vec::new();
        for root in ["invoice_id", "date"] {
            if rng.gen_bool(0.8) {
                let p = rng.gen_range(0..n_pages);
                planted.extend(self.leaf(rng, &mut pools[p], &[root], p));
            }
        }
        for (p, pool) in pools.iter_mut().enumerate() {
            for _ in 0..rng.gen_range(0..=3) {
                planted.extend(self.leaf(rng, pool, &["note"], p));
            }
        }
        if rng.gen_bool(0.7) {
            let p = rng.gen_range(0..n_pages);
            planted.extend(self.group(rng, &mut pools[p], "vendor", &["name", "address"], p));
        }
        for (p, pool) in pools.iter_mut().enumerate() {
            for _ in 0..rng.gen_range(0..=3) {
                planted.extend(self.group(rng, pool, "line_item", &["description", "quantity", "price"], p));
            }
        }
        self.planted = planted;
    }

    pub fn doc_json(&self) -> String {
        let pages: Vec<Value> = self
            .pages
            .iter()
            .map(|lines| {
                let lines: Vec<Value> = lines
                    .iter()
                    .map(|l| {
                        json!({
                            "text": l.text(),
                            "box": l.px_box(),
                            "words": l.words.iter().map(|(t, b)| json!({"text": t, "box": b})).collect::<Vec<_>>(),
                        })
                    })
                    .collect();
                json!({"width": PAGE_W, "height": PAGE_H, "lines": lines})
            })
            .collect();
        json!({"doc_id": self.doc_id, "pages": pages}).to_string()
    }

    pub fn document(&self) -> Document {
        load_document(&self.doc_json()).unwrap()
    }

    pub fn part_text(&self, page: usize, p: &Part) -> String {
        self.pages[page][p.line].words[p.start..=p.end].iter().map(|w| w.0.as_str()).collect::<Vec<_>>().join(" ")
    }

    /// Leaf value lines joined by newlines.
    pub fn leaf_text(&self, e: &Planted) -> String {
        e.parts.iter().map(|p| self.part_text(e.page, p)).collect::<Vec<_>>().join("\n")
    }

    /// Normalized envelope of the planted words (of every leaf, for groups).
    pub fn planted_box(&self, e: &Planted) -> [f64; 4] {
        if e.parts.is_empty() {
            return envelope(e.children.iter().map(|c| self.planted_box(c)));
        }
        envelope(
            e.parts
                .iter()
                .flat_map(|p| self.pages[e.page][p.line].words[p.start..=p.end].iter().map(|w| norm(w.1))),
        )
    }

    pub fn line_boxes(&self, e: &Planted) -> Vec<[f64; 4]> {
        e.parts.iter().map(|p| norm(self.pages[e.page][p.line].px_box())).collect()
    }

    /// `"text id\ntext id"` citation of a planted leaf.
    pub fn cite(&self, e: &Planted, scheme: &CoordinateScheme) -> String {
        e.parts
            .iter()
            .map(|p| format!("{} {}", self.part_text(e.page, p), self.identifier(e.page, p.line, scheme)))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn render_object(&self, items: &[&Planted], keys: &[(&str, bool, &[&str])], scheme: &CoordinateScheme) -> Value {
        let mut map = Map::new();
        for &(name, repeated, children) in keys {
            let mine: Vec<&Planted> = items.iter().copied().filter(|e| e.type_path.last().unwrap() == name).collect();
            let render = |e: &Planted| -> Value {
                if children.is_empty() {
                    Value::String(self.cite(e, scheme))
                } else {
                    let kids: Vec<&Planted> = e.children.iter().collect();
                    let child_keys: Vec<(&str, bool, &[&str])> = children.iter().map(|c| (*c, false, &[][..])).collect();
                    self.render_object(&kids, &child_keys, scheme)
                }
            };
            let v = if repeated {
                Value::Array(mine.iter().map(|e| render(e)).collect())
            } else {
                mine.first().map_or(Value::Null, |e| render(e))
            };
            map.insert(name.to_string(), v);
        }
        Value::Object(map)
    }

    /// The completion a perfect model emits for one page rendered as one
    /// chunk.
    pub fn completion(&self, page: usize, scheme: &CoordinateScheme) -> String {
        let items: Vec<&Planted> = self.planted.iter().filter(|e| e.page == page).collect();
        self.render_object(&items, &schema_keys(), scheme).to_string()
    }

    pub fn gold_json(&self) -> Value {
        let mut map = Map::new();
        for (name, repeated, children) in schema_keys() {
            let mine: Vec<&Planted> = self.planted.iter().filter(|e| e.type_path[0] == name).collect();
            let render = |e: &Planted| -> Value {
                if children.is_empty() {
                    self.gold_leaf(e)
                } else {
                    let mut m = Map::new();
                    for c in &e.children {
                        m.insert(c.type_path[1].clone(), self.gold_leaf(c));
                    }
                    Value::Object(m)
                }
            };
            let v = if repeated {
                Value::Array(mine.iter().map(|e| render(e)).collect())
            } else {
                mine.first().map_or(Value::Null, |e| render(e))
            };
            map.insert(name.to_string(), v);
        }
        json!({"doc_id": self.doc_id, "entities": map})
    }

    fn gold_leaf(&self, e: &Planted) -> Value {
        json!({"text": self.leaf_text(e), "line_boxes": self.line_boxes(e), "page": e.page})
    }

    /// Every planted leaf and group as a comparable key, sorted.
    pub fn expected_keys(&self) -> Vec<EntityKey> {
        let mut out: Vec<EntityKey> = self.planted.iter().map(|e| self.key(e)).collect();
        out.sort();
        out
    }

    fn key(&self, e: &Planted) -> EntityKey {
        EntityKey {
            type_path: e.type_path.clone(),
            value: (!e.parts.is_empty()).then(|| self.leaf_text(e)),
            bbox: self.planted_box(e).map(f64::to_bits),
            page: e.page,
            children: e.children.iter().map(|c| self.key(c)).collect(),
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.planted.iter().map(|e| if e.children.is_empty() { 1 } else { e.children.len() }).sum()
    }
}

fn schema_keys() -> Vec<(&'static str, bool, &'static [&'static str])> {
    vec![
        ("invoice_id", false, &[]),
        ("date", false, &[]),
        ("note", true, &[]),
        ("vendor", false, &["name", "address"]),
        ("line_item", true, &["description", "quantity", "price"]),
    ]
}

/// Exact identity of an entity: path, text, bit-exact box, page, children.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct EntityKey {
    pub type_path: Vec<String>,
    pub value: Option<String>,
    pub bbox: [u64; 4],
    pub page: usize,
    pub children: Vec<EntityKey>,
}

pub fn key_of(e: &lmdx::GroundedEntity) -> EntityKey {
    EntityKey {
        type_path: e.type_path.clone(),
        value: e.value_text.clone(),
        bbox: <[f64; 4]>::from(e.bbox).map(f64::to_bits),
        page: e.page_index,
        children: e.children.iter().map(key_of).collect(),
    }
}

pub fn sorted_keys(entities: &[lmdx::GroundedEntity]) -> Vec<EntityKey> {
    let mut v: Vec<EntityKey> = entities.iter().map(key_of).collect();
    v.sort();
    v
}

/// Distinct words of a document, for checks that need text known to be absent.
pub fn vocabulary(s: &Synthetic) -> HashSet<String> {
    s.pages.iter().flatten().flat_map(|l| l.words.iter().map(|w| w.0.clone())).collect()
}
