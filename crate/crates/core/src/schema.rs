//! Extraction schemas.
//!
//! A schema is written as a JSON object whose keys are entity types and whose
//! value shapes encode occurrence and nesting:
//!
//! | value      | meaning                    |
//! |------------|----------------------------|
//! | `""`       | single leaf                |
//! | `[]`       | repeated leaf              |
//! | `{...}`    | single hierarchical entity |
//! | `[{...}]`  | repeated hierarchical      |
//!
//! `#` line comments outside of strings are accepted so annotated schema
//! files load unchanged.

use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer, MapAccess, SeqAccess, Visitor};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("malformed schema at {path}: {reason}")]
    MalformedSchema { path: String, reason: String },
    #[error("duplicate key {key:?} at {path}")]
    DuplicateKey { path: String, key: String },
    #[error("i/o error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Occurrence {
    Single,
    Repeated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityTypeNode {
    pub name: String,
    pub occurrence: Occurrence,
    pub children: Vec<EntityTypeNode>,
}

impl EntityTypeNode {
    pub fn leaf(name: impl Into<String>, occurrence: Occurrence) -> Self {
        Self { name: name.into(), occurrence, children: Vec::new() }
    }

    pub fn group(name: impl Into<String>, occurrence: Occurrence, children: Vec<EntityTypeNode>) -> Self {
        Self { name: name.into(), occurrence, children }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn child(&self, name: &str) -> Option<&EntityTypeNode> {
        self.children.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionSchema {
    pub roots: Vec<EntityTypeNode>,
}

impl ExtractionSchema {
    pub fn root(&self, name: &str) -> Option<&EntityTypeNode> {
        self.roots.iter().find(|r| r.name == name)
    }

    /// Resolves a type path such as `["line_item", "channel"]`.
    pub fn node(&self, path: &[String]) -> Option<&EntityTypeNode> {
        let (first, rest) = path.split_first()?;
        rest.iter().try_fold(self.root(first)?, |node, name| node.child(name))
    }

    /// Every leaf type path, depth first in schema order.
    pub fn leaf_paths(&self) -> Vec<Vec<String>> {
        fn walk(node: &EntityTypeNode, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
            prefix.push(node.name.clone());
            if node.is_leaf() {
                out.push(prefix.clone());
            } else {
                for c in &node.children {
                    walk(c, prefix, out);
                }
            }
            prefix.pop();
        }
        let mut out = Vec::new();
        for r in &self.roots {
            walk(r, &mut Vec::new(), &mut out);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Loading

/// Loosely typed JSON that keeps key order and duplicate keys.
enum RawValue {
    Str(String),
    List(Vec<RawValue>),
    Map(Vec<(String, RawValue)>),
    Other(&'static str),
}

impl<'de> Deserialize<'de> for RawValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawValue;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON value")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<RawValue, E> {
                Ok(RawValue::Str(v.to_string()))
            }
            fn visit_bool<E: de::Error>(self, _: bool) -> Result<RawValue, E> {
                Ok(RawValue::Other("a boolean"))
            }
            fn visit_i64<E: de::Error>(self, _: i64) -> Result<RawValue, E> {
                Ok(RawValue::Other("a number"))
            }
            fn visit_u64<E: de::Error>(self, _: u64) -> Result<RawValue, E> {
                Ok(RawValue::Other("a number"))
            }
            fn visit_f64<E: de::Error>(self, _: f64) -> Result<RawValue, E> {
                Ok(RawValue::Other("a number"))
            }
            fn visit_unit<E: de::Error>(self) -> Result<RawValue, E> {
                Ok(RawValue::Other("null"))
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<RawValue, A::Error> {
                let mut items = Vec::new();
                while let Some(v) = seq.next_element()? {
                    items.push(v);
                }
                Ok(RawValue::List(items))
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<RawValue, A::Error> {
                let mut entries = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, RawValue>()? {
                    entries.push((k, v));
                }
                Ok(RawValue::Map(entries))
            }
        }
        d.deserialize_any(V)
    }
}

/// Removes `#` comments that appear outside JSON strings.
fn strip_comments(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut in_comment = false;
    for c in src.chars() {
        if in_comment {
            if c == '\n' {
                in_comment = false;
                out.push(c);
            }
            continue;
        }
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            out.push(c);
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                out.push(c);
            }
            '#' => in_comment = true,
            _ => out.push(c),
        }
    }
    out
}

pub fn load_schema_file(path: impl AsRef<Path>) -> Result<ExtractionSchema, SchemaError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| SchemaError::Io { path: path.display().to_string(), source })?;
    load_schema(&text)
}

pub fn load_schema(text: &str) -> Result<ExtractionSchema, SchemaError> {
    let raw: RawValue = serde_json::from_str(&strip_comments(text))
        .map_err(|e| SchemaError::MalformedSchema { path: "$".into(), reason: e.to_string() })?;
    let RawValue::Map(entries) = raw else {
        return Err(SchemaError::MalformedSchema { path: "$".into(), reason: "top level must be an object".into() });
    };
    let roots = convert_entries("$", entries)?;
    Ok(ExtractionSchema { roots })
}

fn convert_entries(path: &str, entries: Vec<(String, RawValue)>) -> Result<Vec<EntityTypeNode>, SchemaError> {
    if entries.is_empty() {
        return Err(SchemaError::MalformedSchema { path: path.into(), reason: "no entity types".into() });
    }
    let mut nodes: Vec<EntityTypeNode> = Vec::with_capacity(entries.len());
    for (key, value) in entries {
        if nodes.iter().any(|n| n.name == key) {
            return Err(SchemaError::DuplicateKey { path: path.into(), key });
        }
        let here = format!("{path}.{key}");
        let malformed = |reason: String| SchemaError::MalformedSchema { path: here.clone(), reason };
        let node = match value {
            RawValue::Str(s) if s.is_empty() => EntityTypeNode::leaf(key, Occurrence::Single),
            RawValue::Str(s) => return Err(malformed(format!("leaf values must be \"\", found {s:?}"))),
            RawValue::Map(inner) => EntityTypeNode::group(key, Occurrence::Single, convert_entries(&here, inner)?),
            RawValue::List(mut items) => match (items.len(), items.pop()) {
                (0, _) => EntityTypeNode::leaf(key, Occurrence::Repeated),
                (1, Some(RawValue::Map(inner))) => {
                    EntityTypeNode::group(key, Occurrence::Repeated, convert_entries(&here, inner)?)
                }
                (n, _) => return Err(malformed(format!("list must be [] or hold exactly one object, found {n} item(s)"))),
            },
            RawValue::Other(kind) => return Err(malformed(format!("unsupported value: {kind}"))),
        };
        nodes.push(node);
    }
    Ok(nodes)
}

// ---------------------------------------------------------------------------
// Rendering

/// Renders the schema in its JSON dialect.
///
/// Without indentation, items are separated by `", "` and keys by `": "`.
/// With `Some(n)`, every nested item goes on its own line indented by `n`
/// spaces per level and item separators lose their trailing space.
pub fn render_schema(schema: &ExtractionSchema, indent: Option<usize>) -> String {
    let mut out = String::new();
    render_object(&schema.roots, indent, 0, &mut out);
    out
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

fn newline(indent: Option<usize>, depth: usize, out: &mut String) {
    if let Some(n) = indent {
        out.push('\n');
        out.push_str(&" ".repeat(n * depth));
    }
}

fn render_object(nodes: &[EntityTypeNode], indent: Option<usize>, depth: usize, out: &mut String) {
    out.push('{');
    for (i, node) in nodes.iter().enumerate() {
        if i > 0 {
            out.push_str(if indent.is_some() { "," } else { ", " });
        }
        newline(indent, depth + 1, out);
        out.push_str(&json_string(&node.name));
        out.push_str(": ");
        render_value(node, indent, depth + 1, out);
    }
    newline(indent, depth, out);
    out.push('}');
}

fn render_value(node: &EntityTypeNode, indent: Option<usize>, depth: usize, out: &mut String) {
    match (node.is_leaf(), node.occurrence) {
        (true, Occurrence::Single) => out.push_str("\"\""),
        (true, Occurrence::Repeated) => out.push_str("[]"),
        (false, Occurrence::Single) => render_object(&node.children, indent, depth, out),
        (false, Occurrence::Repeated) => {
            out.push('[');
            newline(indent, depth + 1, out);
            render_object(&node.children, indent, depth + 1, out);
            newline(indent, depth, out);
            out.push(']');
        }
    }
}

/// Formats any JSON value with the same separators as [`render_schema`].
pub fn format_json(value: &serde_json::Value, indent: Option<usize>) -> String {
    let mut out = String::new();
    format_value(value, indent, 0, &mut out);
    out
}

fn format_value(value: &serde_json::Value, indent: Option<usize>, depth: usize, out: &mut String) {
    use serde_json::Value;
    let sep = if indent.is_some() { "," } else { ", " };
    match value {
        Value::Array(items) if !items.is_empty() => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(sep);
                }
                newline(indent, depth + 1, out);
                format_value(v, indent, depth + 1, out);
            }
            newline(indent, depth, out);
            out.push(']');
        }
        Value::Object(map) if !map.is_empty() => {
            out.push('{');
            for (i, (k, v)) in map.iter().enumerate() {
                if i > 0 {
                    out.push_str(sep);
                }
                newline(indent, depth + 1, out);
                out.push_str(&json_string(k));
                out.push_str(": ");
                format_value(v, indent, depth + 1, out);
            }
            newline(indent, depth, out);
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn foo_bar_baz() {
        let s = load_schema(r#"{"foo": "", "bar": [{"baz": []}]}"#).unwrap();
        assert_eq!(
            s.roots,
            vec![
                EntityTypeNode::leaf("foo", Occurrence::Single),
                EntityTypeNode::group("bar", Occurrence::Repeated, vec![EntityTypeNode::leaf("baz", Occurrence::Repeated)]),
            ]
        );
        assert_eq!(render_schema(&s, None), r#"{"foo": "", "bar": [{"baz": []}]}"#);
    }

    #[test]
    fn rejects_bad_shapes() {
        for bad in [
            "{}",
            r#"{"a": 1}"#,
            r#"{"a": "x"}"#,
            r#"{"a": null}"#,
            r#"{"a": {}}"#,
            r#"{"a": [""]}"#,
            r#"{"a": [{"b": ""}, {"c": ""}]}"#,
            r#"[]"#,
            "not json",
        ] {
            assert!(matches!(load_schema(bad), Err(SchemaError::MalformedSchema { .. })), "{bad}");
        }
    }

    #[test]
    fn duplicate_keys() {
        let err = load_schema(r#"{"a": "", "b": {"c": "", "c": []}}"#).unwrap_err();
        assert!(matches!(err, SchemaError::DuplicateKey { ref key, ref path } if key == "c" && path == "$.b"));
    }

    #[test]
    fn comments_are_ignored_outside_strings() {
        let s = load_schema("{\n  \"a#b\": \"\", # trailing\n  \"c\": [] # more\n}").unwrap();
        assert_eq!(s.roots[0].name, "a#b");
        assert_eq!(s.roots[1].occurrence, Occurrence::Repeated);
    }

    #[test]
    fn indented_rendering() {
        let s = load_schema(r#"{"a": "", "g": [{"b": ""}]}"#).unwrap();
        assert_eq!(render_schema(&s, Some(2)), "{\n  \"a\": \"\",\n  \"g\": [\n    {\n      \"b\": \"\"\n    }\n  ]\n}");
        assert_eq!(load_schema(&render_schema(&s, Some(4))).unwrap(), s);
    }

    #[test]
    fn format_json_matches_completion_layout() {
        let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/golden/adbuy_completion_center2.txt")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(format_json(&v, None), text.trim_end());
        let v = serde_json::json!({"a": [], "b": {}, "c": [1, {"d": null}]});
        assert_eq!(format_json(&v, None), r#"{"a": [], "b": {}, "c": [1, {"d": null}]}"#);
        assert_eq!(format_json(&v, Some(1)), "{\n \"a\": [],\n \"b\": {},\n \"c\": [\n  1,\n  {\n   \"d\": null\n  }\n ]\n}");
    }

    #[test]
    fn paths() {
        let s = load_schema(r#"{"a": "", "g": [{"b": "", "h": {"c": []}}]}"#).unwrap();
        assert_eq!(
            s.leaf_paths(),
            vec![vec!["a".to_string()], vec!["g".into(), "b".into()], vec!["g".into(), "h".into(), "c".into()]]
        );
        assert!(s.node(&["g".into(), "h".into()]).is_some());
        assert!(s.node(&["g".into(), "x".into()]).is_none());
    }
}
