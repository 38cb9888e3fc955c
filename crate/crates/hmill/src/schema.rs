//! Schema trees, streaming inference from JSON documents, and the matching
//! predicate deciding whether a document follows a schema.
//!
//! Inference is a fold over documents; [`schema_merge`] combines schemata
//! from disjoint shards so the fold can run in parallel. JSON `null` is
//! treated as a missing value throughout and never contributes a kind.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

/// Default cap on the number of unique leaf values tracked per field.
pub const DEFAULT_UNIQUE_CAP: usize = 100;

/// Fixed shard size for parallel inference; results are merged in shard
/// order so the outcome is identical for any worker count.
const INFER_SHARD: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafKind {
    String,
    Number,
    Boolean,
}

impl LeafKind {
    fn of(value: &Value) -> Option<LeafKind> {
        match value {
            Value::String(_) => Some(LeafKind::String),
            Value::Number(_) => Some(LeafKind::Number),
            Value::Bool(_) => Some(LeafKind::Boolean),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LeafKind::String => "string",
            LeafKind::Number => "number",
            LeafKind::Boolean => "boolean",
        }
    }
}

fn value_kind_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Scalar field summary: kind, update count and a capped set of observed
/// values. The set keeps the smallest values in canonical JSON-text order,
/// which makes its contents independent of document order even when the cap
/// overflows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafSchema {
    pub kind: LeafKind,
    pub updated: u64,
    /// Canonical JSON text internally; serialized as plain JSON values.
    #[serde(with = "uniques_as_values")]
    pub uniques: BTreeSet<String>,
    pub unique_overflow: bool,
}

mod uniques_as_values {
    use std::collections::BTreeSet;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use serde_json::Value;

    pub fn serialize<S: Serializer>(set: &BTreeSet<String>, s: S) -> Result<S::Ok, S::Error> {
        let values: Vec<Value> = set
            .iter()
            .map(|t| serde_json::from_str(t).expect("uniques hold valid JSON"))
            .collect();
        values.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeSet<String>, D::Error> {
        let values: Vec<Value> = Vec::deserialize(d)?;
        for v in &values {
            if !(v.is_string() || v.is_number() || v.is_boolean()) {
                return Err(D::Error::custom("uniques must be scalar JSON values"));
            }
        }
        Ok(values.iter().map(Value::to_string).collect())
    }
}

impl LeafSchema {
    fn observe(&mut self, value: &Value, cap: usize) {
        self.updated += 1;
        let text = value.to_string();
        if self.uniques.contains(&text) {
            return;
        }
        self.uniques.insert(text);
        if self.uniques.len() > cap {
            let largest = self.uniques.iter().next_back().cloned();
            if let Some(largest) = largest {
                self.uniques.remove(&largest);
            }
            self.unique_overflow = true;
        }
    }

    /// Observed values parsed back to JSON, in canonical order.
    pub fn unique_values(&self) -> Vec<Value> {
        self.uniques
            .iter()
            .map(|s| serde_json::from_str(s).expect("uniques hold valid JSON"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagSchema {
    /// Element schema; absent until a nonempty array has been seen.
    pub child: Option<Box<SchemaNode>>,
    pub updated: u64,
    pub length_min: u64,
    pub length_max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductEntry {
    pub updated: u64,
    pub schema: SchemaNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductSchema {
    pub updated: u64,
    /// Keyed children in ascending key order.
    pub entries: std::collections::BTreeMap<String, ProductEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SchemaNode {
    Leaf(LeafSchema),
    Bag(BagSchema),
    Product(ProductSchema),
}

impl SchemaNode {
    fn kind_name(&self) -> &'static str {
        match self {
            SchemaNode::Leaf(l) => l.kind.name(),
            SchemaNode::Bag(_) => "array",
            SchemaNode::Product(_) => "object",
        }
    }

    pub fn updated(&self) -> u64 {
        match self {
            SchemaNode::Leaf(l) => l.updated,
            SchemaNode::Bag(b) => b.updated,
            SchemaNode::Product(p) => p.updated,
        }
    }
}

/// Why a document failed to match a schema; a return value, not an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchFailure {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MatchOptions {
    /// Accept object keys that the schema does not know about.
    pub ignore_extra_keys: bool,
}

fn new_node(value: &Value, path: &mut Vec<String>, cap: usize) -> Result<Option<SchemaNode>> {
    match value {
        Value::Null => Ok(None),
        Value::Array(items) => {
            let mut child: Option<Box<SchemaNode>> = None;
            let mut count = 0u64;
            path.push("[]".into());
            for item in items {
                if item.is_null() {
                    continue;
                }
                count += 1;
                match child.as_deref_mut() {
                    Some(c) => update_node(c, item, path, cap)?,
                    None => child = new_node(item, path, cap)?.map(Box::new),
                }
            }
            path.pop();
            Ok(Some(SchemaNode::Bag(BagSchema {
                child,
                updated: 1,
                length_min: count,
                length_max: count,
            })))
        }
        Value::Object(map) => {
            let mut entries = std::collections::BTreeMap::new();
            for (key, v) in map {
                if v.is_null() {
                    continue;
                }
                path.push(key.clone());
                let node = new_node(v, path, cap)?;
                path.pop();
                if let Some(schema) = node {
                    entries.insert(key.clone(), ProductEntry { updated: 1, schema });
                }
            }
            Ok(Some(SchemaNode::Product(ProductSchema {
                updated: 1,
                entries,
            })))
        }
        scalar => {
            let kind = LeafKind::of(scalar).expect("null handled above");
            let mut leaf = LeafSchema {
                kind,
                updated: 0,
                uniques: BTreeSet::new(),
                unique_overflow: false,
            };
            leaf.observe(scalar, cap);
            Ok(Some(SchemaNode::Leaf(leaf)))
        }
    }
}

fn update_node(
    node: &mut SchemaNode,
    value: &Value,
    path: &mut Vec<String>,
    cap: usize,
) -> Result<()> {
    let conflict = |path: &[String], expected: &str, got: &Value| Error::SchemaConflict {
        path: format!("/{}", path.join("/")),
        reason: format!("{expected} vs {}", value_kind_name(got)),
    };
    match (node, value) {
        (_, Value::Null) => Ok(()),
        (SchemaNode::Leaf(leaf), scalar) if LeafKind::of(scalar) == Some(leaf.kind) => {
            leaf.observe(scalar, cap);
            Ok(())
        }
        (SchemaNode::Bag(bag), Value::Array(items)) => {
            bag.updated += 1;
            let count = items.iter().filter(|v| !v.is_null()).count() as u64;
            bag.length_min = bag.length_min.min(count);
            bag.length_max = bag.length_max.max(count);
            path.push("[]".into());
            for item in items {
                if item.is_null() {
                    continue;
                }
                match bag.child.as_deref_mut() {
                    Some(c) => update_node(c, item, path, cap)?,
                    None => bag.child = new_node(item, path, cap)?.map(Box::new),
                }
            }
            path.pop();
            Ok(())
        }
        (SchemaNode::Product(product), Value::Object(map)) => {
            product.updated += 1;
            for (key, v) in map {
                if v.is_null() {
                    continue;
                }
                path.push(key.clone());
                match product.entries.get_mut(key) {
                    Some(entry) => {
                        entry.updated += 1;
                        update_node(&mut entry.schema, v, path, cap)?;
                    }
                    None => {
                        if let Some(schema) = new_node(v, path, cap)? {
                            product
                                .entries
                                .insert(key.clone(), ProductEntry { updated: 1, schema });
                        }
                    }
                }
                path.pop();
            }
            Ok(())
        }
        (node, value) => Err(conflict(path, node.kind_name(), value)),
    }
}

/// Infers a schema from a document stream. Shards of fixed size are
/// processed in parallel and merged in order, so the result does not depend
/// on the worker count; it does not depend on document order either, since
/// counts are sums and unique sets are order-insensitive.
pub fn infer_schema(documents: &[Value], unique_cap: usize) -> Result<SchemaNode> {
    let shards: Vec<Result<Option<SchemaNode>>> = documents
        .par_chunks(INFER_SHARD)
        .map(|chunk| {
            let mut acc: Option<SchemaNode> = None;
            let mut path = Vec::new();
            for doc in chunk {
                match acc.as_mut() {
                    Some(node) => update_node(node, doc, &mut path, unique_cap)?,
                    None => acc = new_node(doc, &mut path, unique_cap)?,
                }
            }
            Ok(acc)
        })
        .collect();
    let mut acc: Option<SchemaNode> = None;
    for shard in shards {
        match (acc.as_mut(), shard?) {
            (_, None) => {}
            (None, Some(s)) => acc = Some(s),
            (Some(a), Some(b)) => {
                let mut path = Vec::new();
                merge_into(a, b, &mut path, unique_cap)?;
            }
        }
    }
    acc.ok_or_else(|| Error::Invalid("cannot infer a schema from an empty corpus".into()))
}

/// Combines two schemata inferred from disjoint corpora: counts are summed,
/// unique sets unioned under the cap, overflow flags OR-ed. Fails on kind
/// conflicts with the offending path.
pub fn schema_merge(s1: &SchemaNode, s2: &SchemaNode, unique_cap: usize) -> Result<SchemaNode> {
    let mut out = s1.clone();
    let mut path = Vec::new();
    merge_into(&mut out, s2.clone(), &mut path, unique_cap)?;
    Ok(out)
}

fn merge_into(
    dst: &mut SchemaNode,
    src: SchemaNode,
    path: &mut Vec<String>,
    cap: usize,
) -> Result<()> {
    match (dst, src) {
        (SchemaNode::Leaf(a), SchemaNode::Leaf(b)) => {
            if a.kind != b.kind {
                return Err(Error::SchemaConflict {
                    path: format!("/{}", path.join("/")),
                    reason: format!("{} vs {}", a.kind.name(), b.kind.name()),
                });
            }
            a.updated += b.updated;
            a.unique_overflow |= b.unique_overflow;
            for v in b.uniques {
                a.uniques.insert(v);
            }
            while a.uniques.len() > cap {
                let largest = a.uniques.iter().next_back().cloned().expect("nonempty");
                a.uniques.remove(&largest);
                a.unique_overflow = true;
            }
            Ok(())
        }
        (SchemaNode::Bag(a), SchemaNode::Bag(b)) => {
            a.updated += b.updated;
            a.length_min = a.length_min.min(b.length_min);
            a.length_max = a.length_max.max(b.length_max);
            path.push("[]".into());
            match (a.child.as_deref_mut(), b.child) {
                (Some(ac), Some(bc)) => merge_into(ac, *bc, path, cap)?,
                (None, Some(bc)) => a.child = Some(bc),
                (_, None) => {}
            }
            path.pop();
            Ok(())
        }
        (SchemaNode::Product(a), SchemaNode::Product(b)) => {
            a.updated += b.updated;
            for (key, entry) in b.entries {
                path.push(key.clone());
                match a.entries.get_mut(&key) {
                    Some(existing) => {
                        existing.updated += entry.updated;
                        merge_into(&mut existing.schema, entry.schema, path, cap)?;
                    }
                    None => {
                        a.entries.insert(key.clone(), entry);
                    }
                }
                path.pop();
            }
            Ok(())
        }
        (dst, src) => Err(Error::SchemaConflict {
            path: format!("/{}", path.join("/")),
            reason: format!("{} vs {}", dst.kind_name(), src.kind_name()),
        }),
    }
}

/// Checks whether a document follows a schema. Missing keys and nulls are
/// accepted everywhere; empty arrays match any bag schema; extra object keys
/// fail unless [`MatchOptions::ignore_extra_keys`] is set.
pub fn matches(doc: &Value, schema: &SchemaNode) -> std::result::Result<(), MatchFailure> {
    matches_opts(doc, schema, MatchOptions::default())
}

pub fn matches_opts(
    doc: &Value,
    schema: &SchemaNode,
    opts: MatchOptions,
) -> std::result::Result<(), MatchFailure> {
    let mut path = Vec::new();
    matches_at(doc, schema, opts, &mut path)
}

fn matches_at(
    doc: &Value,
    schema: &SchemaNode,
    opts: MatchOptions,
    path: &mut Vec<String>,
) -> std::result::Result<(), MatchFailure> {
    let fail = |path: &[String], reason: String| MatchFailure {
        path: format!("/{}", path.join("/")),
        reason,
    };
    match (schema, doc) {
        (_, Value::Null) => Ok(()),
        (SchemaNode::Leaf(leaf), scalar) if LeafKind::of(scalar) == Some(leaf.kind) => Ok(()),
        (SchemaNode::Bag(bag), Value::Array(items)) => {
            path.push("[]".into());
            for item in items {
                if item.is_null() {
                    continue;
                }
                match bag.child.as_deref() {
                    Some(child) => matches_at(item, child, opts, path)?,
                    None => {
                        let f = fail(path, "schema has no element type for this array".into());
                        path.pop();
                        return Err(f);
                    }
                }
            }
            path.pop();
            Ok(())
        }
        (SchemaNode::Product(product), Value::Object(map)) => {
            for (key, v) in map {
                if v.is_null() {
                    continue;
                }
                path.push(key.clone());
                match product.entries.get(key) {
                    Some(entry) => matches_at(v, &entry.schema, opts, path)?,
                    None if opts.ignore_extra_keys => {}
                    None => {
                        let f = fail(path, "key not present in schema".into());
                        path.pop();
                        return Err(f);
                    }
                }
                path.pop();
            }
            Ok(())
        }
        (schema, value) => Err(fail(
            path,
            format!("expected {}, got {}", schema.kind_name(), value_kind_name(value)),
        )),
    }
}

/// Serialized schema file: a small envelope around the schema tree.
#[derive(Debug, Serialize, Deserialize)]
pub struct SchemaFile {
    pub format: String,
    pub version: u32,
    pub root: SchemaNode,
}

pub const SCHEMA_FORMAT: &str = "hmill-schema";
pub const SCHEMA_VERSION: u32 = 1;

pub fn to_json(schema: &SchemaNode) -> String {
    let file = SchemaFile {
        format: SCHEMA_FORMAT.to_string(),
        version: SCHEMA_VERSION,
        root: schema.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("schema serializes");
    text.push('\n');
    text
}

pub fn from_json(text: &str) -> Result<SchemaNode> {
    let file: SchemaFile = serde_json::from_str(text)?;
    if file.format != SCHEMA_FORMAT {
        return Err(Error::ModelFormat(format!(
            "expected {SCHEMA_FORMAT} file, found {:?}",
            file.format
        )));
    }
    if file.version != SCHEMA_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported schema version {} (supported: {SCHEMA_VERSION})",
            file.version
        )));
    }
    Ok(file.root)
}
