//! The mapping from raw fragments (strings, numbers, booleans) to Euclidean
//! vectors, extractor-tree construction from a schema, and document
//! extraction into sample trees.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{ArrayData, Bag, BagData, DataNode, ProductData};
use crate::linalg::Matrix;
use crate::schema::{LeafKind, SchemaNode};
use crate::{Error, Result};

pub const DEFAULT_TRIGRAM_DIMS: usize = 2053;

/// What to do with a categorical value outside the training vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownPolicy {
    /// A dedicated extra slot; the output has `vocabulary + 1` dimensions.
    ExtraSlot,
    /// Unknown values encode to the all-zeros vector.
    AllZeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoder", rename_all = "snake_case")]
pub enum Encoder {
    OneHot {
        vocabulary: Vec<String>,
        unknown: UnknownPolicy,
    },
    TrigramHistogram {
        dims: usize,
        normalize: bool,
    },
    NumericIdentity,
    /// `x -> ln(1 + x)`, for counts and sizes.
    Log1p,
    /// `x -> ln(x) + 1`, for graph-derived features in `[1, inf)`.
    LogPlus1,
    /// A fixed-length vector taken verbatim (JSON arrays of numbers); used
    /// for precomputed features such as graph edge descriptors.
    RawVector {
        dims: usize,
    },
}

impl Encoder {
    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::OneHot {
                vocabulary,
                unknown,
            } => {
                vocabulary.len()
                    + match unknown {
                        UnknownPolicy::ExtraSlot => 1,
                        UnknownPolicy::AllZeros => 0,
                    }
            }
            Encoder::TrigramHistogram { dims, .. } => *dims,
            Encoder::NumericIdentity | Encoder::Log1p | Encoder::LogPlus1 => 1,
            Encoder::RawVector { dims } => *dims,
        }
    }

    fn encode(&self, value: &Value, path: &str) -> Result<Vec<f64>> {
        match self {
            Encoder::OneHot {
                vocabulary,
                unknown,
            } => {
                let text = scalar_text(value, path)?;
                let mut out = vec![0.0; self.output_dim()];
                match vocabulary.iter().position(|v| *v == text) {
                    Some(i) => out[i] = 1.0,
                    None => {
                        if let UnknownPolicy::ExtraSlot = unknown {
                            out[vocabulary.len()] = 1.0;
                        }
                    }
                }
                Ok(out)
            }
            Encoder::TrigramHistogram { dims, normalize } => match value {
                Value::String(s) => Ok(trigram_histogram(s, *dims, *normalize)),
                other => Err(kind_error(path, "string", other)),
            },
            Encoder::NumericIdentity => Ok(vec![scalar_number(value, path)?]),
            Encoder::Log1p => Ok(vec![scalar_number(value, path)?.ln_1p()]),
            Encoder::LogPlus1 => Ok(vec![scalar_number(value, path)?.ln() + 1.0]),
            Encoder::RawVector { dims } => match value {
                Value::Array(items) if items.len() == *dims => items
                    .iter()
                    .map(|v| scalar_number(v, path))
                    .collect::<Result<Vec<f64>>>(),
                other => Err(kind_error(path, "fixed-length number array", other)),
            },
        }
    }
}

fn kind_error(path: &str, expected: &str, got: &Value) -> Error {
    let kind = match got {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    };
    Error::Extract {
        path: path.to_string(),
        reason: format!("expected {expected}, got {kind}"),
    }
}

fn scalar_number(value: &Value, path: &str) -> Result<f64> {
    match value {
        Value::Number(n) => n
            .as_f64()
            .filter(|v| v.is_finite())
            .ok_or_else(|| kind_error(path, "finite number", value)),
        other => Err(kind_error(path, "number", other)),
    }
}

/// Canonical text form of a scalar used for categorical vocabularies and
/// labels: strings stay as written, booleans become "true"/"false", numbers
/// their JSON text.
pub fn scalar_text(value: &Value, path: &str) -> Result<String> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(kind_error(path, "scalar", other)),
    }
}

/// FNV-1a over a 3-byte window; the fixed mixing function behind the trigram
/// histogram, deliberately not seeded per process.
#[inline]
fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Byte-level trigram histogram: the string is padded with a `^` byte in
/// front and a `$` byte behind, every 3-byte window is hashed with FNV-1a 64
/// into `hash mod dims`, and counts are L1-normalized when requested. The
/// empty string maps to the zero vector.
pub fn trigram_histogram(s: &str, dims: usize, normalize: bool) -> Vec<f64> {
    let mut padded = Vec::with_capacity(s.len() + 2);
    padded.push(b'^');
    padded.extend_from_slice(s.as_bytes());
    padded.push(b'$');
    let mut out = vec![0.0; dims];
    if padded.len() < 3 {
        return out;
    }
    let mut total = 0.0;
    for window in padded.windows(3) {
        let bucket = (fnv1a_64(window) % dims as u64) as usize;
        out[bucket] += 1.0;
        total += 1.0;
    }
    if normalize && total > 0.0 {
        for v in &mut out {
            *v /= total;
        }
    }
    out
}

/// Knobs for turning a schema into an extractor.
#[derive(Debug, Clone)]
pub struct ExtractorPolicy {
    /// String leaves with at most this many uniques (and no overflow) become
    /// categorical; beyond it they fall back to trigram histograms.
    pub categorical_max: usize,
    pub trigram_dims: usize,
    pub normalize_trigrams: bool,
    pub numeric: NumericEncoding,
    pub unknown: UnknownPolicy,
    /// '/'-separated paths ("device_class", "meta/id") removed from the
    /// feature tree; the label path must be listed here.
    pub exclude_paths: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumericEncoding {
    Identity,
    Log1p,
    LogPlus1,
}

impl Default for ExtractorPolicy {
    fn default() -> Self {
        ExtractorPolicy {
            categorical_max: 100,
            trigram_dims: DEFAULT_TRIGRAM_DIMS,
            normalize_trigrams: true,
            numeric: NumericEncoding::Identity,
            unknown: UnknownPolicy::ExtraSlot,
            exclude_paths: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafExtractor {
    pub encoder: Encoder,
    pub source_kind: LeafKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagExtractor {
    pub child: Box<Extractor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductExtractor {
    /// Children in ascending key order, frozen at build time.
    pub children: Vec<(String, Extractor)>,
    /// Keys known from the schema but excluded from features; silently
    /// skipped during extraction.
    pub ignored_keys: Vec<String>,
}

/// Mirrors the schema minus excluded paths; maps documents to sample trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Extractor {
    Leaf(LeafExtractor),
    Bag(BagExtractor),
    Product(ProductExtractor),
}

impl Extractor {
    pub fn output_dim(&self) -> usize {
        match self {
            Extractor::Leaf(l) => l.encoder.output_dim(),
            // Bags and products do not have a fixed vector dimension of
            // their own; the model defines it. Leaf dim is what matters here.
            Extractor::Bag(_) | Extractor::Product(_) => 0,
        }
    }
}

/// Builds the extractor tree for a schema under the given policy.
pub fn build_extractor(schema: &SchemaNode, policy: &ExtractorPolicy) -> Result<Extractor> {
    let mut exclusions: Vec<Vec<&str>> = policy
        .exclude_paths
        .iter()
        .map(|p| p.trim_matches('/').split('/').collect())
        .collect();
    exclusions.retain(|p| !p.is_empty() && !p[0].is_empty());
    let mut used = vec![false; exclusions.len()];
    let tree = build_node(schema, policy, &exclusions, &mut used, &mut Vec::new())?;
    for (i, hit) in used.iter().enumerate() {
        if !hit {
            return Err(Error::Invalid(format!(
                "excluded path {:?} not found in schema",
                policy.exclude_paths[i]
            )));
        }
    }
    tree.ok_or_else(|| Error::Invalid("every field of the schema is excluded".into()))
}

fn build_node(
    schema: &SchemaNode,
    policy: &ExtractorPolicy,
    exclusions: &[Vec<&str>],
    used: &mut [bool],
    at: &mut Vec<String>,
) -> Result<Option<Extractor>> {
    match schema {
        SchemaNode::Leaf(leaf) => {
            let encoder = match leaf.kind {
                LeafKind::Boolean => Encoder::OneHot {
                    vocabulary: vec!["true".into(), "false".into()],
                    unknown: UnknownPolicy::AllZeros,
                },
                LeafKind::Number => match policy.numeric {
                    NumericEncoding::Identity => Encoder::NumericIdentity,
                    NumericEncoding::Log1p => Encoder::Log1p,
                    NumericEncoding::LogPlus1 => Encoder::LogPlus1,
                },
                LeafKind::String => {
                    if !leaf.unique_overflow && leaf.uniques.len() <= policy.categorical_max {
                        let vocabulary = leaf
                            .unique_values()
                            .iter()
                            .map(|v| scalar_text(v, "vocabulary").expect("scalar uniques"))
                            .collect();
                        Encoder::OneHot {
                            vocabulary,
                            unknown: policy.unknown,
                        }
                    } else {
                        Encoder::TrigramHistogram {
                            dims: policy.trigram_dims,
                            normalize: policy.normalize_trigrams,
                        }
                    }
                }
            };
            Ok(Some(Extractor::Leaf(LeafExtractor {
                encoder,
                source_kind: leaf.kind,
            })))
        }
        SchemaNode::Bag(bag) => {
            let child_schema = bag.child.as_deref().ok_or_else(|| Error::Invalid(format!(
                "array at /{} was never seen with an element; exclude the path or extend the corpus",
                at.join("/")
            )))?;
            at.push("[]".into());
            let child = build_node(child_schema, policy, exclusions, used, at)?;
            at.pop();
            let child = child.ok_or_else(|| {
                Error::Invalid(format!(
                    "all element fields of array /{} are excluded",
                    at.join("/")
                ))
            })?;
            Ok(Some(Extractor::Bag(BagExtractor {
                child: Box::new(child),
            })))
        }
        SchemaNode::Product(product) => {
            let mut children = Vec::new();
            let mut ignored = Vec::new();
            for (key, entry) in &product.entries {
                let depth = at.iter().filter(|s| *s != "[]").count();
                let excluded = exclusions.iter().enumerate().find(|(_, p)| {
                    p.len() == depth + 1
                        && p.last() == Some(&key.as_str())
                        && at
                            .iter()
                            .filter(|s| *s != "[]")
                            .zip(p.iter())
                            .all(|(a, b)| a == b)
                });
                if let Some((i, _)) = excluded {
                    used[i] = true;
                    ignored.push(key.clone());
                    continue;
                }
                at.push(key.clone());
                let child = build_node(&entry.schema, policy, exclusions, used, at)?;
                at.pop();
                if let Some(child) = child {
                    children.push((key.clone(), child));
                } else {
                    ignored.push(key.clone());
                }
            }
            if children.is_empty() {
                return Ok(None);
            }
            Ok(Some(Extractor::Product(ProductExtractor {
                children,
                ignored_keys: ignored,
            })))
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractOptions {
    pub ignore_extra_keys: bool,
}

/// A data node with zero observations shaped like the extractor; the child
/// of an empty bag.
fn empty_data(extractor: &Extractor) -> DataNode {
    match extractor {
        Extractor::Leaf(l) => {
            DataNode::Array(ArrayData::new(Matrix::zeros(l.encoder.output_dim(), 0)))
        }
        Extractor::Bag(b) => DataNode::Bag(
            BagData::new(empty_data(&b.child), vec![]).expect("empty bag is valid"),
        ),
        Extractor::Product(p) => {
            let children = p
                .children
                .iter()
                .map(|(k, c)| (k.clone(), empty_data(c)))
                .collect();
            DataNode::Product(
                ProductData::new(children).expect("children agree on zero observations"),
            )
        }
    }
}

/// A single all-missing observation shaped like the extractor: flagged array
/// columns, empty bags, products with every child flagged.
pub fn missing_observation(extractor: &Extractor) -> DataNode {
    match extractor {
        Extractor::Leaf(l) => {
            DataNode::Array(ArrayData::missing_observation(l.encoder.output_dim()))
        }
        Extractor::Bag(b) => DataNode::Bag(
            BagData::new(empty_data(&b.child), vec![Bag::Range(0..0)])
                .expect("one empty bag is valid"),
        ),
        Extractor::Product(p) => {
            let children = p
                .children
                .iter()
                .map(|(k, c)| (k.clone(), missing_observation(c)))
                .collect();
            DataNode::Product(
                ProductData::with_missing(children, |_| Some(vec![true]))
                    .expect("single observation"),
            )
        }
    }
}

/// Extracts one document into a single-observation sample tree. Missing keys
/// and nulls become flagged observations; arrays become bags; unknown keys
/// are an error unless `ignore_extra_keys` is set or the key was excluded at
/// build time.
pub fn extract(extractor: &Extractor, doc: &Value, opts: ExtractOptions) -> Result<DataNode> {
    extract_at(extractor, doc, opts, &mut Vec::new())
}

fn extract_at(
    extractor: &Extractor,
    doc: &Value,
    opts: ExtractOptions,
    at: &mut Vec<String>,
) -> Result<DataNode> {
    let path = |at: &[String]| format!("/{}", at.join("/"));
    match extractor {
        Extractor::Leaf(l) => match doc {
            Value::Null => Ok(missing_observation(extractor)),
            value => {
                let col = l.encoder.encode(value, &path(at))?;
                Ok(DataNode::Array(ArrayData::new(
                    Matrix::column(&col).expect("finite encoding"),
                )))
            }
        },
        Extractor::Bag(b) => match doc {
            Value::Null => Ok(missing_observation(extractor)),
            Value::Array(items) => {
                let live: Vec<&Value> = items.iter().filter(|v| !v.is_null()).collect();
                if live.is_empty() {
                    return Ok(missing_observation(extractor));
                }
                at.push("[]".into());
                let mut instances = Vec::with_capacity(live.len());
                for item in live {
                    instances.push(extract_at(&b.child, item, opts, at)?);
                }
                at.pop();
                let refs: Vec<&DataNode> = instances.iter().collect();
                let child = DataNode::merge(&refs)?;
                let n = child.nobs();
                Ok(DataNode::Bag(
                    BagData::new(child, vec![Bag::Range(0..n)]).expect("single full bag"),
                ))
            }
            other => Err(kind_error(&path(at), "array", other)),
        },
        Extractor::Product(p) => match doc {
            Value::Null => Ok(missing_observation(extractor)),
            Value::Object(map) => {
                if !opts.ignore_extra_keys {
                    for key in map.keys() {
                        if !map[key].is_null()
                            && !p.ignored_keys.contains(key)
                            && !p.children.iter().any(|(k, _)| k == key)
                        {
                            at.push(key.clone());
                            let full = path(at);
                            at.pop();
                            return Err(Error::Extract {
                                path: full,
                                reason: "key not covered by the extractor".into(),
                            });
                        }
                    }
                }
                let mut children = Vec::with_capacity(p.children.len());
                let mut missing = Vec::with_capacity(p.children.len());
                for (key, child) in &p.children {
                    match map.get(key).filter(|v| !v.is_null()) {
                        Some(value) => {
                            at.push(key.clone());
                            children.push((key.clone(), extract_at(child, value, opts, at)?));
                            at.pop();
                            missing.push((key.clone(), vec![false]));
                        }
                        None => {
                            children.push((key.clone(), missing_observation(child)));
                            missing.push((key.clone(), vec![true]));
                        }
                    }
                }
                Ok(DataNode::Product(ProductData::with_missing(
                    children,
                    |k| {
                        missing
                            .iter()
                            .find(|(key, _)| key == k)
                            .map(|(_, f)| f.clone())
                    },
                )?))
            }
            other => Err(kind_error(&path(at), "object", other)),
        },
    }
}

/// Extracts a whole corpus and batches it into one tree; equal to merging
/// the per-document extractions, which is exactly how it is computed.
pub fn extract_batch(
    extractor: &Extractor,
    docs: &[Value],
    opts: ExtractOptions,
) -> Result<DataNode> {
    if docs.is_empty() {
        return Err(Error::Invalid("cannot extract an empty corpus".into()));
    }
    let singles: Vec<DataNode> = docs
        .par_iter()
        .map(|doc| extract(extractor, doc, opts))
        .collect::<Result<_>>()?;
    let refs: Vec<&DataNode> = singles.iter().collect();
    DataNode::merge(&refs)
}

/// Reads the raw value at a '/'-separated path in a document.
pub fn value_at_path<'a>(doc: &'a Value, path: &str) -> Option<&'a Value> {
    let mut cur = doc;
    for segment in path.trim_matches('/').split('/') {
        cur = cur.as_object()?.get(segment)?;
    }
    Some(cur)
}

/// Pulls the label value out of a document as canonical text.
pub fn extract_label(doc: &Value, label_path: &str) -> Result<String> {
    let value = value_at_path(doc, label_path)
        .filter(|v| !v.is_null())
        .ok_or_else(|| Error::Extract {
            path: format!("/{}", label_path.trim_matches('/')),
            reason: "label missing".into(),
        })?;
    scalar_text(value, label_path)
}

/// Frozen class-name table built during training; maps labels to stable
/// indices in first-seen order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVocab {
    pub classes: Vec<String>,
}

impl LabelVocab {
    pub fn build(labels: &[String]) -> Self {
        let mut classes = Vec::new();
        for label in labels {
            if !classes.contains(label) {
                classes.push(label.clone());
            }
        }
        LabelVocab { classes }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }
}
