//! The sample-tree algebra: array, bag and product data nodes carrying one
//! or more observations, plus merging (batching) and slicing.
//!
//! All nodes are immutable after construction and validated on the way in,
//! so the accessors below never fail.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

/// One bag: the set of child observation columns belonging to a single
/// observation. Merging produces contiguous ranges; slicing may fall back to
/// explicit index lists.
#[derive(Debug, Clone, Eq, Serialize, Deserialize)]
pub enum Bag {
    Range(Range<usize>),
    List(Vec<usize>),
}

/// Bags compare by the referenced index sequence, so `Range(4..4)`,
/// `Range(0..0)` and an empty list are all the same (empty) bag and
/// `Range(0..2)` equals `List([0, 1])`.
impl PartialEq for Bag {
    fn eq(&self, other: &Self) -> bool {
        self.iter().eq(other.iter())
    }
}

impl Bag {
    pub fn len(&self) -> usize {
        match self {
            Bag::Range(r) => r.len(),
            Bag::List(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> Vec<usize> {
        match self {
            Bag::Range(r) => r.clone().collect(),
            Bag::List(v) => v.clone(),
        }
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = usize> + '_> {
        match self {
            Bag::Range(r) => Box::new(r.clone()),
            Bag::List(v) => Box::new(v.iter().copied()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayData {
    x: Matrix,
    /// Per-observation flags; flagged columns carry no data (zeros in
    /// storage) and are substituted downstream.
    missing: Vec<bool>,
}

impl ArrayData {
    pub fn new(x: Matrix) -> Self {
        let missing = vec![false; x.cols()];
        ArrayData { x, missing }
    }

    pub fn with_missing(x: Matrix, missing: Vec<bool>) -> Result<Self> {
        if missing.len() != x.cols() {
            return Err(Error::Structure {
                path: String::new(),
                reason: format!(
                    "{} missing flags for {} columns",
                    missing.len(),
                    x.cols()
                ),
            });
        }
        Ok(ArrayData { x, missing })
    }

    /// A single all-missing observation of the given dimension.
    pub fn missing_observation(dim: usize) -> Self {
        ArrayData {
            x: Matrix::zeros(dim, 1),
            missing: vec![true],
        }
    }

    pub fn values(&self) -> &Matrix {
        &self.x
    }

    pub fn missing(&self) -> &[bool] {
        &self.missing
    }

    pub fn dim(&self) -> usize {
        self.x.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagData {
    child: Box<DataNode>,
    bags: Vec<Bag>,
    /// Optional positive per-instance weights, one per child observation.
    weights: Option<Vec<f64>>,
}

impl BagData {
    pub fn new(child: DataNode, bags: Vec<Bag>) -> Result<Self> {
        BagData::with_weights(child, bags, None)
    }

    pub fn with_weights(
        child: DataNode,
        bags: Vec<Bag>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = child.nobs();
        let mut seen = vec![false; n];
        for bag in &bags {
            for i in bag.iter() {
                if i >= n {
                    return Err(Error::Structure {
                        path: String::new(),
                        reason: format!("bag index {i} out of range for {n} instances"),
                    });
                }
                if seen[i] {
                    return Err(Error::Structure {
                        path: String::new(),
                        reason: format!("instance {i} assigned to more than one bag"),
                    });
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Structure {
                path: String::new(),
                reason: "bags do not cover all child instances".into(),
            });
        }
        if let Some(w) = &weights {
            if w.len() != n {
                return Err(Error::Structure {
                    path: String::new(),
                    reason: format!("{} weights for {n} instances", w.len()),
                });
            }
            if w.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
                return Err(Error::Structure {
                    path: String::new(),
                    reason: "instance weights must be positive and finite".into(),
                });
            }
        }
        Ok(BagData {
            child: Box::new(child),
            bags,
            weights,
        })
    }

    /// Replaces the per-instance weights, validating them against the child.
    pub fn attach_weights(self, weights: Vec<f64>) -> Result<Self> {
        BagData::with_weights(*self.child, self.bags, Some(weights))
    }

    pub fn child(&self) -> &DataNode {
        &self.child
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductData {
    /// Children keyed by name; keys are unique and stored in ascending
    /// order, frozen at construction.
    children: Vec<(String, DataNode)>,
    /// `missing[i][j]`: child `i` carries no data for observation `j`.
    missing: Vec<Vec<bool>>,
}

impl ProductData {
    /// Builds a product node; children are sorted by key here and the order
    /// never changes afterwards.
    pub fn new(mut children: Vec<(String, DataNode)>) -> Result<Self> {
        children.sort_by(|a, b| a.0.cmp(&b.0));
        let missing = children
            .iter()
            .map(|(_, c)| vec![false; c.nobs()])
            .collect();
        ProductData::validated(children, missing)
    }

    pub fn with_missing(
        mut children: Vec<(String, DataNode)>,
        missing_by_key: impl Fn(&str) -> Option<Vec<bool>>,
    ) -> Result<Self> {
        children.sort_by(|a, b| a.0.cmp(&b.0));
        let missing = children
            .iter()
            .map(|(k, c)| missing_by_key(k).unwrap_or_else(|| vec![false; c.nobs()]))
            .collect();
        ProductData::validated(children, missing)
    }

    fn validated(children: Vec<(String, DataNode)>, missing: Vec<Vec<bool>>) -> Result<Self> {
        if children.is_empty() {
            return Err(Error::Structure {
                path: String::new(),
                reason: "product node needs at least one child".into(),
            });
        }
        for pair in children.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Structure {
                    path: format!("/{}", pair[0].0),
                    reason: "duplicate product key".into(),
                });
            }
        }
        let n = children[0].1.nobs();
        for (key, child) in &children {
            if child.nobs() != n {
                return Err(Error::Structure {
                    path: format!("/{key}"),
                    reason: format!(
                        "child has {} observations, expected {n}",
                        child.nobs()
                    ),
                });
            }
        }
        for (i, flags) in missing.iter().enumerate() {
            if flags.len() != n {
                return Err(Error::Structure {
                    path: format!("/{}", children[i].0),
                    reason: "missing flags do not match observation count".into(),
                });
            }
        }
        Ok(ProductData { children, missing })
    }

    pub fn children(&self) -> &[(String, DataNode)] {
        &self.children
    }

    pub fn missing(&self) -> &[Vec<bool>] {
        &self.missing
    }

    pub fn child(&self, key: &str) -> Option<&DataNode> {
        self.children
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, c)| c)
    }
}

/// A sample tree holding one or more observations in column-batched form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum DataNode {
    Array(ArrayData),
    Bag(BagData),
    Product(ProductData),
}

impl DataNode {
    /// Number of observations this (sub)tree carries.
    pub fn nobs(&self) -> usize {
        match self {
            DataNode::Array(a) => a.values().cols(),
            DataNode::Bag(b) => b.bags.len(),
            DataNode::Product(p) => p.children[0].1.nobs(),
        }
    }

    /// Batches nodes of identical structure into a single tree; observation
    /// columns are concatenated in input order and bag index sets re-offset.
    pub fn merge(nodes: &[&DataNode]) -> Result<DataNode> {
        merge_at(nodes, &mut TreePath::root())
    }

    /// Restriction to the given observations (unique, in-range indices, kept
    /// in the given order). `slice(merge(a, b), indices_of_a)` reproduces `a`
    /// exactly.
    pub fn slice(&self, obs: &[usize]) -> Result<DataNode> {
        let n = self.nobs();
        let mut seen = vec![false; n];
        for &i in obs {
            if i >= n {
                return Err(Error::Invalid(format!(
                    "slice index {i} out of range for {n} observations"
                )));
            }
            if seen[i] {
                return Err(Error::Invalid(format!("slice index {i} repeated")));
            }
            seen[i] = true;
        }
        Ok(self.slice_unchecked(obs))
    }

    fn slice_unchecked(&self, obs: &[usize]) -> DataNode {
        match self {
            DataNode::Array(a) => DataNode::Array(ArrayData {
                x: a.x.select_cols(obs),
                missing: obs.iter().map(|&i| a.missing[i]).collect(),
            }),
            DataNode::Bag(b) => {
                // Keep referenced child instances in their original relative
                // order so that bags stored as ranges stay ranges and a
                // merge round-trip is structurally exact.
                let mut keep: Vec<usize> = obs
                    .iter()
                    .flat_map(|&i| b.bags[i].iter())
                    .collect();
                keep.sort_unstable();
                let mut remap = vec![usize::MAX; b.child.nobs()];
                for (new, &old) in keep.iter().enumerate() {
                    remap[old] = new;
                }
                let bags = obs
                    .iter()
                    .map(|&i| match &b.bags[i] {
                        Bag::Range(r) => Bag::Range(if r.is_empty() {
                            0..0
                        } else {
                            remap[r.start]..remap[r.end - 1] + 1
                        }),
                        Bag::List(v) => Bag::List(v.iter().map(|&i| remap[i]).collect()),
                    })
                    .collect();
                let weights = b
                    .weights
                    .as_ref()
                    .map(|w| keep.iter().map(|&i| w[i]).collect());
                DataNode::Bag(BagData {
                    child: Box::new(b.child.slice_unchecked(&keep)),
                    bags,
                    weights,
                })
            }
            DataNode::Product(p) => DataNode::Product(ProductData {
                children: p
                    .children
                    .iter()
                    .map(|(k, c)| (k.clone(), c.slice_unchecked(obs)))
                    .collect(),
                missing: p
                    .missing
                    .iter()
                    .map(|flags| obs.iter().map(|&i| flags[i]).collect())
                    .collect(),
            }),
        }
    }
}

/// Grows a '/'-separated tree path for error messages.
pub(crate) struct TreePath {
    segments: Vec<String>,
}

impl TreePath {
    pub(crate) fn root() -> Self {
        TreePath { segments: vec![] }
    }

    pub(crate) fn push(&mut self, segment: impl Into<String>) {
        self.segments.push(segment.into());
    }

    pub(crate) fn pop(&mut self) {
        self.segments.pop();
    }

    pub(crate) fn display(&self) -> String {
        if self.segments.is_empty() {
            "/".to_string()
        } else {
            format!("/{}", self.segments.join("/"))
        }
    }
}

fn merge_at(nodes: &[&DataNode], path: &mut TreePath) -> Result<DataNode> {
    let first = nodes.first().ok_or_else(|| Error::Invalid("merge of zero nodes".into()))?;
    match first {
        DataNode::Array(a0) => {
            let mut parts = Vec::with_capacity(nodes.len());
            let mut missing = Vec::new();
            for node in nodes {
                let DataNode::Array(a) = node else {
                    return Err(structure_mismatch(path, "array", node));
                };
                if a.dim() != a0.dim() {
                    return Err(Error::Structure {
                        path: path.display(),
                        reason: format!("array dims differ: {} vs {}", a0.dim(), a.dim()),
                    });
                }
                parts.push(a.values());
                missing.extend_from_slice(&a.missing);
            }
            Ok(DataNode::Array(ArrayData {
                x: Matrix::hconcat(&parts)?,
                missing,
            }))
        }
        DataNode::Bag(_) => {
            let mut children = Vec::with_capacity(nodes.len());
            let mut any_weights = false;
            for node in nodes {
                let DataNode::Bag(b) = node else {
                    return Err(structure_mismatch(path, "bag", node));
                };
                children.push(&*b.child);
                any_weights |= b.weights.is_some();
            }
            path.push("[]");
            let merged_child = merge_at(&children, path)?;
            path.pop();
            let mut bags = Vec::new();
            let mut weights = if any_weights { Some(Vec::new()) } else { None };
            let mut offset = 0;
            for node in nodes {
                let DataNode::Bag(b) = node else { unreachable!() };
                for bag in &b.bags {
                    bags.push(match bag {
                        Bag::Range(r) => Bag::Range(r.start + offset..r.end + offset),
                        Bag::List(v) => Bag::List(v.iter().map(|i| i + offset).collect()),
                    });
                }
                if let Some(out) = weights.as_mut() {
                    match &b.weights {
                        Some(w) => out.extend_from_slice(w),
                        // Unweighted inputs merge into a weighted batch as
                        // unit weights.
                        None => out.extend(std::iter::repeat_n(1.0, b.child.nobs())),
                    }
                }
                offset += b.child.nobs();
            }
            Ok(DataNode::Bag(BagData {
                child: Box::new(merged_child),
                bags,
                weights,
            }))
        }
        DataNode::Product(p0) => {
            for node in nodes {
                let DataNode::Product(p) = node else {
                    return Err(structure_mismatch(path, "product", node));
                };
                if p.children.len() != p0.children.len()
                    || p.children
                        .iter()
                        .zip(&p0.children)
                        .any(|((ka, _), (kb, _))| ka != kb)
                {
                    return Err(Error::Structure {
                        path: path.display(),
                        reason: "product keys differ".into(),
                    });
                }
            }
            let mut children = Vec::with_capacity(p0.children.len());
            let mut missing = Vec::with_capacity(p0.children.len());
            for (i, (key, _)) in p0.children.iter().enumerate() {
                let spot: Vec<&DataNode> = nodes
                    .iter()
                    .map(|n| match n {
                        DataNode::Product(p) => &p.children[i].1,
                        _ => unreachable!(),
                    })
                    .collect();
                path.push(key.clone());
                children.push((key.clone(), merge_at(&spot, path)?));
                path.pop();
                let mut flags = Vec::new();
                for node in nodes {
                    let DataNode::Product(p) = node else { unreachable!() };
                    flags.extend_from_slice(&p.missing[i]);
                }
                missing.push(flags);
            }
            Ok(DataNode::Product(ProductData { children, missing }))
        }
    }
}

fn structure_mismatch(path: &TreePath, expected: &str, got: &DataNode) -> Error {
    let kind = match got {
        DataNode::Array(_) => "array",
        DataNode::Bag(_) => "bag",
        DataNode::Product(_) => "product",
    };
    Error::Structure {
        path: path.display(),
        reason: format!("cannot merge {kind} node into {expected} node"),
    }
}
