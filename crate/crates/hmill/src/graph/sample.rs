use std::collections::BTreeSet;

use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{edge_features, BipartiteRelation, TransformedGraph, EDGE_FEATURE_DIM};
use crate::data::{ArrayData, Bag, BagData, DataNode, ProductData};
use crate::encode::{BagExtractor, Encoder, Extractor, LeafExtractor, ProductExtractor};
use crate::linalg::Matrix;
use crate::schema::LeafKind;
use crate::Result;

/// A relation together with its one-mode projection.
#[derive(Debug, Clone)]
pub struct RelationBundle {
    pub relation: BipartiteRelation,
    pub graph: TransformedGraph,
}

impl RelationBundle {
    pub fn new(relation: BipartiteRelation) -> Self {
        let graph = super::transform(&relation);
        RelationBundle { relation, graph }
    }
}

/// Deterministic per-(seed, vertex, stream) generator; sampling is
/// reproducible independently of iteration order.
fn derived_rng(seed: u64, vertex: &str, stream: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(vertex.as_bytes());
    hasher.update([0u8]);
    hasher.update(stream.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// Caps a neighbor list: up to `cap` entries sampled uniformly without
/// replacement, each carrying the importance weight `count / kept`. `None`
/// keeps everything with weight one.
fn cap_uniform(
    items: &[usize],
    cap: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, f64) {
    match cap {
        Some(k) if items.len() > k => {
            let mut picked: Vec<usize> = index_sample(rng, items.len(), k)
                .into_iter()
                .map(|i| items[i])
                .collect();
            picked.sort_unstable();
            (picked, items.len() as f64 / k as f64)
        }
        _ => (items.to_vec(), 1.0),
    }
}

/// The extractor shape matching [`build_vertex_sample`] output: a product
/// over relation names, each child a weighted bag of edge-feature vectors.
/// Reflecting a model from it yields a one-step inference model.
pub fn vertex_sample_extractor(relation_names: &[String]) -> Extractor {
    let mut names = relation_names.to_vec();
    names.sort();
    let children = names
        .iter()
        .map(|name| {
            (
                name.clone(),
                Extractor::Bag(BagExtractor {
                    child: Box::new(Extractor::Leaf(LeafExtractor {
                        encoder: Encoder::RawVector {
                            dims: EDGE_FEATURE_DIM,
                        },
                        source_kind: LeafKind::Number,
                    })),
                }),
            )
        })
        .collect();
    Extractor::Product(ProductExtractor {
        children,
        ignored_keys: vec![],
    })
}

fn feature_bag(columns: &[[f64; EDGE_FEATURE_DIM]], weights: Vec<f64>) -> DataNode {
    let mut x = Matrix::zeros(EDGE_FEATURE_DIM, columns.len());
    for (j, col) in columns.iter().enumerate() {
        x.set_col(j, col);
    }
    let n = columns.len();
    DataNode::Bag(
        BagData::with_weights(
            DataNode::Array(ArrayData::new(x)),
            vec![Bag::Range(0..n)],
            Some(weights),
        )
        .expect("one full bag"),
    )
}

fn empty_feature_bag() -> DataNode {
    DataNode::Bag(
        BagData::with_weights(
            DataNode::Array(ArrayData::new(Matrix::zeros(EDGE_FEATURE_DIM, 0))),
            vec![Bag::Range(0..0)],
            Some(vec![]),
        )
        .expect("one empty bag"),
    )
}

/// One-observation sample describing a vertex through its neighborhoods in
/// every relation: a product with one weighted bag of edge features per
/// relation. Edges to seed vertices are always kept with weight one; from
/// the remaining neighbors at most `cap` are sampled uniformly without
/// replacement and reweighted by `count / kept`. A vertex absent from a
/// relation yields a missing product child; a present but isolated vertex
/// yields an empty bag.
pub fn build_vertex_sample(
    vertex_id: &str,
    relations: &[RelationBundle],
    seeds: &BTreeSet<String>,
    cap: Option<usize>,
    seed: u64,
) -> Result<DataNode> {
    let mut children = Vec::with_capacity(relations.len());
    let mut missing = Vec::with_capacity(relations.len());
    for bundle in relations {
        let rel = &bundle.relation;
        let name = rel.name.clone();
        match rel.left_index_of(vertex_id) {
            None => {
                children.push((name.clone(), empty_feature_bag()));
                missing.push((name, vec![true]));
            }
            Some(v) => {
                let seed_idx: BTreeSet<usize> = seeds
                    .iter()
                    .filter_map(|id| rel.left_index_of(id))
                    .collect();
                let mut positives = Vec::new();
                let mut negatives = Vec::new();
                for &u in bundle.graph.neighbors(v) {
                    if seed_idx.contains(&(u as usize)) {
                        positives.push(u as usize);
                    } else {
                        negatives.push(u as usize);
                    }
                }
                let mut rng = derived_rng(seed, vertex_id, &rel.name);
                let (kept_neg, neg_weight) = cap_uniform(&negatives, cap, &mut rng);
                let mut cols = Vec::with_capacity(positives.len() + kept_neg.len());
                let mut weights = Vec::with_capacity(cols.capacity());
                for &u in &positives {
                    cols.push(edge_features(&bundle.graph, rel, v, u, &seed_idx)?);
                    weights.push(1.0);
                }
                for &u in &kept_neg {
                    cols.push(edge_features(&bundle.graph, rel, v, u, &seed_idx)?);
                    weights.push(neg_weight);
                }
                children.push((name.clone(), feature_bag(&cols, weights)));
                missing.push((name, vec![false]));
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

/// Neighborhood access for multi-step sampling: one bag per edge type (and
/// direction, for directed graphs).
pub trait NeighborSource {
    fn vertex_count(&self) -> usize;
    /// Names of the neighborhood bags, fixed order.
    fn bag_names(&self) -> Vec<String>;
    fn neighbors(&self, v: usize, bag: usize) -> Vec<usize>;
}

impl NeighborSource for TransformedGraph {
    fn vertex_count(&self) -> usize {
        TransformedGraph::vertex_count(self)
    }

    fn bag_names(&self) -> Vec<String> {
        vec!["nbr".to_string()]
    }

    fn neighbors(&self, v: usize, _bag: usize) -> Vec<usize> {
        TransformedGraph::neighbors(self, v)
            .iter()
            .map(|&u| u as usize)
            .collect()
    }
}

/// Directed graph with typed edges; each type contributes an incoming and
/// an outgoing neighborhood bag.
#[derive(Debug, Clone)]
pub struct TypedDigraph {
    type_names: Vec<String>,
    /// `out[t][v]`: successors of `v` through type-`t` edges.
    out: Vec<Vec<Vec<usize>>>,
    /// `incoming[t][v]`: predecessors of `v` through type-`t` edges.
    incoming: Vec<Vec<Vec<usize>>>,
}

impl TypedDigraph {
    pub fn new(n: usize, type_names: Vec<String>) -> Self {
        let k = type_names.len();
        TypedDigraph {
            type_names,
            out: vec![vec![Vec::new(); n]; k],
            incoming: vec![vec![Vec::new(); n]; k],
        }
    }

    pub fn add_edge(&mut self, edge_type: usize, from: usize, to: usize) {
        self.out[edge_type][from].push(to);
        self.incoming[edge_type][to].push(from);
    }
}

impl NeighborSource for TypedDigraph {
    fn vertex_count(&self) -> usize {
        self.out.first().map_or(0, Vec::len)
    }

    fn bag_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(2 * self.type_names.len());
        for t in &self.type_names {
            names.push(format!("{t}:in"));
            names.push(format!("{t}:out"));
        }
        names
    }

    fn neighbors(&self, v: usize, bag: usize) -> Vec<usize> {
        let (t, dir) = (bag / 2, bag % 2);
        if dir == 0 {
            self.incoming[t][v].clone()
        } else {
            self.out[t][v].clone()
        }
    }
}

/// Recursive neighborhood sample of depth `k + 1` rooted at `v`: a product
/// of the vertex payload and one weighted bag per edge type; each neighbor
/// instance repeats the construction until depth `k`, where only the
/// payload remains. With `exclude_feedback` the vertex a bag was reached
/// from is removed from that bag's neighborhood. Bags above `cap` neighbors
/// are sampled uniformly with importance weights as in
/// [`build_vertex_sample`].
pub fn k_step_sample(
    v: usize,
    source: &dyn NeighborSource,
    k: usize,
    exclude_feedback: bool,
    payload: &dyn Fn(usize) -> DataNode,
    cap: Option<usize>,
    seed: u64,
) -> Result<DataNode> {
    assert!(k >= 1, "k_step_sample needs k >= 1");
    build_step(v, None, 0, source, k, exclude_feedback, payload, cap, seed)
}

#[allow(clippy::too_many_arguments)]
fn build_step(
    v: usize,
    parent: Option<usize>,
    depth: usize,
    source: &dyn NeighborSource,
    k: usize,
    exclude_feedback: bool,
    payload: &dyn Fn(usize) -> DataNode,
    cap: Option<usize>,
    seed: u64,
) -> Result<DataNode> {
    let mut children = vec![("self".to_string(), payload(v))];
    if depth < k {
        for (bag_idx, bag_name) in source.bag_names().into_iter().enumerate() {
            let mut nbrs = source.neighbors(v, bag_idx);
            if exclude_feedback {
                if let Some(p) = parent {
                    nbrs.retain(|&u| u != p);
                }
            }
            let mut rng = derived_rng(seed, &format!("{v}@{depth}"), &bag_name);
            let (kept, weight) = cap_uniform(&nbrs, cap, &mut rng);
            let node = if kept.is_empty() {
                // Shape template for the empty bag: the current vertex
                // expanded one level deeper, restricted to zero observations.
                let template = build_step(
                    v,
                    parent,
                    depth + 1,
                    source,
                    k,
                    exclude_feedback,
                    payload,
                    cap,
                    seed,
                )?;
                DataNode::Bag(
                    BagData::with_weights(
                        template.slice(&[])?,
                        vec![Bag::Range(0..0)],
                        Some(vec![]),
                    )
                    .expect("one empty bag"),
                )
            } else {
                let mut instances = Vec::with_capacity(kept.len());
                for &u in &kept {
                    instances.push(build_step(
                        u,
                        Some(v),
                        depth + 1,
                        source,
                        k,
                        exclude_feedback,
                        payload,
                        cap,
                        seed,
                    )?);
                }
                let refs: Vec<&DataNode> = instances.iter().collect();
                let merged = DataNode::merge(&refs)?;
                let n = merged.nobs();
                DataNode::Bag(
                    BagData::with_weights(
                        merged,
                        vec![Bag::Range(0..n)],
                        Some(vec![weight; n]),
                    )
                    .expect("one full bag"),
                )
            };
            children.push((bag_name, node));
        }
    }
    Ok(DataNode::Product(ProductData::new(children)?))
}
