//! Shared generators for the integration suites: random model/data tree
//! pairs, the synthetic multi-instance corpus, and the synthetic two-relation
//! interaction-graph dataset.

#![allow(dead_code)]

use std::collections::BTreeSet;

use hmill::agg::AggregationSpec;
use hmill::data::{ArrayData, Bag, BagData, DataNode, ProductData};
use hmill::graph::{BipartiteRelation, RelationBundle};
use hmill::linalg::{Activation, DenseLayer, Matrix};
use hmill::model::{ArrayModel, BagModel, ModelNode, ProductModel};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Structure blueprint shared by a model tree and its data trees.
#[derive(Debug, Clone)]
pub enum Shape {
    Leaf { dim: usize },
    Bag { child: Box<Shape>, weighted: bool },
    Product(Vec<(String, Shape)>),
}

/// Random tree of the given depth; the root is always a product holding at
/// least one bag so every generated case exercises all node kinds.
pub fn random_shape(rng: &mut ChaCha8Rng, depth: usize) -> Shape {
    fn sub(rng: &mut ChaCha8Rng, depth: usize) -> Shape {
        if depth == 0 {
            return Shape::Leaf {
                dim: rng.gen_range(1..=3),
            };
        }
        match rng.gen_range(0..10) {
            0..=2 => Shape::Leaf {
                dim: rng.gen_range(1..=3),
            },
            3..=6 => Shape::Bag {
                child: Box::new(sub(rng, depth - 1)),
                weighted: rng.gen_bool(0.5),
            },
            _ => {
                let n = rng.gen_range(2..=3);
                Shape::Product(
                    (0..n)
                        .map(|i| (format!("k{i}"), sub(rng, depth - 1)))
                        .collect(),
                )
            }
        }
    }
    let mut children = vec![
        (
            "bag".to_string(),
            Shape::Bag {
                child: Box::new(sub(rng, depth.saturating_sub(2))),
                weighted: rng.gen_bool(0.5),
            },
        ),
        ("vec".to_string(), sub(rng, depth.saturating_sub(1))),
    ];
    if rng.gen_bool(0.5) {
        children.push(("wide".to_string(), sub(rng, depth.saturating_sub(1))));
    }
    // Product children are keyed in ascending order everywhere.
    children.sort_by(|a, b| a.0.cmp(&b.0));
    Shape::Product(children)
}

fn random_layer(
    out: usize,
    inp: usize,
    act: Activation,
    rng: &mut ChaCha8Rng,
) -> DenseLayer {
    let weights = Matrix::from_vec(
        out,
        inp,
        (0..out * inp).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let bias = (0..out).map(|_| rng.gen_range(-0.5..0.5)).collect();
    DenseLayer::new(weights, bias, act).unwrap()
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Random model over a shape: one tanh layer per node (identity at the
/// root), all four aggregations with randomized parameters, random default
/// vectors. Dimensions stay small so finite differences remain cheap.
pub fn random_model(shape: &Shape, rng: &mut ChaCha8Rng, is_root: bool) -> ModelNode {
    let out_dim = rng.gen_range(1..=4);
    let act = if is_root {
        Activation::Identity
    } else {
        Activation::Tanh
    };
    match shape {
        Shape::Leaf { dim } => ModelNode::Array(ArrayModel {
            layers: vec![random_layer(out_dim, *dim, act, rng)],
            psi_in: random_vec(out_dim, rng),
        }),
        Shape::Bag { child, .. } => {
            let instance = random_model(child, rng, false);
            let mut agg = AggregationSpec::all_four(instance.output_dim());
            let n = agg.param_count();
            let params = random_vec(n, rng);
            agg.read_params(&params);
            ModelNode::Bag(BagModel {
                psi: random_vec(agg.output_dim(), rng),
                bag_layers: vec![random_layer(out_dim, agg.output_dim(), act, rng)],
                instance_model: Box::new(instance),
                agg,
            })
        }
        Shape::Product(children) => {
            let built: Vec<(String, ModelNode)> = children
                .iter()
                .map(|(k, c)| (k.clone(), random_model(c, rng, false)))
                .collect();
            let total: usize = built.iter().map(|(_, c)| c.output_dim()).sum();
            let psi = built
                .iter()
                .map(|(_, c)| random_vec(c.output_dim(), rng))
                .collect();
            ModelNode::Product(ProductModel {
                layers: vec![random_layer(out_dim, total, act, rng)],
                psi,
                children: built,
            })
        }
    }
}

/// Random batched data for a shape with `nobs` observations: missing leaf
/// columns, missing product children, empty bags and weighted bags all
/// appear with fixed probabilities.
pub fn random_data(shape: &Shape, nobs: usize, rng: &mut ChaCha8Rng) -> DataNode {
    match shape {
        Shape::Leaf { dim } => {
            let mut x = Matrix::zeros(*dim, nobs);
            let mut missing = vec![false; nobs];
            for (j, flag) in missing.iter_mut().enumerate() {
                if rng.gen_bool(0.15) {
                    *flag = true;
                } else {
                    for r in 0..*dim {
                        x.set(r, j, rng.gen_range(-1.0..1.0));
                    }
                }
            }
            DataNode::Array(ArrayData::with_missing(x, missing).unwrap())
        }
        Shape::Bag { child, weighted } => {
            let mut bags = Vec::with_capacity(nobs);
            let mut start = 0;
            for _ in 0..nobs {
                let len = rng.gen_range(0..=4);
                bags.push(Bag::Range(start..start + len));
                start += len;
            }
            let child_data = random_data(child, start, rng);
            let weights = weighted
                .then(|| (0..start).map(|_| rng.gen_range(0.25..2.0)).collect());
            DataNode::Bag(BagData::with_weights(child_data, bags, weights).unwrap())
        }
        Shape::Product(children) => {
            let built: Vec<(String, DataNode)> = children
                .iter()
                .map(|(k, c)| (k.clone(), random_data(c, nobs, rng)))
                .collect();
            let missing: Vec<(String, Vec<bool>)> = children
                .iter()
                .map(|(k, _)| {
                    (
                        k.clone(),
                        (0..nobs).map(|_| rng.gen_bool(0.15)).collect(),
                    )
                })
                .collect();
            DataNode::Product(
                ProductData::with_missing(built, |k| {
                    missing.iter().find(|(key, _)| key == k).map(|(_, f)| f.clone())
                })
                .unwrap(),
            )
        }
    }
}

/// Relative disagreement between an analytic and a numeric gradient entry;
/// near-zero pairs fall back to an absolute comparison.
pub fn grad_disagreement(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom >= 1e-4 {
        (analytic - numeric).abs() / denom
    } else if (analytic - numeric).abs() <= 1e-8 {
        0.0
    } else {
        1.0
    }
}

/// Synthetic multi-instance corpus: bags of 2 to 10 points drawn uniformly
/// from the square `[-0.5, 1.5]^2`; a bag is positive iff any point lies
/// within radius 0.3 of (0.5, 0.5). Documents carry the points under
/// `points` and the class under `cls`.
pub fn mil_corpus(n: usize, seed: u64) -> Vec<serde_json::Value> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.gen_range(2..=10);
            let mut points = Vec::with_capacity(k);
            let mut positive = false;
            for _ in 0..k {
                let x: f64 = rng.gen_range(-0.5..1.5);
                let y: f64 = rng.gen_range(-0.5..1.5);
                positive |= (x - 0.5).powi(2) + (y - 0.5).powi(2) < 0.09;
                points.push(serde_json::json!({ "x": x, "y": y }));
            }
            serde_json::json!({
                "points": points,
                "cls": if positive { "pos" } else { "neg" },
            })
        })
        .collect()
}

pub const GRAPH_DOMAINS: usize = 2000;
pub const GRAPH_CLIQUES: usize = 3;
pub const GRAPH_CLIQUE_SIZE: usize = 30;

pub struct SyntheticGraphs {
    pub bundles: Vec<RelationBundle>,
    /// Sorted domain ids; index in this list is the universe index.
    pub universe: Vec<String>,
    /// Blacklist clusters as universe indices.
    pub clusters: Vec<Vec<usize>>,
    pub labels: Vec<bool>,
}

/// Two-relation synthetic dataset with three planted malicious cliques:
/// malicious clients co-visit domains of one clique (plus popular hubs and
/// benign "victim" domains), benign clients browse at random, and each
/// clique shares a pair of certificate issuers.
pub fn synthetic_graphs(seed: u64) -> SyntheticGraphs {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = |i: usize| format!("d{i:04}");
    let mut clusters = Vec::new();
    let mut labels = vec![false; GRAPH_DOMAINS];
    for c in 0..GRAPH_CLIQUES {
        let members: Vec<usize> = (c * GRAPH_CLIQUE_SIZE..(c + 1) * GRAPH_CLIQUE_SIZE).collect();
        for &m in &members {
            labels[m] = true;
        }
        clusters.push(members);
    }
    let benign_from = GRAPH_CLIQUES * GRAPH_CLIQUE_SIZE;

    let mut client_edges: Vec<(String, String)> = Vec::new();
    let mut client_no = 0;
    for cluster in &clusters {
        for _ in 0..40 {
            let name = format!("mc{client_no:05}");
            client_no += 1;
            let k = rng.gen_range(6..=14);
            let mut picks = cluster.clone();
            picks.shuffle(&mut rng);
            for &d in picks.iter().take(k) {
                client_edges.push((domain(d), name.clone()));
            }
            // Malicious clients also browse hubs, victims and random sites.
            for _ in 0..rng.gen_range(2..5) {
                let roll: f64 = rng.gen();
                let d = if roll < 0.4 {
                    GRAPH_DOMAINS - 1 - rng.gen_range(0..20)
                } else if roll < 0.8 {
                    benign_from + rng.gen_range(0..60)
                } else {
                    rng.gen_range(benign_from..GRAPH_DOMAINS)
                };
                client_edges.push((domain(d), name.clone()));
            }
        }
    }
    for _ in 0..1200 {
        let name = format!("bc{client_no:05}");
        client_no += 1;
        for _ in 0..rng.gen_range(2..=6) {
            let d = rng.gen_range(0..GRAPH_DOMAINS);
            client_edges.push((domain(d), name.clone()));
        }
        for _ in 0..rng.gen_range(1..3) {
            let d = GRAPH_DOMAINS - 1 - rng.gen_range(0..20);
            client_edges.push((domain(d), name.clone()));
        }
    }

    let mut cert_edges: Vec<(String, String)> = Vec::new();
    for (c, cluster) in clusters.iter().enumerate() {
        for (j, &d) in cluster.iter().enumerate() {
            cert_edges.push((domain(d), format!("mi{c}_{}", j % 2)));
        }
    }
    for i in 0..500 {
        let issuer = format!("bi{i:04}");
        for _ in 0..rng.gen_range(2..=5) {
            let d = rng.gen_range(benign_from..GRAPH_DOMAINS);
            cert_edges.push((domain(d), issuer.clone()));
        }
    }

    let mut bundles = vec![
        RelationBundle::new(BipartiteRelation::from_edges("clients", &client_edges)),
        RelationBundle::new(BipartiteRelation::from_edges("certs", &cert_edges)),
    ];
    bundles.sort_by(|a, b| a.relation.name.cmp(&b.relation.name));
    SyntheticGraphs {
        bundles,
        universe: (0..GRAPH_DOMAINS).map(domain).collect(),
        clusters,
        labels,
    }
}

pub fn blacklist_ids(syn: &SyntheticGraphs) -> BTreeSet<String> {
    syn.clusters
        .iter()
        .flatten()
        .map(|&i| syn.universe[i].clone())
        .collect()
}
