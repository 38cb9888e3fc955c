use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ArrayModel, BagModel, ModelNode, ProductModel};
use crate::agg::{AggKind, AggregationSpec};
use crate::encode::Extractor;
use crate::linalg::{Activation, DenseLayer};

/// Shape prescription for reflecting a model from an extractor tree: every
/// inner mapping is one dense layer of width `hidden`, the root gets one
/// more layer down to `output_dim`. The last layer feeding an aggregation
/// uses tanh, every other hidden layer relu, and the root output is linear
/// (logits; softmax happens at the loss).
#[derive(Debug, Clone)]
pub struct Prescription {
    pub hidden: usize,
    pub output_dim: usize,
    pub agg: Vec<AggKind>,
    pub seed: u64,
}

impl Prescription {
    pub fn new(hidden: usize, output_dim: usize, seed: u64) -> Self {
        Prescription {
            hidden,
            output_dim,
            agg: vec![AggKind::Max, AggKind::Mean, AggKind::Lse, AggKind::PNorm],
            seed,
        }
    }
}

/// Builds a model node per extractor node, mirrored. Weights are
/// Glorot-normal from the prescription seed (children drawn before their
/// parent's mapping), biases and default vectors zero; rebuilding with the
/// same seed reproduces parameters exactly.
pub fn reflect_model(extractor: &Extractor, prescription: &Prescription) -> ModelNode {
    let mut rng = ChaCha8Rng::seed_from_u64(prescription.seed);
    build(extractor, prescription, &mut rng, false, true)
}

fn mapping(
    in_dim: usize,
    prescription: &Prescription,
    rng: &mut ChaCha8Rng,
    feeds_agg: bool,
    is_root: bool,
) -> Vec<DenseLayer> {
    let hidden_act = if feeds_agg {
        Activation::Tanh
    } else {
        Activation::Relu
    };
    if is_root {
        vec![
            DenseLayer::glorot(prescription.hidden, in_dim, hidden_act, rng),
            DenseLayer::glorot(
                prescription.output_dim,
                prescription.hidden,
                Activation::Identity,
                rng,
            ),
        ]
    } else {
        vec![DenseLayer::glorot(prescription.hidden, in_dim, hidden_act, rng)]
    }
}

fn build(
    extractor: &Extractor,
    prescription: &Prescription,
    rng: &mut ChaCha8Rng,
    feeds_agg: bool,
    is_root: bool,
) -> ModelNode {
    match extractor {
        Extractor::Leaf(leaf) => {
            let layers = mapping(
                leaf.encoder.output_dim(),
                prescription,
                rng,
                feeds_agg,
                is_root,
            );
            let out_dim = layers.last().expect("mapping nonempty").out_dim();
            ModelNode::Array(ArrayModel {
                layers,
                psi_in: vec![0.0; out_dim],
            })
        }
        Extractor::Bag(bag) => {
            let instance_model = build(&bag.child, prescription, rng, true, false);
            let m = instance_model.output_dim();
            let agg = AggregationSpec::new(&prescription.agg, m);
            let bag_layers = mapping(agg.output_dim(), prescription, rng, feeds_agg, is_root);
            ModelNode::Bag(BagModel {
                instance_model: Box::new(instance_model),
                psi: vec![0.0; agg.output_dim()],
                agg,
                bag_layers,
            })
        }
        Extractor::Product(product) => {
            let mut children = Vec::with_capacity(product.children.len());
            for (key, child) in &product.children {
                children.push((key.clone(), build(child, prescription, rng, false, false)));
            }
            let total: usize = children.iter().map(|(_, c)| c.output_dim()).sum();
            let layers = mapping(total, prescription, rng, feeds_agg, is_root);
            let psi = children
                .iter()
                .map(|(_, c)| vec![0.0; c.output_dim()])
                .collect();
            ModelNode::Product(ProductModel {
                children,
                layers,
                psi,
            })
        }
    }
}
