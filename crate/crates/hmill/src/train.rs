//! Minibatch training: seeded shuffling, optional class-balanced batches,
//! loss selection and Adam updates over the canonical parameter vector.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::DataNode;
use crate::linalg::{softmax_columns, weighted_cross_entropy_from_probs, AdamState, Matrix};
use crate::model::ModelNode;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    MulticlassCrossEntropy,
    /// Binary cross entropy over two softmax outputs with class weights
    /// `w0` (negative class) and `w1` (positive class).
    WeightedBinary { w0: f64, w1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassBalancing {
    None,
    /// Every minibatch draws an equal share per class (within one), each
    /// batch sampled without repetition; a class smaller than its share
    /// contributes everything it has.
    BalancedMinibatch,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub balancing: ClassBalancing,
    /// Keep the default (psi) vectors fixed instead of training them.
    pub freeze_psi: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch: 100,
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss: LossKind::MulticlassCrossEntropy,
            seed: 0,
            balancing: ClassBalancing::None,
            freeze_psi: false,
        }
    }
}

fn loss_and_logit_grad(
    loss: LossKind,
    logits: &Matrix,
    labels: &[usize],
) -> Result<(f64, Matrix)> {
    let probs = softmax_columns(logits);
    match loss {
        LossKind::MulticlassCrossEntropy => {
            weighted_cross_entropy_from_probs(&probs, labels, None)
        }
        LossKind::WeightedBinary { w0, w1 } => {
            if logits.rows() != 2 {
                return Err(Error::Invalid(format!(
                    "weighted binary loss needs 2 output units, model has {}",
                    logits.rows()
                )));
            }
            if w0 <= 0.0 || w1 <= 0.0 {
                return Err(Error::Invalid("class weights must be positive".into()));
            }
            weighted_cross_entropy_from_probs(&probs, labels, Some(&[w0, w1]))
        }
    }
}

fn minibatch_indices(
    n: usize,
    labels: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    match cfg.balancing {
        ClassBalancing::None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            order.chunks(cfg.batch).map(<[usize]>::to_vec).collect()
        }
        ClassBalancing::BalancedMinibatch => {
            let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
            let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
            for (i, &label) in labels.iter().enumerate() {
                by_class[label].push(i);
            }
            by_class.retain(|c| !c.is_empty());
            let n_batches = n.div_ceil(cfg.batch);
            let mut batches = Vec::with_capacity(n_batches);
            for _ in 0..n_batches {
                let mut batch = Vec::with_capacity(cfg.batch);
                let base = cfg.batch / by_class.len();
                let mut remainder = cfg.batch % by_class.len();
                for class in &mut by_class {
                    let mut take = base;
                    if remainder > 0 {
                        take += 1;
                        remainder -= 1;
                    }
                    let take = take.min(class.len());
                    class.shuffle(rng);
                    batch.extend_from_slice(&class[..take]);
                }
                batch.shuffle(rng);
                batches.push(batch);
            }
            batches
        }
    }
}

/// Trains the model in place; returns the mean loss per epoch. Identical
/// seeds produce identical parameter trajectories.
pub fn train(
    model: &mut ModelNode,
    data: &DataNode,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let n = data.nobs();
    if labels.len() != n {
        return Err(Error::Shape {
            op: "train",
            left: format!("{n} observations"),
            right: format!("{} labels", labels.len()),
        });
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::Invalid("batch size and epochs must be >= 1".into()));
    }
    let mut params = model.parameters();
    let mut adam =
        AdamState::with_hyperparams(params.len(), cfg.alpha, cfg.beta1, cfg.beta2, cfg.epsilon);
    let psi_mask = cfg.freeze_psi.then(|| model.psi_mask());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut batch_index = 0usize;
    for _ in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let batches = minibatch_indices(n, labels, cfg, &mut rng);
        let n_batches = batches.len();
        for batch in batches {
            let slice = data.slice(&batch)?;
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, tape) = model.forward_tape(&slice)?;
            let (loss, d_logits) = loss_and_logit_grad(cfg.loss, &logits, &batch_labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { batch_index });
            }
            let mut grads = model.backward(&tape, &d_logits)?;
            if let Some(mask) = &psi_mask {
                for (g, &frozen) in grads.iter_mut().zip(mask) {
                    if frozen {
                        *g = 0.0;
                    }
                }
            }
            adam.step(&mut params, &grads)?;
            model.set_parameters(&params)?;
            epoch_loss += loss;
            batch_index += 1;
        }
        history.push(epoch_loss / n_batches as f64);
    }
    Ok(history)
}

/// Class probabilities: softmax over the model output, one column per
/// observation.
pub fn predict_proba(model: &ModelNode, data: &DataNode) -> Result<Matrix> {
    Ok(softmax_columns(&model.forward(data)?))
}

/// Positive-class probabilities of a two-class model.
pub fn predict_positive(model: &ModelNode, data: &DataNode) -> Result<Vec<f64>> {
    let probs = predict_proba(model, data)?;
    if probs.rows() != 2 {
        return Err(Error::Invalid(format!(
            "expected a 2-class model, found {} outputs",
            probs.rows()
        )));
    }
    Ok((0..probs.cols()).map(|j| probs.get(1, j)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ArrayData, Bag, BagData};
    use crate::encode::{BagExtractor, Extractor, LeafExtractor};
    use crate::model::{reflect_model, Prescription};
    use crate::schema::LeafKind;
    use rand::Rng;

    fn toy_problem(n: usize, seed: u64) -> (DataNode, Vec<usize>) {
        // Bags of scalars; positive iff any element > 0.75.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::new();
        let mut bags = Vec::new();
        let mut labels = Vec::new();
        let mut start = 0;
        for _ in 0..n {
            let len = rng.gen_range(1..=4);
            let mut positive = false;
            for _ in 0..len {
                let v: f64 = rng.gen_range(0.0..1.0);
                positive |= v > 0.75;
                values.push(v);
            }
            bags.push(Bag::Range(start..start + len));
            start += len;
            labels.push(usize::from(positive));
        }
        let x = Matrix::from_vec(1, values.len(), values).unwrap();
        let data = DataNode::Bag(BagData::new(DataNode::Array(ArrayData::new(x)), bags).unwrap());
        (data, labels)
    }

    fn toy_extractor() -> Extractor {
        Extractor::Bag(BagExtractor {
            child: Box::new(Extractor::Leaf(LeafExtractor {
                encoder: crate::encode::Encoder::NumericIdentity,
                source_kind: LeafKind::Number,
            })),
        })
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (data, labels) = toy_problem(40, 3);
        let mut model = reflect_model(&toy_extractor(), &Prescription::new(8, 2, 5));
        let before = model.parameters();
        let cfg = TrainConfig {
            epochs: 2,
            batch: 10,
            alpha: 0.0,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &labels, &cfg).unwrap();
        assert_eq!(model.parameters(), before);
    }

    #[test]
    fn same_seed_gives_identical_trajectories() {
        let (data, labels) = toy_problem(60, 4);
        let cfg = TrainConfig {
            epochs: 3,
            batch: 16,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut m1 = reflect_model(&toy_extractor(), &Prescription::new(8, 2, 5));
        let mut m2 = m1.clone();
        let h1 = train(&mut m1, &data, &labels, &cfg).unwrap();
        let h2 = train(&mut m2, &data, &labels, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn loss_decreases_on_the_toy_task() {
        let (data, labels) = toy_problem(200, 7);
        let mut model = reflect_model(&toy_extractor(), &Prescription::new(16, 2, 5));
        let cfg = TrainConfig {
            epochs: 15,
            batch: 25,
            alpha: 0.01,
            seed: 2,
            ..TrainConfig::default()
        };
        let history = train(&mut model, &data, &labels, &cfg).unwrap();
        assert!(history.last().unwrap() < &(history[0] * 0.5), "{history:?}");
    }

    #[test]
    fn balanced_minibatches_have_equal_class_counts() {
        let labels: Vec<usize> = (0..97).map(|i| usize::from(i % 5 == 0)).collect();
        let cfg = TrainConfig {
            batch: 16,
            balancing: ClassBalancing::BalancedMinibatch,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches = minibatch_indices(labels.len(), &labels, &cfg, &mut rng);
        assert_eq!(batches.len(), 97usize.div_ceil(16));
        for batch in &batches {
            let pos = batch.iter().filter(|&&i| labels[i] == 1).count();
            let neg = batch.len() - pos;
            assert!(pos.abs_diff(neg) <= 1, "pos {pos} vs neg {neg}");
            let mut unique = batch.clone();
            unique.sort_unstable();
            unique.dedup();
            assert_eq!(unique.len(), batch.len(), "repetition inside a batch");
        }
    }

    #[test]
    fn weighted_binary_loss_needs_two_outputs() {
        let (data, labels) = toy_problem(10, 1);
        let mut model = reflect_model(&toy_extractor(), &Prescription::new(4, 3, 5));
        let cfg = TrainConfig {
            epochs: 1,
            batch: 5,
            loss: LossKind::WeightedBinary { w0: 0.9, w1: 0.1 },
            ..TrainConfig::default()
        };
        assert!(train(&mut model, &data, &labels, &cfg).is_err());
    }

    #[test]
    fn frozen_psi_stays_at_init() {
        let (data, labels) = toy_problem(50, 9);
        let mut model = reflect_model(&toy_extractor(), &Prescription::new(8, 2, 5));
        let mask = model.psi_mask();
        let before = model.parameters();
        let cfg = TrainConfig {
            epochs: 2,
            batch: 10,
            alpha: 0.01,
            freeze_psi: true,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &labels, &cfg).unwrap();
        let after = model.parameters();
        let mut trained_any = false;
        for ((b, a), frozen) in before.iter().zip(&after).zip(&mask) {
            if *frozen {
                assert_eq!(b, a);
            } else {
                trained_any |= b != a;
            }
        }
        assert!(trained_any);
    }

    #[test]
    fn untrained_symmetric_model_predicts_uniform() {
        let mut model = reflect_model(&toy_extractor(), &Prescription::new(8, 2, 5));
        // Zero out the final layer so logits are exactly zero.
        let mut params = model.parameters();
        let ModelNode::Bag(bag) = &model else { panic!() };
        let skip: usize = bag.bag_layers[0].weights.data().len() + bag.bag_layers[0].bias.len();
        let last_w = bag.bag_layers[1].weights.data().len() + bag.bag_layers[1].bias.len();
        for p in params.iter_mut().skip(skip).take(last_w) {
            *p = 0.0;
        }
        model.set_parameters(&params).unwrap();
        let (data, _) = toy_problem(5, 2);
        let probs = predict_proba(&model, &data).unwrap();
        for j in 0..probs.cols() {
            assert_eq!(probs.get(0, j), 0.5);
            assert_eq!(probs.get(1, j), 0.5);
        }
    }

    #[test]
    fn probabilities_invariant_under_slicing() {
        let (data, labels) = toy_problem(30, 12);
        let mut model = reflect_model(&toy_extractor(), &Prescription::new(8, 2, 5));
        let cfg = TrainConfig {
            epochs: 2,
            batch: 10,
            ..TrainConfig::default()
        };
        train(&mut model, &data, &labels, &cfg).unwrap();
        let full = predict_proba(&model, &data).unwrap();
        for j in [0usize, 7, 29] {
            let single = data.slice(&[j]).unwrap();
            let p = predict_proba(&model, &single).unwrap();
            for r in 0..2 {
                assert!((p.get(r, 0) - full.get(r, j)).abs() <= 1e-9);
            }
        }
    }
}
