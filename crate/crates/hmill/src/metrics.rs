//! Evaluation: accuracy, macro-F1, exact PR/ROC step curves and their areas,
//! resampled curves on linear or logarithmic axes, and the blacklist k-fold
//! scoring protocol.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::linalg::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub auprc: Option<f64>,
    pub auroc: Option<f64>,
}

/// Accuracy and macro-F1 at argmax; for two-class problems also the exact
/// areas under the ROC and PR curves from the class-1 probabilities.
pub fn metrics(probs: &Matrix, labels: &[usize]) -> Result<Metrics> {
    if probs.cols() != labels.len() || labels.is_empty() {
        return Err(Error::Shape {
            op: "metrics",
            left: format!("{} probability columns", probs.cols()),
            right: format!("{} labels", labels.len()),
        });
    }
    let n_classes = probs.rows();
    let predictions: Vec<usize> = (0..probs.cols())
        .map(|j| {
            (0..n_classes)
                .max_by(|&a, &b| {
                    probs
                        .get(a, j)
                        .partial_cmp(&probs.get(b, j))
                        .expect("finite probabilities")
                })
                .expect("at least one class")
        })
        .collect();
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    let accuracy = correct as f64 / labels.len() as f64;
    let macro_f1 = macro_f1(&predictions, labels, n_classes);

    let (auprc, auroc) = if n_classes == 2 {
        let scores: Vec<f64> = (0..probs.cols()).map(|j| probs.get(1, j)).collect();
        let binary: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
        match (auprc(&scores, &binary), auroc(&scores, &binary)) {
            (Ok(pr), Ok(roc)) => (Some(pr), Some(roc)),
            // Single-class labels leave the areas undefined.
            _ => (None, None),
        }
    } else {
        (None, None)
    };
    Ok(Metrics {
        accuracy,
        macro_f1,
        auprc,
        auroc,
    })
}

/// Unweighted mean of per-class F1 over all classes; a class with no
/// predictions and no positives contributes zero.
pub fn macro_f1(predictions: &[usize], labels: &[usize], n_classes: usize) -> f64 {
    let mut f1_sum = 0.0;
    for class in 0..n_classes {
        let tp = predictions
            .iter()
            .zip(labels)
            .filter(|&(&p, &l)| p == class && l == class)
            .count() as f64;
        let fp = predictions
            .iter()
            .zip(labels)
            .filter(|&(&p, &l)| p == class && l != class)
            .count() as f64;
        let fn_ = predictions
            .iter()
            .zip(labels)
            .filter(|&(&p, &l)| p != class && l == class)
            .count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        if denom > 0.0 {
            f1_sum += 2.0 * tp / denom;
        }
    }
    f1_sum / n_classes as f64
}

/// Threshold groups in descending score order; observations with equal
/// scores move together. Each entry is (score, positives, negatives).
fn score_groups(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, usize, usize)>> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Shape {
            op: "ranking",
            left: format!("{} scores", scores.len()),
            right: format!("{} labels", labels.len()),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Invalid("scores must be finite".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for &i in &order {
        let (pos, neg) = if labels[i] { (1, 0) } else { (0, 1) };
        match groups.last_mut() {
            Some((s, p, n)) if *s == scores[i] => {
                *p += pos;
                *n += neg;
            }
            _ => groups.push((scores[i], pos, neg)),
        }
    }
    Ok(groups)
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Invalid(
            "both classes must be present for ranking metrics".into(),
        ));
    }
    Ok((pos, neg))
}

/// Exact ROC step curve as (false positive rate, true positive rate) points
/// from (0, 0) to (1, 1), one point per score group.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = class_counts(labels)?;
    let groups = score_groups(scores, labels)?;
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, p, n) in groups {
        tp += p;
        fp += n;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Exact PR step curve as (recall, precision) points, one per score group.
pub fn pr_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, _) = class_counts(labels)?;
    let groups = score_groups(scores, labels)?;
    let mut points = Vec::with_capacity(groups.len() + 1);
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, p, n) in groups {
        tp += p;
        fp += n;
        points.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    // Anchor recall zero at the first observed precision for interpolation.
    let first_p = points.first().map_or(1.0, |&(_, p)| p);
    let mut out = vec![(0.0, first_p)];
    out.extend(points);
    Ok(out)
}

/// Area under the exact ROC step curve by trapezoids; equal-score ties move
/// together, matching the Mann-Whitney statistic with half-credit for ties.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let points = roc_points(scores, labels)?;
    let mut area = 0.0;
    for pair in points.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        area += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(area)
}

/// Area under the PR curve by step summation over recall increments.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = class_counts(labels)?;
    let groups = score_groups(scores, labels)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (_, p, n) in groups {
        tp += p;
        fp += n;
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Pr,
    Roc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XScale {
    Linear,
    Logarithmic,
}

#[derive(Debug, Clone, Copy)]
pub struct CurveSpec {
    pub points: usize,
    pub x_scale: XScale,
}

impl Default for CurveSpec {
    fn default() -> Self {
        CurveSpec {
            points: 100,
            x_scale: XScale::Linear,
        }
    }
}

/// Piecewise-linear interpolation over curve points sorted by x; queries
/// clamp to the first/last point. A repeated x (vertical segment) collapses
/// to its maximum y, the upper envelope of the step curve.
fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &(px, py) in points {
        match pts.last_mut() {
            Some((lx, ly)) if *lx == px => *ly = ly.max(py),
            _ => pts.push((px, py)),
        }
    }
    if x <= pts[0].0 {
        return pts[0].1;
    }
    if x >= pts[pts.len() - 1].0 {
        return pts[pts.len() - 1].1;
    }
    let hi = pts.partition_point(|&(px, _)| px < x);
    let (x0, y0) = pts[hi - 1];
    let (x1, y1) = pts[hi];
    if x1 == x0 {
        y1
    } else {
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Resamples the exact step curve at `spec.points` x-values spaced uniformly
/// on a linear or logarithmic axis, y by linear interpolation. On the log
/// axis the smallest x is clamped to one over the relevant class count.
pub fn curve(
    scores: &[f64],
    labels: &[bool],
    spec: &CurveSpec,
    kind: CurveKind,
) -> Result<Vec<(f64, f64)>> {
    if spec.points < 2 {
        return Err(Error::Invalid("a curve needs at least 2 points".into()));
    }
    let (pos, neg) = class_counts(labels)?;
    let exact = match kind {
        CurveKind::Pr => pr_points(scores, labels)?,
        CurveKind::Roc => roc_points(scores, labels)?,
    };
    let xs: Vec<f64> = match spec.x_scale {
        XScale::Linear => (0..spec.points)
            .map(|i| i as f64 / (spec.points - 1) as f64)
            .collect(),
        XScale::Logarithmic => {
            let x_lo = match kind {
                CurveKind::Roc => 1.0 / neg as f64,
                CurveKind::Pr => 1.0 / pos as f64,
            };
            let lo = x_lo.log10();
            (0..spec.points)
                .map(|i| 10f64.powf(lo - lo * i as f64 / (spec.points - 1) as f64))
                .collect()
        }
    };
    Ok(xs
        .into_iter()
        .map(|x| (x, interpolate(&exact, x)))
        .collect())
}

/// Splits every blacklist cluster into `k` near-equal parts, unions part `i`
/// of each cluster into fold `i`, and runs `score_fn` once per fold with the
/// fold held out of the seed set. A blacklisted vertex keeps the score from
/// its held-out run; every other vertex keeps the maximum over all runs.
/// Clusters smaller than `k` leave some parts empty, which is fine.
pub fn kfold_blacklist_eval(
    n_vertices: usize,
    clusters: &[Vec<usize>],
    k: usize,
    rng: &mut impl Rng,
    mut score_fn: impl FnMut(&BTreeSet<usize>) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::Invalid("fold protocol needs k >= 2".into()));
    }
    let mut seen = vec![false; n_vertices];
    for cluster in clusters {
        for &v in cluster {
            if v >= n_vertices {
                return Err(Error::Invalid(format!(
                    "blacklist vertex {v} out of range for {n_vertices} vertices"
                )));
            }
            if seen[v] {
                return Err(Error::Invalid(format!(
                    "vertex {v} appears in more than one cluster"
                )));
            }
            seen[v] = true;
        }
    }
    let mut folds: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
    for cluster in clusters {
        let mut members = cluster.clone();
        members.shuffle(rng);
        for (i, &v) in members.iter().enumerate() {
            folds[i % k].insert(v);
        }
    }
    let blacklist: BTreeSet<usize> = clusters.iter().flatten().copied().collect();
    let mut finals = vec![f64::NEG_INFINITY; n_vertices];
    for fold in &folds {
        let seeds: BTreeSet<usize> = blacklist.difference(fold).copied().collect();
        let scores = score_fn(&seeds)?;
        if scores.len() != n_vertices {
            return Err(Error::Shape {
                op: "kfold_blacklist_eval",
                left: format!("{n_vertices} vertices"),
                right: format!("{} scores", scores.len()),
            });
        }
        for v in 0..n_vertices {
            if blacklist.contains(&v) {
                if fold.contains(&v) {
                    finals[v] = scores[v];
                }
            } else {
                finals[v] = finals[v].max(scores[v]);
            }
        }
    }
    Ok(finals)
}
