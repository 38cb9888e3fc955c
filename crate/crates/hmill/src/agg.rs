//! Per-bag ("segmented") aggregation over instance columns: max, mean,
//! log-sum-exp and p-norm, their weighted variants, and analytic gradients.
//!
//! The two parametric aggregations keep their constraints through
//! reparametrization: `r = softplus(rho) > 0` and `p = 1 + softplus(rho_p)
//! >= 1`. Both are evaluated in shifted/scaled form so that large inputs do
//! > not overflow.

use serde::{Deserialize, Serialize};

use crate::data::Bag;
use crate::linalg::Matrix;
use crate::{Error, Result};

/// `softplus(x) = ln(1 + e^x)`, evaluated as `max(x, 0) + ln(1 + e^-|x|)`
/// so it neither overflows nor loses precision for large |x|.
#[inline]
pub fn softplus_stable(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `softplus^-1(1) = ln(e - 1)`; initializes rho so that r = 1 and p = 2.
pub const SOFTPLUS_INV_ONE: f64 = 0.541324854612918;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggKind {
    Max,
    Mean,
    Lse,
    PNorm,
}

impl std::str::FromStr for AggKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "max" => Ok(AggKind::Max),
            "mean" => Ok(AggKind::Mean),
            "lse" => Ok(AggKind::Lse),
            "pnorm" => Ok(AggKind::PNorm),
            other => Err(Error::Invalid(format!("unknown aggregation {other:?}"))),
        }
    }
}

/// One base aggregation; the parametric ones carry one parameter per
/// instance-representation dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AggComponent {
    Max,
    Mean,
    Lse { rho: Vec<f64> },
    PNorm { rho_p: Vec<f64>, c: Vec<f64> },
}

impl AggComponent {
    fn new(kind: AggKind, m: usize) -> Self {
        match kind {
            AggKind::Max => AggComponent::Max,
            AggKind::Mean => AggComponent::Mean,
            AggKind::Lse => AggComponent::Lse {
                rho: vec![SOFTPLUS_INV_ONE; m],
            },
            AggKind::PNorm => AggComponent::PNorm {
                rho_p: vec![SOFTPLUS_INV_ONE; m],
                c: vec![0.0; m],
            },
        }
    }
}

/// Ordered list of base aggregations over an `m`-dimensional instance
/// representation; output dimension is `components.len() * m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationSpec {
    pub components: Vec<AggComponent>,
    pub m: usize,
}

impl AggregationSpec {
    pub fn new(kinds: &[AggKind], m: usize) -> Self {
        AggregationSpec {
            components: kinds.iter().map(|&k| AggComponent::new(k, m)).collect(),
            m,
        }
    }

    /// The default concatenation of all four base aggregations.
    pub fn all_four(m: usize) -> Self {
        AggregationSpec::new(&[AggKind::Max, AggKind::Mean, AggKind::Lse, AggKind::PNorm], m)
    }

    pub fn output_dim(&self) -> usize {
        self.components.len() * self.m
    }

    pub fn param_count(&self) -> usize {
        self.components
            .iter()
            .map(|c| match c {
                AggComponent::Max | AggComponent::Mean => 0,
                AggComponent::Lse { rho } => rho.len(),
                AggComponent::PNorm { rho_p, c } => rho_p.len() + c.len(),
            })
            .sum()
    }

    /// Appends parameters in canonical order: all rho, then all rho_p, then
    /// all c, components in spec order within each group.
    pub fn append_params(&self, out: &mut Vec<f64>) {
        for comp in &self.components {
            if let AggComponent::Lse { rho } = comp {
                out.extend_from_slice(rho);
            }
        }
        for comp in &self.components {
            if let AggComponent::PNorm { rho_p, .. } = comp {
                out.extend_from_slice(rho_p);
            }
        }
        for comp in &self.components {
            if let AggComponent::PNorm { c, .. } = comp {
                out.extend_from_slice(c);
            }
        }
    }

    /// Reads parameters back in the order written by [`AggregationSpec::append_params`];
    /// returns how many values were consumed.
    pub fn read_params(&mut self, src: &[f64]) -> usize {
        let mut at = 0;
        for comp in &mut self.components {
            if let AggComponent::Lse { rho } = comp {
                let len = rho.len();
                rho.copy_from_slice(&src[at..at + len]);
                at += len;
            }
        }
        for comp in &mut self.components {
            if let AggComponent::PNorm { rho_p, .. } = comp {
                let len = rho_p.len();
                rho_p.copy_from_slice(&src[at..at + len]);
                at += len;
            }
        }
        for comp in &mut self.components {
            if let AggComponent::PNorm { c, .. } = comp {
                let len = c.len();
                c.copy_from_slice(&src[at..at + len]);
                at += len;
            }
        }
        at
    }
}

/// Gradients of the parametric components, in spec order.
#[derive(Debug, Clone)]
pub enum ComponentGrads {
    None,
    Lse { d_rho: Vec<f64> },
    PNorm { d_rho_p: Vec<f64>, d_c: Vec<f64> },
}

/// Result of a backward pass through [`agg_segment`].
#[derive(Debug, Clone)]
pub struct AggGradients {
    /// Gradient w.r.t. the instance matrix.
    pub d_x: Matrix,
    /// Per-component parameter gradients; instance weights receive no
    /// gradient by contract.
    pub components: Vec<ComponentGrads>,
}

impl AggGradients {
    /// Appends parameter gradients in the canonical order used by
    /// [`AggregationSpec::append_params`].
    pub fn append_canonical(&self, out: &mut Vec<f64>) {
        for g in &self.components {
            if let ComponentGrads::Lse { d_rho } = g {
                out.extend_from_slice(d_rho);
            }
        }
        for g in &self.components {
            if let ComponentGrads::PNorm { d_rho_p, .. } = g {
                out.extend_from_slice(d_rho_p);
            }
        }
        for g in &self.components {
            if let ComponentGrads::PNorm { d_c, .. } = g {
                out.extend_from_slice(d_c);
            }
        }
    }
}

/// Log-sum-exp of a set of scalars with sharpness `r`, shifted by the
/// maximum so the exponent sums cannot overflow. Single-element sets come
/// back unchanged. Weights are ignored by this aggregation.
pub fn lse_scalar(values: &[f64], r: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let alpha = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.iter().map(|&v| ((v - alpha) * r).exp()).sum();
    alpha + (sum.ln() - (values.len() as f64).ln()) / r
}

/// Normalized p-norm of `values` around center `c`, optionally weighted.
/// Computed in scaled form with `beta = max |x - c|`, which keeps the
/// largest scaled term at exactly one: powers can neither overflow for
/// large deviations nor underflow to zero for large `p`. `p = 1` is
/// computed directly so it reduces to the (weighted) mean absolute
/// deviation exactly.
pub fn pnorm_scalar(values: &[f64], weights: Option<&[f64]>, p: f64, c: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let total: f64 = match weights {
        Some(w) => w.iter().sum(),
        None => values.len() as f64,
    };
    let weight_of = |i: usize| weights.map_or(1.0, |w| w[i]);
    if p == 1.0 {
        let s: f64 = values
            .iter()
            .enumerate()
            .map(|(i, &v)| weight_of(i) * (v - c).abs())
            .sum();
        return s / total;
    }
    let beta = values
        .iter()
        .map(|&v| (v - c).abs())
        .fold(0.0f64, f64::max);
    if beta == 0.0 {
        return 0.0;
    }
    let acc: f64 = values
        .iter()
        .enumerate()
        .map(|(i, &v)| weight_of(i) * ((v - c).abs() / beta).powf(p))
        .sum();
    beta * (acc / total).powf(1.0 / p)
}

/// Weighted or plain mean.
pub fn mean_scalar(values: &[f64], weights: Option<&[f64]>) -> f64 {
    debug_assert!(!values.is_empty());
    match weights {
        Some(w) => {
            let total: f64 = w.iter().sum();
            values.iter().zip(w).map(|(&v, &wi)| wi * v).sum::<f64>() / total
        }
        None => values.iter().sum::<f64>() / values.len() as f64,
    }
}

/// Maximum with deterministic lowest-index tie-breaking; returns the value
/// and the winning position within `values`.
fn max_with_pos(values: &[f64]) -> (f64, usize) {
    let mut best = values[0];
    let mut pos = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best {
            best = v;
            pos = i;
        }
    }
    (best, pos)
}

struct BagView {
    /// Child column indices in stored order.
    cols: Vec<usize>,
}

fn bag_views(bags: &[Bag]) -> Vec<BagView> {
    bags.iter()
        .map(|b| BagView { cols: b.indices() })
        .collect()
}

/// Applies every component of `spec` per bag and per dimension over the
/// instance columns of `x`, concatenating component blocks in spec order.
/// Empty bags produce zero-filled, flagged columns that the caller must
/// substitute before use.
pub fn agg_segment(
    spec: &AggregationSpec,
    x: &Matrix,
    bags: &[Bag],
    weights: Option<&[f64]>,
) -> Result<(Matrix, Vec<bool>)> {
    validate(spec, x, bags, weights)?;
    let m = spec.m;
    let views = bag_views(bags);
    let mut out = Matrix::zeros(spec.output_dim(), bags.len());
    let empty: Vec<bool> = views.iter().map(|v| v.cols.is_empty()).collect();

    let mut vals = Vec::new();
    let mut wbuf = Vec::new();
    for (b, view) in views.iter().enumerate() {
        if view.cols.is_empty() {
            continue;
        }
        let w = weights.map(|w| {
            wbuf.clear();
            wbuf.extend(view.cols.iter().map(|&i| w[i]));
            &wbuf[..]
        });
        for j in 0..m {
            vals.clear();
            vals.extend(view.cols.iter().map(|&i| x.get(j, i)));
            for (ci, comp) in spec.components.iter().enumerate() {
                let row = ci * m + j;
                let v = match comp {
                    AggComponent::Max => max_with_pos(&vals).0,
                    AggComponent::Mean => mean_scalar(&vals, w),
                    AggComponent::Lse { rho } => lse_scalar(&vals, softplus_stable(rho[j])),
                    AggComponent::PNorm { rho_p, c } => {
                        pnorm_scalar(&vals, w, 1.0 + softplus_stable(rho_p[j]), c[j])
                    }
                };
                out.set(row, b, v);
            }
        }
    }
    Ok((out, empty))
}

/// Analytic gradients of [`agg_segment`] given the upstream gradient w.r.t.
/// its output. Max routes each (bag, dim) gradient to the lowest-index
/// argmax instance; parametric components chain through their softplus
/// reparametrizations. Upstream columns of empty bags are ignored.
pub fn agg_gradients(
    spec: &AggregationSpec,
    x: &Matrix,
    bags: &[Bag],
    weights: Option<&[f64]>,
    upstream: &Matrix,
) -> Result<AggGradients> {
    validate(spec, x, bags, weights)?;
    if upstream.rows() != spec.output_dim() || upstream.cols() != bags.len() {
        return Err(Error::Shape {
            op: "agg_gradients",
            left: format!("{}x{}", spec.output_dim(), bags.len()),
            right: format!("{}x{}", upstream.rows(), upstream.cols()),
        });
    }
    let m = spec.m;
    let views = bag_views(bags);
    let mut d_x = Matrix::zeros(x.rows(), x.cols());
    let mut comps: Vec<ComponentGrads> = spec
        .components
        .iter()
        .map(|c| match c {
            AggComponent::Max | AggComponent::Mean => ComponentGrads::None,
            AggComponent::Lse { rho } => ComponentGrads::Lse {
                d_rho: vec![0.0; rho.len()],
            },
            AggComponent::PNorm { rho_p, c } => ComponentGrads::PNorm {
                d_rho_p: vec![0.0; rho_p.len()],
                d_c: vec![0.0; c.len()],
            },
        })
        .collect();

    let mut vals = Vec::new();
    let mut wbuf = Vec::new();
    for (b, view) in views.iter().enumerate() {
        if view.cols.is_empty() {
            continue;
        }
        let w = weights.map(|w| {
            wbuf.clear();
            wbuf.extend(view.cols.iter().map(|&i| w[i]));
            &wbuf[..]
        });
        let total_w: f64 = match w {
            Some(w) => w.iter().sum(),
            None => view.cols.len() as f64,
        };
        for j in 0..m {
            vals.clear();
            vals.extend(view.cols.iter().map(|&i| x.get(j, i)));
            let k = vals.len() as f64;
            for (ci, (comp, grads)) in
                spec.components.iter().zip(comps.iter_mut()).enumerate()
            {
                let up = upstream.get(ci * m + j, b);
                if up == 0.0 {
                    continue;
                }
                match (comp, grads) {
                    (AggComponent::Max, _) => {
                        // Ties broken towards the smallest child column index:
                        // stored order is ascending for ranges and arbitrary
                        // for lists, so resolve explicitly.
                        let (best, _) = max_with_pos(&vals);
                        let winner = view
                            .cols
                            .iter()
                            .enumerate()
                            .filter(|&(pos, _)| vals[pos] == best)
                            .map(|(_, &col)| col)
                            .min()
                            .expect("nonempty bag");
                        d_x.add_at(j, winner, up);
                    }
                    (AggComponent::Mean, _) => {
                        for (pos, &col) in view.cols.iter().enumerate() {
                            let wi = w.map_or(1.0, |w| w[pos]);
                            d_x.add_at(j, col, up * wi / total_w);
                        }
                    }
                    (AggComponent::Lse { rho }, ComponentGrads::Lse { d_rho }) => {
                        let r = softplus_stable(rho[j]);
                        let alpha = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> =
                            vals.iter().map(|&v| ((v - alpha) * r).exp()).collect();
                        let s: f64 = exps.iter().sum();
                        let value = alpha + (s.ln() - k.ln()) / r;
                        let mut weighted_mean = 0.0;
                        for ((pos, &col), &e) in view.cols.iter().enumerate().zip(&exps) {
                            let soft = e / s;
                            d_x.add_at(j, col, up * soft);
                            weighted_mean += vals[pos] * soft;
                        }
                        let d_r = (weighted_mean - value) / r;
                        d_rho[j] += up * d_r * sigmoid(rho[j]);
                    }
                    (
                        AggComponent::PNorm { rho_p, c },
                        ComponentGrads::PNorm { d_rho_p, d_c },
                    ) => {
                        let p = 1.0 + softplus_stable(rho_p[j]);
                        let center = c[j];
                        let beta = vals
                            .iter()
                            .map(|&v| (v - center).abs())
                            .fold(0.0f64, f64::max);
                        if beta == 0.0 {
                            // Every value sits at the center: zero subgradient.
                            continue;
                        }
                        let mut a_bar = 0.0;
                        let mut da_dp = 0.0;
                        for (pos, &v) in vals.iter().enumerate() {
                            let wi = w.map_or(1.0, |w| w[pos]) / total_w;
                            let scaled = (v - center).abs() / beta;
                            if scaled > 0.0 {
                                let pw = scaled.powf(p);
                                a_bar += wi * pw;
                                da_dp += wi * pw * scaled.ln();
                            }
                        }
                        if a_bar == 0.0 {
                            // All values coincide with the center; the norm
                            // sits at a kink and we take the zero subgradient.
                            continue;
                        }
                        let value = beta * a_bar.powf(1.0 / p);
                        let mut sum_dx = 0.0;
                        for (pos, &col) in view.cols.iter().enumerate() {
                            let d = vals[pos] - center;
                            if d == 0.0 {
                                continue;
                            }
                            let wi = w.map_or(1.0, |w| w[pos]) / total_w;
                            let g = wi * d.signum() * (d.abs() / value).powf(p - 1.0);
                            d_x.add_at(j, col, up * g);
                            sum_dx += g;
                        }
                        let d_p = value * (-a_bar.ln() / (p * p) + da_dp / (a_bar * p));
                        d_rho_p[j] += up * d_p * sigmoid(rho_p[j]);
                        d_c[j] += up * (-sum_dx);
                    }
                    _ => unreachable!("component/gradient slots are built together"),
                }
            }
        }
    }
    Ok(AggGradients {
        d_x,
        components: comps,
    })
}

fn validate(
    spec: &AggregationSpec,
    x: &Matrix,
    bags: &[Bag],
    weights: Option<&[f64]>,
) -> Result<()> {
    if x.rows() != spec.m {
        return Err(Error::Shape {
            op: "agg_segment",
            left: format!("spec dimension {}", spec.m),
            right: format!("{} instance rows", x.rows()),
        });
    }
    if let Some(w) = weights {
        if w.len() != x.cols() {
            return Err(Error::Shape {
                op: "agg_segment",
                left: format!("{} instances", x.cols()),
                right: format!("{} weights", w.len()),
            });
        }
    }
    let covered: usize = bags.iter().map(Bag::len).sum();
    if covered != x.cols() {
        return Err(Error::Shape {
            op: "agg_segment",
            left: format!("bags cover {covered}"),
            right: format!("{} instance columns", x.cols()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::finite_difference_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softplus_matches_naive_formula_in_safe_range() {
        for i in -200..=200 {
            let x = i as f64 / 10.0;
            let naive = (1.0 + x.exp()).ln();
            assert!((softplus_stable(x) - naive).abs() <= 1e-12, "x = {x}");
        }
        assert!((softplus_stable(0.0) - 2.0f64.ln()).abs() <= 1e-15);
        assert_eq!(softplus_stable(50.0), 50.0 + (-50.0f64).exp().ln_1p());
        assert!(softplus_stable(700.0).is_finite());
        assert!(softplus_stable(-700.0) > 0.0);
    }

    #[test]
    fn softplus_inverse_one_constant() {
        assert!((softplus_stable(SOFTPLUS_INV_ONE) - 1.0).abs() <= 1e-15);
    }

    fn spec_with(kinds: &[AggKind], m: usize) -> AggregationSpec {
        AggregationSpec::new(kinds, m)
    }

    fn single_dim_segment(kind: AggKind, values: &[f64], weights: Option<Vec<f64>>) -> f64 {
        let spec = spec_with(&[kind], 1);
        let x = Matrix::from_vec(1, values.len(), values.to_vec()).unwrap();
        let bags = vec![Bag::Range(0..values.len())];
        let (out, empty) = agg_segment(&spec, &x, &bags, weights.as_deref()).unwrap();
        assert!(!empty[0]);
        out.get(0, 0)
    }

    #[test]
    fn mean_and_max_basics() {
        assert_eq!(
            single_dim_segment(AggKind::Mean, &[1.0, 2.0, 3.0], None),
            2.0
        );
        assert_eq!(
            single_dim_segment(AggKind::Max, &[1.0, 2.0, 3.0], None),
            3.0
        );
    }

    #[test]
    fn lse_single_element_is_identity() {
        for r in [1e-4, 0.3, 1.0, 50.0, 1e4] {
            assert_eq!(lse_scalar(&[1.75], r), 1.75);
        }
    }

    #[test]
    fn lse_closed_form_two_elements() {
        // lse({1,3}; 1) = 3 + ln((e^-2 + 1) / 2)
        let expect = 3.0 + (((-2.0f64).exp() + 1.0) / 2.0).ln();
        assert!((lse_scalar(&[1.0, 3.0], 1.0) - expect).abs() <= 1e-12);
        assert!((expect - 2.4338).abs() < 1e-4);
    }

    #[test]
    fn lse_large_inputs_do_not_overflow() {
        assert_eq!(lse_scalar(&[1000.0, 1000.0], 1.0), 1000.0);
    }

    #[test]
    fn pnorm_closed_form() {
        // pnorm({3,4}; p=2, c=0) = sqrt((9+16)/2)
        let expect = 12.5f64.sqrt();
        assert!((pnorm_scalar(&[3.0, 4.0], None, 2.0, 0.0) - expect).abs() <= 1e-12);
        assert!((expect - 3.5355).abs() < 1e-4);
    }

    #[test]
    fn weighted_mean_importance_example() {
        // weights [2, 0.5] on values [1, 4]: (2*1 + 0.5*4) / 2.5 = 1.6
        let v = single_dim_segment(AggKind::Mean, &[1.0, 4.0], Some(vec![2.0, 0.5]));
        assert!((v - 1.6).abs() <= 1e-15);
    }

    #[test]
    fn unit_weights_equal_unweighted_mean() {
        let plain = single_dim_segment(AggKind::Mean, &[0.5, -2.0, 3.0], None);
        let unit = single_dim_segment(AggKind::Mean, &[0.5, -2.0, 3.0], Some(vec![1.0; 3]));
        assert!((plain - unit).abs() <= 1e-15);
    }

    #[test]
    fn max_and_lse_ignore_weights() {
        let weights = Some(vec![10.0, 0.01, 5.0]);
        let values = [0.2, 1.4, -0.7];
        assert_eq!(
            single_dim_segment(AggKind::Max, &values, weights.clone()),
            single_dim_segment(AggKind::Max, &values, None)
        );
        assert_eq!(
            single_dim_segment(AggKind::Lse, &values, weights),
            single_dim_segment(AggKind::Lse, &values, None)
        );
    }

    #[test]
    fn weight_rescaling_leaves_mean_and_pnorm_unchanged() {
        let values = [0.5, -1.0, 2.5];
        let w: Vec<f64> = vec![0.2, 1.5, 3.0];
        let w_scaled: Vec<f64> = w.iter().map(|v| v * 7.5).collect();
        let m1 = mean_scalar(&values, Some(&w));
        let m2 = mean_scalar(&values, Some(&w_scaled));
        assert!((m1 - m2).abs() <= 1e-12);
        let p1 = pnorm_scalar(&values, Some(&w), 2.5, 0.3);
        let p2 = pnorm_scalar(&values, Some(&w_scaled), 2.5, 0.3);
        assert!((p1 - p2).abs() <= 1e-12);
    }

    #[test]
    fn empty_bags_are_flagged_not_errors() {
        let spec = AggregationSpec::all_four(2);
        let x = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bags = vec![Bag::Range(0..0), Bag::Range(0..2), Bag::Range(2..2)];
        let (out, empty) = agg_segment(&spec, &x, &bags, None).unwrap();
        assert_eq!(empty, vec![true, false, true]);
        assert_eq!(out.cols(), 3);
    }

    #[test]
    fn mean_gradient_closed_form() {
        let spec = spec_with(&[AggKind::Mean], 1);
        let x = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let bags = vec![Bag::Range(0..3)];
        let upstream = Matrix::from_vec(1, 1, vec![0.9]).unwrap();
        let g = agg_gradients(&spec, &x, &bags, None, &upstream).unwrap();
        for i in 0..3 {
            assert!((g.d_x.get(0, i) - 0.3).abs() <= 1e-15);
        }
    }

    #[test]
    fn max_gradient_routes_to_argmax() {
        let spec = spec_with(&[AggKind::Max], 1);
        let x = Matrix::from_vec(1, 2, vec![1.0, 3.0]).unwrap();
        let bags = vec![Bag::Range(0..2)];
        let upstream = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let g = agg_gradients(&spec, &x, &bags, None, &upstream).unwrap();
        assert_eq!(g.d_x.get(0, 0), 0.0);
        assert_eq!(g.d_x.get(0, 1), 2.0);
    }

    #[test]
    fn max_gradient_breaks_ties_to_lowest_index() {
        let spec = spec_with(&[AggKind::Max], 1);
        let x = Matrix::from_vec(1, 3, vec![5.0, 5.0, 1.0]).unwrap();
        let bags = vec![Bag::List(vec![1, 0, 2])];
        let upstream = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let g = agg_gradients(&spec, &x, &bags, None, &upstream).unwrap();
        assert_eq!(g.d_x.get(0, 0), 1.0);
        assert_eq!(g.d_x.get(0, 1), 0.0);
    }

    /// Scalarized loss for gradient checks: sum of outputs weighted by a
    /// fixed pattern, as a function of (x entries ++ agg params).
    fn agg_loss(
        spec_template: &AggregationSpec,
        n_cols: usize,
        bags: &[Bag],
        weights: Option<&[f64]>,
        pattern: &Matrix,
    ) -> impl Fn(&[f64]) -> f64 {
        let spec_template = spec_template.clone();
        let bags = bags.to_vec();
        let weights = weights.map(|w| w.to_vec());
        let pattern = pattern.clone();
        let m = spec_template.m;
        move |theta: &[f64]| {
            let x = Matrix::from_vec(m, n_cols, theta[..m * n_cols].to_vec()).unwrap();
            let mut spec = spec_template.clone();
            spec.read_params(&theta[m * n_cols..]);
            let (out, _) = agg_segment(&spec, &x, &bags, weights.as_deref()).unwrap();
            out.data()
                .iter()
                .zip(pattern.data())
                .map(|(a, b)| a * b)
                .sum()
        }
    }

    #[test]
    fn all_components_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..25 {
            let m = rng.gen_range(1..=3);
            let spec = AggregationSpec::all_four(m);
            let n_bags = rng.gen_range(1..=3);
            let mut bags = Vec::new();
            let mut start = 0;
            for _ in 0..n_bags {
                let len = rng.gen_range(1..=7);
                bags.push(Bag::Range(start..start + len));
                start += len;
            }
            let n = start;
            let x = Matrix::from_vec(
                m,
                n,
                (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let weights: Option<Vec<f64>> = if trial % 2 == 0 {
                Some((0..n).map(|_| rng.gen_range(0.2..2.0)).collect())
            } else {
                None
            };
            let pattern = Matrix::from_vec(
                spec.output_dim(),
                n_bags,
                (0..spec.output_dim() * n_bags)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect(),
            )
            .unwrap();

            let mut theta: Vec<f64> = x.data().to_vec();
            spec.append_params(&mut theta);
            let f = agg_loss(&spec, n, &bags, weights.as_deref(), &pattern);
            let numeric = finite_difference_gradient(&f, &theta, 1e-5);

            let grads = agg_gradients(&spec, &x, &bags, weights.as_deref(), &pattern).unwrap();
            let mut analytic: Vec<f64> = grads.d_x.data().to_vec();
            grads.append_canonical(&mut analytic);

            for (i, (a, f)) in analytic.iter().zip(&numeric).enumerate() {
                let denom = a.abs().max(f.abs());
                let ok = if denom > 1e-6 {
                    (a - f).abs() / denom <= 1e-4
                } else {
                    (a - f).abs() <= 1e-7
                };
                assert!(ok, "trial {trial} param {i}: analytic {a} vs numeric {f}");
            }
        }
    }

    #[test]
    fn instance_permutation_moves_output_at_most_rounding() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let spec = AggregationSpec::all_four(3);
        let n = 9;
        let x = Matrix::from_vec(3, n, (0..3 * n).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .unwrap();
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..2.0)).collect();
        let forward_order = vec![Bag::List((0..5).collect()), Bag::List((5..n).collect())];
        let reversed = vec![
            Bag::List((0..5).rev().collect()),
            Bag::List((5..n).rev().collect()),
        ];
        let (a, _) = agg_segment(&spec, &x, &forward_order, Some(&weights)).unwrap();
        let (b, _) = agg_segment(&spec, &x, &reversed, Some(&weights)).unwrap();
        for (va, vb) in a.data().iter().zip(b.data()) {
            assert!((va - vb).abs() <= 1e-9, "{va} vs {vb}");
        }
    }

    #[test]
    fn param_round_trip_preserves_values() {
        let mut spec = AggregationSpec::all_four(3);
        let mut params = Vec::new();
        spec.append_params(&mut params);
        assert_eq!(params.len(), spec.param_count());
        let perturbed: Vec<f64> = params.iter().map(|v| v + 0.25).collect();
        assert_eq!(spec.read_params(&perturbed), perturbed.len());
        let mut back = Vec::new();
        spec.append_params(&mut back);
        assert_eq!(back, perturbed);
    }
}
