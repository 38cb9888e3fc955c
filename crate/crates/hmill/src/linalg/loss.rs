use super::Matrix;
use crate::{Error, Result};

/// Probabilities are clamped to this floor before taking logarithms, so a
/// zero probability at the true class yields a large finite loss instead of
/// an infinite one.
pub const PROB_FLOOR: f64 = 1e-30;

/// Column-wise softmax, computed stably by subtracting the per-column
/// maximum before exponentiating.
pub fn softmax_columns(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for c in 0..x.cols() {
        let mut max = f64::NEG_INFINITY;
        for r in 0..x.rows() {
            max = max.max(x.get(r, c));
        }
        let mut sum = 0.0;
        for r in 0..x.rows() {
            let e = (x.get(r, c) - max).exp();
            out.set(r, c, e);
            sum += e;
        }
        for r in 0..x.rows() {
            out.set(r, c, out.get(r, c) / sum);
        }
    }
    out
}

/// Mean negative log-likelihood over a batch of probability columns,
/// together with the gradient with respect to the pre-softmax logits,
/// `(P - onehot) / B`.
pub fn multiclass_cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    weighted_cross_entropy_from_probs(probs, labels, None)
}

/// Cross entropy with optional per-class weights; the unweighted case is the
/// standard multiclass loss. The logit gradient of column `i` is
/// `w[y_i] * (P_col - onehot(y_i)) / B`.
pub fn weighted_cross_entropy_from_probs(
    probs: &Matrix,
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<(f64, Matrix)> {
    let batch = probs.cols();
    if labels.len() != batch {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: format!("{batch} probability columns"),
            right: format!("{} labels", labels.len()),
        });
    }
    if batch == 0 {
        return Err(Error::Invalid("cross entropy over an empty batch".into()));
    }
    if let Some(w) = class_weights {
        if w.len() != probs.rows() {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: format!("{} classes", probs.rows()),
                right: format!("{} class weights", w.len()),
            });
        }
    }
    let inv_b = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut d_logits = Matrix::zeros(probs.rows(), probs.cols());
    for (i, &label) in labels.iter().enumerate() {
        if label >= probs.rows() {
            return Err(Error::Invalid(format!(
                "label {label} out of range for {} classes",
                probs.rows()
            )));
        }
        let w = class_weights.map_or(1.0, |w| w[label]);
        let p = probs.get(label, i).max(PROB_FLOOR);
        loss -= w * p.ln();
        for r in 0..probs.rows() {
            let indicator = if r == label { 1.0 } else { 0.0 };
            d_logits.set(r, i, w * (probs.get(r, i) - indicator) * inv_b);
        }
    }
    Ok((loss * inv_b, d_logits))
}

/// Binary cross entropy with class weights `w0` (negative) and `w1`
/// (positive) over positive-class probabilities. Returns the loss and its
/// gradient with respect to each probability.
pub fn weighted_binary_cross_entropy(
    p1: &[f64],
    labels: &[bool],
    w0: f64,
    w1: f64,
) -> Result<(f64, Vec<f64>)> {
    if p1.len() != labels.len() {
        return Err(Error::Shape {
            op: "weighted_binary_cross_entropy",
            left: format!("{} probabilities", p1.len()),
            right: format!("{} labels", labels.len()),
        });
    }
    if p1.is_empty() {
        return Err(Error::Invalid("loss over an empty batch".into()));
    }
    if w0 <= 0.0 || w1 <= 0.0 {
        return Err(Error::Invalid("class weights must be positive".into()));
    }
    let n = p1.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; p1.len()];
    for (i, (&p, &y)) in p1.iter().zip(labels).enumerate() {
        let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        if y {
            loss -= w1 * p.ln();
            grad[i] = -w1 / (p * n);
        } else {
            loss -= w0 * (1.0 - p).ln();
            grad[i] = w0 / ((1.0 - p) * n);
        }
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::finite_difference_gradient;

    fn col(values: &[f64]) -> Matrix {
        Matrix::column(values).unwrap()
    }

    #[test]
    fn softmax_symmetric_and_shift_invariant() {
        let z = softmax_columns(&col(&[0.0, 0.0]));
        assert_eq!(z.data(), &[0.5, 0.5]);
        let big = softmax_columns(&col(&[1000.0, 1000.0]));
        assert!(big.is_finite());
        assert_eq!(big.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        // [0, ln 3] -> [1/4, 3/4]
        let z = softmax_columns(&col(&[0.0, 3.0f64.ln()]));
        assert!((z.get(0, 0) - 0.25).abs() <= 1e-12);
        assert!((z.get(1, 0) - 0.75).abs() <= 1e-12);
    }

    #[test]
    fn softmax_columns_sum_to_one() {
        let x = Matrix::from_rows(&[vec![0.3, -5.0], vec![2.0, 1.0], vec![-1.5, 400.0]]).unwrap();
        let z = softmax_columns(&x);
        for c in 0..2 {
            let s: f64 = (0..3).map(|r| z.get(r, c)).sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn cross_entropy_perfect_and_uniform() {
        let mut perfect = Matrix::zeros(3, 2);
        perfect.set(1, 0, 1.0);
        perfect.set(0, 1, 1.0);
        let (loss, _) = multiclass_cross_entropy(&perfect, &[1, 0]).unwrap();
        assert_eq!(loss, 0.0);

        let uniform = Matrix::from_vec(13, 1, vec![1.0 / 13.0; 13]).unwrap();
        let (loss, _) = multiclass_cross_entropy(&uniform, &[4]).unwrap();
        assert!((loss - 13.0f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn cross_entropy_zero_probability_is_clamped() {
        let mut p = Matrix::zeros(2, 1);
        p.set(1, 0, 1.0);
        let (loss, _) = multiclass_cross_entropy(&p, &[0]).unwrap();
        assert!(loss.is_finite());
        assert!((loss + PROB_FLOOR.ln()).abs() <= 1e-9);
    }

    #[test]
    fn cross_entropy_logit_gradient_matches_finite_differences() {
        let logits = vec![0.4, -0.2, 1.1, 0.7, -0.9, 0.05];
        let labels = [2usize, 0];
        let loss_of = |theta: &[f64]| {
            let z = Matrix::from_vec(3, 2, theta.to_vec()).unwrap();
            multiclass_cross_entropy(&softmax_columns(&z), &labels)
                .unwrap()
                .0
        };
        let numeric = finite_difference_gradient(&loss_of, &logits, 1e-5);
        let z = Matrix::from_vec(3, 2, logits.clone()).unwrap();
        let (_, d) = multiclass_cross_entropy(&softmax_columns(&z), &labels).unwrap();
        for (a, f) in d.data().iter().zip(&numeric) {
            let denom = a.abs().max(f.abs()).max(1e-8);
            assert!((a - f).abs() / denom <= 1e-6, "analytic {a} vs numeric {f}");
        }
    }

    #[test]
    fn weighted_bce_closed_forms() {
        let (loss, _) = weighted_binary_cross_entropy(&[0.5], &[true], 1.0, 1.0).unwrap();
        assert!((loss - 2.0f64.ln()).abs() <= 1e-12);

        // Preferring false negatives: w1 = 0.1, w0 = 0.9.
        let (loss, _) =
            weighted_binary_cross_entropy(&[0.5, 0.5], &[true, false], 0.9, 0.1).unwrap();
        assert!((loss - 0.5 * 2.0f64.ln()).abs() <= 1e-12);
    }

    #[test]
    fn weighted_bce_gradient_matches_finite_differences() {
        let p = vec![0.3, 0.8, 0.55, 0.12];
        let labels = [true, false, true, false];
        let loss_of = |theta: &[f64]| {
            weighted_binary_cross_entropy(theta, &labels, 0.9, 0.1)
                .unwrap()
                .0
        };
        let numeric = finite_difference_gradient(&loss_of, &p, 1e-6);
        let (_, grad) = weighted_binary_cross_entropy(&p, &labels, 0.9, 0.1).unwrap();
        for (a, f) in grad.iter().zip(&numeric) {
            let denom = a.abs().max(f.abs()).max(1e-8);
            assert!((a - f).abs() / denom <= 1e-6, "analytic {a} vs numeric {f}");
        }
    }

    #[test]
    fn weighted_bce_rejects_nonpositive_weights() {
        assert!(weighted_binary_cross_entropy(&[0.5], &[true], 0.0, 1.0).is_err());
    }
}
