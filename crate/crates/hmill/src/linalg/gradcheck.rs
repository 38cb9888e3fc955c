/// Central finite differences along every coordinate of `theta`.
///
/// Used as an independent oracle for every analytic gradient in the crate;
/// it must stay free of any code path it is checking.
pub fn finite_difference_gradient(
    f: &dyn Fn(&[f64]) -> f64,
    theta: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; theta.len()];
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let plus = f(&probe);
        probe[i] = theta[i] - h;
        let minus = f(&probe);
        probe[i] = theta[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}
