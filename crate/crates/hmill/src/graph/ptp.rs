use std::collections::BTreeSet;

use crate::{Error, Result};

/// Score propagation over an undirected graph with uniform edge weights
/// `w_ij = 1/deg(v_i)`. See [`ptp_weighted`] for the update rule.
pub fn ptp(adj: &[Vec<usize>], seeds: &BTreeSet<usize>, iters: usize) -> Result<Vec<f64>> {
    let weighted: Vec<Vec<(usize, f64)>> = adj
        .iter()
        .map(|list| list.iter().map(|&j| (j, 1.0)).collect())
        .collect();
    ptp_weighted(&weighted, seeds, iters)
}

/// Iterative threat propagation: scores start at one on the seeds and zero
/// elsewhere. Each sweep computes
///
/// `P_t(i) = sum_j w_ij * (P_{t-1}(j) - C_{t-1}(i, j))`
///
/// where `C(i, j)` is the portion of `P(j)` that vertex `i` itself
/// propagated there in the previous sweep, which blocks direct feedback.
/// After every sweep the seed scores are reset to one to reinforce the
/// signal. Outgoing weights are normalized to sum to one per vertex
/// internally. An empty seed set yields all-zero scores.
pub fn ptp_weighted(
    adj: &[Vec<(usize, f64)>],
    seeds: &BTreeSet<usize>,
    iters: usize,
) -> Result<Vec<f64>> {
    let n = adj.len();
    for &s in seeds {
        if s >= n {
            return Err(Error::Invalid(format!(
                "seed {s} out of range for {n} vertices"
            )));
        }
    }
    // Per-vertex normalized outgoing weights.
    let mut weights: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (i, list) in adj.iter().enumerate() {
        if list.iter().any(|&(j, w)| j >= n || w < 0.0 || !w.is_finite()) {
            return Err(Error::Invalid(format!(
                "vertex {i}: neighbors must be in range with nonnegative finite weights"
            )));
        }
        let total: f64 = list.iter().map(|&(_, w)| w).sum();
        weights.push(
            list.iter()
                .map(|&(_, w)| if total > 0.0 { w / total } else { 0.0 })
                .collect(),
        );
    }
    // Index of the reverse directed edge (j -> i) inside j's list.
    let reverse: Vec<Vec<usize>> = adj
        .iter()
        .enumerate()
        .map(|(i, list)| {
            list.iter()
                .map(|&(j, _)| {
                    adj[j]
                        .iter()
                        .position(|&(k, _)| k == i)
                        .ok_or_else(|| {
                            Error::Invalid(format!(
                                "edge {i}->{j} has no reverse edge; the graph must be undirected"
                            ))
                        })
                })
                .collect::<Result<Vec<usize>>>()
        })
        .collect::<Result<_>>()?;

    let mut p: Vec<f64> = (0..n).map(|i| f64::from(seeds.contains(&i))).collect();
    // c[i][e]: portion of p[target of e] propagated from i in the previous
    // sweep, stored per directed edge (i -> adj[i][e]).
    let mut c: Vec<Vec<f64>> = adj.iter().map(|list| vec![0.0; list.len()]).collect();
    let mut new_p = vec![0.0; n];
    let mut new_c: Vec<Vec<f64>> = c.clone();
    for _ in 0..iters {
        for i in 0..n {
            let mut acc = 0.0;
            for (e, &(j, _)) in adj[i].iter().enumerate() {
                acc += weights[i][e] * (p[j] - c[i][e]);
            }
            new_p[i] = acc;
        }
        for i in 0..n {
            for (e, &(j, _)) in adj[i].iter().enumerate() {
                // Contribution i sent to j this sweep, recorded before the
                // seed reset.
                let rev = reverse[i][e];
                new_c[i][e] = weights[j][rev] * (p[i] - c[j][rev]);
            }
        }
        std::mem::swap(&mut p, &mut new_p);
        std::mem::swap(&mut c, &mut new_c);
        for &s in seeds {
            p[s] = 1.0;
        }
    }
    Ok(p)
}
