use std::collections::BTreeSet;

use super::{BipartiteRelation, TransformedGraph};
use crate::{Error, Result};

/// Seven numeric features mapped through `x -> ln(x) + 1` plus a two-slot
/// membership one-hot.
pub const EDGE_FEATURE_DIM: usize = 9;

/// Features describing the transformed-graph edge `{v, u}` where `v` is the
/// vertex under inference, in fixed order: transformed degree of `v`,
/// bipartite degrees of `v` and `u`, the intersection and union sizes of
/// their bipartite neighborhoods, their Jaccard index and degree product
/// (all seven mapped `x -> ln(x) + 1`), then `[u not in seeds, u in seeds]`.
pub fn edge_features(
    graph: &TransformedGraph,
    rel: &BipartiteRelation,
    v: usize,
    u: usize,
    seed_left_indices: &BTreeSet<usize>,
) -> Result<[f64; EDGE_FEATURE_DIM]> {
    if !graph.has_edge(v, u) {
        return Err(Error::Invalid(format!(
            "{{{}, {}}} is not an edge of the transformed graph",
            rel.left_id(v),
            rel.left_id(u)
        )));
    }
    let nv = rel.left_neighbors(v);
    let nu = rel.left_neighbors(u);
    let mut inter = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < nv.len() && j < nu.len() {
        match nv[i].cmp(&nu[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = nv.len() + nu.len() - inter;
    let raw = [
        graph.degree(v) as f64,
        nv.len() as f64,
        nu.len() as f64,
        inter as f64,
        union as f64,
        inter as f64 / union as f64,
        (nu.len() * nv.len()) as f64,
    ];
    let mut out = [0.0; EDGE_FEATURE_DIM];
    for (slot, x) in out.iter_mut().zip(raw) {
        *slot = x.ln() + 1.0;
    }
    if seed_left_indices.contains(&u) {
        out[8] = 1.0;
    } else {
        out[7] = 1.0;
    }
    Ok(out)
}
