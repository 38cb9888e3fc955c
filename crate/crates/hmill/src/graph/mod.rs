//! Interaction-graph machinery: bipartite relation ingestion, one-mode
//! projection with witness bookkeeping, graphical edge features,
//! neighborhood-as-bag sample construction, and a propagation baseline.

mod features;
mod ptp;
mod sample;

pub use features::{edge_features, EDGE_FEATURE_DIM};
pub use ptp::{ptp, ptp_weighted};
pub use sample::{
    build_vertex_sample, k_step_sample, vertex_sample_extractor, NeighborSource, RelationBundle,
    TypedDigraph,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use crate::{Error, Result};

/// Witness lists are stored up to this many right-vertices per edge; the
/// exact count is always kept alongside.
pub const WITNESS_CAP: usize = 64;

/// An undirected bipartite relation between a shared left vertex universe
/// (e.g. domains) and a relation-specific right set. Vertex ids are interned
/// in first-seen order; edges are deduplicated.
#[derive(Debug, Clone)]
pub struct BipartiteRelation {
    pub name: String,
    left_ids: Vec<String>,
    right_ids: Vec<String>,
    left_index: HashMap<String, u32>,
    adj_left: Vec<Vec<u32>>,
    adj_right: Vec<Vec<u32>>,
    edge_count: usize,
}

impl BipartiteRelation {
    pub fn from_edges<S: AsRef<str>>(name: &str, pairs: &[(S, S)]) -> Self {
        let mut left_ids = Vec::new();
        let mut right_ids = Vec::new();
        let mut left_index: HashMap<String, u32> = HashMap::new();
        let mut right_index: HashMap<String, u32> = HashMap::new();
        let mut edges = BTreeSet::new();
        for (l, r) in pairs {
            let li = *left_index.entry(l.as_ref().to_string()).or_insert_with(|| {
                left_ids.push(l.as_ref().to_string());
                (left_ids.len() - 1) as u32
            });
            let ri = *right_index.entry(r.as_ref().to_string()).or_insert_with(|| {
                right_ids.push(r.as_ref().to_string());
                (right_ids.len() - 1) as u32
            });
            edges.insert((li, ri));
        }
        let mut adj_left = vec![Vec::new(); left_ids.len()];
        let mut adj_right = vec![Vec::new(); right_ids.len()];
        for &(l, r) in &edges {
            adj_left[l as usize].push(r);
            adj_right[r as usize].push(l);
        }
        for list in &mut adj_left {
            list.sort_unstable();
        }
        for list in &mut adj_right {
            list.sort_unstable();
        }
        BipartiteRelation {
            name: name.to_string(),
            left_index,
            left_ids,
            right_ids,
            adj_left,
            adj_right,
            edge_count: edges.len(),
        }
    }

    pub fn left_count(&self) -> usize {
        self.left_ids.len()
    }

    pub fn right_count(&self) -> usize {
        self.right_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn left_id(&self, i: usize) -> &str {
        &self.left_ids[i]
    }

    pub fn right_id(&self, i: usize) -> &str {
        &self.right_ids[i]
    }

    pub fn left_ids(&self) -> &[String] {
        &self.left_ids
    }

    pub fn left_index_of(&self, id: &str) -> Option<usize> {
        self.left_index.get(id).map(|&i| i as usize)
    }

    /// Right neighbors of a left vertex, sorted.
    pub fn left_neighbors(&self, left: usize) -> &[u32] {
        &self.adj_left[left]
    }

    /// Left neighbors of a right vertex, sorted.
    pub fn right_neighbors(&self, right: usize) -> &[u32] {
        &self.adj_right[right]
    }
}

/// Reads a two-column `left<TAB>right` TSV; `#` lines are comments, blank
/// lines ignored, duplicate edges collapsed.
pub fn load_relation(name: &str, path: &Path) -> Result<BipartiteRelation> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut pairs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split('\t');
        let (Some(left), Some(right), None) = (fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: "expected exactly two tab-separated columns".into(),
            });
        };
        if left.is_empty() || right.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: "empty vertex id".into(),
            });
        }
        pairs.push((left.to_string(), right.to_string()));
    }
    Ok(BipartiteRelation::from_edges(name, &pairs))
}

/// Witnesses of one transformed edge: how many right-vertices induced it,
/// and up to [`WITNESS_CAP`] of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witnesses {
    pub count: u64,
    pub sample: Vec<u32>,
}

/// One-mode projection of a bipartite relation onto its left set: two left
/// vertices are adjacent iff some right vertex connects to both.
#[derive(Debug, Clone)]
pub struct TransformedGraph {
    n: usize,
    adj: Vec<Vec<u32>>,
    edges: BTreeMap<(u32, u32), Witnesses>,
}

impl TransformedGraph {
    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains_key(&edge_key(u as u32, v as u32))
    }

    pub fn witnesses(&self, u: usize, v: usize) -> Option<&Witnesses> {
        self.edges.get(&edge_key(u as u32, v as u32))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &Witnesses)> {
        self.edges
            .iter()
            .map(|(&(u, v), w)| (u as usize, v as usize, w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Adjacency lists as plain `usize`, for the propagation baseline.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        self.adj
            .iter()
            .map(|list| list.iter().map(|&v| v as usize).collect())
            .collect()
    }
}

fn edge_key(u: u32, v: u32) -> (u32, u32) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Builds the transformed graph: every right vertex of degree `d` turns its
/// left neighborhood into a clique of `C(d, 2)` edges and is recorded as a
/// witness on each of them. Right vertices of degree at most one contribute
/// nothing.
pub fn transform(rel: &BipartiteRelation) -> TransformedGraph {
    let mut edges: BTreeMap<(u32, u32), Witnesses> = BTreeMap::new();
    for b in 0..rel.right_count() {
        let ds = rel.right_neighbors(b);
        for (i, &u) in ds.iter().enumerate() {
            for &v in &ds[i + 1..] {
                let entry = edges.entry(edge_key(u, v)).or_insert_with(|| Witnesses {
                    count: 0,
                    sample: Vec::new(),
                });
                entry.count += 1;
                if entry.sample.len() < WITNESS_CAP {
                    entry.sample.push(b as u32);
                }
            }
        }
    }
    let mut adj = vec![Vec::new(); rel.left_count()];
    for &(u, v) in edges.keys() {
        adj[u as usize].push(v);
        adj[v as usize].push(u);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    TransformedGraph {
        n: rel.left_count(),
        adj,
        edges,
    }
}

/// Blacklisted vertex ids, optionally partitioned into named threat
/// clusters. Clusters are disjoint.
#[derive(Debug, Clone, Default)]
pub struct Blacklist {
    pub clusters: BTreeMap<String, BTreeSet<String>>,
}

impl Blacklist {
    pub fn from_ids<S: AsRef<str>>(ids: &[S]) -> Self {
        let mut clusters = BTreeMap::new();
        clusters.insert(
            "all".to_string(),
            ids.iter().map(|s| s.as_ref().to_string()).collect(),
        );
        Blacklist { clusters }
    }

    pub fn contains(&self, id: &str) -> bool {
        self.clusters.values().any(|c| c.contains(id))
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.clusters.values().flatten().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.clusters.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads a blacklist file: either one vertex id per line, or two-column
/// `cluster<TAB>id`. `#` comments and blank lines are skipped; the two forms
/// must not be mixed and an id may appear in only one cluster.
pub fn load_blacklist(path: &Path) -> Result<Blacklist> {
    let text = std::fs::read_to_string(path)?;
    let mut clusters: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut forms = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split('\t');
        let (cluster, id) = match (fields.next(), fields.next(), fields.next()) {
            (Some(id), None, _) => ("all".to_string(), id.to_string()),
            (Some(cluster), Some(id), None) => (cluster.to_string(), id.to_string()),
            _ => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    reason: "expected `id` or `cluster<TAB>id`".into(),
                })
            }
        };
        forms.insert(trimmed.contains('\t'));
        if forms.len() > 1 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: "mixed one- and two-column blacklist rows".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: format!("vertex {id:?} listed twice"),
            });
        }
        clusters.entry(cluster).or_default().insert(id);
    }
    Ok(Blacklist { clusters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(pairs: &[(&str, &str)]) -> BipartiteRelation {
        BipartiteRelation::from_edges("test", pairs)
    }

    #[test]
    fn duplicate_edges_collapse() {
        let r = rel(&[("d1", "c1"), ("d1", "c1"), ("d2", "c1")]);
        assert_eq!(r.edge_count(), 2);
        assert_eq!(r.left_count(), 2);
        assert_eq!(r.right_count(), 1);
    }

    #[test]
    fn empty_relation_is_valid() {
        let r = rel(&[]);
        assert_eq!(r.edge_count(), 0);
        let g = transform(&r);
        assert_eq!(g.vertex_count(), 0);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn interning_is_first_seen_order() {
        let r = rel(&[("b", "x"), ("a", "y"), ("b", "y")]);
        assert_eq!(r.left_id(0), "b");
        assert_eq!(r.left_id(1), "a");
        assert_eq!(r.left_index_of("a"), Some(1));
        assert_eq!(r.left_index_of("zz"), None);
    }

    #[test]
    fn transform_hand_example() {
        // d1-c1, d1-c2, d2-c1: c1 connects {d1, d2}; c2 has degree 1.
        let r = rel(&[("d1", "c1"), ("d1", "c2"), ("d2", "c1")]);
        let g = transform(&r);
        assert_eq!(g.edge_count(), 1);
        assert!(g.has_edge(0, 1));
        let w = g.witnesses(0, 1).unwrap();
        assert_eq!(w.count, 1);
        assert_eq!(w.sample, vec![0]); // c1
    }

    #[test]
    fn degree_one_right_vertices_contribute_nothing() {
        let r = rel(&[("d1", "c1"), ("d2", "c2"), ("d3", "c3")]);
        let g = transform(&r);
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn transform_matches_brute_force_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..60 {
            let nl = rng.gen_range(1..=12);
            let nr = rng.gen_range(1..=12);
            let mut pairs = Vec::new();
            for l in 0..nl {
                for r in 0..nr {
                    if rng.gen_bool(0.25) {
                        pairs.push((format!("L{l}"), format!("R{r}")));
                    }
                }
            }
            let r = BipartiteRelation::from_edges("t", &pairs);
            let g = transform(&r);
            // Brute force over all left pairs.
            for u in 0..r.left_count() {
                for v in u + 1..r.left_count() {
                    let nu = r.left_neighbors(u);
                    let nv = r.left_neighbors(v);
                    let common: Vec<u32> = nu
                        .iter()
                        .filter(|b| nv.binary_search(b).is_ok())
                        .copied()
                        .collect();
                    assert_eq!(g.has_edge(u, v), !common.is_empty());
                    if let Some(w) = g.witnesses(u, v) {
                        assert_eq!(w.count as usize, common.len());
                        let mut sorted = w.sample.clone();
                        sorted.sort_unstable();
                        assert_eq!(sorted, common, "witness set complete");
                        for &b in &w.sample {
                            assert!(nu.binary_search(&b).is_ok());
                            assert!(nv.binary_search(&b).is_ok());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn load_relation_parses_and_reports_line_numbers() {
        let dir = std::env::temp_dir().join("hmill-graph-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("edges.tsv");
        std::fs::write(&path, "# comment\nd1\tc1\nd1\tc1\nd2\tc1\n").unwrap();
        let r = load_relation("rel", &path).unwrap();
        assert_eq!(r.edge_count(), 2);

        std::fs::write(&path, "d1\tc1\nbroken-line\n").unwrap();
        let err = load_relation("rel", &path).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn blacklist_forms() {
        let dir = std::env::temp_dir().join("hmill-graph-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bl.txt");
        std::fs::write(&path, "d1\nd2\n").unwrap();
        let bl = load_blacklist(&path).unwrap();
        assert_eq!(bl.len(), 2);
        assert!(bl.contains("d1"));

        std::fs::write(&path, "campA\td1\ncampA\td2\ncampB\td3\n").unwrap();
        let bl = load_blacklist(&path).unwrap();
        assert_eq!(bl.clusters.len(), 2);
        assert_eq!(bl.clusters["campA"].len(), 2);

        std::fs::write(&path, "campA\td1\ncampB\td1\n").unwrap();
        assert!(load_blacklist(&path).is_err());
    }
}
