//! Knowledge-thresholded similarity graphs and label propagation.
//!
//! Two samples are linked when their knowledge distance is at most `kappa`; the edge weight
//! is the inverse embedding distance. Communities found by label propagation are later merged
//! down to the requested subdomain count.

use crate::numeric::{euclidean, Matrix, Rng};
use crate::{Error, Result};

/// Embedding distances below this are clamped, so coincident embeddings get weight `1e9`.
pub const EPS_DIST: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    n: usize,
    /// Edge threshold on knowledge distance.
    pub kappa: f64,
    /// `(i, j, weight)` with `i < j`.
    pub edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<(usize, f64)>>,
    /// Set when the threshold admits no edge at all.
    pub warning: Option<String>,
}

impl KnowledgeGraph {
    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    /// Builds a graph from explicit weighted edges.
    pub fn from_edges(n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        let mut normalized = Vec::with_capacity(edges.len());
        for &(a, b, w) in &edges {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidArgument(format!("bad edge ({a}, {b}) for {n} nodes")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidArgument(format!("edge ({a}, {b}) has weight {w}")));
            }
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
            normalized.push((a.min(b), a.max(b), w));
        }
        let warning = normalized.is_empty().then(|| "graph has no edges".to_string());
        Ok(KnowledgeGraph { n, kappa: f64::NAN, edges: normalized, adjacency, warning })
    }
}

/// The `q` quantile (nearest rank) of the full `N x N` knowledge distance matrix, diagonal
/// included: each unordered pair counts twice and every sample contributes one zero.
pub fn kappa_from_quantile(pair_distances: &[f64], n: usize, q: f64) -> f64 {
    let total = (n * n) as f64;
    let rank = ((q * total).ceil() as usize).clamp(1, n * n);
    if rank <= n || pair_distances.is_empty() {
        return 0.0;
    }
    let k = (rank - n).div_ceil(2).min(pair_distances.len()) - 1;
    let mut scratch = pair_distances.to_vec();
    let (_, v, _) = scratch.select_nth_unstable_by(k, f64::total_cmp);
    *v
}

/// Links every pair with knowledge distance `<= kappa`, where `kappa` is the `kappa_quantile`
/// of all pairwise knowledge distances, weighting edges by inverse embedding distance.
pub fn build_graph(embeddings: &Matrix, knowledge: &Matrix, kappa_quantile: f64) -> Result<KnowledgeGraph> {
    let n = embeddings.rows();
    if knowledge.rows() != n {
        return Err(Error::shape("build_graph knowledge rows", n, knowledge.rows()));
    }
    if !(kappa_quantile > 0.0 && kappa_quantile <= 1.0) {
        return Err(Error::InvalidArgument(format!("kappa_quantile must lie in (0, 1], got {kappa_quantile}")));
    }
    let mut pair_d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pair_d.push(euclidean(knowledge.row(i), knowledge.row(j)));
        }
    }
    let kappa = kappa_from_quantile(&pair_d, n, kappa_quantile);
    let mut edges = Vec::new();
    let mut adjacency = vec![Vec::new(); n];
    let mut p = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if pair_d[p] <= kappa {
                let w = 1.0 / euclidean(embeddings.row(i), embeddings.row(j)).max(EPS_DIST);
                edges.push((i, j, w));
                adjacency[i].push((j, w));
                adjacency[j].push((i, w));
            }
            p += 1;
        }
    }
    let warning = (edges.is_empty() && n > 1)
        .then(|| format!("knowledge threshold {kappa} admits no edge; every sample is isolated"));
    Ok(KnowledgeGraph { n, kappa, edges, adjacency, warning })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Propagation {
    /// Community ids, compacted to `0..communities`.
    pub labels: Vec<usize>,
    pub communities: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Asynchronous label propagation. Nodes are visited in a fresh seeded order each sweep and
/// adopt the label with the largest summed edge weight among their neighbours, ties going to
/// the smallest label id. Isolated nodes keep their own label.
pub fn label_propagation(graph: &KnowledgeGraph, max_iters: usize, rng: &mut Rng) -> Propagation {
    let n = graph.n;
    let mut labels: Vec<usize> = (0..n).collect();
    let mut score = vec![0.0f64; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut iterations = 0;
    let mut converged = n == 0;
    while iterations < max_iters && !converged {
        iterations += 1;
        let mut changed = false;
        for i in rng.permutation(n) {
            let nb = &graph.adjacency[i];
            if nb.is_empty() {
                continue;
            }
            for &(j, w) in nb {
                let l = labels[j];
                if score[l] == 0.0 {
                    touched.push(l);
                }
                score[l] += w;
            }
            let mut best = usize::MAX;
            let mut best_w = f64::NEG_INFINITY;
            for &l in &touched {
                let w = score[l];
                if w > best_w || (w == best_w && l < best) {
                    best_w = w;
                    best = l;
                }
            }
            for &l in &touched {
                score[l] = 0.0;
            }
            touched.clear();
            if best != labels[i] {
                labels[i] = best;
                changed = true;
            }
        }
        converged = !changed;
    }
    let (labels, communities) = compact(&labels);
    Propagation { labels, communities, iterations, converged }
}

/// Renumbers labels to `0..k` in order of first appearance.
pub fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (out, map.len())
}
