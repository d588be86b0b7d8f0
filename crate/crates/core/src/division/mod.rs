//! Knowledge-guided division of a domain into subdomains.
//!
//! A division is a partition of the samples whose groups are coherent in knowledge space and
//! compact in embedding space. One-dimensional knowledge (time of day, age) is divided exactly
//! by dynamic programming over knowledge-sorted runs; anything else goes through a
//! knowledge-thresholded graph, label propagation and centroid merging.

mod dp;
mod graph;
mod merge;

use serde::Serialize;

pub use dp::{
    cut_positions, dp_divide_1d, dp_divide_1d_constrained, dp_divide_1d_with_stats, knowledge_order, DpStats,
};
pub use graph::{build_graph, compact, kappa_from_quantile, label_propagation, KnowledgeGraph, Propagation, EPS_DIST};
pub use merge::merge_to_m;

use crate::data::{DivisionMethod, DomainDataset, KnowledgeSpec};
use crate::numeric::{squared_distance, Matrix, Rng};
use crate::{Error, Result};

/// Label propagation sweep limit used by [`divide`].
pub const MAX_PROPAGATION_ITERS: usize = 100;

/// Subdomain membership of every sample in one domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubdomainAssignment {
    /// Subdomain id per sample, in `0..count`.
    pub labels: Vec<usize>,
    /// Number of non-empty subdomains actually produced.
    pub count: usize,
    /// `count x D` mean embedding per subdomain.
    #[serde(skip)]
    pub embedding_centroids: Matrix,
    /// `count x F_k` mean knowledge per subdomain, in the coordinates the division used.
    #[serde(skip)]
    pub knowledge_centroids: Matrix,
    /// Total within-subdomain squared embedding distance to the centroid.
    pub cost: f64,
    pub warnings: Vec<String>,
}

impl SubdomainAssignment {
    /// Builds an assignment from raw ids, renumbering them to `0..count` in ascending id order
    /// and recomputing centroids and cost.
    pub fn from_labels(labels: Vec<usize>, embeddings: &Matrix, knowledge: &Matrix) -> Self {
        let mut ids: Vec<usize> = labels.clone();
        ids.sort_unstable();
        ids.dedup();
        let labels: Vec<usize> = labels.iter().map(|l| ids.binary_search(l).unwrap()).collect();
        let count = ids.len();
        let embedding_centroids = group_means(&labels, count, embeddings);
        let knowledge_centroids = group_means(&labels, count, knowledge);
        let cost = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| squared_distance(embeddings.row(i), embedding_centroids.row(l)))
            .sum();
        SubdomainAssignment { labels, count, embedding_centroids, knowledge_centroids, cost, warnings: Vec::new() }
    }

    /// Everything in one subdomain.
    pub fn single(embeddings: &Matrix, knowledge: &Matrix) -> Self {
        Self::from_labels(vec![0; embeddings.rows()], embeddings, knowledge)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    pub fn members(&self, subdomain: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == subdomain).collect()
    }

    /// Samples whose knowledge vector is strictly closer (beyond a `1e-9` relative margin) to
    /// another subdomain's knowledge centroid than to their own.
    pub fn constraint_violations(&self, knowledge: &Matrix) -> usize {
        let own_centroids = group_means(&self.labels, self.count, knowledge);
        (0..self.labels.len())
            .filter(|&i| {
                let x = knowledge.row(i);
                let own = squared_distance(x, own_centroids.row(self.labels[i]));
                (0..self.count).any(|c| {
                    let d = squared_distance(x, own_centroids.row(c));
                    d < own - 1e-9 * (1.0 + own)
                })
            })
            .count()
    }
}

fn group_means(labels: &[usize], count: usize, values: &Matrix) -> Matrix {
    let cols = values.cols();
    let mut out = Matrix::zeros(count, cols);
    let mut n = vec![0usize; count];
    for (i, &l) in labels.iter().enumerate() {
        n[l] += 1;
        for (o, v) in out.row_mut(l).iter_mut().zip(values.row(i)) {
            *o += v;
        }
    }
    for (l, &c) in n.iter().enumerate() {
        if c > 0 {
            out.row_mut(l).iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    out
}

/// Rescales each column to `[0, 1]`; constant columns become zero.
pub fn min_max_normalize(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for c in 0..m.cols() {
        let col = m.col_values(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        for r in 0..m.rows() {
            let v = if span > 0.0 { (m.get(r, c) - lo) / span } else { 0.0 };
            out.set(r, c, v);
        }
    }
    out
}

/// Divides `data` by one knowledge kind, using `embeddings` (one row per sample) as the
/// representation whose within-subdomain spread is minimized.
///
/// `M` is clamped to the sample count, so a single sample always yields one subdomain.
pub fn divide(
    data: &DomainDataset,
    spec: &KnowledgeSpec,
    embeddings: &Matrix,
    rng: &mut Rng,
) -> Result<SubdomainAssignment> {
    spec.validate()?;
    let n = data.len();
    if embeddings.rows() != n {
        return Err(Error::shape("divide embeddings", n, embeddings.rows()));
    }
    if n == 0 {
        return Err(Error::Empty("cannot divide an empty domain"));
    }
    let knowledge = min_max_normalize(&data.knowledge_matrix(&spec.id)?);
    let m = spec.subdomains.min(n);
    if m == 1 {
        return Ok(SubdomainAssignment::single(embeddings, &knowledge));
    }
    match spec.method {
        DivisionMethod::Dp1d => {
            if knowledge.cols() != 1 {
                return Err(Error::InvalidArgument(format!(
                    "knowledge '{}' has {} columns; 1-D division needs exactly one",
                    spec.id,
                    knowledge.cols()
                )));
            }
            let k = knowledge.col_values(0);
            let split = spec.split_points.map(|b| b.min(n - 1).max(m));
            let split = split.filter(|&b| b < n - 1);
            if spec.enforce_constraint {
                dp_divide_1d_constrained(embeddings, &k, m, split)
            } else {
                dp_divide_1d(embeddings, &k, m, split)
            }
        }
        DivisionMethod::Graph => {
            let g = build_graph(embeddings, &knowledge, spec.kappa_quantile)?;
            let p = label_propagation(&g, MAX_PROPAGATION_ITERS, rng);
            let mut a = merge_to_m(&p.labels, embeddings, &knowledge, m)?;
            if let Some(w) = g.warning {
                a.warnings.push(w);
            }
            if !p.converged {
                a.warnings.push(format!("label propagation stopped after {} sweeps without converging", p.iterations));
            }
            Ok(a)
        }
    }
}

/// Adjusted Rand index between two labelings of the same samples.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::data::{Labels, Role};

    fn dataset(knowledge_cols: Vec<Vec<f64>>) -> DomainDataset {
        let n = knowledge_cols[0].len();
        let f = knowledge_cols.len();
        let mut v = Vec::new();
        for i in 0..n {
            for c in &knowledge_cols {
                v.push(c[i]);
            }
        }
        let mut map = BTreeMap::new();
        map.insert("k".to_string(), (0..f).collect());
        DomainDataset::new(
            Role::Source,
            (0..f).map(|i| format!("k{i}")).collect(),
            Matrix::from_vec(n, f, v).unwrap(),
            Some(Labels::Classes(vec![0; n])),
            map,
        )
        .unwrap()
    }

    #[test]
    fn single_sample_is_one_subdomain() {
        let d = dataset(vec![vec![3.0]]);
        let z = Matrix::column(&[1.0]).unwrap();
        let a = divide(&d, &KnowledgeSpec::dp("k", 4), &z, &mut Rng::new(0)).unwrap();
        assert_eq!(a.count, 1);
        assert_eq!(a.labels, vec![0]);
    }

    #[test]
    fn graph_division_recovers_planted_clusters() {
        let mut rng = Rng::new(5);
        let n = 60;
        let truth: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let kx: Vec<f64> = truth.iter().map(|&t| t as f64 * 10.0 + rng.normal(0.0, 0.5)).collect();
        let ky: Vec<f64> = truth.iter().map(|&t| t as f64 * -5.0 + rng.normal(0.0, 0.5)).collect();
        let z: Vec<f64> =
            truth.iter().flat_map(|&t| [t as f64 * 4.0 + rng.normal(0.0, 0.3), rng.normal(0.0, 0.3)]).collect();
        let d = dataset(vec![kx, ky]);
        let z = Matrix::from_vec(n, 2, z).unwrap();
        let a = divide(&d, &KnowledgeSpec::graph("k", 2, 0.2), &z, &mut Rng::new(1)).unwrap();
        assert_eq!(a.count, 2);
        assert!((adjusted_rand_index(&a.labels, &truth) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dp_division_gives_contiguous_bands() {
        let mut rng = Rng::new(6);
        let n = 96;
        let hour: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 24.0)).collect();
        let z: Vec<f64> = hour.iter().map(|h| (h / 6.0).floor() + rng.normal(0.0, 0.05)).collect();
        let d = dataset(vec![hour.clone()]);
        let a = divide(&d, &KnowledgeSpec::dp("k", 4), &Matrix::column(&z).unwrap(), &mut Rng::new(0)).unwrap();
        assert_eq!(a.count, 4);
        let order = knowledge_order(&hour);
        let seq: Vec<usize> = order.iter().map(|&i| a.labels[i]).collect();
        assert!(seq.windows(2).all(|w| w[0] <= w[1]), "{seq:?}");
    }

    #[test]
    fn dp_rejects_multi_column_knowledge() {
        let d = dataset(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let z = Matrix::column(&[0.0, 1.0]).unwrap();
        assert!(divide(&d, &KnowledgeSpec::dp("k", 2), &z, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn from_labels_recomputes_cost() {
        let z = Matrix::column(&[0.0, 2.0, 10.0]).unwrap();
        let a = SubdomainAssignment::from_labels(vec![7, 7, 3], &z, &z);
        assert_eq!(a.labels, vec![1, 1, 0]);
        assert_eq!(a.cost, 2.0);
        assert_eq!(a.sizes(), vec![1, 2]);
    }

    #[test]
    fn ari_basics() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        assert!(adjusted_rand_index(&[0, 1, 0, 1], &[0, 0, 1, 1]) < 0.0);
    }
}
