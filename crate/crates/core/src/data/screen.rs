//! Knowledge screening: does a candidate feature group reduce label uncertainty?
//!
//! Conditional entropies over the full feature vector cannot be estimated by counting joint
//! cells, so both `H(y | x)` and `H(y | x without x_p)` are estimated as the in-sample
//! cross-entropy of a naive-Bayes probe fitted on equal-frequency-binned features. The probe
//! uses raw (unsmoothed) counts, so a feature that is constant within the data contributes a
//! factor of exactly one and leaves the estimate unchanged.

use serde::Serialize;

use super::{DomainDataset, Labels};
use crate::{Error, Result};

pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_LABEL_BINS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScreenResult {
    /// `max(0, raw_gap)`, in nats.
    pub gap: f64,
    pub raw_gap: f64,
    /// Probe cross-entropy with every feature.
    pub entropy_full: f64,
    /// Probe cross-entropy with the candidate columns removed.
    pub entropy_ablated: f64,
    pub delta: f64,
    pub passes: bool,
}

/// Equal-frequency bin index for each value. Cut points are the `k/bins` order statistics,
/// deduplicated, so ties never straddle two bins and a constant column has a single bin.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..bins).map(|k| sorted[(k * n / bins).min(n.saturating_sub(1))]).collect();
    edges.dedup();
    values.iter().map(|v| edges.partition_point(|e| e <= v)).collect()
}

/// Quantile discretization of real labels into at most `q` classes (used wherever a class is
/// needed for a regression target). Edges are computed from `reference`.
pub fn quantile_edges(reference: &[f64], q: usize) -> Vec<f64> {
    let mut sorted = reference.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let mut edges: Vec<f64> = (1..q).map(|k| sorted[(k * n / q).min(n - 1)]).collect();
    edges.dedup();
    edges
}

pub fn discretize(values: &[f64], edges: &[f64]) -> Vec<usize> {
    values.iter().map(|v| edges.partition_point(|e| e <= v)).collect()
}

/// Class ids for screening and class-conditional matching.
pub fn class_ids(labels: &Labels, label_bins: usize) -> Vec<usize> {
    match labels {
        Labels::Classes(c) => c.clone(),
        Labels::Real(v) => discretize(v, &quantile_edges(v, label_bins)),
    }
}

/// In-sample cross-entropy of an unsmoothed naive-Bayes classifier over binned columns.
fn naive_bayes_cross_entropy(binned: &[Vec<usize>], y: &[usize]) -> f64 {
    let n = y.len();
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let mut class_count = vec![0usize; n_classes];
    for &c in y {
        class_count[c] += 1;
    }
    // per column: counts[bin][class]
    let tables: Vec<Vec<Vec<usize>>> = binned
        .iter()
        .map(|col| {
            let nb = col.iter().max().map_or(0, |m| m + 1);
            let mut t = vec![vec![0usize; n_classes]; nb];
            for (&b, &c) in col.iter().zip(y) {
                t[b][c] += 1;
            }
            t
        })
        .collect();
    let mut total = 0.0;
    let mut logp = vec![0.0; n_classes];
    for i in 0..n {
        for (c, lp) in logp.iter_mut().enumerate() {
            if class_count[c] == 0 {
                *lp = f64::NEG_INFINITY;
                continue;
            }
            let mut s = (class_count[c] as f64 / n as f64).ln();
            for (col, t) in binned.iter().zip(&tables) {
                let k = t[col[i]][c];
                if k == 0 {
                    s = f64::NEG_INFINITY;
                    break;
                }
                s += (k as f64 / class_count[c] as f64).ln();
            }
            *lp = s;
        }
        let m = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logp.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - logp[y[i]];
    }
    total / n as f64
}

/// Estimates `H(y | x without candidates) - H(y | x)` and compares it with `delta`.
pub fn knowledge_screen(data: &DomainDataset, candidates: &[usize], bins: usize, delta: f64) -> Result<ScreenResult> {
    let labels =
        data.labels.as_ref().ok_or_else(|| Error::InvalidArgument("knowledge screening needs labeled data".into()))?;
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("bins must be at least 2, got {bins}")));
    }
    if data.is_empty() {
        return Err(Error::Empty("knowledge screening on an empty dataset"));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate columns".into()));
    }
    if let Some(&c) = candidates.iter().find(|&&c| c >= data.n_features()) {
        return Err(Error::InvalidArgument(format!("candidate column {c} out of range")));
    }
    let y = class_ids(labels, DEFAULT_LABEL_BINS);
    let binned: Vec<Vec<usize>> =
        (0..data.n_features()).map(|c| equal_frequency_bins(&data.features.col_values(c), bins)).collect();
    let ablated: Vec<Vec<usize>> =
        binned.iter().enumerate().filter(|(c, _)| !candidates.contains(c)).map(|(_, b)| b.clone()).collect();
    let entropy_full = naive_bayes_cross_entropy(&binned, &y);
    let entropy_ablated = naive_bayes_cross_entropy(&ablated, &y);
    let raw_gap = entropy_ablated - entropy_full;
    let gap = raw_gap.max(0.0);
    Ok(ScreenResult { gap, raw_gap, entropy_full, entropy_ablated, delta, passes: gap > delta })
}
