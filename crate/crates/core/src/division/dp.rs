//! Optimal contiguous division of knowledge-sorted embeddings.
//!
//! Samples are sorted by their 1-D knowledge value and the sorted embedding sequence is cut
//! into `M` contiguous runs minimizing the total within-run sum of squared distances to the
//! run centroid:
//!
//! ```text
//! C[i, m] = min_{m <= j <= i} C[j - 1, m - 1] + d(z_j .. z_i),   C[0, 0] = 0
//! ```
//!
//! `d` is evaluated in O(D) from prefix sums of `z` and `|z|^2`. With split points, cuts are
//! only allowed at `B` equal-frequency positions, which turns the `O(N^2 M)` table into an
//! `O(B^2 M)` one.

use std::cmp::Ordering;

use super::SubdomainAssignment;
use crate::numeric::Matrix;
use crate::{Error, Result};

/// Work counters for one DP solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DpStats {
    /// Number of candidate cut positions, including both ends.
    pub positions: usize,
    /// Number of `C[s][m-1] + d(s, t)` evaluations.
    pub transitions: u64,
}

/// Prefix sums over centered embeddings in sorted order.
struct PrefixSse {
    dim: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl PrefixSse {
    fn new(z: &Matrix, order: &[usize]) -> Self {
        let dim = z.cols();
        let mean = z.col_means();
        let n = order.len();
        let mut sum = vec![0.0; (n + 1) * dim];
        let mut sq = vec![0.0; n + 1];
        for (k, &i) in order.iter().enumerate() {
            let row = z.row(i);
            let mut s = 0.0;
            for d in 0..dim {
                let v = row[d] - mean[d];
                sum[(k + 1) * dim + d] = sum[k * dim + d] + v;
                s += v * v;
            }
            sq[k + 1] = sq[k] + s;
        }
        PrefixSse { dim, sum, sq }
    }

    /// SSE of sorted positions `a..b` about their centroid.
    #[inline]
    fn sse(&self, a: usize, b: usize) -> f64 {
        if b <= a + 1 {
            return 0.0;
        }
        let n = (b - a) as f64;
        let mut norm = 0.0;
        for d in 0..self.dim {
            let s = self.sum[b * self.dim + d] - self.sum[a * self.dim + d];
            norm += s * s;
        }
        (self.sq[b] - self.sq[a] - norm / n).max(0.0)
    }
}

/// Knowledge-sorted sample order; ties keep the original index order.
pub fn knowledge_order(knowledge: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..knowledge.len()).collect();
    order.sort_by(|&a, &b| knowledge[a].partial_cmp(&knowledge[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

/// Allowed cut positions in sorted order: `0`, the interior cuts, and `n`.
///
/// `None` allows every gap. `Some(b)` places `b` cuts at `floor(k n / (b + 1))`, which covers
/// every gap once `b >= n - 1`.
pub fn cut_positions(n: usize, split_points: Option<usize>) -> Vec<usize> {
    let mut p = vec![0];
    match split_points {
        None => p.extend(1..n),
        Some(b) => {
            for k in 1..=b {
                let pos = k * n / (b + 1);
                if pos >= 1 && pos < n && *p.last().unwrap() != pos {
                    p.push(pos);
                }
            }
        }
    }
    if n > 0 {
        p.push(n);
    }
    p
}

fn validate(embeddings: &Matrix, knowledge: &[f64], m: usize, split_points: Option<usize>) -> Result<()> {
    let n = embeddings.rows();
    if knowledge.len() != n {
        return Err(Error::shape("dp_divide_1d knowledge", n, knowledge.len()));
    }
    if let Some(index) = knowledge.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "knowledge values", index });
    }
    if m == 0 {
        return Err(Error::InvalidArgument("M must be at least 1".into()));
    }
    if m > n {
        return Err(Error::InvalidArgument(format!("M = {m} exceeds the {n} samples")));
    }
    if let Some(b) = split_points {
        if b < m {
            return Err(Error::InvalidArgument(format!("{b} split points are fewer than M = {m}")));
        }
    }
    Ok(())
}

/// Divides samples into `m` knowledge-contiguous subdomains with minimal embedding SSE.
///
/// Among equal-cost choices the DP keeps the earliest start for the last run at every level.
pub fn dp_divide_1d(
    embeddings: &Matrix,
    knowledge: &[f64],
    m: usize,
    split_points: Option<usize>,
) -> Result<SubdomainAssignment> {
    dp_divide_1d_with_stats(embeddings, knowledge, m, split_points).map(|(a, _)| a)
}

pub fn dp_divide_1d_with_stats(
    embeddings: &Matrix,
    knowledge: &[f64],
    m: usize,
    split_points: Option<usize>,
) -> Result<(SubdomainAssignment, DpStats)> {
    validate(embeddings, knowledge, m, split_points)?;
    let n = embeddings.rows();
    let order = knowledge_order(knowledge);
    let prefix = PrefixSse::new(embeddings, &order);
    let pos = cut_positions(n, split_points);
    let k = pos.len();
    let mut stats = DpStats { positions: k, transitions: 0 };

    // cost[m][t]: best cost covering sorted[0..pos[t]) with m runs
    let mut cost = vec![vec![f64::INFINITY; k]; m + 1];
    let mut back = vec![vec![usize::MAX; k]; m + 1];
    cost[0][0] = 0.0;
    for mm in 1..=m {
        for t in mm..k {
            let mut best = f64::INFINITY;
            let mut arg = usize::MAX;
            for s in (mm - 1)..t {
                let prev = cost[mm - 1][s];
                if !prev.is_finite() {
                    continue;
                }
                stats.transitions += 1;
                let c = prev + prefix.sse(pos[s], pos[t]);
                if c < best {
                    best = c;
                    arg = s;
                }
            }
            cost[mm][t] = best;
            back[mm][t] = arg;
        }
    }
    if !cost[m][k - 1].is_finite() {
        return Err(Error::InvalidArgument(format!(
            "{} cut positions cannot form {m} subdomains",
            k.saturating_sub(2)
        )));
    }
    let mut bounds = vec![k - 1];
    let mut t = k - 1;
    for mm in (1..=m).rev() {
        t = back[mm][t];
        bounds.push(t);
    }
    bounds.reverse();
    let runs: Vec<(usize, usize)> = bounds.windows(2).map(|w| (pos[w[0]], pos[w[1]])).collect();
    Ok((runs_to_assignment(embeddings, knowledge, &order, &runs), stats))
}

fn runs_to_assignment(
    embeddings: &Matrix,
    knowledge: &[f64],
    order: &[usize],
    runs: &[(usize, usize)],
) -> SubdomainAssignment {
    let mut labels = vec![0; order.len()];
    for (id, &(a, b)) in runs.iter().enumerate() {
        for &i in &order[a..b] {
            labels[i] = id;
        }
    }
    let kmat = Matrix::column(knowledge).expect("validated finite");
    SubdomainAssignment::from_labels(labels, embeddings, &kmat)
}

/// Is the split between runs `[a, s)` and `[s, t)` of sorted knowledge `x` consistent with
/// nearest-knowledge-centroid membership? For contiguous runs this pairwise condition on
/// neighbours implies the property for every sample against every run.
fn compatible(x: &[f64], prefix: &[f64], a: usize, s: usize, t: usize) -> bool {
    let c1 = (prefix[s] - prefix[a]) / (s - a) as f64;
    let c2 = (prefix[t] - prefix[s]) / (t - s) as f64;
    let mid = 0.5 * (c1 + c2);
    let tol = 1e-12 * (1.0 + mid.abs());
    x[s - 1] <= mid + tol && x[s] >= mid - tol
}

/// Like [`dp_divide_1d`], restricted to partitions where every sample's knowledge value is at
/// least as close to its own run's knowledge centroid as to any other run's.
///
/// The last run's start becomes part of the DP state, so the table is `O(K^2 M)` and the
/// solve `O(K^3 M)` for `K` cut positions; without split points it refuses `N > 512`.
pub fn dp_divide_1d_constrained(
    embeddings: &Matrix,
    knowledge: &[f64],
    m: usize,
    split_points: Option<usize>,
) -> Result<SubdomainAssignment> {
    validate(embeddings, knowledge, m, split_points)?;
    let n = embeddings.rows();
    if split_points.is_none() && n > 512 {
        return Err(Error::InvalidArgument(format!("constrained division of {n} samples needs split points")));
    }
    let order = knowledge_order(knowledge);
    let prefix = PrefixSse::new(embeddings, &order);
    let xs: Vec<f64> = order.iter().map(|&i| knowledge[i]).collect();
    let mut xp = vec![0.0; n + 1];
    for (i, &v) in xs.iter().enumerate() {
        xp[i + 1] = xp[i] + v;
    }
    let pos = cut_positions(n, split_points);
    let k = pos.len();
    // f[mm][t][s]: runs cover [0, pos[t]), last run starts at pos[s]
    let idx = |t: usize, s: usize| t * k + s;
    let mut f = vec![vec![f64::INFINITY; k * k]; m + 1];
    let mut back = vec![vec![usize::MAX; k * k]; m + 1];
    for t in 1..k {
        f[1][idx(t, 0)] = prefix.sse(0, pos[t]);
    }
    for mm in 2..=m {
        for t in mm..k {
            for s in (mm - 1)..t {
                let mut best = f64::INFINITY;
                let mut arg = usize::MAX;
                for r in (mm - 2)..s {
                    let prev = f[mm - 1][idx(s, r)];
                    if prev.is_finite() && prev < best && compatible(&xs, &xp, pos[r], pos[s], pos[t]) {
                        best = prev;
                        arg = r;
                    }
                }
                if arg != usize::MAX {
                    f[mm][idx(t, s)] = best + prefix.sse(pos[s], pos[t]);
                    back[mm][idx(t, s)] = arg;
                }
            }
        }
    }
    let last = k - 1;
    let (mut best, mut s_best) = (f64::INFINITY, usize::MAX);
    for s in (m - 1)..last {
        let c = f[m][idx(last, s)];
        if c < best {
            best = c;
            s_best = s;
        }
    }
    if s_best == usize::MAX {
        return Err(Error::Degenerate(format!(
            "no contiguous division into {m} subdomains satisfies the knowledge constraint"
        )));
    }
    let mut bounds = vec![last, s_best];
    let (mut t, mut s) = (last, s_best);
    for mm in (2..=m).rev() {
        let r = back[mm][idx(t, s)];
        bounds.push(r);
        t = s;
        s = r;
    }
    bounds.reverse();
    let runs: Vec<(usize, usize)> = bounds.windows(2).map(|w| (pos[w[0]], pos[w[1]])).collect();
    Ok(runs_to_assignment(embeddings, knowledge, &order, &runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(values: &[f64]) -> Matrix {
        Matrix::column(values).unwrap()
    }

    #[test]
    fn two_clusters_on_a_line() {
        let z = line(&[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        let k = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let a = dp_divide_1d(&z, &k, 2, None).unwrap();
        assert_eq!(a.labels, vec![0, 0, 0, 1, 1, 1]);
        assert!((a.cost - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_and_singleton_divisions() {
        let z = line(&[0.0, 1.0, 2.0]);
        let k = [5.0, 6.0, 7.0];
        let one = dp_divide_1d(&z, &k, 1, None).unwrap();
        assert!((one.cost - 2.0).abs() < 1e-12);
        assert_eq!(one.count, 1);
        let all = dp_divide_1d(&z, &k, 3, None).unwrap();
        assert_eq!(all.cost, 0.0);
        assert_eq!(all.labels, vec![0, 1, 2]);
    }

    #[test]
    fn knowledge_order_drives_contiguity() {
        // knowledge reverses the sample order
        let z = line(&[12.0, 11.0, 10.0, 2.0, 1.0, 0.0]);
        let k = [5.0, 4.0, 3.0, 2.0, 1.0, 0.0];
        let a = dp_divide_1d(&z, &k, 2, None).unwrap();
        assert_eq!(a.labels, vec![1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let z = line(&[0.0, 1.0]);
        assert!(dp_divide_1d(&z, &[0.0, 1.0], 3, None).is_err());
        assert!(dp_divide_1d(&z, &[0.0, f64::NAN], 1, None).is_err());
        assert!(dp_divide_1d(&z, &[0.0, 1.0], 2, Some(1)).is_err());
    }

    #[test]
    fn split_points_cover_every_gap_when_dense() {
        assert_eq!(cut_positions(5, Some(4)), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(cut_positions(5, None), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(cut_positions(10, Some(1)), vec![0, 5, 10]);
    }

    #[test]
    fn transition_counts_scale_with_positions() {
        let n = 40;
        let z = line(&(0..n).map(|i| (i as f64).sin()).collect::<Vec<_>>());
        let k: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let (_, exact) = dp_divide_1d_with_stats(&z, &k, 3, None).unwrap();
        let (_, approx) = dp_divide_1d_with_stats(&z, &k, 3, Some(7)).unwrap();
        assert!(exact.transitions <= (n * n * 3) as u64);
        assert!(approx.transitions <= (9 * 9 * 3) as u64);
        assert!(approx.transitions < exact.transitions / 10);
    }

    #[test]
    fn constrained_mode_respects_knowledge_centroids() {
        // unconstrained optimum puts the lone value 10 with the group at 11
        let z = line(&[0.0, 0.0, 0.0, 5.0, 5.0]);
        let k = [0.0, 0.0, 0.0, 10.0, 11.0];
        let free = dp_divide_1d(&z, &k, 2, None).unwrap();
        assert_eq!(free.labels, vec![0, 0, 0, 1, 1]);
        let c = dp_divide_1d_constrained(&z, &k, 2, None).unwrap();
        assert_eq!(c.constraint_violations(&Matrix::column(&k).unwrap()), 0);
        // an embedding-driven split that the knowledge forbids
        let z = line(&[0.0, 0.0, 0.0, 9.0, 0.0]);
        let k = [0.0, 0.1, 0.2, 0.3, 10.0];
        let free = dp_divide_1d(&z, &k, 2, None).unwrap();
        assert!(free.constraint_violations(&Matrix::column(&k).unwrap()) > 0);
        let c = dp_divide_1d_constrained(&z, &k, 2, None).unwrap();
        assert_eq!(c.constraint_violations(&Matrix::column(&k).unwrap()), 0);
        assert!(c.cost >= free.cost);
    }
}
