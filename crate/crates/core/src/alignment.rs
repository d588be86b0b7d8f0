//! Subdomain-aware alignment loss.
//!
//! For each target subdomain `j`, the divergence to its matched source subdomains is divided
//! by the divergence to the unmatched ones:
//!
//! ```text
//! L = sum_j  sum_i R[i][j] d(i, j)  /  max(sum_i (1 - R[i][j]) d(i, j), 1e-8)
//! ```
//!
//! Absent cells (no shared class) are left out of both sums. A target with no matched cell
//! contributes nothing. Whenever the denominator guard is hit the target is recorded in
//! `degenerate_targets`.

use serde::Serialize;

use crate::divergence::{divergence_table, mmd2_rows_grad, shared_classes, CellIndex, DivergenceTable, MatchMatrix};
use crate::numeric::Matrix;
use crate::{Error, Result};

pub const EPS_DEN: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentLoss {
    pub value: f64,
    /// Matched divergence sum per target subdomain.
    pub numerators: Vec<f64>,
    /// Unmatched divergence sum per target subdomain, before the guard.
    pub denominators: Vec<f64>,
    /// Targets whose denominator fell below the guard.
    pub degenerate_targets: Vec<usize>,
}

impl AlignmentLoss {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_targets.is_empty()
    }

    /// Recomputes the value from the per-target parts.
    pub fn recomputed(&self) -> f64 {
        self.numerators
            .iter()
            .zip(&self.denominators)
            .filter(|(n, _)| n.is_finite())
            .map(|(n, d)| n / d.max(EPS_DEN))
            .sum()
    }
}

fn check_shapes(table: &DivergenceTable, r: &MatchMatrix) -> Result<()> {
    let (ms, mt) = (table.source_count(), table.target_count());
    if r.r.len() != ms || r.r.iter().any(|row| row.len() != mt) {
        return Err(Error::shape("alignment match matrix", format!("{ms}x{mt}"), format!("{}x?", r.r.len())));
    }
    Ok(())
}

/// Per-target `(matched sum, unmatched sum)`, or `None` for targets with no matched cell.
fn target_sums(table: &DivergenceTable, r: &MatchMatrix) -> Vec<Option<(f64, f64)>> {
    (0..table.target_count())
        .map(|j| {
            let (mut num, mut den, mut any) = (0.0, 0.0, false);
            for i in 0..table.source_count() {
                if let Some(d) = table.values[i][j] {
                    if r.r[i][j] {
                        num += d;
                        any = true;
                    } else {
                        den += d;
                    }
                }
            }
            any.then_some((num, den))
        })
        .collect()
}

pub fn alignment_loss(table: &DivergenceTable, r: &MatchMatrix) -> Result<AlignmentLoss> {
    check_shapes(table, r)?;
    let mut out =
        AlignmentLoss { value: 0.0, numerators: Vec::new(), denominators: Vec::new(), degenerate_targets: Vec::new() };
    for (j, sums) in target_sums(table, r).into_iter().enumerate() {
        match sums {
            Some((num, den)) => {
                if den < EPS_DEN {
                    out.degenerate_targets.push(j);
                }
                out.value += num / den.max(EPS_DEN);
                out.numerators.push(num);
                out.denominators.push(den);
            }
            None => {
                // no matched cell: contributes zero
                out.numerators.push(0.0);
                out.denominators.push(f64::INFINITY);
            }
        }
    }
    Ok(out)
}

/// A warning when `k` matches per target leave no unmatched source subdomain.
pub fn match_k_warning(k: usize, source_subdomains: usize) -> Option<String> {
    (k >= source_subdomains).then(|| {
        format!("match k = {k} covers all {source_subdomains} source subdomains; every alignment denominator is empty")
    })
}

/// The alignment loss on embeddings together with its gradient with respect to every row of
/// `zs` and `zt`. `src` and `tgt` index rows of `zs` and `zt`; the bandwidth is a constant.
pub fn alignment_grad(
    zs: &Matrix,
    src: &CellIndex,
    zt: &Matrix,
    tgt: &CellIndex,
    r: &MatchMatrix,
    sigma: f64,
) -> Result<(AlignmentLoss, Matrix, Matrix)> {
    let table = divergence_table(zs, src, zt, tgt, sigma)?;
    let loss = alignment_loss(&table, r)?;
    let mut gs = Matrix::zeros(zs.rows(), zs.cols());
    let mut gt = Matrix::zeros(zt.rows(), zt.cols());
    for (j, sums) in target_sums(&table, r).into_iter().enumerate() {
        let Some((num, den)) = sums else { continue };
        let guarded = den < EPS_DEN;
        let den_g = den.max(EPS_DEN);
        for i in 0..table.source_count() {
            if table.values[i][j].is_none() {
                continue;
            }
            // d(num / den) / d d_ij
            let coef = if r.r[i][j] {
                1.0 / den_g
            } else if guarded {
                0.0
            } else {
                -num / (den_g * den_g)
            };
            if coef == 0.0 {
                continue;
            }
            let classes = shared_classes(&src.cells[i], &tgt.cells[j]);
            let per_class = coef / classes.len() as f64;
            for c in classes {
                mmd2_rows_grad(zs, &src.cells[i][&c], zt, &tgt.cells[j][&c], sigma, per_class, &mut gs, &mut gt)?;
            }
        }
    }
    Ok((loss, gs, gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::match_subdomains;
    use crate::numeric::{grad_check, Rng};

    fn table(v: Vec<Vec<Option<f64>>>) -> DivergenceTable {
        DivergenceTable::from_values(v).unwrap()
    }

    #[test]
    fn two_sources_one_target() {
        let t = table(vec![vec![Some(0.5)], vec![Some(2.0)]]);
        let r = MatchMatrix::from_bools(vec![vec![true], vec![false]], 1);
        let l = alignment_loss(&t, &r).unwrap();
        assert_eq!(l.value, 0.25);
        assert!(!l.is_degenerate());
        assert_eq!(l.recomputed(), l.value);
    }

    #[test]
    fn single_source_hits_guard() {
        let t = table(vec![vec![Some(0.3)]]);
        let r = MatchMatrix::from_bools(vec![vec![true]], 1);
        let l = alignment_loss(&t, &r).unwrap();
        assert_eq!(l.value, 0.3 / 1e-8);
        assert_eq!(l.degenerate_targets, vec![0]);
        assert!(match_k_warning(1, 1).is_some());
        assert!(match_k_warning(1, 2).is_none());
    }

    #[test]
    fn unmatched_target_contributes_zero() {
        let t = table(vec![vec![None, Some(1.0)], vec![None, Some(3.0)]]);
        let r = match_subdomains(&t, 1).unwrap();
        let l = alignment_loss(&t, &r).unwrap();
        assert!((l.value - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_matched_divergence_gives_zero() {
        let t = table(vec![vec![Some(0.0)], vec![Some(2.0)]]);
        let r = MatchMatrix::from_bools(vec![vec![true], vec![false]], 1);
        assert_eq!(alignment_loss(&t, &r).unwrap().value, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(8);
        let (ns, nt, dim) = (10, 8, 2);
        let zs = Matrix::from_vec(ns, dim, (0..ns * dim).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
        let zt = Matrix::from_vec(nt, dim, (0..nt * dim).map(|_| rng.normal(0.3, 1.0)).collect()).unwrap();
        let s_sub: Vec<usize> = (0..ns).map(|i| i % 2).collect();
        let s_cls: Vec<usize> = (0..ns).map(|i| (i / 2) % 2).collect();
        let t_sub: Vec<usize> = (0..nt).map(|i| i % 2).collect();
        let t_cls: Vec<usize> = (0..nt).map(|i| (i / 2) % 2).collect();
        let src = CellIndex::full(&s_sub, &s_cls, 2).unwrap();
        let tgt = CellIndex::full(&t_sub, &t_cls, 2).unwrap();
        let sigma = 1.3;
        let r = match_subdomains(&divergence_table(&zs, &src, &zt, &tgt, sigma).unwrap(), 1).unwrap();
        let (_, gs, gt) = alignment_grad(&zs, &src, &zt, &tgt, &r, sigma).unwrap();
        let mut params = zs.as_slice().to_vec();
        params.extend_from_slice(zt.as_slice());
        let mut analytic = gs.as_slice().to_vec();
        analytic.extend_from_slice(gt.as_slice());
        let loss = |p: &[f64]| {
            let a = Matrix::from_vec(ns, dim, p[..ns * dim].to_vec()).unwrap();
            let b = Matrix::from_vec(nt, dim, p[ns * dim..].to_vec()).unwrap();
            let t = divergence_table(&a, &src, &b, &tgt, sigma).unwrap();
            alignment_loss(&t, &r).unwrap().value
        };
        let rep = grad_check(loss, &params, &analytic, 1e-5).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn identical_sets_are_stationary() {
        let mut rng = Rng::new(9);
        let z = Matrix::from_vec(8, 2, (0..16).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
        let sub: Vec<usize> = (0..8).map(|i| i / 4).collect();
        let cls: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let cells = CellIndex::full(&sub, &cls, 2).unwrap();
        let r = MatchMatrix::from_bools(vec![vec![true, false], vec![false, true]], 1);
        let (l, gs, gt) = alignment_grad(&z, &cells, &z, &cells, &r, 1.0).unwrap();
        assert!(l.value < 1e-12);
        assert!(gs.frobenius_norm() < 1e-8 && gt.frobenius_norm() < 1e-8);
    }
}
