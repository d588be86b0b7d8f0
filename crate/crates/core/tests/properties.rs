use kisa_core::alignment::alignment_loss;
use kisa_core::codec::decode;
use kisa_core::data::TaskKind;
use kisa_core::divergence::{mmd2, DivergenceTable, MatchMatrix};
use kisa_core::division::{build_graph, dp_divide_1d, dp_divide_1d_constrained, knowledge_order};
use kisa_core::fusion::{attention_weights, FusionNet};
use kisa_core::metrics::{auc, auprc};
use kisa_core::numeric::{Activation, Matrix, MlpParams, Rng};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-5.0..5.0f64, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

/// Embeddings and 1-D knowledge for `n` samples.
fn division_case() -> impl Strategy<Value = (Matrix, Vec<f64>, usize)> {
    (4usize..30, 1usize..4, 1usize..5).prop_flat_map(|(n, d, m)| {
        let m = m.min(n);
        (matrix(n, d), prop::collection::vec(0.0..10.0f64, n), Just(m))
    })
}

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40)
        .prop_flat_map(|n| (prop::collection::vec(0u8..8, n), prop::collection::vec(any::<bool>(), n)))
        .prop_filter("both classes", |(_, y)| y.iter().any(|&b| b) && y.iter().any(|&b| !b))
        .prop_map(|(s, y)| (s.into_iter().map(|v| v as f64 / 7.0).collect(), y))
}

proptest! {
    #[test]
    fn dp_runs_are_contiguous_in_knowledge_order((z, k, m) in division_case()) {
        let a = dp_divide_1d(&z, &k, m, None).unwrap();
        prop_assert_eq!(a.count, m);
        let order = knowledge_order(&k);
        let run_ids: Vec<usize> = order.iter().map(|&i| a.labels[i]).collect();
        prop_assert!(run_ids.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1), "{:?}", run_ids);
        prop_assert!(a.cost >= 0.0);
    }

    #[test]
    fn fewer_split_points_never_lower_the_cost((z, k, m) in division_case(), extra in 0usize..6) {
        let exact = dp_divide_1d(&z, &k, m, None).unwrap();
        let b = (m + extra).min(z.rows().saturating_sub(1)).max(m);
        let coarse = dp_divide_1d(&z, &k, m, Some(b)).unwrap();
        prop_assert!(coarse.cost >= exact.cost - 1e-9 * (1.0 + exact.cost));
    }

    #[test]
    fn constrained_dp_is_never_cheaper_and_never_violates((z, k, m) in division_case()) {
        let free = dp_divide_1d(&z, &k, m, None).unwrap();
        let held = dp_divide_1d_constrained(&z, &k, m, None).unwrap();
        prop_assert!(held.cost >= free.cost - 1e-9 * (1.0 + free.cost));
        prop_assert_eq!(held.constraint_violations(&Matrix::column(&k).unwrap()), 0);
    }

    #[test]
    fn one_subdomain_costs_the_total_scatter((z, k, _m) in division_case()) {
        let a = dp_divide_1d(&z, &k, 1, None).unwrap();
        let mean = z.col_means();
        let total: f64 = z.row_iter().map(|r| r.iter().zip(&mean).map(|(v, c)| (v - c).powi(2)).sum::<f64>()).sum();
        prop_assert!((a.cost - total).abs() <= 1e-9 * (1.0 + total));
    }

    #[test]
    fn graph_edges_grow_with_the_quantile(
        (z, k) in (3usize..25).prop_flat_map(|n| (matrix(n, 2), matrix(n, 2))),
        q1 in 0.05..0.95f64,
        q2 in 0.05..0.95f64,
    ) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let a = build_graph(&z, &k, lo).unwrap();
        let b = build_graph(&z, &k, hi).unwrap();
        prop_assert!(a.kappa <= b.kappa);
        prop_assert!(a.edges.len() <= b.edges.len());
        prop_assert!(b.edges.iter().all(|&(_, _, w)| w > 0.0 && w.is_finite()));
    }

    #[test]
    fn mmd_is_a_symmetric_nonnegative_discrepancy(
        (x, y) in (1usize..20, 1usize..20, 1usize..4).prop_flat_map(|(n, m, d)| (matrix(n, d), matrix(m, d))),
        sigma in 0.2..5.0f64,
    ) {
        let v = mmd2(&x, &y, sigma).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!((v - mmd2(&y, &x, sigma).unwrap()).abs() <= 1e-12);
        prop_assert!(mmd2(&x, &x, sigma).unwrap() <= 1e-12);
        // the biased estimate is bounded by 2 for a kernel with values in (0, 1]
        prop_assert!(v <= 2.0 + 1e-12);
    }

    #[test]
    fn mmd_ignores_row_order(x in matrix(8, 2), y in matrix(5, 2), seed in any::<u64>()) {
        let perm = Rng::new(seed).permutation(8);
        let shuffled = x.select_rows(&perm);
        let a = mmd2(&x, &y, 1.0).unwrap();
        let b = mmd2(&shuffled, &y, 1.0).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn alignment_loss_is_scale_free(
        values in prop::collection::vec(prop::collection::vec(0.01..5.0f64, 3), 3),
        scale in 0.1..10.0f64,
        matched in prop::collection::vec(0usize..3, 3),
    ) {
        let r: Vec<Vec<bool>> = (0..3).map(|i| (0..3).map(|j| matched[j] == i).collect()).collect();
        let table = |s: f64| DivergenceTable::from_values(
            values.iter().map(|row| row.iter().map(|v| Some(v * s)).collect()).collect()
        ).unwrap();
        let mm = MatchMatrix::from_bools(r, 1);
        let base = alignment_loss(&table(1.0), &mm).unwrap();
        let scaled = alignment_loss(&table(scale), &mm).unwrap();
        prop_assert!(base.value >= 0.0);
        prop_assert!(!base.is_degenerate());
        prop_assert!((base.value - scaled.value).abs() <= 1e-9 * (1.0 + base.value));
        prop_assert!((base.value - base.recomputed()).abs() <= 1e-12 * (1.0 + base.value));
    }

    #[test]
    fn attention_weights_form_a_distribution(k in 1usize..5, seed in any::<u64>(), scale in 0.0..10.0f64) {
        let mut rng = Rng::new(seed);
        let extractors: Vec<MlpParams> =
            (0..k).map(|_| MlpParams::init(&[3, 4], Activation::Tanh, Activation::Tanh, &mut rng).unwrap()).collect();
        let head = MlpParams::init(&[4, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let mut net = FusionNet::new(extractors, head, TaskKind::Classification).unwrap();
        for w in &mut net.projections {
            w.iter_mut().for_each(|v| *v = rng.normal(0.0, scale));
        }
        let x = Matrix::from_vec(6, 3, (0..18).map(|_| rng.normal(0.0, 2.0)).collect()).unwrap();
        let beta = attention_weights(&net, &net.embed(&x).unwrap()).unwrap();
        for r in 0..beta.rows() {
            prop_assert!((beta.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(beta.row(r).iter().all(|&b| b > 0.0 && b <= 1.0));
        }
    }

    #[test]
    fn auc_flips_under_negated_scores((s, y) in scores_and_labels()) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let a = auc(&s, &y).unwrap();
        prop_assert!((a + auc(&neg, &y).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn ranking_metrics_ignore_monotone_transforms((s, y) in scores_and_labels()) {
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 2.0).collect();
        prop_assert_eq!(auc(&s, &y).unwrap(), auc(&t, &y).unwrap());
        prop_assert_eq!(auprc(&s, &y).unwrap(), auprc(&t, &y).unwrap());
    }

    #[test]
    fn auprc_is_bounded_and_flat_scores_give_prevalence((s, y) in scores_and_labels()) {
        let ap = auprc(&s, &y).unwrap();
        let prevalence = y.iter().filter(|&&b| b).count() as f64 / y.len() as f64;
        prop_assert!(ap > 0.0 && ap <= 1.0 + 1e-12);
        // tying every score gives exactly the prevalence
        let flat = vec![0.5; s.len()];
        prop_assert!((auprc(&flat, &y).unwrap() - prevalence).abs() <= 1e-12);
    }

    #[test]
    fn decoding_arbitrary_bytes_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode(&bytes);
    }
}
