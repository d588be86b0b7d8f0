use kisa_core::adaptnet::{predict, train_adaptnet, train_network, AdaptNet, Architecture, Regularizer, TrainConfig};
use kisa_core::data::synth::truth_id;
use kisa_core::data::{
    synth_generate, DomainDataset, KnowledgeSpec, Layout, Standardizer, SynthConfig, SynthKnowledge, TaskKind,
};
use kisa_core::divergence::{median_bandwidth, mmd2};
use kisa_core::fusion::{attention_weights, train_fusion, FusionNet};
use kisa_core::metrics::auc;
use kisa_core::numeric::{Matrix, MlpParams, Rng};

fn band(name: &str, slopes: [f64; 4], direction: usize) -> SynthKnowledge {
    let mut dir = vec![0.0; 4];
    dir[direction] = 1.0;
    SynthKnowledge {
        name: name.into(),
        layout: Layout::Band { span: 24.0 },
        subdomains: 4,
        logit_bias: vec![0.0; 4],
        slopes: slopes.to_vec(),
        direction: dir,
        target_shift: Vec::new(),
        target_proportions: Vec::new(),
    }
}

fn synth(seed: u64, domain_shift: Vec<f64>, per: [usize; 3]) -> SynthConfig {
    SynthConfig {
        seed,
        signal_dim: 4,
        signal_std: 1.0,
        base_logit: 0.0,
        domain_shift,
        knowledge: vec![band("hour", [3.0, -3.0, 3.0, -3.0], 0)],
        source_per_subdomain: per[0],
        target_train_per_subdomain: per[1],
        target_test_per_subdomain: per[2],
    }
}

/// Source, target-train and target-test with the planted truth column removed and every
/// feature z-scored on source plus target-train.
fn prepared(cfg: &SynthConfig) -> [DomainDataset; 3] {
    let d = synth_generate(cfg).unwrap();
    let drop = truth_id("hour");
    let [s, tt, te] = [&d.source, &d.target_train, &d.target_test].map(|p| p.without_columns(&[drop.as_str()]));
    let st = Standardizer::fit(&[&s, &tt]).unwrap();
    [s, tt, te].map(|p| st.apply(&p).unwrap())
}

fn train_cfg(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        warmup_epochs: 3,
        refresh_every: 3,
        batch_size: 64,
        learning_rate: 0.05,
        seed,
        patience: epochs,
        ..TrainConfig::default()
    }
}

fn test_auc(scores: &[f64], data: &DomainDataset) -> f64 {
    let y: Vec<bool> = data.class_labels().unwrap().iter().map(|&c| c == 1).collect();
    auc(scores, &y).unwrap()
}

fn new_net(lambda: f64, input: usize, seed: u64) -> AdaptNet {
    let mut spec = KnowledgeSpec::dp("hour", 4);
    spec.split_points = Some(32);
    AdaptNet::new(spec, input, &Architecture::default(), TaskKind::Classification, 2, lambda, &mut Rng::new(seed))
        .unwrap()
}

#[test]
fn zero_lambda_is_plain_supervised_training() {
    let [s, tt, _] = prepared(&synth(1, vec![0.0, 0.0, 1.0, 1.0], [40, 10, 10]));
    let cfg = train_cfg(5, 8);
    let net = new_net(0.0, s.n_features(), 3);
    let (kisa, _) = train_adaptnet(&net, &s, &tt, &cfg).unwrap();
    let (mut ex, mut head) = (net.extractor.clone(), net.head.clone());
    train_network(&mut ex, &mut head, &[&s, &tt], &tt, &Regularizer::None, 0.0, &cfg).unwrap();
    assert_eq!(kisa.extractor.to_flat(), ex.to_flat());
    assert_eq!(kisa.head.to_flat(), head.to_flat());
}

#[test]
fn subdomain_alignment_beats_no_alignment_on_opposing_rules() {
    let (mut with, mut without) = (0.0, 0.0);
    let seeds = [0u64, 1, 2];
    for &seed in &seeds {
        let [s, tt, te] = prepared(&synth(100 + seed, vec![0.0, 0.0, 2.0, 2.0], [300, 25, 150]));
        let cfg = train_cfg(seed, 40);
        for (lambda, acc) in [(1.0, &mut with), (0.0, &mut without)] {
            let (net, _) = train_adaptnet(&new_net(lambda, s.n_features(), seed), &s, &tt, &cfg).unwrap();
            *acc += test_auc(&predict(&net, &te.features).unwrap(), &te) / seeds.len() as f64;
        }
    }
    assert!(with - without >= 0.02, "lambda 1: {with:.4}, lambda 0: {without:.4}");
}

#[test]
fn uninformative_extractor_is_down_weighted() {
    let [s, tt, te] = prepared(&synth(7, vec![], [100, 50, 100]));
    let (good, _) = train_adaptnet(&new_net(1.0, s.n_features(), 1), &s, &tt, &train_cfg(1, 30)).unwrap();
    let dead = good.extractor.clone().zeroed();
    let mut fnet =
        FusionNet::new(vec![good.extractor.clone(), dead], good.head.clone(), TaskKind::Classification).unwrap();
    fnet.projections[0].iter_mut().for_each(|v| *v = 0.0);
    let cfg =
        TrainConfig { epochs: 100, warmup_epochs: 0, learning_rate: 0.05, patience: 100, ..TrainConfig::default() };
    let (trained, _) = train_fusion(&fnet, &tt, &cfg).unwrap();
    let beta = attention_weights(&trained, &trained.embed(&te.features).unwrap()).unwrap();
    let mean_dead = beta.col_means()[1];
    assert!(mean_dead < 0.5, "mean weight on the zero extractor: {mean_dead}");
}

#[test]
fn target_only_learns_a_separable_target() {
    let mut rng = Rng::new(11);
    let n = 200;
    let x = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap();
    let y: Vec<usize> = (0..n).map(|r| usize::from(x.get(r, 0) + 0.5 * x.get(r, 1) > 0.0)).collect();
    let data = DomainDataset::new(
        kisa_core::data::Role::TargetTrain,
        vec!["a".into(), "b".into(), "c".into()],
        x,
        Some(kisa_core::data::Labels::Classes(y)),
        Default::default(),
    )
    .unwrap();
    let arch = Architecture::default();
    let mut rng = Rng::new(2);
    let (mut ex, mut head): (MlpParams, MlpParams) =
        (arch.extractor(3, &mut rng).unwrap(), arch.head(2, &mut rng).unwrap());
    let cfg = train_cfg(0, 60);
    train_network(&mut ex, &mut head, &[&data], &data, &Regularizer::None, 0.0, &cfg).unwrap();
    let scores = kisa_core::adaptnet::head_to_prediction(
        TaskKind::Classification,
        &head.predict(&ex.predict(&data.features).unwrap()).unwrap(),
    );
    let a = test_auc(&scores, &data);
    assert!(a > 0.95, "AUC {a}");
}

#[test]
fn unshifted_domains_pass_a_permutation_test() {
    let d = synth_generate(&synth(21, vec![], [60, 60, 10])).unwrap();
    let (x, y) = (&d.source.features, &d.target_train.features);
    let sigma = median_bandwidth(&[x, y]).unwrap();
    let observed = mmd2(x, y, sigma).unwrap();
    let pooled = x.vstack(y).unwrap();
    let mut rng = Rng::new(3);
    let perms = 200;
    let mut at_least = 0;
    for _ in 0..perms {
        let p = rng.permutation(pooled.rows());
        let a = pooled.select_rows(&p[..x.rows()]);
        let b = pooled.select_rows(&p[x.rows()..]);
        if mmd2(&a, &b, sigma).unwrap() >= observed {
            at_least += 1;
        }
    }
    let p_value = (at_least + 1) as f64 / (perms + 1) as f64;
    assert!(p_value > 0.05, "p = {p_value}");
}

#[test]
fn shifted_domains_fail_the_same_test() {
    let d = synth_generate(&synth(21, vec![0.0, 0.0, 2.0, 2.0], [60, 60, 10])).unwrap();
    let (x, y) = (&d.source.features, &d.target_train.features);
    let sigma = median_bandwidth(&[x, y]).unwrap();
    let observed = mmd2(x, y, sigma).unwrap();
    let pooled = x.vstack(y).unwrap();
    let mut rng = Rng::new(3);
    let exceed = (0..200)
        .filter(|_| {
            let p = rng.permutation(pooled.rows());
            mmd2(&pooled.select_rows(&p[..x.rows()]), &pooled.select_rows(&p[x.rows()..]), sigma).unwrap() >= observed
        })
        .count();
    assert_eq!(exceed, 0);
}
