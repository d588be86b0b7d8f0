//! Runs every configured method on every seed and collects test metrics.
//!
//! All networks of one seed start from the same initial extractor and head, so methods are
//! compared on paired initializations. `kisa_full` reuses the `kisa_single` networks trained for
//! the same seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kisa_core::adaptnet::{
    head_to_prediction, task_loss, train_adaptnet, train_network, AdaptNet, EpochLog, Grouping, Regularizer,
    TrainConfig, TrainLog,
};
use kisa_core::data::synth::truth_id;
use kisa_core::data::{
    load_dataset, schema_path_for, synth_generate, DatasetSchema, DomainDataset, Labels, Standardizer, TaskKind,
};
use kisa_core::division::divide;
use kisa_core::fusion::{attention_weights, fuse, fusion_predict, save_fusion, train_fusion, FusionLog, FusionNet};
use kisa_core::metrics::{auc, auprc, rmse};
use kisa_core::numeric::{Matrix, MlpParams, Rng};
use serde::Serialize;

use crate::config::{DataSource, ExperimentConfig, HeadInit, Method};
use crate::report::{CurvePoint, RunReport, RunRow};
use crate::BenchError;

/// RNG stream for the shared initial weights of one seed.
const INIT_STREAM: u64 = 100;
/// RNG stream for divisions exported as artifacts.
const EXPORT_STREAM: u64 = 200;

/// Standardized datasets for one seed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub source: DomainDataset,
    pub target_train: DomainDataset,
    pub target_test: DomainDataset,
    pub standardizer: Standardizer,
    pub task: TaskKind,
    pub n_classes: usize,
}

/// Loads or generates the three datasets, drops excluded columns and z-scores every feature
/// with statistics pooled over source and target-train data.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared, BenchError> {
    let mut drop: Vec<String> = cfg.drop_columns.clone();
    let (source, target_train, target_test) = match &cfg.data {
        DataSource::Synth(s) => {
            let mut s = s.clone();
            s.seed = s.seed.wrapping_add(seed);
            // planted subdomain ids are ground truth, never model input
            drop.extend(s.knowledge.iter().map(|k| truth_id(&k.name)));
            let d = synth_generate(&s)?;
            (d.source, d.target_train, d.target_test)
        }
        DataSource::Files(f) => {
            let load = |p: &PathBuf| -> Result<DomainDataset, BenchError> {
                let schema = DatasetSchema::load(schema_path_for(p))?;
                Ok(load_dataset(p, &schema)?)
            };
            (load(&f.source)?, load(&f.target_train)?, load(&f.target_test)?)
        }
    };
    let names: Vec<&str> = drop.iter().map(String::as_str).collect();
    let [source, target_train, target_test] = [source, target_train, target_test].map(|d| d.without_columns(&names));
    if source.column_names != target_train.column_names || source.column_names != target_test.column_names {
        return Err(BenchError::Run("source and target datasets have different columns".into()));
    }
    let task = source.task().ok_or_else(|| BenchError::Run("source data is unlabeled".into()))?;
    if target_train.task() != Some(task) {
        return Err(BenchError::Run("target-train labels do not match the source task".into()));
    }
    let n_classes = match task {
        TaskKind::Classification => [&source, &target_train]
            .iter()
            .flat_map(|d| d.class_labels().unwrap().iter().copied())
            .max()
            .map_or(2, |m| (m + 1).max(2)),
        TaskKind::Regression => 1,
    };
    let standardizer = Standardizer::fit(&[&source, &target_train])?;
    Ok(Prepared {
        source: standardizer.apply(&source)?,
        target_train: standardizer.apply(&target_train)?,
        target_test: standardizer.apply(&target_test)?,
        standardizer,
        task,
        n_classes,
    })
}

/// Single-knowledge networks already trained for the current seed.
#[derive(Debug, Default)]
pub struct SeedCache {
    singles: BTreeMap<String, (AdaptNet, TrainLog)>,
}

impl SeedCache {
    /// The trained network for knowledge `id`, if `kisa_single:<id>` or `kisa_full` has run.
    pub fn single(&self, id: &str) -> Option<&AdaptNet> {
        self.singles.get(id).map(|(net, _)| net)
    }
}

fn initial_pair(cfg: &ExperimentConfig, data: &Prepared, seed: u64) -> Result<(MlpParams, MlpParams), BenchError> {
    let mut rng = Rng::new(seed).fork(INIT_STREAM);
    let extractor = cfg.architecture.extractor(data.source.n_features(), &mut rng)?;
    let head = cfg.architecture.head(kisa_core::adaptnet::output_width(data.task, data.n_classes), &mut rng)?;
    Ok((extractor, head))
}

fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.train.clone() }
}

fn curve(epochs: &[EpochLog]) -> Vec<CurvePoint> {
    epochs
        .iter()
        .map(|e| CurvePoint {
            epoch: e.epoch,
            task_loss: e.task_loss,
            align_loss: e.align_loss,
            total: e.total,
            validation_loss: e.validation_loss,
            full_align_loss: e.full_align_loss,
        })
        .collect()
}

fn fusion_curve(log: &FusionLog) -> Vec<CurvePoint> {
    log.epochs
        .iter()
        .map(|e| CurvePoint {
            epoch: e.epoch,
            task_loss: e.loss,
            align_loss: 0.0,
            total: e.loss,
            validation_loss: e.validation_loss,
            full_align_loss: None,
        })
        .collect()
}

/// Test metrics: AUC and AUPRC for classification, RMSE for regression.
pub fn evaluate(
    task: TaskKind,
    predictions: &[f64],
    data: &DomainDataset,
) -> Result<BTreeMap<String, f64>, BenchError> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| BenchError::Run("target-test data has no labels to evaluate against".into()))?;
    let mut m = BTreeMap::new();
    match (task, labels) {
        (TaskKind::Classification, Labels::Classes(y)) => {
            let positive: Vec<bool> = y.iter().map(|&c| c == 1).collect();
            m.insert("auc".to_string(), auc(predictions, &positive)?);
            m.insert("auprc".to_string(), auprc(predictions, &positive)?);
        }
        (TaskKind::Regression, Labels::Real(y)) => {
            m.insert("rmse".to_string(), rmse(predictions, y)?);
        }
        _ => return Err(BenchError::Run("target-test labels do not match the task".into())),
    }
    Ok(m)
}

fn predict_pair(task: TaskKind, extractor: &MlpParams, head: &MlpParams, x: &Matrix) -> Result<Vec<f64>, BenchError> {
    Ok(head_to_prediction(task, &head.predict(&extractor.predict(x)?)?))
}

fn slug(method: &Method) -> String {
    method.to_string().replace(':', "-")
}

/// Writes `sample_index,label,domain,z0,...` with 17 significant digits per value. Unlabeled
/// rows get the label `NA`.
pub fn emit_embeddings(z: &Matrix, data: &DomainDataset, path: &Path) -> Result<(), BenchError> {
    if z.rows() != data.len() {
        return Err(BenchError::Run(format!("{} embeddings for {} samples", z.rows(), data.len())));
    }
    let mut out = String::from("sample_index,label,domain");
    for c in 0..z.cols() {
        let _ = write!(out, ",z{c}");
    }
    out.push('\n');
    for r in 0..z.rows() {
        let label = match &data.labels {
            Some(Labels::Classes(y)) => y[r].to_string(),
            Some(Labels::Real(y)) => format!("{:.16e}", y[r]),
            None => "NA".to_string(),
        };
        let _ = write!(out, "{r},{label},{}", data.role.as_str());
        for v in z.row(r) {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BenchError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value).expect("artifact serializes") + "\n")?;
    Ok(())
}

fn single_file(id: &str, seed: u64) -> PathBuf {
    PathBuf::from(format!("kisa_single-{id}_seed{seed}.kisa"))
}

/// Division of source and target-train data by a trained network, as `domain,sample_index,subdomain`.
fn export_assignments(net: &AdaptNet, data: &Prepared, seed: u64, path: &Path) -> Result<(), BenchError> {
    let mut rng = Rng::new(seed).fork(EXPORT_STREAM);
    let mut out = String::from("domain,sample_index,subdomain\n");
    for d in [&data.source, &data.target_train] {
        let z = net.extractor.predict(&d.features)?;
        let a = divide(d, &net.knowledge, &z, &mut rng)?;
        for (i, l) in a.labels.iter().enumerate() {
            let _ = writeln!(out, "{},{i},{l}", d.role.as_str());
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn trained_single<'c>(
    cfg: &ExperimentConfig,
    id: &str,
    seed: u64,
    data: &Prepared,
    cache: &'c mut SeedCache,
) -> Result<&'c (AdaptNet, TrainLog), BenchError> {
    if !cache.singles.contains_key(id) {
        let spec = cfg.spec(id).ok_or_else(|| BenchError::Config(format!("unknown knowledge id '{id}'")))?;
        let (extractor, head) = initial_pair(cfg, data, seed)?;
        let net = AdaptNet::from_parts(spec.clone(), extractor, head, cfg.lambda, data.task)?;
        let trained = train_adaptnet(&net, &data.source, &data.target_train, &train_config(cfg, seed))?;
        cache.singles.insert(id.to_string(), trained);
    }
    Ok(&cache.singles[id])
}

fn row_from_log(method: &Method, seed: u64, metrics: BTreeMap<String, f64>, log: &TrainLog) -> RunRow {
    RunRow {
        method: method.to_string(),
        seed,
        metrics,
        epochs_run: log.epochs.len(),
        best_epoch: log.best_epoch,
        stopped_early: log.stopped_early,
        curve: curve(&log.epochs),
        mean_beta: None,
        warnings: log.warnings.clone(),
        error: None,
        wall_seconds: 0.0,
    }
}

/// Trains and evaluates one method for one seed. When `artifacts` is set, models, embeddings,
/// assignments and training logs are written below it.
pub fn run_method(
    cfg: &ExperimentConfig,
    method: &Method,
    seed: u64,
    data: &Prepared,
    cache: &mut SeedCache,
    artifacts: Option<&Path>,
) -> Result<RunRow, BenchError> {
    let tc = train_config(cfg, seed);
    let stem = format!("{}_seed{seed}", slug(method));
    let baseline =
        |reg: Regularizer, parts: &[&DomainDataset]| -> Result<(MlpParams, MlpParams, TrainLog), BenchError> {
            let (mut ex, mut head) = initial_pair(cfg, data, seed)?;
            let log = train_network(&mut ex, &mut head, parts, &data.target_train, &reg, cfg.lambda, &tc)?;
            Ok((ex, head, log))
        };
    let (src, tt) = (&data.source, &data.target_train);
    let trained = match method {
        Method::TargetOnly => Some(baseline(Regularizer::None, &[tt])?),
        Method::GlobalMmd => Some(baseline(Regularizer::GlobalMmd, &[src, tt])?),
        Method::CategoricalSub => Some(baseline(Regularizer::Subdomains(Grouping::Classes), &[src, tt])?),
        Method::FineTune => {
            let (mut ex, mut head) = initial_pair(cfg, data, seed)?;
            let pre = train_network(&mut ex, &mut head, &[src], src, &Regularizer::None, 0.0, &tc)?;
            let mut log = train_network(&mut ex, &mut head, &[tt], tt, &Regularizer::None, 0.0, &tc)?;
            log.warnings.extend(pre.warnings);
            Some((ex, head, log))
        }
        Method::KisaSingle(_) | Method::KisaFull => None,
    };
    if let Some((ex, head, log)) = trained {
        let metrics =
            evaluate(data.task, &predict_pair(data.task, &ex, &head, &data.target_test.features)?, &data.target_test)?;
        if let Some(dir) = artifacts {
            emit_embeddings(
                &ex.predict(&data.target_test.features)?,
                &data.target_test,
                &dir.join("embeddings").join(format!("{stem}.csv")),
            )?;
            write_json(&dir.join("logs").join(format!("{stem}.json")), &log)?;
        }
        return Ok(row_from_log(method, seed, metrics, &log));
    }

    if let Method::KisaSingle(id) = method {
        let (net, log) = trained_single(cfg, id, seed, data, cache)?;
        let preds = predict_pair(data.task, &net.extractor, &net.head, &data.target_test.features)?;
        let metrics = evaluate(data.task, &preds, &data.target_test)?;
        if let Some(dir) = artifacts {
            let models = dir.join("models");
            std::fs::create_dir_all(&models)?;
            std::fs::write(models.join(single_file(id, seed)), net.to_bytes())?;
            emit_embeddings(
                &net.extractor.predict(&data.target_test.features)?,
                &data.target_test,
                &dir.join("embeddings").join(format!("{stem}.csv")),
            )?;
            export_assignments(net, data, seed, &dir.join("assignments").join(format!("{stem}.csv")))?;
            write_json(&dir.join("logs").join(format!("{stem}.json")), log)?;
        }
        return Ok(row_from_log(method, seed, metrics, log));
    }

    // kisa_full
    let ids: Vec<String> = cfg.knowledge.iter().map(|k| k.id.clone()).collect();
    let mut singles = Vec::with_capacity(ids.len());
    let mut warnings = Vec::new();
    for id in &ids {
        let (net, log) = trained_single(cfg, id, seed, data, cache)?;
        warnings.extend(log.warnings.iter().map(|w| format!("{id}: {w}")));
        singles.push(net.clone());
    }
    let fnet = build_fusion(cfg, &singles, data, seed)?;
    let (fnet, flog) = train_fusion(&fnet, tt, &cfg.fusion.train_config(seed))?;
    let preds = fusion_predict(&fnet, &data.target_test.features)?;
    let metrics = evaluate(data.task, &preds, &data.target_test)?;
    let beta = attention_weights(&fnet, &fnet.embed(&tt.features)?)?;
    if let Some(dir) = artifacts {
        let models = dir.join("models");
        std::fs::create_dir_all(&models)?;
        let files: Vec<PathBuf> = ids.iter().map(|id| single_file(id, seed)).collect();
        for (net, f) in singles.iter().zip(&files) {
            std::fs::write(models.join(f), net.to_bytes())?;
        }
        save_fusion(&fnet, &models, &stem, &files)?;
        let z = fnet.embed(&data.target_test.features)?;
        let h = fuse(&attention_weights(&fnet, &z)?, &z)?;
        emit_embeddings(&h, &data.target_test, &dir.join("embeddings").join(format!("{stem}.csv")))?;
        write_json(&dir.join("logs").join(format!("{stem}.json")), &flog)?;
    }
    Ok(RunRow {
        method: method.to_string(),
        seed,
        metrics,
        epochs_run: flog.epochs.len(),
        best_epoch: flog.best_epoch,
        stopped_early: flog.stopped_early,
        curve: fusion_curve(&flog),
        mean_beta: Some(beta.col_means()),
        warnings,
        error: None,
        wall_seconds: 0.0,
    })
}

/// Fusion network over the given single-knowledge networks, with the head chosen by
/// `cfg.fusion.head_init`.
pub fn build_fusion(
    cfg: &ExperimentConfig,
    singles: &[AdaptNet],
    data: &Prepared,
    seed: u64,
) -> Result<FusionNet, BenchError> {
    let extractors: Vec<MlpParams> = singles.iter().map(|n| n.extractor.clone()).collect();
    let fnet = match cfg.fusion.head_init {
        HeadInit::Fresh => FusionNet::with_fresh_head(
            extractors,
            &cfg.architecture.head_hidden,
            cfg.architecture.activation,
            data.task,
            data.n_classes,
            &mut Rng::new(seed).fork(INIT_STREAM + 1),
        )?,
        HeadInit::Warm => {
            let labels = data.target_train.labels.as_ref().expect("target-train is labeled");
            let mut best: Option<(f64, &MlpParams)> = None;
            for n in singles {
                let out = n.head.predict(&n.extractor.predict(&data.target_train.features)?)?;
                let loss = task_loss(&out, labels)?.0;
                if best.is_none_or(|(b, _)| loss < b) {
                    best = Some((loss, &n.head));
                }
            }
            let head = best.ok_or_else(|| BenchError::Run("fusion needs at least one network".into()))?.1.clone();
            FusionNet::new(extractors, head, data.task)?
        }
    };
    Ok(fnet)
}

#[derive(Serialize)]
struct Timing<'a> {
    method: &'a str,
    seed: u64,
    seconds: f64,
}

/// Runs every method on every seed. A failing run becomes a row with an `error` and the
/// remaining runs continue. With `out`, the report, timings, standardizers and per-run
/// artifacts are written there.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunReport, BenchError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut timings = String::new();
    for &seed in &cfg.seeds {
        let data = match prepare_data(cfg, seed) {
            Ok(d) => d,
            Err(e @ BenchError::Config(_)) => return Err(e),
            Err(e) => {
                eprintln!("seed {seed}: data preparation failed: {e}");
                rows.extend(cfg.methods.iter().map(|m| RunRow::failed(m.to_string(), seed, e.to_string())));
                continue;
            }
        };
        if let Some(dir) = out {
            write_json(&dir.join(format!("standardizer_seed{seed}.json")), &data.standardizer)?;
        }
        let mut cache = SeedCache::default();
        for method in &cfg.methods {
            let start = Instant::now();
            let mut row = match run_method(cfg, method, seed, &data, &mut cache, out) {
                Ok(r) => r,
                Err(e @ BenchError::Config(_)) => return Err(e),
                Err(e) => RunRow::failed(method.to_string(), seed, e.to_string()),
            };
            let seconds = start.elapsed().as_secs_f64();
            row.wall_seconds = seconds;
            match &row.error {
                Some(e) => eprintln!("seed {seed} {method}: FAILED: {e}"),
                None => eprintln!("seed {seed} {method}: {:?} ({seconds:.1}s)", row.metrics),
            }
            timings.push_str(
                &serde_json::to_string(&Timing { method: &row.method, seed, seconds }).expect("timing serializes"),
            );
            timings.push('\n');
            rows.push(row);
        }
    }
    let report = RunReport::new(cfg.hash(), rows);
    if let Some(dir) = out {
        report.write(dir)?;
        std::fs::write(dir.join("timings.jsonl"), timings)?;
    }
    Ok(report)
}
