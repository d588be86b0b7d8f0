use serde::{Deserialize, Serialize};

use super::loss::task_loss;
use super::AdaptNet;
use crate::alignment::{alignment_grad, alignment_loss, match_k_warning};
use crate::data::screen::{discretize, quantile_edges, DEFAULT_LABEL_BINS};
use crate::data::{stratify_groups, DomainDataset, KnowledgeSpec, Labels, TaskKind};
use crate::divergence::{divergence_table, match_subdomains, mmd2_rows_grad, Bandwidth, CellIndex, MatchMatrix};
use crate::division::{compact, divide, SubdomainAssignment};
use crate::numeric::{Matrix, MlpParams, Optimizer, OptimizerKind, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Task-only epochs before the first division.
    pub warmup_epochs: usize,
    /// Epochs between recomputing divisions, matching and bandwidth.
    pub refresh_every: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Source subdomains matched to each target subdomain.
    pub match_k: usize,
    /// Stop after this many epochs without a lower target-train loss.
    pub patience: usize,
    pub bandwidth: Bandwidth,
    /// Batch cells with fewer samples on a side are skipped by the alignment term.
    pub min_cell: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            warmup_epochs: 2,
            refresh_every: 1,
            batch_size: 32,
            learning_rate: 1e-4,
            optimizer: OptimizerKind::Adagrad,
            seed: 0,
            match_k: 1,
            patience: 50,
            bandwidth: Bandwidth::Median,
            min_cell: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.warmup_epochs >= self.epochs {
            return bad(format!("warmup_epochs {} must be below epochs {}", self.warmup_epochs, self.epochs));
        }
        if self.refresh_every == 0 {
            return bad("refresh_every must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.match_k == 0 {
            return bad("match_k must be at least 1".into());
        }
        if self.min_cell == 0 {
            return bad("min_cell must be at least 1".into());
        }
        Ok(())
    }
}

/// How subdomains are formed for the alignment term.
#[derive(Debug, Clone, PartialEq)]
pub enum Grouping {
    /// Knowledge-guided division of each domain's embeddings.
    Knowledge(KnowledgeSpec),
    /// One subdomain per class, compared without further class conditioning.
    Classes,
}

/// The term added to the task loss, weighted by `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    None,
    /// Whole-domain MMD between the source and target parts of each batch.
    GlobalMmd,
    Subdomains(Grouping),
}

/// A frozen alignment structure for one step. Cell indices address rows within the source
/// block (`0..n_source`) and the target block of the batch.
#[derive(Debug, Clone, Copy)]
pub enum Penalty<'a> {
    None,
    GlobalMmd { sigma: f64 },
    Subdomains { src: &'a CellIndex, tgt: &'a CellIndex, r: &'a MatchMatrix, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub task: f64,
    pub align: f64,
    pub total: f64,
    pub degenerate: bool,
    /// Extractor parameters first, then head parameters, in `to_flat` order.
    pub grad: Vec<f64>,
}

/// `J + lambda * L` on one batch and its gradient with respect to every parameter. The first
/// `n_source` rows of `x` are source samples, the rest target samples.
pub fn objective(
    extractor: &MlpParams,
    head: &MlpParams,
    x: &Matrix,
    labels: &Labels,
    n_source: usize,
    penalty: Penalty<'_>,
    lambda: f64,
) -> Result<StepOutcome> {
    let (z, cz) = extractor.forward(x)?;
    let (out, ch) = head.forward(&z)?;
    let (task, d_out) = task_loss(&out, labels)?;
    let (hg, mut dz) = head.backward(&ch, &d_out)?;
    let mut align = 0.0;
    let mut degenerate = false;
    if lambda != 0.0 && !matches!(penalty, Penalty::None) {
        if n_source == 0 || n_source >= z.rows() {
            return Err(Error::InvalidArgument("alignment needs source and target rows in the batch".into()));
        }
        let zs = z.select_rows(&(0..n_source).collect::<Vec<_>>());
        let zt = z.select_rows(&(n_source..z.rows()).collect::<Vec<_>>());
        let (gs, gt) = match penalty {
            Penalty::GlobalMmd { sigma } => {
                let mut gs = Matrix::zeros(zs.rows(), zs.cols());
                let mut gt = Matrix::zeros(zt.rows(), zt.cols());
                let si: Vec<usize> = (0..zs.rows()).collect();
                let ti: Vec<usize> = (0..zt.rows()).collect();
                align = mmd2_rows_grad(&zs, &si, &zt, &ti, sigma, 1.0, &mut gs, &mut gt)?;
                (gs, gt)
            }
            Penalty::Subdomains { src, tgt, r, sigma } => {
                let (l, gs, gt) = alignment_grad(&zs, src, &zt, tgt, r, sigma)?;
                align = l.value;
                degenerate = l.is_degenerate();
                (gs, gt)
            }
            Penalty::None => unreachable!(),
        };
        for (r, row) in gs.row_iter().chain(gt.row_iter()).enumerate() {
            for (d, v) in dz.row_mut(r).iter_mut().zip(row) {
                *d += lambda * v;
            }
        }
    }
    let (eg, _) = extractor.backward(&cz, &dz)?;
    let mut grad = eg.to_flat();
    grad.extend(hg.to_flat());
    Ok(StepOutcome { task, align, total: task + lambda * align, degenerate, grad })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean batch task loss.
    pub task_loss: f64,
    /// Mean batch alignment loss.
    pub align_loss: f64,
    /// Mean batch `J + lambda * L`.
    pub total: f64,
    /// Alignment loss on all training samples at the end of the epoch, once a structure exists.
    pub full_align_loss: Option<f64>,
    pub validation_loss: f64,
    /// Steps whose alignment denominator hit the guard.
    pub degenerate_steps: usize,
    /// Divisions and matching were recomputed at the start of this epoch.
    pub refreshed: bool,
    /// `(source, target)` subdomain counts in force.
    pub subdomains: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub warnings: Vec<String>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    fn warn(&mut self, w: String) {
        if !self.warnings.contains(&w) {
            self.warnings.push(w);
        }
    }
}

/// Frozen alignment state between refreshes.
struct Structure {
    sigma: f64,
    /// Per part: subdomain id per row, subdomain count, class id per row used for cells.
    parts: Vec<(Vec<usize>, usize, Vec<usize>)>,
    r: Option<MatchMatrix>,
}

fn class_ids_for(parts: &[&DomainDataset]) -> Vec<Vec<usize>> {
    let pooled: Vec<f64> = parts.iter().flat_map(|p| p.labels.as_ref().unwrap().as_f64()).collect();
    let edges = quantile_edges(&pooled, DEFAULT_LABEL_BINS);
    parts
        .iter()
        .map(|p| match p.labels.as_ref().unwrap() {
            Labels::Classes(c) => c.clone(),
            Labels::Real(v) => discretize(v, &edges),
        })
        .collect()
}

fn concat_labels(a: Labels, b: Option<Labels>) -> Labels {
    match (a, b) {
        (a, None) => a,
        (Labels::Classes(mut a), Some(Labels::Classes(b))) => {
            a.extend(b);
            Labels::Classes(a)
        }
        (Labels::Real(mut a), Some(Labels::Real(b))) => {
            a.extend(b);
            Labels::Real(a)
        }
        _ => unreachable!("parts share a task"),
    }
}

fn full_loss(extractor: &MlpParams, head: &MlpParams, data: &DomainDataset) -> Result<f64> {
    let out = head.predict(&extractor.predict(&data.features)?)?;
    Ok(task_loss(&out, data.labels.as_ref().unwrap())?.0)
}

fn check_parts(
    extractor: &MlpParams,
    head: &MlpParams,
    parts: &[&DomainDataset],
    validation: &DomainDataset,
) -> Result<TaskKind> {
    if parts.is_empty() || parts.len() > 2 {
        return Err(Error::InvalidArgument(format!("training takes one or two parts, got {}", parts.len())));
    }
    let task = parts[0].task().ok_or_else(|| Error::InvalidArgument("training data must be labeled".into()))?;
    for d in parts.iter().copied().chain([validation]) {
        if d.is_empty() {
            return Err(Error::Empty("training or validation data"));
        }
        if d.task() != Some(task) {
            return Err(Error::InvalidArgument("training parts must be labeled for the same task".into()));
        }
        if d.n_features() != extractor.input_dim() {
            return Err(Error::shape("training features", extractor.input_dim(), d.n_features()));
        }
        if let Some(c) = d.class_labels() {
            if let Some(&bad) = c.iter().find(|&&c| c >= head.output_dim()) {
                return Err(Error::InvalidArgument(format!("class {bad} has no head output")));
            }
        }
    }
    if extractor.output_dim() != head.input_dim() {
        return Err(Error::shape("extractor/head", extractor.output_dim(), head.input_dim()));
    }
    Ok(task)
}

fn refresh(
    extractor: &MlpParams,
    parts: &[&DomainDataset],
    grouping: Option<&Grouping>,
    classes: &[Vec<usize>],
    cfg: &TrainConfig,
    rng: &mut Rng,
    log: &mut TrainLog,
) -> Result<Structure> {
    let z: Vec<Matrix> = parts.iter().map(|p| extractor.predict(&p.features)).collect::<Result<_>>()?;
    let sigma = cfg.bandwidth.resolve(&z.iter().collect::<Vec<_>>())?;
    let Some(grouping) = grouping else {
        return Ok(Structure { sigma, parts: Vec::new(), r: None });
    };
    let mut sparts = Vec::with_capacity(2);
    for (p, (data, zp)) in parts.iter().zip(&z).enumerate() {
        let (assignment, cell_classes) = match grouping {
            Grouping::Knowledge(spec) => (divide(data, spec, zp, rng)?, classes[p].clone()),
            Grouping::Classes => {
                let (ids, _) = compact(&classes[p]);
                (SubdomainAssignment::from_labels(ids, zp, zp), vec![0; data.len()])
            }
        };
        for w in &assignment.warnings {
            log.warn(format!("{} division: {w}", data.role.as_str()));
        }
        sparts.push((assignment.labels, assignment.count, cell_classes));
    }
    let cells: Vec<CellIndex> = sparts.iter().map(|(s, m, c)| CellIndex::full(s, c, *m)).collect::<Result<_>>()?;
    let table = divergence_table(&z[0], &cells[0], &z[1], &cells[1], sigma)?;
    if table.values.iter().flatten().all(Option::is_none) {
        return Err(Error::Degenerate(format!(
            "no source/target subdomain pair shares a class ({} source, {} target subdomains)",
            sparts[0].1, sparts[1].1
        )));
    }
    let r = match_subdomains(&table, cfg.match_k)?;
    if let Some(w) = match_k_warning(cfg.match_k, sparts[0].1) {
        log.warn(w);
    }
    Ok(Structure { sigma, parts: sparts, r: Some(r) })
}

/// Full-data alignment value under the frozen structure, at the current parameters.
fn full_alignment(extractor: &MlpParams, parts: &[&DomainDataset], s: &Structure) -> Result<f64> {
    let zs = extractor.predict(&parts[0].features)?;
    let zt = extractor.predict(&parts[1].features)?;
    match &s.r {
        None => {
            let si: Vec<usize> = (0..zs.rows()).collect();
            let ti: Vec<usize> = (0..zt.rows()).collect();
            crate::divergence::mmd2_rows(&zs, &si, &zt, &ti, s.sigma)
        }
        Some(r) => {
            let c: Vec<CellIndex> =
                s.parts.iter().map(|(sub, m, cls)| CellIndex::full(sub, cls, *m)).collect::<Result<_>>()?;
            let table = divergence_table(&zs, &c[0], &zt, &c[1], s.sigma)?;
            Ok(alignment_loss(&table, r)?.value)
        }
    }
}

/// Trains `extractor` and `head` in place on one part (plain supervised training) or on a
/// source and a target part with an optional alignment term. Each step draws one batch from
/// every part; the target batches cycle when the target part has fewer of them. Training stops
/// early once the loss on `validation` has not improved for `patience` epochs.
pub fn train_network(
    extractor: &mut MlpParams,
    head: &mut MlpParams,
    parts: &[&DomainDataset],
    validation: &DomainDataset,
    regularizer: &Regularizer,
    lambda: f64,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    check_parts(extractor, head, parts, validation)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
    }
    let regularizer = if lambda == 0.0 { &Regularizer::None } else { regularizer };
    if !matches!(regularizer, Regularizer::None) && parts.len() != 2 {
        return Err(Error::InvalidArgument("alignment needs a source and a target part".into()));
    }
    let grouping = match regularizer {
        Regularizer::Subdomains(g) => Some(g),
        _ => None,
    };
    if let Some(Grouping::Knowledge(spec)) = grouping {
        for p in parts {
            p.knowledge_columns(&spec.id)?;
        }
    }
    let classes = class_ids_for(parts);
    let root = Rng::new(cfg.seed);
    let mut batch_rng = root.fork(10);
    let mut div_rng = root.fork(11);
    let n_ex = extractor.param_count();
    let mut params = extractor.to_flat();
    params.extend(head.to_flat());
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut log = TrainLog::default();
    let mut structure: Option<Structure> = None;
    let mut best = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        let active = !matches!(regularizer, Regularizer::None) && epoch >= cfg.warmup_epochs;
        let refreshed = active && (epoch - cfg.warmup_epochs) % cfg.refresh_every == 0;
        if refreshed {
            structure = Some(refresh(extractor, parts, grouping, &classes, cfg, &mut div_rng, &mut log)?);
        }
        let st = structure.as_ref().filter(|_| active);
        let batches: Vec<Vec<Vec<usize>>> = parts
            .iter()
            .enumerate()
            .map(|(p, d)| {
                let groups = match st {
                    Some(s) if !s.parts.is_empty() => s.parts[p].0.clone(),
                    _ => vec![0; d.len()],
                };
                stratify_groups(&groups, cfg.batch_size, &mut batch_rng)
            })
            .collect::<Result<_>>()?;
        let (mut sum_task, mut sum_align, mut sum_total, mut degenerate_steps) = (0.0, 0.0, 0.0, 0);
        let steps = batches[0].len();
        for s in 0..steps {
            let rows0 = &batches[0][s];
            let mut x = parts[0].features.select_rows(rows0);
            let l0 = parts[0].labels.as_ref().unwrap().select(rows0);
            let rows1 = parts.get(1).map(|_| &batches[1][s % batches[1].len()]);
            let labels = match rows1 {
                Some(r1) => {
                    x = x.vstack(&parts[1].features.select_rows(r1))?;
                    concat_labels(l0, Some(parts[1].labels.as_ref().unwrap().select(r1)))
                }
                None => l0,
            };
            let cells;
            let penalty = match (st, rows1) {
                (Some(s), Some(r1)) => match &s.r {
                    None => Penalty::GlobalMmd { sigma: s.sigma },
                    Some(r) => {
                        let (sub0, m0, c0) = &s.parts[0];
                        let (sub1, m1, c1) = &s.parts[1];
                        cells = (
                            CellIndex::from_rows(rows0, sub0, c0, *m0)?.prune(cfg.min_cell),
                            CellIndex::from_rows(r1, sub1, c1, *m1)?.prune(cfg.min_cell),
                        );
                        Penalty::Subdomains { src: &cells.0, tgt: &cells.1, r, sigma: s.sigma }
                    }
                },
                _ => Penalty::None,
            };
            let out = objective(extractor, head, &x, &labels, rows0.len(), penalty, lambda)?;
            if !out.total.is_finite() {
                return Err(Error::NonFinite { what: "training loss at epoch", index: epoch });
            }
            sum_task += out.task;
            sum_align += out.align;
            sum_total += out.total;
            degenerate_steps += usize::from(out.degenerate);
            opt.step(&mut params, &out.grad);
            extractor.set_flat(&params[..n_ex])?;
            head.set_flat(&params[n_ex..])?;
        }
        let full_align_loss = match st {
            Some(s) => Some(full_alignment(extractor, parts, s)?),
            None => None,
        };
        let validation_loss = full_loss(extractor, head, validation)?;
        let n = steps.max(1) as f64;
        log.epochs.push(EpochLog {
            epoch,
            task_loss: sum_task / n,
            align_loss: sum_align / n,
            total: sum_total / n,
            full_align_loss,
            validation_loss,
            degenerate_steps,
            refreshed,
            subdomains: st.filter(|s| !s.parts.is_empty()).map(|s| (s.parts[0].1, s.parts[1].1)),
        });
        if validation_loss < best {
            best = validation_loss;
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok(log)
}

/// Trains one adaptation network on labeled source and target-train data.
pub fn train_adaptnet(
    net: &AdaptNet,
    source: &DomainDataset,
    target_train: &DomainDataset,
    cfg: &TrainConfig,
) -> Result<(AdaptNet, TrainLog)> {
    for d in [source, target_train] {
        if d.task() != Some(net.task) {
            return Err(Error::InvalidArgument(format!(
                "{} data is not labeled for the network's task",
                d.role.as_str()
            )));
        }
    }
    let mut out = net.clone();
    let reg = Regularizer::Subdomains(Grouping::Knowledge(net.knowledge.clone()));
    let log =
        train_network(&mut out.extractor, &mut out.head, &[source, target_train], target_train, &reg, net.lambda, cfg)?;
    Ok((out, log))
}
