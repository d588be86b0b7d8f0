//! Attentive fusion of several frozen extractors.
//!
//! Each extractor `g_i` yields `z_i`; a per-sample gate `alpha_i = sigmoid(w_i . z_i)` is
//! normalized across extractors to `beta_i`, and the head sees `h = sum_i beta_i z_i`. Only the
//! gates and the head are trained.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptnet::{head_to_prediction, task_loss, AdaptNet, TrainConfig};
use crate::codec::{self, ModelFile, ModelKind};
use crate::data::{stratify_groups, DomainDataset, Labels, TaskKind};
use crate::numeric::{sigmoid, Activation, Dense, Matrix, MlpParams, Optimizer, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionNet {
    /// Frozen `g_1 .. g_K`.
    pub extractors: Vec<MlpParams>,
    /// `w_i`, one length-`D` vector per extractor.
    pub projections: Vec<Vec<f64>>,
    pub head: MlpParams,
    pub task: TaskKind,
    /// Regression outputs map `tanh` onto this `[lo, hi]` range.
    pub label_range: Option<(f64, f64)>,
}

impl FusionNet {
    /// Zero projections (uniform attention) and the given head.
    pub fn new(extractors: Vec<MlpParams>, head: MlpParams, task: TaskKind) -> Result<Self> {
        let d = extractors.first().ok_or(Error::Empty("fusion needs at least one extractor"))?.output_dim();
        let projections = vec![vec![0.0; d]; extractors.len()];
        let net = FusionNet { extractors, projections, head, task, label_range: None };
        net.validate()?;
        Ok(net)
    }

    /// A fresh head of the given hidden sizes on top of the extractors' embedding.
    pub fn with_fresh_head(
        extractors: Vec<MlpParams>,
        hidden: &[usize],
        activation: Activation,
        task: TaskKind,
        n_classes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let d = extractors.first().ok_or(Error::Empty("fusion needs at least one extractor"))?.output_dim();
        let mut dims = vec![d];
        dims.extend(hidden);
        dims.push(crate::adaptnet::output_width(task, n_classes));
        let head = MlpParams::init(&dims, activation, Activation::Identity, rng)?;
        FusionNet::new(extractors, head, task)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.extractors.len();
        if k == 0 {
            return Err(Error::Empty("fusion needs at least one extractor"));
        }
        let d = self.extractors[0].output_dim();
        let input = self.extractors[0].input_dim();
        for g in &self.extractors {
            if g.output_dim() != d || g.input_dim() != input {
                return Err(Error::shape(
                    "fusion extractor",
                    format!("{input} -> {d}"),
                    format!("{} -> {}", g.input_dim(), g.output_dim()),
                ));
            }
        }
        if self.projections.len() != k || self.projections.iter().any(|w| w.len() != d) {
            return Err(Error::shape("fusion projections", format!("{k} x {d}"), self.projections.len()));
        }
        if self.head.input_dim() != d {
            return Err(Error::shape("fusion head input", d, self.head.input_dim()));
        }
        match self.task {
            TaskKind::Regression if self.head.output_dim() != 1 => {
                Err(Error::shape("fusion regression head", 1, self.head.output_dim()))
            }
            TaskKind::Classification if self.head.output_dim() < 2 => {
                Err(Error::InvalidArgument("a classification head needs at least two logits".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn k(&self) -> usize {
        self.extractors.len()
    }

    /// `z_i = g_i(x)` for every extractor.
    pub fn embed(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.extractors.iter().map(|g| g.predict(x)).collect()
    }

    fn trainable(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.projections.iter().flatten().copied().collect();
        p.extend(self.head.to_flat());
        p
    }

    fn set_trainable(&mut self, p: &[f64]) -> Result<()> {
        let d = self.projections[0].len();
        let k = self.k();
        for (i, w) in self.projections.iter_mut().enumerate() {
            w.copy_from_slice(&p[i * d..(i + 1) * d]);
        }
        self.head.set_flat(&p[k * d..])
    }
}

fn check_z(fnet: &FusionNet, z: &[Matrix]) -> Result<usize> {
    if z.len() != fnet.k() {
        return Err(Error::shape("fusion embeddings", fnet.k(), z.len()));
    }
    let n = z[0].rows();
    let d = fnet.projections[0].len();
    for zi in z {
        if zi.rows() != n || zi.cols() != d {
            return Err(Error::shape("fusion embedding block", format!("{n} x {d}"), format!("{:?}", zi.shape())));
        }
    }
    Ok(n)
}

fn alphas(fnet: &FusionNet, z: &[Matrix], n: usize) -> Matrix {
    let mut a = Matrix::zeros(n, fnet.k());
    for (i, (zi, w)) in z.iter().zip(&fnet.projections).enumerate() {
        for r in 0..n {
            a.set(r, i, sigmoid(crate::numeric::dot(zi.row(r), w)));
        }
    }
    a
}

fn normalize(a: &Matrix) -> Matrix {
    let mut b = a.clone();
    for r in 0..b.rows() {
        let row = b.row_mut(r);
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    b
}

/// `beta[r][i] = alpha_i / sum_j alpha_j` with `alpha_i = sigmoid(w_i . z_i[r])`.
pub fn attention_weights(fnet: &FusionNet, z: &[Matrix]) -> Result<Matrix> {
    let n = check_z(fnet, z)?;
    Ok(normalize(&alphas(fnet, z, n)))
}

/// `h[r] = sum_i beta[r][i] z_i[r]`.
pub fn fuse(beta: &Matrix, z: &[Matrix]) -> Result<Matrix> {
    let Some(first) = z.first() else {
        return Err(Error::Empty("fuse needs at least one embedding block"));
    };
    let (n, d) = first.shape();
    if beta.shape() != (n, z.len()) || z.iter().any(|m| m.shape() != (n, d)) {
        return Err(Error::shape("fuse", format!("{n} x {}", z.len()), format!("{:?}", beta.shape())));
    }
    let mut h = Matrix::zeros(n, d);
    for (i, zi) in z.iter().enumerate() {
        for r in 0..n {
            let b = beta.get(r, i);
            for (hv, zv) in h.row_mut(r).iter_mut().zip(zi.row(r)) {
                *hv += b * zv;
            }
        }
    }
    Ok(h)
}

fn scale_output(task: TaskKind, range: Option<(f64, f64)>, out: &Matrix) -> Vec<f64> {
    match (task, range) {
        (TaskKind::Regression, Some((lo, hi))) => {
            out.col_values(0).iter().map(|o| lo + 0.5 * (o.tanh() + 1.0) * (hi - lo)).collect()
        }
        _ => head_to_prediction(task, out),
    }
}

/// Predictions from precomputed embeddings.
pub fn fusion_predict_z(fnet: &FusionNet, z: &[Matrix]) -> Result<Vec<f64>> {
    let beta = attention_weights(fnet, z)?;
    let out = fnet.head.predict(&fuse(&beta, z)?)?;
    Ok(scale_output(fnet.task, fnet.label_range, &out))
}

/// Class-1 probability or (range-scaled) regression value per row.
pub fn fusion_predict(fnet: &FusionNet, x: &Matrix) -> Result<Vec<f64>> {
    fusion_predict_z(fnet, &fnet.embed(x)?)
}

/// Loss on precomputed embeddings and its gradient with respect to the trainable parameters
/// (projections in order, then the head).
pub fn fusion_objective(fnet: &FusionNet, z: &[Matrix], labels: &Labels) -> Result<(f64, Vec<f64>)> {
    let n = check_z(fnet, z)?;
    let k = fnet.k();
    let alpha = alphas(fnet, z, n);
    let beta = normalize(&alpha);
    let h = fuse(&beta, z)?;
    let (out, cache) = fnet.head.forward(&h)?;
    let (loss, d_out) = match (fnet.task, fnet.label_range, labels) {
        (TaskKind::Regression, Some((lo, hi)), Labels::Real(_)) => {
            let t: Vec<f64> = out.col_values(0).iter().map(|o| o.tanh()).collect();
            let y = Matrix::column(&t.iter().map(|v| lo + 0.5 * (v + 1.0) * (hi - lo)).collect::<Vec<_>>())?;
            let (l, dy) = task_loss(&y, labels)?;
            let mut d = Matrix::zeros(n, 1);
            for r in 0..n {
                d.set(r, 0, dy.get(r, 0) * 0.5 * (hi - lo) * (1.0 - t[r] * t[r]));
            }
            (l, d)
        }
        _ => task_loss(&out, labels)?,
    };
    let (hg, dh) = fnet.head.backward(&cache, &d_out)?;
    let d = fnet.projections[0].len();
    let mut grad = vec![0.0; k * d];
    for r in 0..n {
        let db: Vec<f64> = (0..k).map(|i| crate::numeric::dot(dh.row(r), z[i].row(r))).collect();
        let s: f64 = alpha.row(r).iter().sum();
        let mean: f64 = (0..k).map(|i| db[i] * beta.get(r, i)).sum();
        for i in 0..k {
            let a = alpha.get(r, i);
            let da = (db[i] - mean) / s;
            let dlogit = da * a * (1.0 - a);
            for (g, zv) in grad[i * d..(i + 1) * d].iter_mut().zip(z[i].row(r)) {
                *g += dlogit * zv;
            }
        }
    }
    grad.extend(hg.to_flat());
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub validation_loss: f64,
    /// Mean attention weight per extractor over the training rows.
    pub mean_beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct FusionLog {
    pub epochs: Vec<FusionEpoch>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains the gates and head on labeled target-train data with every extractor frozen.
/// Uses `epochs`, `batch_size`, `learning_rate`, `optimizer`, `seed` and `patience` from `cfg`.
pub fn train_fusion(
    fnet: &FusionNet,
    target_train: &DomainDataset,
    cfg: &TrainConfig,
) -> Result<(FusionNet, FusionLog)> {
    cfg.validate()?;
    fnet.validate()?;
    if target_train.is_empty() {
        return Err(Error::Empty("fusion training needs target-train samples"));
    }
    let labels = target_train
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("fusion training needs labeled target-train data".into()))?;
    if labels.task() != fnet.task {
        return Err(Error::InvalidArgument("target-train labels do not match the fusion task".into()));
    }
    let mut net = fnet.clone();
    if net.task == TaskKind::Regression {
        let y = labels.as_f64();
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        net.label_range = Some(if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) });
    }
    let z = net.embed(&target_train.features)?;
    let mut rng = Rng::new(cfg.seed).fork(20);
    let mut params = net.trainable();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.len());
    let mut log = FusionLog::default();
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let groups = vec![0; target_train.len()];
    for epoch in 0..cfg.epochs {
        let batches = stratify_groups(&groups, cfg.batch_size, &mut rng)?;
        let mut sum = 0.0;
        for rows in &batches {
            let zb: Vec<Matrix> = z.iter().map(|m| m.select_rows(rows)).collect();
            let (l, g) = fusion_objective(&net, &zb, &labels.select(rows))?;
            if !l.is_finite() {
                return Err(Error::NonFinite { what: "fusion loss at epoch", index: epoch });
            }
            sum += l;
            opt.step(&mut params, &g);
            net.set_trainable(&params)?;
        }
        let (validation_loss, _) = fusion_objective(&net, &z, labels)?;
        let beta = attention_weights(&net, &z)?;
        log.epochs.push(FusionEpoch {
            epoch,
            loss: sum / batches.len().max(1) as f64,
            validation_loss,
            mean_beta: beta.col_means(),
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
    Ok((net, log))
}

/// On-disk description of a fusion network: the component adaptation-network files and the
/// file holding the gates and head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionManifest {
    pub task: TaskKind,
    #[serde(default)]
    pub label_range: Option<[f64; 2]>,
    /// Adaptation-network files, relative to the manifest's directory.
    pub extractors: Vec<PathBuf>,
    /// Gates and head, relative to the manifest's directory.
    pub fusion: PathBuf,
}

impl FusionManifest {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: FusionManifest = toml::from_str(text).map_err(|e| Error::Schema(e.message().to_string()))?;
        if m.extractors.is_empty() {
            return Err(Error::Schema("manifest lists no extractors".into()));
        }
        if let Some([lo, hi]) = m.label_range {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Schema(format!("bad label range [{lo}, {hi}]")));
            }
        }
        Ok(m)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// Gates and head as a model file: one `D -> 1` sigmoid layer per gate, then the head.
pub fn encode_fusion_params(fnet: &FusionNet) -> Vec<u8> {
    let mut nets: Vec<MlpParams> = fnet
        .projections
        .iter()
        .map(|w| {
            MlpParams::new(vec![Dense {
                weight: Matrix::from_vec(1, w.len(), w.clone()).expect("finite projections"),
                bias: vec![0.0],
                activation: Activation::Sigmoid,
            }])
            .expect("valid gate")
        })
        .collect();
    nets.push(fnet.head.clone());
    codec::encode(&ModelFile { kind: ModelKind::FusionNet, meta: format!("k = {}\n", fnet.k()), nets })
}

fn decode_fusion_params(bytes: &[u8]) -> Result<(Vec<Vec<f64>>, MlpParams)> {
    let file = codec::decode(bytes)?;
    if file.kind != ModelKind::FusionNet || file.nets.len() < 2 {
        return Err(Error::Decode("not a fusion parameter file".into()));
    }
    let mut nets = file.nets;
    let head = nets.pop().unwrap();
    let mut projections = Vec::with_capacity(nets.len());
    for g in nets {
        let l = &g.layers()[0];
        if g.layers().len() != 1 || l.out_dim() != 1 || l.bias[0] != 0.0 {
            return Err(Error::Decode("malformed fusion gate".into()));
        }
        projections.push(l.weight.as_slice().to_vec());
    }
    Ok((projections, head))
}

/// Writes `<dir>/<stem>.fusion.toml` and `<dir>/<stem>.fusion.bin`; `extractor_files` are the
/// already-saved adaptation networks, in gate order.
pub fn save_fusion(fnet: &FusionNet, dir: &Path, stem: &str, extractor_files: &[PathBuf]) -> Result<PathBuf> {
    if extractor_files.len() != fnet.k() {
        return Err(Error::shape("fusion manifest extractors", fnet.k(), extractor_files.len()));
    }
    let bin = PathBuf::from(format!("{stem}.fusion.bin"));
    std::fs::write(dir.join(&bin), encode_fusion_params(fnet))?;
    let manifest = FusionManifest {
        task: fnet.task,
        label_range: fnet.label_range.map(|(a, b)| [a, b]),
        extractors: extractor_files.to_vec(),
        fusion: bin,
    };
    let path = dir.join(format!("{stem}.fusion.toml"));
    std::fs::write(&path, manifest.to_toml_string())?;
    Ok(path)
}

pub fn load_fusion(manifest_path: &Path) -> Result<FusionNet> {
    let manifest = FusionManifest::from_toml_str(&std::fs::read_to_string(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let extractors = manifest
        .extractors
        .iter()
        .map(|p| Ok(AdaptNet::from_bytes(&std::fs::read(dir.join(p))?)?.extractor))
        .collect::<Result<Vec<_>>>()?;
    let (projections, head) = decode_fusion_params(&std::fs::read(dir.join(&manifest.fusion))?)?;
    let net = FusionNet {
        extractors,
        projections,
        head,
        task: manifest.task,
        label_range: manifest.label_range.map(|[a, b]| (a, b)),
    };
    net.validate()?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::grad_check;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal(0.0, 1.0)).collect()).unwrap()
    }

    fn net(k: usize, task: TaskKind, rng: &mut Rng) -> FusionNet {
        let extractors =
            (0..k).map(|_| MlpParams::init(&[3, 4], Activation::Tanh, Activation::Tanh, rng).unwrap()).collect();
        let n_classes = if task == TaskKind::Classification { 2 } else { 0 };
        FusionNet::with_fresh_head(extractors, &[5], Activation::Tanh, task, n_classes, rng).unwrap()
    }

    #[test]
    fn attention_rows_are_normalized() {
        let mut rng = Rng::new(1);
        let mut f = net(3, TaskKind::Classification, &mut rng);
        let z: Vec<Matrix> = (0..3).map(|_| random(6, 4, &mut rng)).collect();
        let b = attention_weights(&f, &z).unwrap();
        assert!(b.as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        f.projections = (0..3).map(|_| (0..4).map(|_| rng.normal(0.0, 2.0)).collect()).collect();
        let b = attention_weights(&f, &z).unwrap();
        for r in 0..6 {
            assert!((b.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(b.row(r).iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn normalization_arithmetic() {
        let a = Matrix::from_rows(&[vec![0.5, 0.25]]).unwrap();
        let b = normalize(&a);
        assert!((b.get(0, 0) - 2.0 / 3.0).abs() < 1e-15 && (b.get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_extractor_fuses_to_identity() {
        let mut rng = Rng::new(2);
        let mut f = net(1, TaskKind::Classification, &mut rng);
        f.projections[0] = vec![3.0, -1.0, 0.5, 2.0];
        let z = vec![random(5, 4, &mut rng)];
        let b = attention_weights(&f, &z).unwrap();
        assert!(b.as_slice().iter().all(|&v| v == 1.0));
        assert_eq!(fuse(&b, &z).unwrap(), z[0]);
    }

    #[test]
    fn fused_rows_stay_in_the_coordinate_hull() {
        let mut rng = Rng::new(3);
        let mut f = net(2, TaskKind::Classification, &mut rng);
        f.projections = vec![vec![1.0, 0.0, -1.0, 0.5], vec![-0.3, 0.2, 0.0, 1.0]];
        let z: Vec<Matrix> = (0..2).map(|_| random(7, 4, &mut rng)).collect();
        let h = fuse(&attention_weights(&f, &z).unwrap(), &z).unwrap();
        for r in 0..7 {
            for d in 0..4 {
                let (a, b) = (z[0].get(r, d), z[1].get(r, d));
                assert!(h.get(r, d) >= a.min(b) - 1e-15 && h.get(r, d) <= a.max(b) + 1e-15);
            }
        }
        let half = Matrix::from_vec(7, 2, vec![0.5; 14]).unwrap();
        let mean = fuse(&half, &z).unwrap();
        assert!((mean.get(3, 2) - 0.5 * (z[0].get(3, 2) + z[1].get(3, 2))).abs() < 1e-15);
    }

    #[test]
    fn zero_head_predicts_one_half() {
        let mut rng = Rng::new(4);
        let mut f = net(2, TaskKind::Classification, &mut rng);
        f.head = f.head.clone().zeroed();
        let p = fusion_predict(&f, &random(4, 3, &mut rng)).unwrap();
        assert_eq!(p, vec![0.5; 4]);
    }

    fn check_gradient(task: TaskKind, labels: Labels, seed: u64) {
        let mut rng = Rng::new(seed);
        let mut f = net(3, task, &mut rng);
        f.projections = (0..3).map(|_| (0..4).map(|_| rng.normal(0.0, 1.0)).collect()).collect();
        if task == TaskKind::Regression {
            f.label_range = Some((-1.0, 3.0));
        }
        let z: Vec<Matrix> = (0..3).map(|_| random(labels.len(), 4, &mut rng)).collect();
        let (_, g) = fusion_objective(&f, &z, &labels).unwrap();
        let p0 = f.trainable();
        let mut probe = f.clone();
        let loss = |p: &[f64]| {
            probe.set_trainable(p).unwrap();
            fusion_objective(&probe, &z, &labels).unwrap().0
        };
        let rep = grad_check(loss, &p0, &g, 1e-5).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradient(TaskKind::Classification, Labels::Classes(vec![0, 1, 1, 0, 1, 0]), 5);
        check_gradient(TaskKind::Regression, Labels::Real(vec![0.3, -0.5, 2.0, 1.1, 0.0]), 6);
    }

    #[test]
    fn manifest_validation() {
        let ok = "task = \"classification\"\nextractors = [\"a.kisa\"]\nfusion = \"f.bin\"\n";
        let m = FusionManifest::from_toml_str(ok).unwrap();
        assert_eq!(FusionManifest::from_toml_str(&m.to_toml_string()).unwrap(), m);
        assert!(FusionManifest::from_toml_str("task = \"classification\"\nextractors = []\nfusion = \"f\"\n").is_err());
        assert!(FusionManifest::from_toml_str(
            "task = \"regression\"\nlabel_range = [2.0, 1.0]\nextractors = [\"a\"]\nfusion = \"f\"\n"
        )
        .is_err());
    }
}
