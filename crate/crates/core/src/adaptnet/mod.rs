//! One adaptation network per knowledge kind: a shared extractor `g`, a task head `f`, and the
//! training loop combining the task loss with the subdomain alignment term.

mod loss;
mod train;

use serde::{Deserialize, Serialize};

pub use loss::{softmax_rows, task_loss};
pub use train::{
    objective, train_adaptnet, train_network, EpochLog, Grouping, Penalty, Regularizer, StepOutcome, TrainConfig,
    TrainLog,
};

use crate::codec::{self, ModelFile, ModelKind};
use crate::data::{KnowledgeSpec, TaskKind};
use crate::numeric::{Activation, Matrix, MlpParams, Rng};
use crate::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Layer sizes for the extractor and the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    #[serde(default = "default_extractor_hidden")]
    pub extractor_hidden: Vec<usize>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_head_hidden")]
    pub head_hidden: Vec<usize>,
    /// Used by every extractor layer, including the embedding, and by hidden head layers.
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_extractor_hidden() -> Vec<usize> {
    vec![32]
}
fn default_embedding_dim() -> usize {
    16
}
fn default_head_hidden() -> Vec<usize> {
    vec![16]
}
fn default_activation() -> Activation {
    Activation::Tanh
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            extractor_hidden: default_extractor_hidden(),
            embedding_dim: default_embedding_dim(),
            head_hidden: default_head_hidden(),
            activation: default_activation(),
        }
    }
}

impl Architecture {
    pub fn extractor(&self, input_dim: usize, rng: &mut Rng) -> Result<MlpParams> {
        let mut dims = vec![input_dim];
        dims.extend(&self.extractor_hidden);
        dims.push(self.embedding_dim);
        MlpParams::init(&dims, self.activation, self.activation, rng)
    }

    /// Head with linear outputs: class logits or one regression value.
    pub fn head(&self, outputs: usize, rng: &mut Rng) -> Result<MlpParams> {
        let mut dims = vec![self.embedding_dim];
        dims.extend(&self.head_hidden);
        dims.push(outputs);
        MlpParams::init(&dims, self.activation, Activation::Identity, rng)
    }
}

/// Head output width for a task: one logit per class (at least two), or one value.
pub fn output_width(task: TaskKind, n_classes: usize) -> usize {
    match task {
        TaskKind::Classification => n_classes.max(2),
        TaskKind::Regression => 1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptNet {
    pub knowledge: KnowledgeSpec,
    pub extractor: MlpParams,
    pub head: MlpParams,
    pub lambda: f64,
    pub task: TaskKind,
}

#[derive(Serialize, Deserialize)]
struct AdaptMeta {
    task: TaskKind,
    lambda: f64,
    knowledge: KnowledgeSpec,
}

impl AdaptNet {
    pub fn new(
        knowledge: KnowledgeSpec,
        input_dim: usize,
        arch: &Architecture,
        task: TaskKind,
        n_classes: usize,
        lambda: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let extractor = arch.extractor(input_dim, rng)?;
        let head = arch.head(output_width(task, n_classes), rng)?;
        AdaptNet::from_parts(knowledge, extractor, head, lambda, task)
    }

    pub fn from_parts(
        knowledge: KnowledgeSpec,
        extractor: MlpParams,
        head: MlpParams,
        lambda: f64,
        task: TaskKind,
    ) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")));
        }
        if extractor.output_dim() != head.input_dim() {
            return Err(Error::shape("AdaptNet embedding", extractor.output_dim(), head.input_dim()));
        }
        if task == TaskKind::Regression && head.output_dim() != 1 {
            return Err(Error::shape("AdaptNet regression head", 1, head.output_dim()));
        }
        if task == TaskKind::Classification && head.output_dim() < 2 {
            return Err(Error::InvalidArgument("a classification head needs at least two logits".into()));
        }
        knowledge.validate()?;
        Ok(AdaptNet { knowledge, extractor, head, lambda, task })
    }

    pub fn embedding_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = AdaptMeta { task: self.task, lambda: self.lambda, knowledge: self.knowledge.clone() };
        codec::encode(&ModelFile {
            kind: ModelKind::AdaptNet,
            meta: toml::to_string(&meta).expect("metadata serializes"),
            nets: vec![self.extractor.clone(), self.head.clone()],
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let file = codec::decode(bytes)?;
        if file.kind != ModelKind::AdaptNet || file.nets.len() != 2 {
            return Err(Error::Decode("not an adaptation network".into()));
        }
        let meta: AdaptMeta =
            toml::from_str(&file.meta).map_err(|e| Error::Decode(format!("metadata: {}", e.message())))?;
        let mut nets = file.nets.into_iter();
        let (extractor, head) = (nets.next().unwrap(), nets.next().unwrap());
        AdaptNet::from_parts(meta.knowledge, extractor, head, meta.lambda, meta.task)
            .map_err(|e| Error::Decode(e.to_string()))
    }
}

/// `z = g(x)`.
pub fn extract(net: &AdaptNet, x: &Matrix) -> Result<Matrix> {
    net.extractor.predict(x)
}

/// Turns raw head outputs into predictions: class-1 probability or the regression value.
pub fn head_to_prediction(task: TaskKind, out: &Matrix) -> Vec<f64> {
    match task {
        TaskKind::Classification => {
            let p = softmax_rows(out);
            (0..p.rows()).map(|r| p.get(r, 1)).collect()
        }
        TaskKind::Regression => out.col_values(0),
    }
}

pub fn predict(net: &AdaptNet, x: &Matrix) -> Result<Vec<f64>> {
    let z = extract(net, x)?;
    Ok(head_to_prediction(net.task, &net.head.predict(&z)?))
}
