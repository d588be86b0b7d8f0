use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
}

/// First-order optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    accum: Vec<f64>,
}

const ADAGRAD_EPS: f64 = 1e-10;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        Optimizer { kind, lr, accum: vec![0.0; n_params] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adagrad => {
                for ((p, g), a) in params.iter_mut().zip(grads).zip(&mut self.accum) {
                    *a += g * g;
                    *p -= self.lr * g / (a.sqrt() + ADAGRAD_EPS);
                }
            }
        }
    }
}
