//! Datasets, file ingestion, synthetic generation, knowledge screening and batching.

mod batch;
mod dataset;
pub mod screen;
pub mod synth;

use serde::{Deserialize, Serialize};

pub use batch::{stratified_batches, stratify_groups};
pub use dataset::{
    load_dataset, parse_dataset, schema_path_for, write_dataset, write_dataset_csv, DatasetSchema, DomainDataset,
    Labels, Role, TaskKind, DEFAULT_LABEL_COLUMN,
};
pub use screen::{knowledge_screen, ScreenResult};
pub use synth::{synth_generate, Layout, SynthConfig, SynthDomains, SynthKnowledge};

use crate::numeric::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivisionMethod {
    /// Exact (or split-point restricted) dynamic programming over a 1-D knowledge feature.
    Dp1d,
    /// Knowledge-thresholded graph + label propagation, merged down to `subdomains`.
    Graph,
}

/// One kind of domain knowledge and how to divide a domain with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeSpec {
    /// Knowledge id; its columns come from each dataset's knowledge map.
    pub id: String,
    pub method: DivisionMethod,
    /// Desired subdomain count `M`.
    pub subdomains: usize,
    /// Restrict DP cuts to this many equal-frequency boundaries.
    #[serde(default)]
    pub split_points: Option<usize>,
    /// Quantile of pairwise knowledge distances used as the graph edge threshold.
    #[serde(default = "default_kappa")]
    pub kappa_quantile: f64,
    /// Entropy-gap threshold for screening, in nats.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Only accept 1-D partitions in which every sample's knowledge value is nearest to its own
    /// subdomain's knowledge centroid.
    #[serde(default)]
    pub enforce_constraint: bool,
}

fn default_kappa() -> f64 {
    0.2
}

fn default_delta() -> f64 {
    screen::DEFAULT_DELTA
}

impl KnowledgeSpec {
    pub fn dp(id: impl Into<String>, subdomains: usize) -> Self {
        KnowledgeSpec {
            id: id.into(),
            method: DivisionMethod::Dp1d,
            subdomains,
            split_points: None,
            kappa_quantile: default_kappa(),
            delta: default_delta(),
            enforce_constraint: false,
        }
    }

    pub fn graph(id: impl Into<String>, subdomains: usize, kappa_quantile: f64) -> Self {
        KnowledgeSpec { method: DivisionMethod::Graph, kappa_quantile, ..KnowledgeSpec::dp(id, subdomains) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subdomains == 0 {
            return Err(Error::InvalidArgument(format!("knowledge '{}': M must be at least 1", self.id)));
        }
        if !(self.kappa_quantile > 0.0 && self.kappa_quantile < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "knowledge '{}': kappa_quantile must lie in (0, 1), got {}",
                self.id, self.kappa_quantile
            )));
        }
        if let Some(b) = self.split_points {
            if b < self.subdomains {
                return Err(Error::InvalidArgument(format!(
                    "knowledge '{}': {b} split points cannot form {} subdomains",
                    self.id, self.subdomains
                )));
            }
        }
        Ok(())
    }
}

/// Per-column z-scoring fitted on one or more datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// Names of the fitted columns, in order.
    #[serde(default)]
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(parts: &[&DomainDataset]) -> Result<Self> {
        let cols = parts.first().map(|d| d.n_features()).ok_or(Error::Empty("nothing to fit"))?;
        let mut pooled = Matrix::zeros(0, cols);
        for d in parts {
            pooled = pooled.vstack(&d.features)?;
        }
        if pooled.rows() == 0 {
            return Err(Error::Empty("standardizer fitted on zero rows"));
        }
        let mean = pooled.col_means();
        let n = pooled.rows() as f64;
        let std = (0..cols)
            .map(|c| {
                let var = pooled.row_iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { columns: parts[0].column_names.clone(), mean, std })
    }

    pub fn apply(&self, data: &DomainDataset) -> Result<DomainDataset> {
        if data.n_features() != self.mean.len() {
            return Err(Error::shape("Standardizer::apply", self.mean.len(), data.n_features()));
        }
        let mut out = data.clone();
        for r in 0..out.len() {
            for (c, v) in out.features.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        Ok(out)
    }
}
