//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seeds = [0, 1, 2, 3, 4]
//! methods = ["target_only", "global_mmd", "kisa_single:hour", "kisa_full"]
//! lambda = 0.1
//!
//! [data.synth]            # or [data.files] with source / target_train / target_test CSV paths
//! seed = 7
//! signal_dim = 4
//! ...
//!
//! [[knowledge]]
//! id = "hour"
//! method = "dp1d"
//! subdomains = 4
//!
//! [train]                 # see TrainConfig; omitted keys take their defaults
//! [architecture]
//! [fusion]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kisa_core::adaptnet::{Architecture, TrainConfig, DEFAULT_LAMBDA};
use kisa_core::data::{KnowledgeSpec, SynthConfig};
use kisa_core::numeric::OptimizerKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    TargetOnly,
    FineTune,
    GlobalMmd,
    CategoricalSub,
    KisaSingle(String),
    KisaFull,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "target_only" => Method::TargetOnly,
            "fine_tune" => Method::FineTune,
            "global_mmd" => Method::GlobalMmd,
            "categorical_sub" => Method::CategoricalSub,
            "kisa_full" => Method::KisaFull,
            _ => match s.strip_prefix("kisa_single:") {
                Some(id) if !id.is_empty() => Method::KisaSingle(id.to_string()),
                _ => return Err(format!("unknown method '{s}'")),
            },
        })
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::TargetOnly => f.write_str("target_only"),
            Method::FineTune => f.write_str("fine_tune"),
            Method::GlobalMmd => f.write_str("global_mmd"),
            Method::CategoricalSub => f.write_str("categorical_sub"),
            Method::KisaSingle(id) => write!(f, "kisa_single:{id}"),
            Method::KisaFull => f.write_str("kisa_full"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFiles {
    pub source: PathBuf,
    pub target_train: PathBuf,
    pub target_test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated per seed; the run seed is added to the generator seed.
    Synth(SynthConfig),
    /// CSV files with `<stem>.schema.toml` sidecars, relative to the config file.
    Files(DataFiles),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    /// Start from the head of the single-knowledge network with the lowest target-train loss.
    Warm,
    Fresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub patience: usize,
    pub head_init: HeadInit,
}

impl Default for FusionSettings {
    fn default() -> Self {
        FusionSettings {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adagrad,
            patience: 50,
            head_init: HeadInit::Warm,
        }
    }
}

impl FusionSettings {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            warmup_epochs: 0,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed,
            patience: self.patience,
            ..TrainConfig::default()
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Columns removed from every dataset before training.
    #[serde(default)]
    pub drop_columns: Vec<String>,
    pub data: DataSource,
    #[serde(default)]
    pub knowledge: Vec<KnowledgeSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub fusion: FusionSettings,
    /// Default output directory; `--out` overrides it.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, BenchError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| BenchError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative data paths are resolved against the config's directory.
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let DataSource::Files(f) = &mut cfg.data {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [&mut f.source, &mut f.target_train, &mut f.target_test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        self.train.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        self.fusion.train_config(0).validate().map_err(|e| BenchError::Config(format!("fusion: {e}")))?;
        for k in &self.knowledge {
            k.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        }
        let mut ids: Vec<&str> = self.knowledge.iter().map(|k| k.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("knowledge ids must be unique".into());
        }
        for m in &self.methods {
            match m {
                Method::KisaSingle(id) if self.spec(id).is_none() => {
                    return bad(format!("method {m} names an unconfigured knowledge id"));
                }
                Method::KisaFull if self.knowledge.len() < 2 => {
                    return bad("kisa_full needs at least two knowledge specs".into());
                }
                _ => {}
            }
        }
        if let DataSource::Synth(s) = &self.data {
            s.validate().map_err(|e| BenchError::Config(format!("synth: {e}")))?;
        }
        Ok(())
    }

    pub fn spec(&self, id: &str) -> Option<&KnowledgeSpec> {
        self.knowledge.iter().find(|k| k.id == id)
    }

    /// SHA-256 over the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
methods = ["target_only", "kisa_single:hour"]

[data.files]
source = "s.csv"
target_train = "t.csv"
target_test = "u.csv"

[[knowledge]]
id = "hour"
method = "dp1d"
subdomains = 4
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.lambda, 0.1);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.methods[1], Method::KisaSingle("hour".into()));
        assert_eq!(c.hash(), c.clone().hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn method_names_round_trip() {
        for s in ["target_only", "fine_tune", "global_mmd", "categorical_sub", "kisa_single:loc", "kisa_full"] {
            assert_eq!(s.parse::<Method>().unwrap().to_string(), s);
        }
        assert!("kisa_single:".parse::<Method>().is_err());
        assert!("dsan".parse::<Method>().is_err());
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let full = MINIMAL.replace("\"kisa_single:hour\"", "\"kisa_full\"");
        assert!(ExperimentConfig::from_toml_str(&full).is_err());
        let unknown = MINIMAL.replace("kisa_single:hour", "kisa_single:loc");
        assert!(ExperimentConfig::from_toml_str(&unknown).is_err());
        let empty = MINIMAL.replace("methods = [\"target_only\", \"kisa_single:hour\"]", "methods = []");
        assert!(ExperimentConfig::from_toml_str(&empty).is_err());
        assert!(ExperimentConfig::from_toml_str("methods = [").is_err());
    }
}
