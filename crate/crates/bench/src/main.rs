use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kisa_bench::config::ExperimentConfig;
use kisa_bench::harness::{emit_embeddings, prepare_data, run_experiment, run_method, SeedCache};
use kisa_bench::report::RunReport;
use kisa_bench::{BenchError, Method};
use kisa_core::adaptnet::AdaptNet;
use kisa_core::data::screen::{discretize, quantile_edges, DEFAULT_BINS, DEFAULT_DELTA, DEFAULT_LABEL_BINS};
use kisa_core::data::{
    knowledge_screen, load_dataset, schema_path_for, synth_generate, write_dataset, DatasetSchema, DivisionMethod,
    DomainDataset, KnowledgeSpec, Standardizer, SynthConfig,
};
use kisa_core::divergence::{divergence_table, match_subdomains, Bandwidth, CellIndex};
use kisa_core::division::divide;
use kisa_core::fusion::{attention_weights, fuse, load_fusion};
use kisa_core::numeric::{Matrix, Rng};

#[derive(Parser)]
#[command(name = "kisa", version, about = "Knowledge-guided subdomain adaptation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic source, target-train and target-test CSVs with schema sidecars.
    Synth {
        /// Synthetic data config (TOML).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check whether knowledge feature groups reduce label uncertainty.
    Screen {
        /// Labeled CSV with a `<stem>.schema.toml` sidecar.
        #[arg(long)]
        data: PathBuf,
        /// Knowledge ids to screen; all declared ids when omitted.
        #[arg(long)]
        knowledge: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
    },
    /// Divide a dataset into knowledge-guided subdomains.
    Divide {
        #[arg(long)]
        data: PathBuf,
        /// Second domain; when given, the divergence table and match matrix are written too.
        #[arg(long)]
        target: Option<PathBuf>,
        /// Adaptation network whose extractor supplies the embeddings and knowledge spec.
        /// Without it the (standardized) features are used as embeddings.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        standardizer: Option<PathBuf>,
        #[arg(long)]
        knowledge: Option<String>,
        #[arg(long, default_value_t = 4)]
        subdomains: usize,
        /// `dp1d` or `graph`.
        #[arg(long, default_value = "dp1d")]
        method: String,
        #[arg(long, default_value_t = 1)]
        match_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one method for one seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every configured method on every seed.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write per-sample embeddings of a trained model.
    DumpEmbeddings {
        /// `.kisa` adaptation network or `.fusion.toml` manifest.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        standardizer: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> BenchError {
    BenchError::Config(format!("{}: {e}", path.display()))
}

fn load_csv(path: &Path) -> Result<DomainDataset, BenchError> {
    let schema_path = schema_path_for(path);
    let schema = DatasetSchema::load(&schema_path).map_err(|e| config_err(&schema_path, e))?;
    Ok(load_dataset(path, &schema)?)
}

fn standardize(data: DomainDataset, path: Option<&Path>) -> Result<DomainDataset, BenchError> {
    let Some(path) = path else { return Ok(data) };
    let text = std::fs::read_to_string(path).map_err(|e| config_err(path, e))?;
    let s: Standardizer = serde_json::from_str(&text).map_err(|e| config_err(path, e))?;
    // keep only the columns the model was trained on, e.g. dropping planted truth columns
    let data = if s.columns.is_empty() {
        data
    } else {
        if let Some(missing) = s.columns.iter().find(|c| !data.column_names.contains(c)) {
            return Err(BenchError::Run(format!("data lacks column '{missing}' used in training")));
        }
        let extra: Vec<&str> =
            data.column_names.iter().filter(|c| !s.columns.contains(c)).map(String::as_str).collect();
        data.without_columns(&extra)
    };
    if data.column_names != s.columns && !s.columns.is_empty() {
        return Err(BenchError::Run("data columns are ordered differently from the training data".into()));
    }
    Ok(s.apply(&data)?)
}

fn load_experiment(path: &Path) -> Result<ExperimentConfig, BenchError> {
    ExperimentConfig::load(path).map_err(|e| match e {
        BenchError::Config(m) => config_err(path, m),
        other => other,
    })
}

fn run(command: Command) -> Result<ExitCode, BenchError> {
    match command {
        Command::Synth { config, out, seed } => {
            let text = std::fs::read_to_string(&config).map_err(|e| config_err(&config, e))?;
            let mut cfg: SynthConfig = toml::from_str(&text).map_err(|e| config_err(&config, e.message()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate().map_err(|e| config_err(&config, e))?;
            let d = synth_generate(&cfg)?;
            std::fs::create_dir_all(&out)?;
            for data in [&d.source, &d.target_train, &d.target_test] {
                write_dataset(data, out.join(format!("{}.csv", data.role.as_str())))?;
            }
            println!(
                "wrote {} / {} / {} samples to {}",
                d.source.len(),
                d.target_train.len(),
                d.target_test.len(),
                out.display()
            );
        }
        Command::Screen { data, knowledge, bins, delta } => {
            let d = load_csv(&data)?;
            let ids: Vec<String> = if knowledge.is_empty() { d.knowledge.keys().cloned().collect() } else { knowledge };
            for id in ids {
                let cols = d.knowledge_columns(&id).map_err(|e| BenchError::Config(e.to_string()))?;
                let r = knowledge_screen(&d, cols, bins, delta)?;
                let mut line = serde_json::to_value(r).expect("screen result serializes");
                line["knowledge"] = serde_json::Value::String(id);
                println!("{line}");
            }
        }
        Command::Divide { data, target, model, standardizer, knowledge, subdomains, method, match_k, seed, out } => {
            let net = model
                .as_ref()
                .map(|p| -> Result<AdaptNet, BenchError> { Ok(AdaptNet::from_bytes(&std::fs::read(p)?)?) })
                .transpose()?;
            let spec = match (&net, knowledge) {
                (Some(n), None) => n.knowledge.clone(),
                (_, Some(id)) => {
                    let mut s = KnowledgeSpec::dp(id, subdomains);
                    s.method = match method.as_str() {
                        "dp1d" => DivisionMethod::Dp1d,
                        "graph" => DivisionMethod::Graph,
                        other => return Err(BenchError::Config(format!("unknown division method '{other}'"))),
                    };
                    s.validate().map_err(|e| BenchError::Config(e.to_string()))?;
                    s
                }
                (None, None) => return Err(BenchError::Config("divide needs --knowledge or --model".into())),
            };
            let mut domains = vec![standardize(load_csv(&data)?, standardizer.as_deref())?];
            if let Some(t) = &target {
                domains.push(standardize(load_csv(t)?, standardizer.as_deref())?);
            }
            let embed = |d: &DomainDataset| -> Result<Matrix, BenchError> {
                Ok(match &net {
                    Some(n) => n.extractor.predict(&d.features)?,
                    None => d.features.clone(),
                })
            };
            let z: Vec<Matrix> = domains.iter().map(embed).collect::<Result<_, _>>()?;
            let mut rng = Rng::new(seed);
            std::fs::create_dir_all(&out)?;
            let mut csv = String::from("domain,sample_index,subdomain\n");
            let mut assignments = Vec::new();
            for (d, zd) in domains.iter().zip(&z) {
                let a = divide(d, &spec, zd, &mut rng)?;
                for (i, l) in a.labels.iter().enumerate() {
                    csv.push_str(&format!("{},{i},{l}\n", d.role.as_str()));
                }
                let summary = serde_json::json!({
                    "domain": d.role.as_str(),
                    "subdomains": a.count,
                    "sizes": a.sizes(),
                    "cost": a.cost,
                    "warnings": a.warnings,
                });
                println!("{summary}");
                assignments.push(a);
            }
            std::fs::write(out.join("assignments.csv"), csv)?;
            if domains.len() == 2 {
                let pooled: Vec<f64> =
                    domains.iter().filter_map(|d| d.labels.as_ref()).flat_map(|l| l.as_f64()).collect();
                let edges = quantile_edges(&pooled, DEFAULT_LABEL_BINS);
                let cells: Vec<CellIndex> = domains
                    .iter()
                    .zip(&assignments)
                    .map(|(d, a)| {
                        let classes = match &d.labels {
                            Some(kisa_core::data::Labels::Classes(c)) => c.clone(),
                            Some(l) => discretize(&l.as_f64(), &edges),
                            None => vec![0; d.len()],
                        };
                        CellIndex::full(&a.labels, &classes, a.count)
                    })
                    .collect::<Result<_, _>>()?;
                let sigma = Bandwidth::Median.resolve(&[&z[0], &z[1]])?;
                let table = divergence_table(&z[0], &cells[0], &z[1], &cells[1], sigma)?;
                let r = match_subdomains(&table, match_k)?;
                std::fs::write(out.join("divergence.csv"), table.to_csv())?;
                std::fs::write(out.join("match.csv"), r.to_csv())?;
            }
        }
        Command::Train { config, method, seed, out } => {
            let cfg = load_experiment(&config)?;
            if let Method::KisaSingle(id) = &method {
                if cfg.spec(id).is_none() {
                    return Err(BenchError::Config(format!("knowledge id '{id}' is not configured")));
                }
            }
            let data = prepare_data(&cfg, seed)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(
                out.join(format!("standardizer_seed{seed}.json")),
                serde_json::to_string_pretty(&data.standardizer).expect("standardizer serializes"),
            )?;
            let row = run_method(&cfg, &method, seed, &data, &mut SeedCache::default(), Some(&out))?;
            println!(
                "{}",
                serde_json::to_string(&BTreeMap::from([("metrics", &row.metrics)])).expect("metrics serialize")
            );
            RunReport::new(cfg.hash(), vec![row]).write(&out)?;
        }
        Command::Bench { config, out, seed } => {
            let mut cfg = load_experiment(&config)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let out = out.or_else(|| cfg.out_dir.clone());
            let report = run_experiment(&cfg, out.as_deref())?;
            print!("{}", report.aggregate_csv());
            if report.has_failures() {
                eprintln!("some runs failed; see the error fields in the report");
                return Ok(ExitCode::from(1));
            }
        }
        Command::DumpEmbeddings { model, data, standardizer, out } => {
            let d = standardize(load_csv(&data)?, standardizer.as_deref())?;
            let is_manifest = model.to_string_lossy().ends_with(".toml");
            let z = if is_manifest {
                let fnet = load_fusion(&model)?;
                let z = fnet.embed(&d.features)?;
                fuse(&attention_weights(&fnet, &z)?, &z)?
            } else {
                AdaptNet::from_bytes(&std::fs::read(&model)?)?.extractor.predict(&d.features)?
            };
            emit_embeddings(&z, &d, &out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
