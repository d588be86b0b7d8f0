//! Synthetic two-domain data with planted, knowledge-defined subdomains.
//!
//! Every sample has a latent signal `u ~ N(0, signal_std^2 I)` and, for each knowledge kind,
//! a subdomain id drawn from a balanced shuffled assignment. The knowledge value is placed
//! inside that subdomain's region (a band of a 1-D range, or a Gaussian blob on a circle in
//! 2-D). Labels follow a per-subdomain logistic rule
//!
//! ```text
//! logit = base_logit + sum_k ( bias[k][s_k] + slope[k][s_k] * <direction_k, u> )
//! ```
//!
//! and target-domain samples observe `u + domain_shift + sum_k target_shift[k][s_k]` instead of
//! `u`, so the source and target label rules agree in latent space but not in the raw features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DomainDataset, Labels, Role};
use crate::numeric::{sigmoid, Matrix, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// One column, uniform within band `s` of `[0, span)`.
    Band { span: f64 },
    /// Two columns, `N(center_s, spread^2 I)` with centers evenly spaced on a circle.
    Cluster { radius: f64, spread: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthKnowledge {
    pub name: String,
    pub layout: Layout,
    pub subdomains: usize,
    /// Per-subdomain additive logit.
    pub logit_bias: Vec<f64>,
    /// Per-subdomain coefficient on `<direction, u>`.
    #[serde(default)]
    pub slopes: Vec<f64>,
    #[serde(default)]
    pub direction: Vec<f64>,
    /// Per-subdomain offset of the observed signal in the target domain.
    #[serde(default)]
    pub target_shift: Vec<Vec<f64>>,
    /// Relative subdomain frequencies in the target domain; balanced when empty.
    #[serde(default)]
    pub target_proportions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub signal_dim: usize,
    #[serde(default = "one")]
    pub signal_std: f64,
    #[serde(default)]
    pub base_logit: f64,
    /// Offset added to every target sample's observed signal.
    #[serde(default)]
    pub domain_shift: Vec<f64>,
    pub knowledge: Vec<SynthKnowledge>,
    /// Counts are per subdomain of the first knowledge kind.
    pub source_per_subdomain: usize,
    pub target_train_per_subdomain: usize,
    pub target_test_per_subdomain: usize,
}

fn one() -> f64 {
    1.0
}

/// The three datasets of one synthetic draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDomains {
    pub source: DomainDataset,
    pub target_train: DomainDataset,
    pub target_test: DomainDataset,
}

/// Knowledge id under which the planted subdomain id of kind `name` is stored.
pub fn truth_id(name: &str) -> String {
    format!("{name}_truth")
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.signal_dim == 0 {
            return bad("signal_dim must be positive".into());
        }
        if self.knowledge.is_empty() {
            return bad("at least one knowledge kind is required".into());
        }
        if self.source_per_subdomain == 0 || self.target_train_per_subdomain == 0 || self.target_test_per_subdomain == 0
        {
            return bad("every domain needs at least one sample per subdomain".into());
        }
        if !self.domain_shift.is_empty() && self.domain_shift.len() != self.signal_dim {
            return bad(format!(
                "domain_shift has {} entries, signal_dim is {}",
                self.domain_shift.len(),
                self.signal_dim
            ));
        }
        if !(self.signal_std > 0.0) {
            return bad("signal_std must be positive".into());
        }
        for k in &self.knowledge {
            let m = k.subdomains;
            if m == 0 {
                return bad(format!("knowledge '{}' has zero subdomains", k.name));
            }
            if k.logit_bias.len() != m {
                return bad(format!("knowledge '{}': logit_bias needs {m} entries", k.name));
            }
            if !k.slopes.is_empty() && k.slopes.len() != m {
                return bad(format!("knowledge '{}': slopes needs {m} entries", k.name));
            }
            if !k.slopes.is_empty() && k.direction.len() != self.signal_dim {
                return bad(format!("knowledge '{}': direction needs {} entries", k.name, self.signal_dim));
            }
            if !k.target_shift.is_empty()
                && (k.target_shift.len() != m || k.target_shift.iter().any(|s| s.len() != self.signal_dim))
            {
                return bad(format!("knowledge '{}': target_shift must be {m} x {}", k.name, self.signal_dim));
            }
            if !k.target_proportions.is_empty()
                && (k.target_proportions.len() != m
                    || k.target_proportions.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                    || k.target_proportions.iter().sum::<f64>() <= 0.0)
            {
                return bad(format!("knowledge '{}': target_proportions needs {m} nonnegative weights", k.name));
            }
            match k.layout {
                Layout::Band { span } if !(span > 0.0) => return bad("band span must be positive".into()),
                Layout::Cluster { spread, .. } if !(spread >= 0.0) => {
                    return bad("cluster spread must be non-negative".into())
                }
                _ => {}
            }
        }
        // subdomains whose rules coincide give a benchmark where global alignment suffices
        for k in &self.knowledge {
            let rule = |s: usize| (k.logit_bias[s], k.slopes.get(s).copied().unwrap_or(0.0));
            if k.subdomains > 1 && (1..k.subdomains).all(|s| rule(s) == rule(0)) {
                return bad(format!("knowledge '{}': all subdomains share one label rule", k.name));
            }
        }
        Ok(())
    }

    fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.signal_dim).map(|i| format!("u{i}")).collect();
        for k in &self.knowledge {
            match k.layout {
                Layout::Band { .. } => names.push(k.name.clone()),
                Layout::Cluster { .. } => {
                    names.push(format!("{}_x", k.name));
                    names.push(format!("{}_y", k.name));
                }
            }
            names.push(truth_id(&k.name));
        }
        names
    }

    fn knowledge_map(&self) -> BTreeMap<String, Vec<usize>> {
        let mut map = BTreeMap::new();
        let mut col = self.signal_dim;
        for k in &self.knowledge {
            let width = match k.layout {
                Layout::Band { .. } => 1,
                Layout::Cluster { .. } => 2,
            };
            map.insert(k.name.clone(), (col..col + width).collect());
            map.insert(truth_id(&k.name), vec![col + width]);
            col += width + 1;
        }
        map
    }

    fn draw(&self, role: Role, per_subdomain: usize, rng: &mut Rng) -> Result<DomainDataset> {
        let n = per_subdomain * self.knowledge[0].subdomains;
        let is_target = role != Role::Source;
        let ids: Vec<Vec<usize>> = self
            .knowledge
            .iter()
            .map(|k| {
                let mut v = match &k.target_proportions {
                    w if is_target && !w.is_empty() => proportional_ids(w, n),
                    _ => (0..n).map(|i| i % k.subdomains).collect(),
                };
                rng.shuffle(&mut v);
                v
            })
            .collect();
        let names = self.column_names();
        let mut data = Vec::with_capacity(n * names.len());
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let u: Vec<f64> = (0..self.signal_dim).map(|_| rng.normal(0.0, self.signal_std)).collect();
            let mut logit = self.base_logit;
            let mut observed = u.clone();
            if is_target {
                for (o, s) in observed.iter_mut().zip(&self.domain_shift) {
                    *o += s;
                }
            }
            let mut knowledge_cells = Vec::new();
            for (k, kid) in self.knowledge.iter().zip(&ids) {
                let s = kid[i];
                logit += k.logit_bias[s];
                if let Some(&slope) = k.slopes.get(s) {
                    logit += slope * k.direction.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
                }
                if is_target {
                    if let Some(shift) = k.target_shift.get(s) {
                        for (o, d) in observed.iter_mut().zip(shift) {
                            *o += d;
                        }
                    }
                }
                match k.layout {
                    Layout::Band { span } => {
                        let w = span / k.subdomains as f64;
                        knowledge_cells.push(rng.uniform(s as f64 * w, (s + 1) as f64 * w));
                    }
                    Layout::Cluster { radius, spread } => {
                        let angle = std::f64::consts::TAU * s as f64 / k.subdomains as f64;
                        knowledge_cells.push(radius * angle.cos() + rng.normal(0.0, spread));
                        knowledge_cells.push(radius * angle.sin() + rng.normal(0.0, spread));
                    }
                }
                knowledge_cells.push(s as f64);
            }
            data.extend(observed);
            data.extend(knowledge_cells);
            labels.push(usize::from(rng.bernoulli(sigmoid(logit))));
        }
        let features = Matrix::from_vec(n, names.len(), data)?;
        DomainDataset::new(role, names, features, Some(Labels::Classes(labels)), self.knowledge_map())
    }
}

/// `n` subdomain ids with counts proportional to `weights`, rounded by largest remainder.
fn proportional_ids(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &s in order.iter().take(short) {
        counts[s] += 1;
    }
    counts.iter().enumerate().flat_map(|(s, &c)| std::iter::repeat_n(s, c)).collect()
}

/// Draws source, target-train and target-test datasets. The three draws use independent
/// streams forked from `config.seed`.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthDomains> {
    config.validate()?;
    let root = Rng::new(config.seed);
    Ok(SynthDomains {
        source: config.draw(Role::Source, config.source_per_subdomain, &mut root.fork(1))?,
        target_train: config.draw(Role::TargetTrain, config.target_train_per_subdomain, &mut root.fork(2))?,
        target_test: config.draw(Role::TargetTest, config.target_test_per_subdomain, &mut root.fork(3))?,
    })
}
