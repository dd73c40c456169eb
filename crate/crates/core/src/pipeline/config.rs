use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{GenerationSpec, PartitionSpec};
use crate::error::{Error, IoContext, Result};
use crate::inference::EvalMode;
use crate::learn::Exec;
use crate::losses::LossWeights;
use crate::metrics::EvalConfig;
use crate::models::{ClassifierConfig, FitConfig, Head, MatcherConfig, SanConfig};
use crate::training::TrainConfig;

/// Complete description of one experiment. Every field has a default, so a
/// config file only needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; every component seed is derived from it.
    pub seed: u64,
    pub out: PathBuf,
    pub exec: Exec,
    /// Ensemble size and flow length.
    pub n: usize,
    pub data: DataConfig,
    pub aux: AuxConfig,
    pub unseen: UnseenConfig,
    pub ensemble: TrainConfig,
    pub flowsan: FlowConfig,
    pub eval: EvalSettings,
    pub demo: DemoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Generator settings; the `seed` field is replaced by one derived from
    /// the global seed.
    pub spec: GenerationSpec,
    pub partition: PartitionSpec,
    /// Identities in each extra evaluation dataset (each from its own seed).
    pub extra_eval_identities: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuxConfig {
    pub classifier: ClassifierConfig,
    pub fit: FitConfig,
    /// Copies of each member's minority subset appended to its training set.
    pub replication: usize,
    pub matcher: MatcherConfig,
    pub matcher_fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnseenConfig {
    pub classifiers: Vec<ClassifierConfig>,
    pub fit: FitConfig,
    pub matchers: Vec<MatcherConfig>,
    pub matcher_fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub train: TrainConfig,
    /// Start each stage from the matching ensemble member.
    pub init_from_ensemble: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    #[serde(flatten)]
    pub metrics: EvalConfig,
    /// Depths whose summary table is printed.
    pub summary_depths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub mode: EvalMode,
    /// Depth of the trace; `0` means the whole chain.
    pub depth: usize,
    pub gibbs_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out: PathBuf::from("runs/default"),
            exec: Exec::Parallel,
            n: 5,
            data: DataConfig::default(),
            aux: AuxConfig::default(),
            unseen: UnseenConfig::default(),
            ensemble: TrainConfig {
                epochs: 15,
                weights: LossWeights { pixel: 5.0, matching: 0.001, gender: 1.0 },
                ..Default::default()
            },
            flowsan: FlowConfig::default(),
            eval: EvalSettings::default(),
            demo: DemoConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            spec: GenerationSpec::default(),
            partition: PartitionSpec::default(),
            extra_eval_identities: vec![80],
        }
    }
}

impl Default for AuxConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig::default(),
            fit: FitConfig { input_noise: 0.1, ..Default::default() },
            replication: 40,
            matcher: MatcherConfig::default(),
            matcher_fit: FitConfig::default(),
        }
    }
}

impl Default for UnseenConfig {
    fn default() -> Self {
        Self {
            classifiers: vec![
                ClassifierConfig { channels: vec![16, 32], head: Head::Flatten, hidden: Some(32), ..Default::default() },
                ClassifierConfig { channels: vec![8, 16, 32, 32], head: Head::MeanPool, hidden: None, ..Default::default() },
                ClassifierConfig { channels: vec![12, 24, 48], head: Head::Flatten, hidden: None, leak: 0.2, ..Default::default() },
            ],
            fit: FitConfig::default(),
            matchers: vec![MatcherConfig { channels: vec![8, 16, 32], head: Head::Flatten, embed_dim: 48, leak: 0.2 }],
            matcher_fit: FitConfig::default(),
        }
    }
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                epochs: 10,
                weights: LossWeights { pixel: 5.0, matching: 0.001, gender: 1.0 },
                ..Default::default()
            },
            init_from_ensemble: true,
        }
    }
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            metrics: EvalConfig::default(),
            summary_depths: vec![3, 5],
        }
    }
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Flow,
            depth: 0,
            gibbs_seed: 0,
        }
    }
}

impl RunConfig {
    /// Reads a TOML config, or the `config` member of a `run.json` manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let c = v
                .get("config")
                .ok_or_else(|| Error::Config(format!("{} has no `config` member", path.display())))?;
            serde_json::from_value(c.clone())?
        } else {
            Self::from_toml(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses TOML layered over the defaults: a partial table only replaces
    /// the keys it names, so `[flowsan.train.weights]` keeps the FlowSAN
    /// epoch count.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text)?;
        let mut base = toml::Table::try_from(Self::default())?;
        overlay(&mut base, user);
        Ok(toml::Value::Table(base).try_into()?)
    }

    /// A seconds-scale configuration: 16x16 images, a few dozen identities,
    /// two-member chains and small models. Useful for smoke tests; its
    /// numbers say nothing about the method.
    pub fn smoke(out: impl Into<PathBuf>) -> Self {
        let fit = |epochs| FitConfig { epochs, batch_size: 16, ..Default::default() };
        let san = SanConfig {
            enc_channels: vec![4, 8, 8],
            dec_channels: vec![8, 8, 4],
            ..Default::default()
        };
        let train = |epochs| TrainConfig { epochs, batch_size: 16, san: san.clone(), ..Default::default() };
        let small = ClassifierConfig { channels: vec![4, 8], head: Head::Flatten, ..Default::default() };
        let matcher = MatcherConfig { channels: vec![8, 8], embed_dim: 16, ..Default::default() };
        Self {
            seed: 11,
            out: out.into(),
            n: 2,
            data: DataConfig {
                spec: GenerationSpec {
                    n_identities: 40,
                    samples_per_identity: 4,
                    h: 16,
                    w: 16,
                    ..Default::default()
                },
                partition: PartitionSpec::default(),
                extra_eval_identities: vec![12],
            },
            aux: AuxConfig {
                classifier: small.clone(),
                fit: fit(60),
                replication: 4,
                matcher: matcher.clone(),
                matcher_fit: fit(40),
            },
            unseen: UnseenConfig {
                classifiers: vec![small, ClassifierConfig { channels: vec![6], head: Head::Flatten, ..Default::default() }],
                fit: fit(60),
                matchers: vec![matcher],
                matcher_fit: fit(40),
            },
            ensemble: train(2),
            flowsan: FlowConfig { train: train(1), init_from_ensemble: true },
            eval: EvalSettings {
                metrics: EvalConfig { depths: vec![1, 2], impostor_pairs: 500, ..Default::default() },
                summary_depths: vec![2],
            },
            ..Default::default()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("ensemble size n must be at least 1".into()));
        }
        self.data.spec.validate()?;
        self.aux.fit.validate()?;
        self.aux.matcher_fit.validate()?;
        self.unseen.fit.validate()?;
        self.unseen.matcher_fit.validate()?;
        if self.aux.replication == 0 {
            return Err(Error::Config("aux.replication must be at least 1".into()));
        }
        if self.unseen.classifiers.is_empty() || self.unseen.matchers.is_empty() {
            return Err(Error::Config("need at least one unseen classifier and one unseen matcher".into()));
        }
        self.ensemble.validate()?;
        self.flowsan.train.validate()?;
        if self.flowsan.init_from_ensemble && self.flowsan.train.san != self.ensemble.san {
            return Err(Error::Config(
                "flowsan.init_from_ensemble needs the same SAN architecture as the ensemble".into(),
            ));
        }
        self.eval.metrics.validate()?;
        if let Some(&d) = self.eval.metrics.depths.iter().find(|&&d| d > self.n) {
            return Err(Error::Config(format!("evaluation depth {d} exceeds n = {}", self.n)));
        }
        if self.demo.depth > self.n {
            return Err(Error::Config(format!("demo depth {} exceeds n = {}", self.demo.depth, self.n)));
        }
        Ok(())
    }

    /// Parses `A..B` (inclusive) or a single depth.
    pub fn parse_depths(s: &str) -> Result<Vec<usize>> {
        let bad = || Error::Usage(format!("cannot parse depths `{s}`; expected A..B"));
        let (a, b) = match s.split_once("..") {
            Some((a, b)) => (a.trim(), b.trim_start_matches('=').trim()),
            None => (s.trim(), s.trim()),
        };
        let a: usize = a.parse().map_err(|_| bad())?;
        let b: usize = b.parse().map_err(|_| bad())?;
        if a == 0 || a > b {
            return Err(bad());
        }
        Ok((a..=b).collect())
    }

    /// Parses a comma-separated FMR list.
    pub fn parse_fmrs(s: &str) -> Result<Vec<f64>> {
        s.split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Usage(format!("cannot parse FMR `{v}`")))
            })
            .collect()
    }
}

fn overlay(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => overlay(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
