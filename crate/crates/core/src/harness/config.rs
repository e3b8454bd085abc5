//! Experiment configuration files.
//!
//! Configs are TOML: `key = value` pairs grouped in sections. Every key has
//! a default, so an empty file is a valid (single-cell FedAvg) experiment.
//! Unknown keys, type errors and constraint violations are reported with
//! the offending key and its line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{PartitionScheme, SyntheticKind, SyntheticSpec};
use crate::error::{Error, Result};
use crate::federation::{
    CloudTopology, ExtractorSettings, FederationConfig, Link, Strategy, DEFAULT_INTER, DEFAULT_INTRA,
};
use crate::model::TrainConfig;
use crate::paillier::ALLOWED_KEY_BITS;
use crate::privacy::{DpConfig, DEFAULT_DELTA};

/// Default epsilon grid for the privacy sweep.
pub const PRIVACY_GRID: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];
/// Default hidden-unit grid.
pub const HIDDEN_GRID: [f64; 5] = [4.0, 8.0, 16.0, 32.0, 64.0];
/// Default learning-rate grid.
pub const LR_GRID: [f64; 5] = [0.001, 0.005, 0.01, 0.05, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Privacy,
    Hidden,
    Lr,
    #[default]
    Single,
}

impl SweepKind {
    pub fn param_name(self) -> &'static str {
        match self {
            SweepKind::Privacy => "epsilon",
            SweepKind::Hidden => "hidden_units",
            SweepKind::Lr => "learning_rate",
            SweepKind::Single => "none",
        }
    }

    pub fn default_grid(self) -> Option<Vec<f64>> {
        match self {
            SweepKind::Privacy => Some(PRIVACY_GRID.to_vec()),
            SweepKind::Hidden => Some(HIDDEN_GRID.to_vec()),
            SweepKind::Lr => Some(LR_GRID.to_vec()),
            SweepKind::Single => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub sweep: SweepKind,
    /// Sweep grid; filled with the default grid for the sweep kind when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    /// Optional per-round log (CSV).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round_log: Option<PathBuf>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            sweep: SweepKind::Single,
            values: None,
            strategies: vec![Strategy::FedAvg],
            seeds: vec![1],
            output: PathBuf::from("metrics.csv"),
            round_log: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationSection {
    pub nodes: usize,
    pub max_rounds: usize,
    pub target_accuracy: f64,
    pub stop_at_target: bool,
    pub hidden_units: usize,
}

impl Default for FederationSection {
    fn default() -> Self {
        Self { nodes: 5, max_rounds: 200, target_accuracy: 0.85, stop_at_target: true, hidden_units: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { learning_rate: 0.05, local_epochs: 1, batch_size: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    #[default]
    Blobs,
    Xor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    #[default]
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    pub kind: DataKind,
    pub dim: usize,
    pub samples: usize,
    pub separation: f64,
    pub sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub label_column: String,
    pub test_fraction: f64,
    pub partition: PartitionKind,
    pub alpha: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            kind: DataKind::Blobs,
            dim: 10,
            samples: 2000,
            separation: 4.0,
            sigma: 1.0,
            path: None,
            label_column: "label".into(),
            test_fraction: 0.2,
            partition: PartitionKind::Iid,
            alpha: 0.5,
        }
    }
}

impl DataSection {
    pub fn synthetic_spec(&self, seed: u64) -> SyntheticSpec {
        let kind = match self.kind {
            DataKind::Blobs => SyntheticKind::Blobs { separation: self.separation, sigma: self.sigma },
            DataKind::Xor => SyntheticKind::Xor { sigma: self.sigma },
        };
        SyntheticSpec { kind, dim: self.dim, samples: self.samples, seed }
    }

    pub fn partition_scheme(&self) -> PartitionScheme {
        match self.partition {
            PartitionKind::Iid => PartitionScheme::Iid,
            PartitionKind::Dirichlet => PartitionScheme::Dirichlet { alpha: self.alpha },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpSection {
    pub epsilon: f64,
    pub delta: f64,
    pub clip_norm: f64,
}

impl Default for DpSection {
    fn default() -> Self {
        Self { epsilon: 1.0, delta: DEFAULT_DELTA, clip_norm: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeSection {
    pub bits: u32,
    pub scale_bits: u32,
}

impl Default for HeSection {
    fn default() -> Self {
        Self { bits: 512, scale_bits: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmcSection {
    pub scale_bits: u32,
}

impl Default for SmcSection {
    fn default() -> Self {
        Self { scale_bits: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorSection {
    pub seed: u64,
    pub output_dim: usize,
    pub gamma: f64,
}

impl Default for ExtractorSection {
    fn default() -> Self {
        Self { seed: 7, output_dim: 64, gamma: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    pub clouds: Vec<String>,
    pub intra_bytes_per_ms: f64,
    pub intra_latency_ms: f64,
    pub inter_bytes_per_ms: f64,
    pub inter_latency_ms: f64,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            clouds: vec!["cloud-a".into(), "cloud-b".into(), "cloud-c".into()],
            intra_bytes_per_ms: DEFAULT_INTRA.bytes_per_ms,
            intra_latency_ms: DEFAULT_INTRA.latency_ms,
            inter_bytes_per_ms: DEFAULT_INTER.bytes_per_ms,
            inter_latency_ms: DEFAULT_INTER.latency_ms,
        }
    }
}

impl TopologySection {
    pub fn build(&self) -> Result<CloudTopology> {
        CloudTopology::uniform(
            self.clouds.clone(),
            Link { bytes_per_ms: self.intra_bytes_per_ms, latency_ms: self.intra_latency_ms },
            Link { bytes_per_ms: self.inter_bytes_per_ms, latency_ms: self.inter_latency_ms },
        )
    }
}

/// Optional post-training migration to a covariate-shifted environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MigrationSection {
    pub target_cloud: String,
    /// Offset added to every feature of the target environment's data.
    pub shift: f64,
    pub samples: usize,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

impl Default for MigrationSection {
    fn default() -> Self {
        Self {
            target_cloud: "cloud-target".into(),
            shift: 2.0,
            samples: 500,
            learning_rate: 0.05,
            local_epochs: 20,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub federation: FederationSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub dp: DpSection,
    pub he: HeSection,
    pub smc: SmcSection,
    pub extractor: ExtractorSection,
    pub topology: TopologySection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub migration: Option<MigrationSection>,
}

impl ExperimentConfig {
    /// Parses, normalizes and validates config text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        if cfg.experiment.values.is_none() {
            cfg.experiment.values = cfg.experiment.sweep.default_grid();
        }
        cfg.validate().map_err(|e| match e {
            Error::Config { key, detail, .. } => {
                let line = locate_key(text, &key);
                Error::Config { key, line, detail }
            }
            other => other,
        })?;
        Ok(cfg)
    }

    /// Canonical TOML rendering with every default filled in. Parsing the
    /// output yields an equal config, and rendering that is byte-identical.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Sweep grid in config order; `[NaN]` stands for the single cell.
    pub fn sweep_values(&self) -> Vec<f64> {
        match self.experiment.sweep {
            SweepKind::Single => vec![f64::NAN],
            _ => self.experiment.values.clone().unwrap_or_default(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            local_epochs: self.train.local_epochs,
            batch_size: self.train.batch_size,
            rng_seed: 0,
        }
    }

    /// Federation settings for one sweep cell.
    pub fn federation_config(&self, strategy: Strategy, sweep_value: f64, seed: u64) -> FederationConfig {
        let mut train = self.train_config();
        let mut hidden = self.federation.hidden_units;
        let mut epsilon = self.dp.epsilon;
        match self.experiment.sweep {
            SweepKind::Privacy => epsilon = sweep_value,
            SweepKind::Hidden => hidden = sweep_value as usize,
            SweepKind::Lr => train.learning_rate = sweep_value,
            SweepKind::Single => {}
        }
        FederationConfig {
            nodes: self.federation.nodes,
            max_rounds: self.federation.max_rounds,
            target_accuracy: self.federation.target_accuracy,
            stop_at_target: self.federation.stop_at_target,
            strategy,
            hidden_units: hidden,
            train,
            dp: (strategy == Strategy::DpFl).then_some(DpConfig {
                epsilon,
                delta: self.dp.delta,
                clip_norm: self.dp.clip_norm,
                rounds: self.federation.max_rounds,
            }),
            he_bits: strategy.uses_encryption().then_some(self.he.bits),
            he_scale_bits: self.he.scale_bits,
            smc_scale_bits: self.smc.scale_bits,
            extractor: (strategy == Strategy::Ours).then_some(ExtractorSettings {
                seed: self.extractor.seed,
                output_dim: self.extractor.output_dim,
                gamma: self.extractor.gamma,
            }),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        check(!e.strategies.is_empty(), "experiment.strategies", "must list at least one strategy")?;
        check(!e.seeds.is_empty(), "experiment.seeds", "must list at least one seed")?;
        check(
            e.seeds.iter().all(|&s| s <= i64::MAX as u64),
            "experiment.seeds",
            "seeds must fit in a signed 64-bit integer",
        )?;
        if e.sweep != SweepKind::Single {
            let values = e.values.as_deref().unwrap_or_default();
            check(!values.is_empty(), "experiment.values", "sweep grid must be nonempty")?;
            let ok = match e.sweep {
                SweepKind::Privacy => values.iter().all(|&v| v.is_finite() && v > 0.0),
                SweepKind::Hidden => values.iter().all(|&v| v >= 0.0 && v.fract() == 0.0 && v <= 65536.0),
                SweepKind::Lr => values.iter().all(|&v| v > 0.0 && v <= 1.0),
                SweepKind::Single => true,
            };
            check(ok, "experiment.values", "grid value out of range for this sweep")?;
        }

        let f = &self.federation;
        check(f.nodes >= 1, "federation.nodes", "must be at least 1")?;
        check((0.0..=1.0).contains(&f.target_accuracy), "federation.target_accuracy", "must lie in [0, 1]")?;

        let t = &self.train;
        check(
            t.learning_rate > 0.0 && t.learning_rate <= 1.0,
            "train.learning_rate",
            "must lie in (0, 1]",
        )?;
        check(t.local_epochs >= 1, "train.local_epochs", "must be at least 1")?;
        check(t.batch_size >= 1, "train.batch_size", "must be at least 1")?;

        let d = &self.data;
        match d.source {
            DataSource::Synthetic => {
                check(d.samples >= 2, "data.samples", "must be at least 2")?;
                let min_dim = if d.kind == DataKind::Xor { 2 } else { 1 };
                check(d.dim >= min_dim, "data.dim", "too small for this data kind")?;
                check(d.sigma.is_finite() && d.sigma >= 0.0, "data.sigma", "must be non-negative")?;
                check(d.separation.is_finite(), "data.separation", "must be finite")?;
            }
            DataSource::Csv => check(d.path.is_some(), "data.path", "required when source = \"csv\"")?,
        }
        check(d.test_fraction > 0.0 && d.test_fraction < 1.0, "data.test_fraction", "must lie in (0, 1)")?;
        check(d.alpha.is_finite() && d.alpha > 0.0, "data.alpha", "must be positive")?;

        let dp = &self.dp;
        check(dp.epsilon.is_finite() && dp.epsilon > 0.0, "dp.epsilon", "must be positive")?;
        check(dp.delta > 0.0 && dp.delta < 1.0, "dp.delta", "must lie in (0, 1)")?;
        check(dp.clip_norm.is_finite() && dp.clip_norm > 0.0, "dp.clip_norm", "must be positive")?;

        check(ALLOWED_KEY_BITS.contains(&self.he.bits), "he.bits", "must be one of 256, 512, 1024, 2048")?;
        check((1..=50).contains(&self.he.scale_bits), "he.scale_bits", "must lie in [1, 50]")?;
        check((1..=40).contains(&self.smc.scale_bits), "smc.scale_bits", "must lie in [1, 40]")?;

        let x = &self.extractor;
        check(x.output_dim >= 1, "extractor.output_dim", "must be at least 1")?;
        check(x.gamma.is_finite() && x.gamma > 0.0, "extractor.gamma", "must be positive")?;

        let tp = &self.topology;
        check(!tp.clouds.is_empty(), "topology.clouds", "must list at least one cloud")?;
        check(tp.intra_bytes_per_ms > 0.0, "topology.intra_bytes_per_ms", "must be positive")?;
        check(tp.inter_bytes_per_ms > 0.0, "topology.inter_bytes_per_ms", "must be positive")?;
        check(tp.intra_latency_ms >= 0.0, "topology.intra_latency_ms", "must be non-negative")?;
        check(tp.inter_latency_ms >= 0.0, "topology.inter_latency_ms", "must be non-negative")?;
        tp.build().map_err(|err| Error::Config { key: "topology.clouds".into(), line: None, detail: err.to_string() })?;

        if let Some(m) = &self.migration {
            check(m.samples >= 2, "migration.samples", "must be at least 2")?;
            check(m.learning_rate > 0.0 && m.learning_rate <= 1.0, "migration.learning_rate", "must lie in (0, 1]")?;
            check(m.batch_size >= 1, "migration.batch_size", "must be at least 1")?;
            check(m.shift.is_finite(), "migration.shift", "must be finite")?;
        }
        Ok(())
    }
}

fn check(ok: bool, key: &str, detail: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config { key: key.into(), line: None, detail: detail.into() })
    }
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml_str(&text)
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Maps a deserialization error onto the key and line it concerns.
fn toml_error(text: &str, err: &toml::de::Error) -> Error {
    let line = err.span().map(|s| line_of_offset(text, s.start));
    let message = err.message().to_string();
    let key = unknown_field_name(&message)
        .or_else(|| {
            line.and_then(|l| text.lines().nth(l - 1))
                .and_then(|src| src.split_once('=').map(|(k, _)| k.trim().to_string()))
        })
        .unwrap_or_else(|| "<document>".into());
    let section = line.and_then(|l| section_at_line(text, l));
    let key = match section {
        Some(s) if !key.contains('.') && key != "<document>" => format!("{s}.{key}"),
        _ => key,
    };
    Error::Config { key, line, detail: message }
}

fn unknown_field_name(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next().map(str::to_string)
}

fn section_at_line(text: &str, line: usize) -> Option<String> {
    text.lines()
        .take(line)
        .filter_map(|l| {
            let l = l.trim();
            l.strip_prefix('[').and_then(|r| r.strip_suffix(']')).map(|s| s.trim().to_string())
        })
        .last()
}

/// Finds the line defining `section.key` (1-based).
fn locate_key(text: &str, dotted: &str) -> Option<usize> {
    let (section, key) = dotted.split_once('.')?;
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if let Some(s) = l.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = s.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = l.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}
