use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{DataSource, ExperimentConfig, SweepKind};
use crate::data::{self, LabeledDataset};
use crate::error::{Error, Result};
use crate::federation::{FederationState, MigrationReport, RoundRecord, Strategy, TrainingOutcome};
use crate::model;
use crate::privacy::membership_attack;
use crate::rng;

/// Metrics CSV header, in column order.
pub const METRICS_COLUMNS: [&str; 14] = [
    "strategy",
    "sweep_param_name",
    "sweep_param_value",
    "seed",
    "rounds_to_target",
    "final_accuracy",
    "privacy_score",
    "membership_advantage",
    "wall_millis_total",
    "simulated_millis_total",
    "comm_bytes_total",
    "rounds_run",
    "epsilon_total",
    "status",
];

/// Columns holding measured wall-clock time; everything else is deterministic.
pub const WALL_CLOCK_COLUMNS: [&str; 1] = ["wall_millis_total"];

pub const ROUND_LOG_COLUMNS: [&str; 11] = [
    "strategy",
    "sweep_param_value",
    "seed",
    "round",
    "train_accuracy",
    "test_accuracy",
    "mean_local_loss",
    "wall_millis",
    "simulated_millis",
    "simulated_comm_bytes",
    "global_param_norm",
];

const STREAM_DATA: u64 = 11;
const STREAM_SPLIT: u64 = 12;
const STREAM_PARTITION: u64 = 13;
const STREAM_MIGRATION: u64 = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub strategy: Strategy,
    pub sweep_param_name: &'static str,
    /// `NaN` for a single-cell experiment.
    pub sweep_param_value: f64,
    pub seed: u64,
    /// `-1` when the target was never reached.
    pub rounds_to_target: i64,
    pub final_accuracy: f64,
    pub privacy_score: f64,
    pub membership_advantage: f64,
    pub wall_millis_total: f64,
    pub simulated_millis_total: f64,
    pub comm_bytes_total: u64,
    pub rounds_run: usize,
    /// Linear-composition budget; DP-FL only.
    pub epsilon_total: Option<f64>,
    /// `"ok"` or `"error: ..."`.
    pub status: String,
}

impl MetricsRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn csv_fields(&self) -> Vec<String> {
        let value = if self.sweep_param_value.is_nan() { String::new() } else { self.sweep_param_value.to_string() };
        vec![
            self.strategy.to_string(),
            self.sweep_param_name.to_string(),
            value,
            self.seed.to_string(),
            self.rounds_to_target.to_string(),
            self.final_accuracy.to_string(),
            self.privacy_score.to_string(),
            self.membership_advantage.to_string(),
            format!("{:.3}", self.wall_millis_total),
            self.simulated_millis_total.to_string(),
            self.comm_bytes_total.to_string(),
            self.rounds_run.to_string(),
            self.epsilon_total.map(|e| e.to_string()).unwrap_or_default(),
            self.status.clone(),
        ]
    }
}

/// Everything produced by one sweep cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub row: MetricsRow,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
}

impl SweepReport {
    pub fn rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.cells.iter().map(|c| &c.row)
    }

    pub fn all_ok(&self) -> bool {
        self.rows().all(MetricsRow::is_ok)
    }
}

fn source_data(cfg: &ExperimentConfig, seed: u64, samples: Option<usize>) -> Result<LabeledDataset> {
    let d = &cfg.data;
    match d.source {
        DataSource::Synthetic => {
            let mut spec = d.synthetic_spec(seed);
            spec.samples = samples.unwrap_or(spec.samples);
            data::generate(&spec)
        }
        DataSource::Csv => data::load_csv(d.path.as_ref().expect("validated"), &d.label_column),
    }
}

/// Train/test data for one seed, as raw features.
pub fn build_data(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<LabeledDataset>, LabeledDataset)> {
    let d = &cfg.data;
    let full = source_data(cfg, rng::derive(seed, &[STREAM_DATA]), None)?;
    let (train, test) = data::train_test_split(&full, d.test_fraction, rng::derive(seed, &[STREAM_SPLIT]))?;
    let shards = data::partition(
        &train,
        d.partition_scheme(),
        cfg.federation.nodes,
        rng::derive(seed, &[STREAM_PARTITION]),
    )?;
    Ok((shards, test))
}

/// Builds the federation for one cell and trains it.
pub fn run_cell_state(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    value: f64,
    seed: u64,
) -> Result<(FederationState, TrainingOutcome, f64)> {
    let (shards, test) = build_data(cfg, seed)?;
    let fed = cfg.federation_config(strategy, value, seed);
    let mut state = FederationState::new(fed, shards, test, cfg.topology.build()?)?;
    let start = Instant::now();
    let outcome = state.run_training()?;
    let wall = start.elapsed().as_secs_f64() * 1e3;
    Ok((state, outcome, wall))
}

/// Trains one cell, then moves the global model to a node whose data is
/// shifted by `migration.shift` and fine-tunes it there. Half of the shifted
/// data is used for fine-tuning, the other half for evaluation.
pub fn run_migration(cfg: &ExperimentConfig, strategy: Strategy, value: f64, seed: u64) -> Result<MigrationReport> {
    let m = cfg
        .migration
        .as_ref()
        .ok_or_else(|| Error::invalid("config has no [migration] section"))?;
    let (state, _, _) = run_cell_state(cfg, strategy, value, seed)?;
    let shifted = data::translate(
        &source_data(cfg, rng::derive(seed, &[STREAM_MIGRATION]), Some(m.samples))?,
        m.shift,
    );
    let (tune, eval) = data::train_test_split(&shifted, 0.5, rng::derive(seed, &[STREAM_MIGRATION, 1]))?;
    let ft = model::TrainConfig {
        learning_rate: m.learning_rate,
        local_epochs: m.local_epochs,
        batch_size: m.batch_size,
        rng_seed: rng::derive(seed, &[STREAM_MIGRATION, 2]),
    };
    state.migrate(&m.target_cloud, &tune, &eval, &ft)
}

fn run_cell(cfg: &ExperimentConfig, strategy: Strategy, value: f64, seed: u64) -> CellResult {
    let name = cfg.experiment.sweep.param_name();
    match run_cell_inner(cfg, strategy, value, seed) {
        Ok(cell) => cell,
        Err(e) => CellResult {
            row: MetricsRow {
                strategy,
                sweep_param_name: name,
                sweep_param_value: value,
                seed,
                rounds_to_target: -1,
                final_accuracy: f64::NAN,
                privacy_score: f64::NAN,
                membership_advantage: f64::NAN,
                wall_millis_total: 0.0,
                simulated_millis_total: 0.0,
                comm_bytes_total: 0,
                rounds_run: 0,
                epsilon_total: None,
                status: format!("error: {e}"),
            },
            rounds: Vec::new(),
        },
    }
}

fn run_cell_inner(cfg: &ExperimentConfig, strategy: Strategy, value: f64, seed: u64) -> Result<CellResult> {
    let (state, outcome, wall) = run_cell_state(cfg, strategy, value, seed)?;
    let final_accuracy = model::accuracy(&outcome.final_params, state.test_data())?;
    let attack = membership_attack(&outcome.final_params, state.train_data(), state.test_data())?;
    let row = MetricsRow {
        strategy,
        sweep_param_name: cfg.experiment.sweep.param_name(),
        sweep_param_value: value,
        seed,
        rounds_to_target: outcome.rounds_to_target.map_or(-1, |r| r as i64),
        final_accuracy,
        privacy_score: attack.privacy_score(),
        membership_advantage: attack.advantage,
        wall_millis_total: wall,
        simulated_millis_total: outcome.records.iter().map(|r| r.simulated_millis).sum(),
        comm_bytes_total: outcome.records.iter().map(|r| r.simulated_comm_bytes).sum(),
        rounds_run: outcome.records.len(),
        epsilon_total: outcome.epsilon_spent,
        status: "ok".into(),
    };
    Ok(CellResult { row, rounds: outcome.records })
}

/// Runs every (strategy, sweep value, seed) cell. Cells run concurrently;
/// the report is always in canonical config order. Failed cells carry their
/// error in `status` and do not stop the sweep.
pub fn run_sweep(cfg: &ExperimentConfig) -> SweepReport {
    let mut grid = Vec::new();
    for &strategy in &cfg.experiment.strategies {
        for value in cfg.sweep_values() {
            for &seed in &cfg.experiment.seeds {
                grid.push((strategy, value, seed));
            }
        }
    }
    let cells = grid
        .into_par_iter()
        .map(|(strategy, value, seed)| run_cell(cfg, strategy, value, seed))
        .collect();
    SweepReport { cells }
}

/// Single-cell variant of `cfg` (used by `run`).
pub fn as_single(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut single = cfg.clone();
    single.experiment.sweep = SweepKind::Single;
    single.experiment.values = None;
    single
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_COLUMNS)?;
    for row in rows {
        w.write_record(row.csv_fields())?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn round_log_csv(cells: &[CellResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ROUND_LOG_COLUMNS)?;
    for cell in cells {
        let value = if cell.row.sweep_param_value.is_nan() { String::new() } else { cell.row.sweep_param_value.to_string() };
        for r in &cell.rounds {
            let norm = r.global_params.values().iter().map(|v| v * v).sum::<f64>().sqrt();
            w.write_record([
                cell.row.strategy.to_string(),
                value.clone(),
                cell.row.seed.to_string(),
                r.round.to_string(),
                r.train_accuracy.to_string(),
                r.test_accuracy.to_string(),
                r.mean_local_loss.to_string(),
                format!("{:.3}", r.wall_millis),
                r.simulated_millis.to_string(),
                r.simulated_comm_bytes.to_string(),
                norm.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
/// Missing parent directories are created.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::invalid("output path has no file name"))?;
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes the metrics CSV (and round log, if configured).
pub fn write_outputs(cfg: &ExperimentConfig, report: &SweepReport) -> Result<()> {
    let rows: Vec<MetricsRow> = report.rows().cloned().collect();
    write_atomic(&cfg.experiment.output, &metrics_csv(&rows)?)?;
    if let Some(log) = &cfg.experiment.round_log {
        write_atomic(log, &round_log_csv(&report.cells)?)?;
    }
    Ok(())
}
