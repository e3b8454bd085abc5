//! Synchronous federated training across simulated clouds.
//!
//! Every round broadcasts the global model, trains locally on each node,
//! passes the local models through the configured privacy strategy and
//! aggregates them into the next global model. Nodes run in parallel but
//! results are always combined in ascending node order, so a run is a pure
//! function of its configuration and seeds.

mod aggregate;
mod topology;

pub use aggregate::{fedavg_aggregate, NodeUpdate};
pub use topology::{CloudTopology, Link, DEFAULT_INTER, DEFAULT_INTRA};

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::model::{
    self, accuracy, apply_delta, local_train, param_delta, DeltaVector, LabeledDataset, ModelArch,
    ModelParams, TrainConfig,
};
use crate::paillier::{self, FixedPointCodec, Keypair};
use crate::privacy::{self, DpConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "dp-fl")]
    DpFl,
    #[serde(rename = "smc-fl")]
    SmcFl,
    #[serde(rename = "he-fl")]
    HeFl,
    /// Encrypted aggregation on top of extractor-augmented local training.
    #[serde(rename = "ours")]
    Ours,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::FedAvg, Strategy::DpFl, Strategy::SmcFl, Strategy::HeFl, Strategy::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::DpFl => "dp-fl",
            Strategy::SmcFl => "smc-fl",
            Strategy::HeFl => "he-fl",
            Strategy::Ours => "ours",
        }
    }

    pub fn uses_encryption(self) -> bool {
        matches!(self, Strategy::HeFl | Strategy::Ours)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

/// Random-Fourier extractor settings; the input dimension comes from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSettings {
    pub seed: u64,
    pub output_dim: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub nodes: usize,
    pub max_rounds: usize,
    pub target_accuracy: f64,
    /// Stop as soon as the target is reached; otherwise run all rounds.
    pub stop_at_target: bool,
    pub strategy: Strategy,
    pub hidden_units: usize,
    /// `rng_seed` is ignored; per-node, per-round seeds are derived from `seed`.
    pub train: TrainConfig,
    pub dp: Option<DpConfig>,
    pub he_bits: Option<u32>,
    pub he_scale_bits: u32,
    pub smc_scale_bits: u32,
    pub extractor: Option<ExtractorSettings>,
    pub seed: u64,
}

pub const DEFAULT_TARGET_ACCURACY: f64 = 0.85;

impl FederationConfig {
    /// Plain FedAvg with no strategy-specific sections.
    pub fn fedavg(nodes: usize, hidden_units: usize, train: TrainConfig, max_rounds: usize, seed: u64) -> Self {
        Self {
            nodes,
            max_rounds,
            target_accuracy: DEFAULT_TARGET_ACCURACY,
            stop_at_target: true,
            strategy: Strategy::FedAvg,
            hidden_units,
            train,
            dp: None,
            he_bits: None,
            he_scale_bits: paillier::DEFAULT_SCALE_BITS,
            smc_scale_bits: 20,
            extractor: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            return Err(Error::invalid("federation needs at least one node"));
        }
        if !(0.0..=1.0).contains(&self.target_accuracy) {
            return Err(Error::invalid("target_accuracy must lie in [0, 1]"));
        }
        self.train.validate()?;
        let s = self.strategy;
        let require = |present: bool, needed: bool, what: &str| {
            if present == needed {
                Ok(())
            } else if needed {
                Err(Error::invalid(format!("strategy {s} requires {what}")))
            } else {
                Err(Error::invalid(format!("strategy {s} does not use {what}")))
            }
        };
        require(self.dp.is_some(), s == Strategy::DpFl, "a DP config")?;
        require(self.he_bits.is_some(), s.uses_encryption(), "an encryption key size")?;
        require(self.extractor.is_some(), s == Strategy::Ours, "a feature extractor")?;
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        if !(1..=50).contains(&self.he_scale_bits) || !(1..=40).contains(&self.smc_scale_bits) {
            return Err(Error::invalid("codec scale bits out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub node_id: usize,
    pub cloud_id: String,
    /// Training data as the model sees it (already augmented for `Ours`).
    pub data: LabeledDataset,
    /// Most recent local model.
    pub params: ModelParams,
    pub seed: u64,
}

impl NodeState {
    pub fn sample_count(&self) -> u64 {
        self.data.len() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index `t`.
    pub round: usize,
    pub global_params: ModelParams,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub mean_local_loss: f64,
    /// Measured; excluded from determinism guarantees.
    pub wall_millis: f64,
    pub simulated_comm_bytes: u64,
    pub simulated_millis: f64,
}

/// Nominal cost model for simulated time. Figures are rough per-operation
/// estimates; only their relative sizes matter.
pub mod cost {
    /// One parameter touched by one sample in one epoch (forward + backward).
    pub const MS_PER_SAMPLE_PARAM: f64 = 1e-5;
    /// One Paillier encryption or decryption at a 512-bit modulus; scales
    /// cubically with key size.
    pub const MS_PER_HE_OP_512: f64 = 0.5;
    /// One field element of secret-sharing work.
    pub const MS_PER_SHARE_ELEMENT: f64 = 1e-4;
    /// One parameter of plaintext aggregation work per node.
    pub const MS_PER_AGGREGATED_PARAM: f64 = 1e-6;

    pub fn he_op_ms(bits: u32) -> f64 {
        MS_PER_HE_OP_512 * (f64::from(bits) / 512.0).powi(3)
    }
}

const STREAM_NODE: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_PRIVACY: u64 = 3;
const STREAM_KEYS: u64 = 4;
const STREAM_INIT: u64 = 5;

struct Crypto {
    keys: Keypair,
    codec: FixedPointCodec,
}

pub struct FederationState {
    cfg: FederationConfig,
    topology: CloudTopology,
    nodes: Vec<NodeState>,
    test: LabeledDataset,
    train_union: LabeledDataset,
    global: ModelParams,
    extractor: Option<FeatureExtractor>,
    crypto: Option<Crypto>,
    round: usize,
}

impl FederationState {
    /// Builds nodes from raw shards. For `Ours`, the shared extractor is
    /// applied to every shard and to the test set up front.
    pub fn new(
        cfg: FederationConfig,
        shards: Vec<LabeledDataset>,
        test: LabeledDataset,
        topology: CloudTopology,
    ) -> Result<Self> {
        cfg.validate()?;
        if shards.len() != cfg.nodes {
            return Err(Error::invalid(format!("expected {} shards, got {}", cfg.nodes, shards.len())));
        }
        if let Some(i) = shards.iter().position(|s| s.is_empty()) {
            return Err(Error::invalid(format!("shard {i} is empty")));
        }
        if test.is_empty() {
            return Err(Error::invalid("test set is empty"));
        }
        let raw_dim = shards[0].dim().expect("nonempty");
        if shards.iter().any(|s| s.dim() != Some(raw_dim)) || test.dim() != Some(raw_dim) {
            return Err(Error::invalid("shards and test set disagree on feature dimension"));
        }
        let extractor = cfg
            .extractor
            .map(|e| FeatureExtractor::random_fourier(e.seed, raw_dim, e.output_dim, e.gamma))
            .transpose()?;
        let (shards, test) = match &extractor {
            Some(fx) => (
                shards.iter().map(|s| fx.augment_dataset(s)).collect::<Result<Vec<_>>>()?,
                fx.augment_dataset(&test)?,
            ),
            None => (shards, test),
        };
        let dim = extractor.as_ref().map_or(raw_dim, |fx| fx.output_dim());
        let arch = ModelArch::mlp(dim, cfg.hidden_units);
        let global = ModelParams::init(arch, rng::derive(cfg.seed, &[STREAM_INIT]));
        let crypto = match cfg.he_bits {
            Some(bits) => {
                let keys = paillier::keygen(bits, rng::derive(cfg.seed, &[STREAM_KEYS]))?;
                let codec = FixedPointCodec::new(1u64 << cfg.he_scale_bits, keys.public.n().clone())?;
                Some(Crypto { keys, codec })
            }
            None => None,
        };
        let train_union = LabeledDataset::concat(&shards);
        let nodes = shards
            .into_iter()
            .enumerate()
            .map(|(i, data)| NodeState {
                node_id: i,
                cloud_id: topology.cloud_for_node(i).to_string(),
                data,
                params: global.clone(),
                seed: rng::derive(cfg.seed, &[STREAM_NODE, i as u64]),
            })
            .collect();
        Ok(Self { cfg, topology, nodes, test, train_union, global, extractor, crypto, round: 0 })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.cfg
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn rounds_completed(&self) -> usize {
        self.round
    }

    pub fn extractor(&self) -> Option<&FeatureExtractor> {
        self.extractor.as_ref()
    }

    /// Union of all node data, in the model's feature space.
    pub fn train_data(&self) -> &LabeledDataset {
        &self.train_union
    }

    /// Test set, in the model's feature space.
    pub fn test_data(&self) -> &LabeledDataset {
        &self.test
    }

    /// Budget spent so far under linear composition (DP-FL only).
    pub fn epsilon_spent(&self) -> Option<f64> {
        self.cfg.dp.map(|dp| DpConfig { rounds: self.round, ..dp }.total_epsilon())
    }

    /// Maps raw features into the model's feature space.
    pub fn prepare(&self, raw: &LabeledDataset) -> Result<LabeledDataset> {
        match &self.extractor {
            Some(fx) => fx.augment_dataset(raw),
            None => Ok(raw.clone()),
        }
    }

    /// Executes one synchronous round and returns its record.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let t = self.round + 1;
        let start = Instant::now();
        let global = self.global.clone();
        let param_count = global.len() as u64;
        let train_cfg = self.cfg.train;

        let results: Vec<Result<(ModelParams, f64)>> = self
            .nodes
            .par_iter()
            .map(|node| {
                let cfg = TrainConfig { rng_seed: rng::derive(node.seed, &[STREAM_TRAIN, t as u64]), ..train_cfg };
                local_train(&global, &node.data, &cfg)
            })
            .collect();
        let mut locals = Vec::with_capacity(results.len());
        for (node, r) in self.nodes.iter().zip(results) {
            locals.push(r.map_err(|e| round_failure(t, Some(node.node_id), e))?);
        }

        let counts: Vec<u64> = self.nodes.iter().map(NodeState::sample_count).collect();
        let seeds: Vec<u64> = self.nodes.iter().map(|n| rng::derive(n.seed, &[STREAM_PRIVACY, t as u64])).collect();
        let outcome = self.apply_strategy(t, &global, &locals, &counts, &seeds)?;

        let mean_local_loss = locals.iter().map(|(_, l)| l).sum::<f64>() / locals.len() as f64;
        for (node, (params, _)) in self.nodes.iter_mut().zip(locals) {
            node.params = params;
        }
        self.global = outcome.global;
        self.round = t;

        // simulated accounting
        let downlink = param_count * 8;
        let mut slowest: f64 = 0.0;
        for (i, node) in self.nodes.iter().enumerate() {
            let compute = cost::MS_PER_SAMPLE_PARAM
                * counts[i] as f64
                * train_cfg.local_epochs as f64
                * param_count as f64
                + outcome.node_crypto_ms;
            let link = self.topology.link(&node.cloud_id, self.topology.aggregator_cloud())?;
            let transfer = link.transfer_ms(downlink) + link.transfer_ms(outcome.uplink_bytes[i]);
            slowest = slowest.max(compute + transfer);
        }
        let comm_bytes = downlink * self.nodes.len() as u64 + outcome.uplink_bytes.iter().sum::<u64>();

        let train_accuracy = accuracy(&self.global, &self.train_union)?;
        let test_accuracy = accuracy(&self.global, &self.test)?;
        Ok(RoundRecord {
            round: t,
            global_params: self.global.clone(),
            train_accuracy,
            test_accuracy,
            mean_local_loss,
            wall_millis: start.elapsed().as_secs_f64() * 1e3,
            simulated_comm_bytes: comm_bytes,
            simulated_millis: slowest + outcome.aggregator_ms,
        })
    }

    fn apply_strategy(
        &self,
        t: usize,
        global: &ModelParams,
        locals: &[(ModelParams, f64)],
        counts: &[u64],
        seeds: &[u64],
    ) -> Result<StrategyOutcome> {
        let arch = global.arch();
        let p = global.len() as u64;
        let k = self.nodes.len();
        let total: u64 = counts.iter().sum();
        let plain_uplink = vec![p * 8; k];
        let plain_aggregation = cost::MS_PER_AGGREGATED_PARAM * (p * k as u64) as f64;
        let updates = |params: Vec<ModelParams>| -> Vec<NodeUpdate> {
            params
                .into_iter()
                .enumerate()
                .map(|(i, params)| NodeUpdate { node_id: self.nodes[i].node_id, params, samples: counts[i] })
                .collect()
        };
        match self.cfg.strategy {
            Strategy::FedAvg => {
                let global = fedavg_aggregate(&updates(locals.iter().map(|(w, _)| w.clone()).collect()))
                    .map_err(|e| round_failure(t, None, e))?;
                Ok(StrategyOutcome { global, uplink_bytes: plain_uplink, node_crypto_ms: 0.0, aggregator_ms: plain_aggregation })
            }
            Strategy::DpFl => {
                let dp = self.cfg.dp.expect("validated");
                let mut noised = Vec::with_capacity(k);
                for (i, (w, _)) in locals.iter().enumerate() {
                    let wrap = |e| round_failure(t, Some(self.nodes[i].node_id), e);
                    let delta = param_delta(global, w).map_err(wrap)?;
                    let private = privacy::dp_privatize(delta.values(), &dp, &mut rng::seeded(seeds[i])).map_err(wrap)?;
                    let delta = DeltaVector::new(arch, private).map_err(wrap)?;
                    noised.push(apply_delta(global, &delta).map_err(wrap)?);
                }
                let global = fedavg_aggregate(&updates(noised)).map_err(|e| round_failure(t, None, e))?;
                Ok(StrategyOutcome { global, uplink_bytes: plain_uplink, node_crypto_ms: 0.0, aggregator_ms: plain_aggregation })
            }
            Strategy::SmcFl => {
                let scale = 1u64 << self.cfg.smc_scale_bits;
                let recipients = k.max(2);
                let mut bundles = Vec::with_capacity(k);
                let mut uplink = Vec::with_capacity(k);
                for (i, (w, _)) in locals.iter().enumerate() {
                    let weighted: Vec<f64> = w.values().iter().map(|v| v * counts[i] as f64).collect();
                    let bundle = privacy::share(&weighted, scale, recipients, &mut rng::seeded(seeds[i]))
                        .map_err(|e| round_failure(t, Some(self.nodes[i].node_id), e))?;
                    // (recipients - 1) shares out plus one partial sum to the aggregator
                    uplink.push(bundle.wire_len() as u64);
                    bundles.push(bundle);
                }
                let sum = privacy::reconstruct_sum(&bundles).map_err(|e| round_failure(t, None, e))?;
                let values = sum.into_iter().map(|v| v / total as f64).collect();
                let global = ModelParams::new(arch, values).map_err(|e| round_failure(t, None, e))?;
                Ok(StrategyOutcome {
                    global,
                    uplink_bytes: uplink,
                    node_crypto_ms: cost::MS_PER_SHARE_ELEMENT * (p * recipients as u64) as f64,
                    aggregator_ms: cost::MS_PER_SHARE_ELEMENT * (p * (k * recipients) as u64) as f64,
                })
            }
            Strategy::HeFl | Strategy::Ours => {
                let crypto = self.crypto.as_ref().expect("validated");
                let pk = &crypto.keys.public;
                let encrypted: Vec<Result<paillier::CipherVector>> = locals
                    .par_iter()
                    .zip(seeds.par_iter())
                    .map(|((w, _), &seed)| paillier::encrypt_params(pk, &crypto.codec, w, &mut rng::seeded(seed)))
                    .collect();
                let mut cipher_updates = Vec::with_capacity(k);
                for (i, cv) in encrypted.into_iter().enumerate() {
                    let cv = cv.map_err(|e| round_failure(t, Some(self.nodes[i].node_id), e))?;
                    cipher_updates.push((cv, counts[i]));
                }
                let uplink = cipher_updates.iter().map(|(cv, _)| cv.wire_len() as u64).collect();
                let (sum, n) = paillier::aggregate_encrypted(pk, &cipher_updates).map_err(|e| round_failure(t, None, e))?;
                let global = paillier::decrypt_params(&crypto.keys.private, pk, &crypto.codec, &sum, n, arch)
                    .map_err(|e| round_failure(t, None, e))?;
                let op = cost::he_op_ms(pk.modulus_bits());
                Ok(StrategyOutcome {
                    global,
                    uplink_bytes: uplink,
                    node_crypto_ms: op * p as f64,
                    // k scalar multiplications plus one decryption per coordinate
                    aggregator_ms: op * (p * (k as u64 + 1)) as f64,
                })
            }
        }
    }
}

struct StrategyOutcome {
    global: ModelParams,
    uplink_bytes: Vec<u64>,
    node_crypto_ms: f64,
    aggregator_ms: f64,
}

fn round_failure(round: usize, node: Option<usize>, source: Error) -> Error {
    Error::RoundFailure { round, node, source: Box::new(source) }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub records: Vec<RoundRecord>,
    /// First round whose test accuracy reached the target.
    pub rounds_to_target: Option<usize>,
    pub final_params: ModelParams,
    pub epsilon_spent: Option<f64>,
}

impl FederationState {
    /// Runs rounds until the target test accuracy is reached (when
    /// `stop_at_target`) or `max_rounds` have been executed.
    pub fn run_training(&mut self) -> Result<TrainingOutcome> {
        let mut records = Vec::new();
        let mut rounds_to_target = None;
        for _ in 0..self.cfg.max_rounds {
            let rec = self.run_round()?;
            let reached = rec.test_accuracy >= self.cfg.target_accuracy;
            if reached && rounds_to_target.is_none() {
                rounds_to_target = Some(rec.round);
            }
            records.push(rec);
            if reached && self.cfg.stop_at_target {
                break;
            }
        }
        Ok(TrainingOutcome {
            records,
            rounds_to_target,
            final_params: self.global.clone(),
            epsilon_spent: self.epsilon_spent(),
        })
    }
}

/// Builds a federation over `shards` and trains it to completion.
pub fn run_training(
    cfg: FederationConfig,
    shards: Vec<LabeledDataset>,
    test: LabeledDataset,
    topology: CloudTopology,
) -> Result<TrainingOutcome> {
    FederationState::new(cfg, shards, test, topology)?.run_training()
}

/// Fine-tunes `w` on `target`'s data and returns `(w', delta)` with
/// `w' = w + delta`. `w'` is materialized from `w` and `delta`, so the
/// identity holds bit-for-bit.
pub fn migrate_and_finetune(w: &ModelParams, target: &NodeState, ft: &TrainConfig) -> Result<(ModelParams, DeltaVector)> {
    if target.data.dim() != Some(w.arch().input_dim) {
        return Err(Error::invalid("migrated model does not match target feature dimension"));
    }
    let (tuned, _) = local_train(w, &target.data, ft)?;
    let delta = param_delta(w, &tuned)?;
    let w_prime = apply_delta(w, &delta)?;
    Ok((w_prime, delta))
}

/// Accuracy of a model before and after migrating to a new environment.
#[derive(Debug, Clone)]
pub struct MigrationReport {
    pub w_prime: ModelParams,
    pub delta: DeltaVector,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
}

impl FederationState {
    /// Migrates the current global model to a node in `cloud_id` holding
    /// `raw_train`, fine-tunes it, and evaluates both models on `raw_eval`.
    pub fn migrate(
        &self,
        cloud_id: &str,
        raw_train: &LabeledDataset,
        raw_eval: &LabeledDataset,
        ft: &TrainConfig,
    ) -> Result<MigrationReport> {
        let target = NodeState {
            node_id: self.nodes.len(),
            cloud_id: cloud_id.to_string(),
            data: self.prepare(raw_train)?,
            params: self.global.clone(),
            seed: ft.rng_seed,
        };
        let eval = self.prepare(raw_eval)?;
        let (w_prime, delta) = migrate_and_finetune(&self.global, &target, ft)?;
        Ok(MigrationReport {
            accuracy_before: model::accuracy(&self.global, &eval)?,
            accuracy_after: model::accuracy(&w_prime, &eval)?,
            w_prime,
            delta,
        })
    }
}
