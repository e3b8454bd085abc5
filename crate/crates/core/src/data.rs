//! Synthetic datasets, CSV ingestion and node partitioning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use crate::model::{LabeledDataset, Sample};

/// Attempts at drawing a Dirichlet allocation with no empty shard.
pub const MAX_PARTITION_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SyntheticKind {
    /// Two isotropic Gaussian classes whose means are `separation` apart.
    Blobs { separation: f64, sigma: f64 },
    /// Four clusters at `(±1, ±1)` in the first two coordinates; label 1 iff
    /// the coordinate signs agree. Extra dimensions carry pure noise.
    Xor { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub dim: usize,
    pub samples: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn blobs(dim: usize, samples: usize, separation: f64, sigma: f64, seed: u64) -> Self {
        Self { kind: SyntheticKind::Blobs { separation, sigma }, dim, samples, seed }
    }

    pub fn xor(samples: usize, sigma: f64, seed: u64) -> Self {
        Self { kind: SyntheticKind::Xor { sigma }, dim: 2, samples, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::invalid("synthetic datasets need at least 2 samples"));
        }
        let sigma = match self.kind {
            SyntheticKind::Blobs { separation, sigma } => {
                if self.dim == 0 {
                    return Err(Error::invalid("blobs need dim >= 1"));
                }
                if !separation.is_finite() {
                    return Err(Error::invalid("separation must be finite"));
                }
                sigma
            }
            SyntheticKind::Xor { sigma } => {
                if self.dim < 2 {
                    return Err(Error::invalid("xor needs dim >= 2"));
                }
                sigma
            }
        };
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid(format!("sigma must be non-negative, got {sigma}")));
        }
        Ok(())
    }
}

/// Draws a dataset from `spec`; output is a pure function of the spec.
pub fn generate(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let dim = spec.dim;
    let mut samples = Vec::with_capacity(spec.samples);
    match spec.kind {
        SyntheticKind::Blobs { separation, sigma } => {
            let noise = Normal::new(0.0, sigma).expect("validated sigma");
            let offset = separation / 2.0 / (dim as f64).sqrt();
            for i in 0..spec.samples {
                let label = (i % 2) as u8;
                let mean = if label == 1 { offset } else { -offset };
                let features = (0..dim).map(|_| mean + noise.sample(&mut rng)).collect();
                samples.push(Sample { features, label });
            }
        }
        SyntheticKind::Xor { sigma } => {
            let noise = Normal::new(0.0, sigma).expect("validated sigma");
            const CENTERS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];
            for i in 0..spec.samples {
                let (cx, cy) = CENTERS[i % 4];
                let mut features = Vec::with_capacity(dim);
                features.push(cx + noise.sample(&mut rng));
                features.push(cy + noise.sample(&mut rng));
                features.extend((2..dim).map(|_| noise.sample(&mut rng)));
                samples.push(Sample { features, label: u8::from(cx * cy > 0.0) });
            }
        }
    }
    samples.shuffle(&mut rng);
    LabeledDataset::new(samples)
}

/// Adds `offset` to every feature coordinate (covariate shift).
pub fn translate(data: &LabeledDataset, offset: f64) -> LabeledDataset {
    let samples = data
        .samples()
        .iter()
        .map(|s| Sample { features: s.features.iter().map(|v| v + offset).collect(), label: s.label })
        .collect();
    LabeledDataset::new(samples).expect("shape preserved")
}

/// Reads a headed CSV file. Every column except `label_column` is a numeric
/// feature, in file order.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, label_column)
}

pub fn read_csv<R: std::io::Read>(reader: R, label_column: &str) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse { line: 1, detail: e.to_string() })?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Parse { line: 1, detail: format!("missing label column `{label_column}`") })?;
    let mut samples = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            detail: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let mut features = Vec::with_capacity(record.len().saturating_sub(1));
        let mut label = None;
        for (idx, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                detail: format!("column `{}`: `{cell}` is not numeric", &headers[idx]),
            })?;
            if idx == label_idx {
                label = Some(match value {
                    0.0 => 0u8,
                    1.0 => 1u8,
                    _ => {
                        return Err(Error::Parse { line, detail: format!("label `{cell}` is not 0 or 1") })
                    }
                });
            } else {
                features.push(value);
            }
        }
        let label = label.expect("csv enforces equal record lengths");
        samples.push(Sample { features, label });
    }
    LabeledDataset::new(samples)
}

/// Writes `x0..x{d-1}` plus a `label` column. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_csv(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = data.dim().unwrap_or(0);
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for s in data.samples() {
        let mut row: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
        row.push(s.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PartitionScheme {
    Iid,
    Dirichlet { alpha: f64 },
}

/// Splits sample indices into `shards` disjoint, nonempty groups.
pub fn partition_indices(
    data: &LabeledDataset,
    scheme: PartitionScheme,
    shards: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if shards == 0 {
        return Err(Error::invalid("need at least one shard"));
    }
    if data.len() < shards {
        return Err(Error::invalid(format!(
            "cannot split {} samples into {shards} nonempty shards",
            data.len()
        )));
    }
    let mut rng = rng::seeded(seed);
    match scheme {
        PartitionScheme::Iid => {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut rng);
            let base = data.len() / shards;
            let extra = data.len() % shards;
            let mut out = Vec::with_capacity(shards);
            let mut start = 0;
            for k in 0..shards {
                let size = base + usize::from(k < extra);
                let mut shard = idx[start..start + size].to_vec();
                shard.sort_unstable();
                out.push(shard);
                start += size;
            }
            Ok(out)
        }
        PartitionScheme::Dirichlet { alpha } => {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::invalid(format!("dirichlet alpha must be positive, got {alpha}")));
            }
            let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
            let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
            for (i, s) in data.samples().iter().enumerate() {
                by_class[usize::from(s.label)].push(i);
            }
            for _ in 0..MAX_PARTITION_RETRIES {
                let mut out = vec![Vec::new(); shards];
                for class in &by_class {
                    let mut members = class.clone();
                    members.shuffle(&mut rng);
                    let mut weights: Vec<f64> = (0..shards).map(|_| gamma.sample(&mut rng)).collect();
                    let mut total: f64 = weights.iter().sum();
                    // tiny alpha can underflow every gamma draw to zero
                    if !(total.is_finite() && total > 0.0) {
                        weights = vec![1.0; shards];
                        total = shards as f64;
                    }
                    let mut cumulative = 0.0;
                    let mut start = 0;
                    for (k, w) in weights.iter().enumerate() {
                        cumulative += w / total;
                        let end = if k + 1 == shards {
                            members.len()
                        } else {
                            ((cumulative * members.len() as f64).round() as usize).clamp(start, members.len())
                        };
                        out[k].extend_from_slice(&members[start..end]);
                        start = end;
                    }
                }
                if out.iter().all(|s| !s.is_empty()) {
                    out.iter_mut().for_each(|s| s.sort_unstable());
                    return Ok(out);
                }
            }
            Err(Error::invalid(format!(
                "no Dirichlet(alpha={alpha}) allocation without empty shards after {MAX_PARTITION_RETRIES} attempts"
            )))
        }
    }
}

pub fn partition(
    data: &LabeledDataset,
    scheme: PartitionScheme,
    shards: usize,
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    Ok(partition_indices(data, scheme, shards, seed)?
        .iter()
        .map(|idx| data.subset(idx))
        .collect())
}

/// Seeded split into `(train, test)` with `test_fraction` of samples held out.
pub fn train_test_split(data: &LabeledDataset, test_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction must lie in (0, 1)"));
    }
    let n_test = ((data.len() as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test >= data.len() {
        return Err(Error::invalid("split leaves an empty train or test set"));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let (test, train) = idx.split_at(n_test);
    Ok((data.subset(train), data.subset(test)))
}
