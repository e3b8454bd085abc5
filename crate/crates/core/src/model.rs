//! Binary classifiers (logistic regression or a one-hidden-layer tanh MLP),
//! mean binary cross-entropy and seeded mini-batch SGD.
//!
//! Parameters are a flat vector. For `hidden_units = 0` the layout is
//! `[w_0 .. w_{d-1}, b]`; otherwise it is
//! `[W1 (hidden × input, row-major), b1 (hidden), w2 (hidden), b2]`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Lower/upper clamp applied to predicted probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub input_dim: usize,
    /// `0` selects logistic regression.
    pub hidden_units: usize,
}

impl ModelArch {
    pub fn logistic(input_dim: usize) -> Self {
        Self { input_dim, hidden_units: 0 }
    }

    pub fn mlp(input_dim: usize, hidden_units: usize) -> Self {
        Self { input_dim, hidden_units }
    }

    pub fn param_count(&self) -> usize {
        if self.hidden_units == 0 {
            self.input_dim + 1
        } else {
            self.hidden_units * (self.input_dim + 1) + self.hidden_units + 1
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    arch: ModelArch,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn new(arch: ModelArch, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::invalid(format!(
                "expected {} parameters for {:?}, got {}",
                arch.param_count(),
                arch,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter {i} is not finite")));
        }
        Ok(Self { arch, values })
    }

    pub fn zeros(arch: ModelArch) -> Self {
        Self { arch, values: vec![0.0; arch.param_count()] }
    }

    /// Weights uniform in `[-0.5, 0.5] / sqrt(fan_in)`, biases zero.
    pub fn init(arch: ModelArch, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut values = Vec::with_capacity(arch.param_count());
        let d = arch.input_dim;
        let h = arch.hidden_units;
        let mut uniform = |fan_in: usize, n: usize, out: &mut Vec<f64>| {
            let s = 1.0 / (fan_in as f64).sqrt();
            out.extend((0..n).map(|_| rng.random_range(-0.5..=0.5) * s));
        };
        if h == 0 {
            uniform(d, d, &mut values);
            values.push(0.0);
        } else {
            uniform(d, h * d, &mut values);
            values.extend(std::iter::repeat_n(0.0, h));
            uniform(h, h, &mut values);
            values.push(0.0);
        }
        Self { arch, values }
    }

    pub fn arch(&self) -> ModelArch {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    /// 0 or 1.
    pub label: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    samples: Vec<Sample>,
}

impl LabeledDataset {
    /// Builds a dataset, checking labels are binary and feature lengths agree.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let dim = first.features.len();
            for (i, s) in samples.iter().enumerate() {
                if s.features.len() != dim {
                    return Err(Error::invalid(format!(
                        "sample {i} has {} features, expected {dim}",
                        s.features.len()
                    )));
                }
                if s.label > 1 {
                    return Err(Error::invalid(format!("sample {i} has label {}", s.label)));
                }
            }
        }
        Ok(Self { samples })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Vec<f64>, u8)>) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(features, label)| Sample { features, label })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature dimension, or `None` for an empty dataset.
    pub fn dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.features.len())
    }

    pub fn label_counts(&self) -> [usize; 2] {
        let ones = self.samples.iter().filter(|s| s.label == 1).count();
        [self.samples.len() - ones, ones]
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset { samples: indices.iter().map(|&i| self.samples[i].clone()).collect() }
    }

    /// Concatenates datasets in order.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a LabeledDataset>) -> LabeledDataset {
        LabeledDataset {
            samples: parts.into_iter().flat_map(|d| d.samples.iter().cloned()).collect(),
        }
    }

    fn check_against(&self, arch: ModelArch) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        match self.dim() {
            Some(d) if d == arch.input_dim => Ok(()),
            Some(d) => Err(Error::invalid(format!(
                "dataset has {d} features but model expects {}",
                arch.input_dim
            ))),
            None => unreachable!(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl TrainConfig {
    /// Accepts `learning_rate` in `[0, 1]` and `local_epochs >= 0`; the zero
    /// cases are the no-op limits.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return Err(Error::invalid(format!(
                "learning_rate {} outside [0, 1]",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }
}

/// `w' - w`, tagged with the architecture it applies to.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaVector {
    arch: ModelArch,
    values: Vec<f64>,
}

impl DeltaVector {
    pub fn zeros(arch: ModelArch) -> Self {
        Self { arch, values: vec![0.0; arch.param_count()] }
    }

    pub fn new(arch: ModelArch, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::invalid("delta length does not match architecture"));
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> ModelArch {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(params: &ModelParams, x: &[f64], hidden: Option<&mut [f64]>) -> f64 {
    let d = params.arch.input_dim;
    let h = params.arch.hidden_units;
    let v = &params.values;
    if h == 0 {
        return dot(&v[..d], x) + v[d];
    }
    let (w1, rest) = v.split_at(h * d);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(h);
    let mut z = b2[0];
    match hidden {
        Some(buf) => {
            for j in 0..h {
                let a = (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh();
                buf[j] = a;
                z += w2[j] * a;
            }
        }
        None => {
            for j in 0..h {
                z += w2[j] * (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh();
            }
        }
    }
    z
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Model output probability for one feature vector.
pub fn predict(params: &ModelParams, features: &[f64]) -> Result<f64> {
    if features.len() != params.arch.input_dim {
        return Err(Error::invalid(format!(
            "feature vector has length {}, model expects {}",
            features.len(),
            params.arch.input_dim
        )));
    }
    Ok(sigmoid(logit(params, features, None)))
}

/// Binary cross-entropy of probability `p` against `label`, with `p` clamped.
pub fn cross_entropy(p: f64, label: u8) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Per-sample losses in dataset order.
pub fn sample_losses(params: &ModelParams, data: &LabeledDataset) -> Result<Vec<f64>> {
    data.check_against(params.arch)?;
    Ok(data
        .samples
        .iter()
        .map(|s| cross_entropy(sigmoid(logit(params, &s.features, None)), s.label))
        .collect())
}

/// Mean binary cross-entropy over the dataset.
pub fn dataset_loss(params: &ModelParams, data: &LabeledDataset) -> Result<f64> {
    let losses = sample_losses(params, data)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Fraction of samples whose thresholded prediction (`p >= 0.5`) matches the label.
pub fn accuracy(params: &ModelParams, data: &LabeledDataset) -> Result<f64> {
    data.check_against(params.arch)?;
    let correct = data
        .samples
        .iter()
        .filter(|s| (logit(params, &s.features, None) >= 0.0) == (s.label == 1))
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Adds the gradient of one sample's loss into `grad`.
fn accumulate_gradient(params: &ModelParams, s: &Sample, hidden: &mut [f64], grad: &mut [f64]) {
    let d = params.arch.input_dim;
    let h = params.arch.hidden_units;
    let z = logit(params, &s.features, Some(hidden));
    let dz = sigmoid(z) - f64::from(s.label);
    if h == 0 {
        for (g, x) in grad[..d].iter_mut().zip(&s.features) {
            *g += dz * x;
        }
        grad[d] += dz;
        return;
    }
    let w2 = &params.values[h * d + h..h * d + 2 * h];
    let (g_w1, rest) = grad.split_at_mut(h * d);
    let (g_b1, rest) = rest.split_at_mut(h);
    let (g_w2, g_b2) = rest.split_at_mut(h);
    g_b2[0] += dz;
    for j in 0..h {
        g_w2[j] += dz * hidden[j];
        let da = dz * w2[j] * (1.0 - hidden[j] * hidden[j]);
        g_b1[j] += da;
        for (g, x) in g_w1[j * d..(j + 1) * d].iter_mut().zip(&s.features) {
            *g += da * x;
        }
    }
}

fn mean_gradient<'a>(
    params: &ModelParams,
    batch: impl ExactSizeIterator<Item = &'a Sample>,
) -> Vec<f64> {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; params.values.len()];
    let mut hidden = vec![0.0; params.arch.hidden_units];
    for s in batch {
        accumulate_gradient(params, s, &mut hidden, &mut grad);
    }
    grad.iter_mut().for_each(|g| *g /= n);
    grad
}

/// Mean gradient of the cross-entropy loss over `batch` (backpropagation).
pub fn gradient(params: &ModelParams, batch: &LabeledDataset) -> Result<Vec<f64>> {
    batch.check_against(params.arch)?;
    Ok(mean_gradient(params, batch.samples.iter()))
}

/// Runs `cfg.local_epochs` epochs of mini-batch SGD starting from `params`.
///
/// Each epoch reshuffles the sample order with a generator seeded from
/// `cfg.rng_seed`; the last batch of an epoch may be short. Returns the new
/// parameters and the mean loss over `data` at the end of training.
pub fn local_train(
    params: &ModelParams,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, f64)> {
    cfg.validate()?;
    data.check_against(params.arch)?;
    let mut rng = rng::seeded(cfg.rng_seed);
    let mut current = params.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let grad = mean_gradient(&current, chunk.iter().map(|&i| &data.samples[i]));
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NumericFailure {
                    epoch,
                    detail: format!("gradient coordinate {i} is not finite"),
                });
            }
            for (w, g) in current.values.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
        }
        if !current.is_finite() {
            return Err(Error::NumericFailure {
                epoch,
                detail: "parameters diverged to non-finite values".into(),
            });
        }
    }
    let loss = dataset_loss(&current, data)?;
    Ok((current, loss))
}

/// `after - before`, coordinate-wise.
pub fn param_delta(before: &ModelParams, after: &ModelParams) -> Result<DeltaVector> {
    if before.arch != after.arch {
        return Err(Error::invalid("architecture mismatch in param_delta"));
    }
    Ok(DeltaVector {
        arch: before.arch,
        values: after.values.iter().zip(&before.values).map(|(a, b)| a - b).collect(),
    })
}

/// `w + delta`, coordinate-wise.
pub fn apply_delta(w: &ModelParams, delta: &DeltaVector) -> Result<ModelParams> {
    if w.arch != delta.arch {
        return Err(Error::invalid("architecture mismatch in apply_delta"));
    }
    Ok(ModelParams {
        arch: w.arch,
        values: w.values.iter().zip(&delta.values).map(|(a, d)| a + d).collect(),
    })
}
