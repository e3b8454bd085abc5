//! Frozen context-feature extractor.
//!
//! A random-Fourier map `z_j = sqrt(2/D) * cos(w_j . x + b_j)` with
//! `w_j ~ N(0, gamma I)` and `b_j ~ U[0, 2pi)`, fully determined by its seed.
//! Every node that builds an extractor from the same settings gets the same
//! function, so the front-end is shared without shipping any weights.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabeledDataset, Sample};
use crate::rng;

pub const DEFAULT_GAMMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ExtractorKind {
    RandomFourier { gamma: f64 },
    Identity,
}

/// Construction parameters; two equal specs always build identical extractors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub seed: u64,
    pub input_dim: usize,
    pub output_dim: usize,
    pub kind: ExtractorKind,
}

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    spec: ExtractorSpec,
    /// `output_dim × input_dim`, row-major.
    projections: Vec<f64>,
    phases: Vec<f64>,
}

impl FeatureExtractor {
    pub fn new(spec: ExtractorSpec) -> Result<Self> {
        if spec.input_dim == 0 || spec.output_dim == 0 {
            return Err(Error::invalid("extractor dimensions must be positive"));
        }
        match spec.kind {
            ExtractorKind::Identity => {
                if spec.output_dim != spec.input_dim {
                    return Err(Error::invalid("identity extractor requires output_dim = input_dim"));
                }
                Ok(Self { spec, projections: Vec::new(), phases: Vec::new() })
            }
            ExtractorKind::RandomFourier { gamma } => {
                if !(gamma.is_finite() && gamma > 0.0) {
                    return Err(Error::invalid(format!("bandwidth gamma must be positive, got {gamma}")));
                }
                let mut rng = rng::seeded(spec.seed);
                let normal = Normal::new(0.0, gamma.sqrt()).expect("positive std");
                let mut projections = Vec::with_capacity(spec.output_dim * spec.input_dim);
                let mut phases = Vec::with_capacity(spec.output_dim);
                for _ in 0..spec.output_dim {
                    projections.extend((0..spec.input_dim).map(|_| normal.sample(&mut rng)));
                    phases.push(rng.random_range(0.0..TAU));
                }
                Ok(Self { spec, projections, phases })
            }
        }
    }

    pub fn random_fourier(seed: u64, input_dim: usize, output_dim: usize, gamma: f64) -> Result<Self> {
        Self::new(ExtractorSpec {
            seed,
            input_dim,
            output_dim,
            kind: ExtractorKind::RandomFourier { gamma },
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(ExtractorSpec { seed: 0, input_dim: dim, output_dim: dim, kind: ExtractorKind::Identity })
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn extract(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_dim {
            return Err(Error::invalid(format!(
                "extractor expects {} inputs, got {}",
                self.spec.input_dim,
                x.len()
            )));
        }
        if self.spec.kind == ExtractorKind::Identity {
            return Ok(x.to_vec());
        }
        let amp = (2.0 / self.spec.output_dim as f64).sqrt();
        Ok(self
            .projections
            .chunks_exact(self.spec.input_dim)
            .zip(&self.phases)
            .map(|(w, b)| {
                let proj: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum();
                amp * (proj + b).cos()
            })
            .collect())
    }

    /// Replaces every feature vector by its extracted features; labels and
    /// order are untouched.
    pub fn augment_dataset(&self, data: &LabeledDataset) -> Result<LabeledDataset> {
        let samples = data
            .samples()
            .iter()
            .map(|s| Ok(Sample { features: self.extract(&s.features)?, label: s.label }))
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_passes_through() {
        let fx = FeatureExtractor::identity(3).unwrap();
        assert_eq!(fx.extract(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let data = LabeledDataset::from_pairs([(vec![1.0, 0.0, 2.0], 1), (vec![0.5, 0.5, 0.5], 0)]).unwrap();
        assert_eq!(fx.augment_dataset(&data).unwrap(), data);
    }

    #[test]
    fn identity_requires_matching_dims() {
        let spec = ExtractorSpec { seed: 0, input_dim: 2, output_dim: 3, kind: ExtractorKind::Identity };
        assert!(FeatureExtractor::new(spec).is_err());
    }

    #[test]
    fn fourier_outputs_are_bounded() {
        let fx = FeatureExtractor::random_fourier(3, 4, 16, 1.0).unwrap();
        let bound = (2.0f64 / 16.0).sqrt();
        let mut r = rng::seeded(1);
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| r.random_range(-10.0..10.0)).collect();
            for z in fx.extract(&x).unwrap() {
                assert!(z.abs() <= bound + 1e-15);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let fx = FeatureExtractor::random_fourier(3, 4, 16, 1.0).unwrap();
        assert!(matches!(fx.extract(&[1.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn seeds_determine_the_map() {
        let a = FeatureExtractor::random_fourier(77, 3, 8, 1.0).unwrap();
        let b = FeatureExtractor::random_fourier(77, 3, 8, 1.0).unwrap();
        let c = FeatureExtractor::random_fourier(78, 3, 8, 1.0).unwrap();
        let mut r = rng::seeded(5);
        let mut differs = false;
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| r.random_range(-3.0..3.0)).collect();
            let za = a.extract(&x).unwrap();
            let zb = b.extract(&x).unwrap();
            assert!(za.iter().zip(&zb).all(|(p, q)| p.to_bits() == q.to_bits()));
            differs |= za != c.extract(&x).unwrap();
        }
        assert!(differs);
    }

    #[test]
    fn augment_preserves_labels_and_count() {
        let fx = FeatureExtractor::random_fourier(1, 2, 5, 2.0).unwrap();
        let data = LabeledDataset::from_pairs([
            (vec![1.0, 0.0], 1),
            (vec![0.0, 1.0], 0),
            (vec![-1.0, 2.0], 1),
        ])
        .unwrap();
        let out = fx.augment_dataset(&data).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.dim(), Some(5));
        let labels: Vec<u8> = out.samples().iter().map(|s| s.label).collect();
        assert_eq!(labels, vec![1, 0, 1]);
    }
}
