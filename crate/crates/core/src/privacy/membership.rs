use crate::error::{Error, Result};
use crate::model::{sample_losses, LabeledDataset, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembershipReport {
    pub threshold: f64,
    pub true_positive_rate: f64,
    pub false_positive_rate: f64,
    /// `|TPR - FPR|`.
    pub advantage: f64,
}

impl MembershipReport {
    pub fn privacy_score(&self) -> f64 {
        1.0 - self.advantage
    }
}

/// Loss-threshold membership attack.
///
/// A sample is guessed to be a member when its loss is below the midpoint of
/// the mean member loss and the mean non-member loss.
pub fn membership_attack(
    model: &ModelParams,
    members: &LabeledDataset,
    nonmembers: &LabeledDataset,
) -> Result<MembershipReport> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::invalid("membership attack needs nonempty member and non-member sets"));
    }
    let member_losses = sample_losses(model, members)?;
    let other_losses = sample_losses(model, nonmembers)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let threshold = 0.5 * (mean(&member_losses) + mean(&other_losses));
    let rate = |v: &[f64]| v.iter().filter(|&&l| l < threshold).count() as f64 / v.len() as f64;
    let tpr = rate(&member_losses);
    let fpr = rate(&other_losses);
    Ok(MembershipReport {
        threshold,
        true_positive_rate: tpr,
        false_positive_rate: fpr,
        advantage: (tpr - fpr).abs(),
    })
}

pub fn membership_advantage(
    model: &ModelParams,
    members: &LabeledDataset,
    nonmembers: &LabeledDataset,
) -> Result<f64> {
    membership_attack(model, members, nonmembers).map(|r| r.advantage)
}
