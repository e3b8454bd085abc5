//! Baseline privacy mechanisms: Gaussian-mechanism DP, additive secret
//! sharing, and a loss-threshold membership-inference attack used as the
//! empirical privacy metric.

mod dp;
mod membership;
mod smc;

pub use dp::{clip_update, dp_privatize, gaussian_sigma, DpConfig, DEFAULT_DELTA};
pub use membership::{membership_advantage, membership_attack, MembershipReport};
pub use smc::{
    decode_field, encode_field, reconstruct_sum, reconstruct_sum_encoded, share, ShareBundle,
    FIELD_PRIME, SMC_DEFAULT_SCALE,
};
