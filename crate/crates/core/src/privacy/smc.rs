use rand::Rng;

use crate::error::{Error, Result};

/// Mersenne prime `2^61 - 1`.
pub const FIELD_PRIME: u64 = (1 << 61) - 1;

/// Fixed-point scale for SMC shares (`2^20`).
pub const SMC_DEFAULT_SCALE: u64 = 1 << 20;

const HALF: u64 = FIELD_PRIME / 2;

fn add_mod(a: u64, b: u64) -> u64 {
    let s = a + b; // both < 2^61, no overflow
    if s >= FIELD_PRIME {
        s - FIELD_PRIME
    } else {
        s
    }
}

fn sub_mod(a: u64, b: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + FIELD_PRIME - b
    }
}

/// Signed fixed-point encoding into the field. Magnitudes must stay below
/// `p / (2 * headroom)` so that `headroom` encoded values can be summed.
pub fn encode_field(x: f64, scale: u64, headroom: usize) -> Result<u64> {
    if !x.is_finite() {
        return Err(Error::range(format!("cannot encode non-finite value {x}")));
    }
    let scaled = (x * scale as f64).round();
    let limit = (HALF / headroom.max(1) as u64) as f64;
    if scaled.abs() >= limit {
        return Err(Error::range(format!(
            "{x} at scale {scale} leaves no headroom for {headroom} summands"
        )));
    }
    let mag = scaled.abs() as u64;
    Ok(if scaled < 0.0 { FIELD_PRIME - mag } else { mag })
}

pub fn decode_field(v: u64, scale: u64) -> f64 {
    debug_assert!(v < FIELD_PRIME);
    if v > HALF {
        -((FIELD_PRIME - v) as f64) / scale as f64
    } else {
        v as f64 / scale as f64
    }
}

/// One node's update split into additive shares, one list per recipient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShareBundle {
    scale: u64,
    shares: Vec<Vec<u64>>,
}

impl ShareBundle {
    pub fn field_prime(&self) -> u64 {
        FIELD_PRIME
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    /// `shares()[r]` is what recipient `r` receives.
    pub fn shares(&self) -> &[Vec<u64>] {
        &self.shares
    }

    pub fn recipients(&self) -> usize {
        self.shares.len()
    }

    /// Bytes on the wire for all shares of this bundle.
    pub fn wire_len(&self) -> usize {
        self.shares.iter().map(|s| s.len() * 8).sum()
    }
}

/// Splits `update` into `recipients` additive shares over GF(2^61 - 1).
///
/// The first `recipients - 1` shares are uniform; the last is chosen so all
/// shares sum to the encoded update. Encoding reserves headroom for summing
/// `recipients` such updates.
pub fn share<R: Rng + ?Sized>(update: &[f64], scale: u64, recipients: usize, rng: &mut R) -> Result<ShareBundle> {
    if recipients < 2 {
        return Err(Error::invalid("secret sharing needs at least 2 recipients"));
    }
    if scale == 0 {
        return Err(Error::invalid("scale must be positive"));
    }
    let encoded = update
        .iter()
        .enumerate()
        .map(|(i, &x)| encode_field(x, scale, recipients).map_err(|e| Error::range(format!("coordinate {i}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let mut shares: Vec<Vec<u64>> = (0..recipients - 1)
        .map(|_| (0..update.len()).map(|_| rng.random_range(0..FIELD_PRIME)).collect())
        .collect();
    let last = encoded
        .iter()
        .enumerate()
        .map(|(j, &e)| shares.iter().fold(e, |acc, s| sub_mod(acc, s[j])))
        .collect();
    shares.push(last);
    Ok(ShareBundle { scale, shares })
}

/// Exact field sum of every bundle's secret. Each recipient first adds the
/// shares it holds from all bundles; the per-recipient partial sums are then
/// combined.
pub fn reconstruct_sum_encoded(bundles: &[ShareBundle]) -> Result<Vec<u64>> {
    let first = bundles.first().ok_or_else(|| Error::invalid("no share bundles"))?;
    let k = first.recipients();
    let len = first.shares[0].len();
    for (i, b) in bundles.iter().enumerate() {
        if b.recipients() != k {
            return Err(Error::invalid(format!("bundle {i} has {} recipients, expected {k}", b.recipients())));
        }
        if b.shares.iter().any(|s| s.len() != len) {
            return Err(Error::invalid(format!("bundle {i} has mismatched share length")));
        }
        if b.scale != first.scale {
            return Err(Error::invalid(format!("bundle {i} uses a different scale")));
        }
    }
    let partials: Vec<Vec<u64>> = (0..k)
        .map(|r| {
            (0..len)
                .map(|j| bundles.iter().fold(0, |acc, b| add_mod(acc, b.shares[r][j])))
                .collect()
        })
        .collect();
    Ok((0..len)
        .map(|j| partials.iter().fold(0, |acc, p| add_mod(acc, p[j])))
        .collect())
}

/// Decoded real sum of every bundle's secret.
pub fn reconstruct_sum(bundles: &[ShareBundle]) -> Result<Vec<f64>> {
    let encoded = reconstruct_sum_encoded(bundles)?;
    let scale = bundles[0].scale;
    Ok(encoded.into_iter().map(|v| decode_field(v, scale)).collect())
}
