use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{FromPrimitive, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub const DEFAULT_SCALE_BITS: u32 = 40;

/// Signed fixed-point mapping between reals and residues mod `n`.
///
/// A real `x` becomes `round(x * scale) mod n`; residues above `n / 2`
/// decode as negative. Sums of encoded values decode correctly as long as the
/// true scaled sum stays below `n / 2` in magnitude.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointCodec {
    scale: u64,
    modulus: BigUint,
    half: BigUint,
}

impl FixedPointCodec {
    pub fn new(scale: u64, modulus: BigUint) -> Result<Self> {
        if scale == 0 {
            return Err(Error::invalid("codec scale must be positive"));
        }
        if modulus < BigUint::from(3u32) {
            return Err(Error::invalid("codec modulus too small"));
        }
        let half = &modulus >> 1u32;
        Ok(Self { scale, modulus, half })
    }

    /// Codec with scale `2^40`.
    pub fn with_default_scale(modulus: BigUint) -> Result<Self> {
        Self::new(1 << DEFAULT_SCALE_BITS, modulus)
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    /// Worst-case absolute rounding error of a single encode/decode.
    pub fn tolerance(&self) -> f64 {
        0.5 / self.scale as f64
    }

    pub fn encode_real(&self, x: f64) -> Result<BigUint> {
        if !x.is_finite() {
            return Err(Error::range(format!("cannot encode non-finite value {x}")));
        }
        let scaled = (x * self.scale as f64).round();
        let v = BigInt::from_f64(scaled).expect("finite");
        let (sign, mag) = v.into_parts();
        if mag > self.half {
            return Err(Error::range(format!("{x} exceeds the codec range of n/2")));
        }
        Ok(match sign {
            Sign::Minus => &self.modulus - mag,
            _ => mag,
        })
    }

    pub fn decode_real(&self, v: &BigUint) -> Result<f64> {
        self.decode_divided(v, 1)
    }

    /// Decodes `v` and divides by `divisor` in real arithmetic.
    pub fn decode_divided(&self, v: &BigUint, divisor: u64) -> Result<f64> {
        if v >= &self.modulus {
            return Err(Error::range("encoded value not below modulus"));
        }
        if divisor == 0 {
            return Err(Error::invalid("divisor must be positive"));
        }
        let denom = self.scale as f64 * divisor as f64;
        if v.is_zero() {
            return Ok(0.0);
        }
        Ok(if v > &self.half {
            -((&self.modulus - v).to_f64().expect("finite") / denom)
        } else {
            v.to_f64().expect("finite") / denom
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn codec() -> FixedPointCodec {
        FixedPointCodec::with_default_scale((BigUint::from(1u32) << 255u32) + 95u32).unwrap()
    }

    #[test]
    fn zero_roundtrip() {
        let c = codec();
        assert!(c.encode_real(0.0).unwrap().is_zero());
        assert_eq!(c.decode_real(&BigUint::zero()).unwrap(), 0.0);
    }

    #[test]
    fn dyadic_values_are_exact() {
        let c = codec();
        assert_eq!(c.decode_real(&c.encode_real(-1.5).unwrap()).unwrap(), -1.5);
        assert_eq!(c.decode_real(&c.encode_real(3.25).unwrap()).unwrap(), 3.25);
    }

    #[test]
    fn one_tenth_within_half_ulp_of_scale() {
        let c = codec();
        let back = c.decode_real(&c.encode_real(0.1).unwrap()).unwrap();
        assert!((back - 0.1).abs() <= 2f64.powi(-41));
    }

    #[test]
    fn overflow_is_a_range_error() {
        let small = FixedPointCodec::new(1 << 10, BigUint::from(1_000_003u32)).unwrap();
        assert!(small.encode_real(400.0).is_ok());
        assert!(matches!(small.encode_real(600.0), Err(Error::Range(_))));
        assert!(matches!(small.encode_real(f64::NAN), Err(Error::Range(_))));
        assert!(small.decode_real(&BigUint::from(1_000_003u32)).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_within_tolerance(x in -1048576.0f64..1048576.0) {
            let c = codec();
            let back = c.decode_real(&c.encode_real(x).unwrap()).unwrap();
            prop_assert!((back - x).abs() <= c.tolerance());
        }

        #[test]
        fn encoded_sums_decode_to_real_sums(a in -1000.0f64..1000.0, b in -1000.0f64..1000.0) {
            let c = codec();
            let s = (c.encode_real(a).unwrap() + c.encode_real(b).unwrap()) % c.modulus();
            let back = c.decode_real(&s).unwrap();
            prop_assert!((back - (a + b)).abs() <= 2.0 * c.tolerance() + 1e-12);
        }
    }
}
