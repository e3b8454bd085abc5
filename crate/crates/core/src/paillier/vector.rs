//! Encrypted parameter vectors, weighted homomorphic aggregation and the
//! `FCS1` wire format.

use num_bigint::BigUint;
use num_traits::One;
use rand::Rng;
use rayon::prelude::*;

use super::{FixedPointCodec, PaillierPrivateKey, PaillierPublicKey};
use crate::error::{Error, Result};
use crate::model::{ModelArch, ModelParams};

pub const WIRE_MAGIC: &[u8; 4] = b"FCS1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherVector {
    modulus_bits: u32,
    elements: Vec<BigUint>,
}

impl CipherVector {
    pub fn new(modulus_bits: u32, elements: Vec<BigUint>) -> Self {
        Self { modulus_bits, elements }
    }

    pub fn modulus_bits(&self) -> u32 {
        self.modulus_bits
    }

    pub fn elements(&self) -> &[BigUint] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Serialized size in bytes.
    pub fn wire_len(&self) -> usize {
        12 + self
            .elements
            .iter()
            .map(|e| 4 + element_bytes(e).len())
            .sum::<usize>()
    }

    /// `"FCS1" | modulus bits (u32 BE) | count (u32 BE) | { len (u32 BE) | big-endian bytes }*`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(WIRE_MAGIC);
        out.extend_from_slice(&self.modulus_bits.to_be_bytes());
        out.extend_from_slice(&(self.elements.len() as u32).to_be_bytes());
        for e in &self.elements {
            let bytes = element_bytes(e);
            out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
            out.extend_from_slice(&bytes);
        }
        out
    }

    /// Parses the wire format. Only canonical encodings (no redundant leading
    /// zero bytes, no trailing data) are accepted, so parsing and
    /// re-serializing is byte-exact.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let magic = take(&mut cursor, 4)?;
        if magic != WIRE_MAGIC {
            return Err(Error::Wire("bad magic".into()));
        }
        let modulus_bits = read_u32(&mut cursor)?;
        let count = read_u32(&mut cursor)? as usize;
        // every element needs at least 5 bytes
        if count > cursor.len() / 5 {
            return Err(Error::Wire(format!("element count {count} exceeds payload")));
        }
        let max_bytes = (2 * modulus_bits as usize).div_ceil(8);
        let mut elements = Vec::with_capacity(count);
        for i in 0..count {
            let len = read_u32(&mut cursor)? as usize;
            if len == 0 || len > max_bytes.max(1) {
                return Err(Error::Wire(format!("element {i} has invalid length {len}")));
            }
            let raw = take(&mut cursor, len)?;
            if len > 1 && raw[0] == 0 {
                return Err(Error::Wire(format!("element {i} is not minimally encoded")));
            }
            elements.push(BigUint::from_bytes_be(raw));
        }
        if !cursor.is_empty() {
            return Err(Error::Wire(format!("{} trailing bytes", cursor.len())));
        }
        Ok(Self { modulus_bits, elements })
    }
}

fn element_bytes(e: &BigUint) -> Vec<u8> {
    // to_bytes_be yields [0] for zero, which is the canonical form.
    e.to_bytes_be()
}

fn take<'a>(cursor: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if cursor.len() < n {
        return Err(Error::Wire("unexpected end of input".into()));
    }
    let (head, tail) = cursor.split_at(n);
    *cursor = tail;
    Ok(head)
}

fn read_u32(cursor: &mut &[u8]) -> Result<u32> {
    let b = take(cursor, 4)?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn check_codec(pk: &PaillierPublicKey, codec: &FixedPointCodec) -> Result<()> {
    if codec.modulus() != pk.n() {
        return Err(Error::invalid("codec modulus differs from key modulus"));
    }
    Ok(())
}

/// Encodes and encrypts every coordinate. Randomness is drawn sequentially
/// from `rng`; the modular exponentiations then run in parallel.
pub fn encrypt_values<R: Rng + ?Sized>(
    pk: &PaillierPublicKey,
    codec: &FixedPointCodec,
    values: &[f64],
    rng: &mut R,
) -> Result<CipherVector> {
    check_codec(pk, codec)?;
    let plain = values
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            codec
                .encode_real(x)
                .map_err(|e| Error::range(format!("coordinate {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let randomness: Vec<BigUint> = plain.iter().map(|_| pk.sample_randomness(rng)).collect();
    let elements = plain
        .par_iter()
        .zip(randomness.par_iter())
        .map(|(m, r)| pk.encrypt_with_randomness(m, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(CipherVector { modulus_bits: pk.modulus_bits(), elements })
}

pub fn encrypt_params<R: Rng + ?Sized>(
    pk: &PaillierPublicKey,
    codec: &FixedPointCodec,
    w: &ModelParams,
    rng: &mut R,
) -> Result<CipherVector> {
    encrypt_values(pk, codec, w.values(), rng)
}

/// Homomorphic `sum_i N_i * w_i` over encrypted updates, plus `N = sum_i N_i`.
///
/// The caller must keep `N * max|w| * scale` below `n / 2`; beyond that the
/// decrypted sum wraps.
pub fn aggregate_encrypted(
    pk: &PaillierPublicKey,
    updates: &[(CipherVector, u64)],
) -> Result<(CipherVector, u64)> {
    let (first, _) = updates
        .first()
        .ok_or_else(|| Error::invalid("no encrypted updates to aggregate"))?;
    let len = first.len();
    for (i, (cv, n)) in updates.iter().enumerate() {
        if cv.len() != len {
            return Err(Error::invalid(format!("update {i} has length {}, expected {len}", cv.len())));
        }
        if cv.modulus_bits != pk.modulus_bits() {
            return Err(Error::invalid(format!("update {i} was encrypted under a different key size")));
        }
        if *n == 0 {
            return Err(Error::invalid(format!("update {i} has zero sample count")));
        }
    }
    let total = updates.iter().map(|(_, n)| n).sum();
    let weights: Vec<BigUint> = updates.iter().map(|(_, n)| BigUint::from(*n)).collect();
    let elements = (0..len)
        .into_par_iter()
        .map(|j| {
            let mut acc = BigUint::one();
            for ((cv, _), k) in updates.iter().zip(&weights) {
                let term = pk.scalar_mul(&cv.elements[j], k)?;
                acc = pk.add_cipher(&acc, &term)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((CipherVector { modulus_bits: pk.modulus_bits(), elements }, total))
}

/// Decrypts, decodes and divides every coordinate by `divisor`.
pub fn decrypt_values(
    sk: &PaillierPrivateKey,
    pk: &PaillierPublicKey,
    codec: &FixedPointCodec,
    cv: &CipherVector,
    divisor: u64,
) -> Result<Vec<f64>> {
    check_codec(pk, codec)?;
    if divisor == 0 {
        return Err(Error::invalid("divisor must be at least 1"));
    }
    cv.elements
        .par_iter()
        .map(|c| {
            let m = sk.decrypt(pk, c)?;
            codec.decode_divided(&m, divisor)
        })
        .collect()
}

pub fn decrypt_params(
    sk: &PaillierPrivateKey,
    pk: &PaillierPublicKey,
    codec: &FixedPointCodec,
    cv: &CipherVector,
    divisor: u64,
    arch: ModelArch,
) -> Result<ModelParams> {
    ModelParams::new(arch, decrypt_values(sk, pk, codec, cv, divisor)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paillier::keygen;
    use crate::rng;

    #[test]
    fn zero_vector_roundtrips_exactly() {
        let kp = keygen(256, 1).unwrap();
        let codec = FixedPointCodec::with_default_scale(kp.public.n().clone()).unwrap();
        let w = ModelParams::zeros(ModelArch::logistic(4));
        let cv = encrypt_params(&kp.public, &codec, &w, &mut rng::seeded(0)).unwrap();
        assert_eq!(cv.len(), 5);
        let back = decrypt_params(&kp.private, &kp.public, &codec, &cv, 1, w.arch()).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn single_update_identity_aggregation() {
        let kp = keygen(256, 2).unwrap();
        let codec = FixedPointCodec::with_default_scale(kp.public.n().clone()).unwrap();
        let w = [0.25, -3.5, 1e-3, 7.125];
        let cv = encrypt_values(&kp.public, &codec, &w, &mut rng::seeded(1)).unwrap();
        let (agg, n) = aggregate_encrypted(&kp.public, &[(cv, 1)]).unwrap();
        assert_eq!(n, 1);
        let back = decrypt_values(&kp.private, &kp.public, &codec, &agg, n).unwrap();
        for (a, b) in back.iter().zip(w) {
            assert!((a - b).abs() <= codec.tolerance());
        }
    }

    #[test]
    fn opposite_updates_cancel() {
        let kp = keygen(256, 3).unwrap();
        let codec = FixedPointCodec::with_default_scale(kp.public.n().clone()).unwrap();
        let w = [0.3, -1.7, 2.2];
        let neg: Vec<f64> = w.iter().map(|v| -v).collect();
        let mut r = rng::seeded(2);
        let a = encrypt_values(&kp.public, &codec, &w, &mut r).unwrap();
        let b = encrypt_values(&kp.public, &codec, &neg, &mut r).unwrap();
        let (agg, n) = aggregate_encrypted(&kp.public, &[(a, 10), (b, 10)]).unwrap();
        let back = decrypt_values(&kp.private, &kp.public, &codec, &agg, n).unwrap();
        assert!(back.iter().all(|v| v.abs() <= 2.0 * codec.tolerance()));
    }

    #[test]
    fn aggregate_rejects_bad_input() {
        let kp = keygen(256, 4).unwrap();
        assert!(aggregate_encrypted(&kp.public, &[]).is_err());
        let codec = FixedPointCodec::with_default_scale(kp.public.n().clone()).unwrap();
        let mut r = rng::seeded(3);
        let a = encrypt_values(&kp.public, &codec, &[1.0], &mut r).unwrap();
        let b = encrypt_values(&kp.public, &codec, &[1.0, 2.0], &mut r).unwrap();
        assert!(aggregate_encrypted(&kp.public, &[(a.clone(), 1), (b, 1)]).is_err());
        assert!(aggregate_encrypted(&kp.public, &[(a, 0)]).is_err());
    }

    #[test]
    fn encrypt_reports_offending_coordinate() {
        let kp = keygen(256, 5).unwrap();
        let codec = FixedPointCodec::with_default_scale(kp.public.n().clone()).unwrap();
        let err = encrypt_values(&kp.public, &codec, &[0.0, f64::INFINITY], &mut rng::seeded(0)).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }

    #[test]
    fn wire_layout() {
        let cv = CipherVector::new(256, vec![BigUint::from(0u32), BigUint::from(0x0102u32)]);
        assert_eq!(
            cv.to_bytes(),
            vec![
                b'F', b'C', b'S', b'1', 0, 0, 1, 0, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 0, 2, 1, 2
            ]
        );
        assert_eq!(cv.wire_len(), 23);
    }

    #[test]
    fn wire_rejects_malformed_input() {
        let good = CipherVector::new(256, vec![BigUint::from(5u32)]).to_bytes();
        assert!(CipherVector::from_bytes(&good).is_ok());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(CipherVector::from_bytes(&bad_magic).is_err());
        assert!(CipherVector::from_bytes(&good[..good.len() - 1]).is_err());
        let mut trailing = good.clone();
        trailing.push(0);
        assert!(CipherVector::from_bytes(&trailing).is_err());
        let padded = [&b"FCS1"[..], &[0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 2, 0, 5]].concat();
        assert!(CipherVector::from_bytes(&padded).is_err());
    }
}
