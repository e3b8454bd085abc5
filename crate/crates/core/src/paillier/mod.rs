//! Paillier additively homomorphic encryption with `g = n + 1`.
//!
//! `Enc(m) = g^m r^n mod n^2 = (1 + m n) r^n mod n^2`, and
//! `Dec(c) = L(c^lambda mod n^2) mu mod n` with `L(u) = (u - 1) / n`.
//! Multiplying ciphertexts adds plaintexts; raising to `k` scales by `k`.

mod codec;
pub mod prime;
mod vector;

pub use codec::{FixedPointCodec, DEFAULT_SCALE_BITS};
pub use vector::{
    aggregate_encrypted, decrypt_params, decrypt_values, encrypt_params, encrypt_values, CipherVector,
    WIRE_MAGIC,
};

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub const ALLOWED_KEY_BITS: [u32; 4] = [256, 512, 1024, 2048];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPublicKey {
    n: BigUint,
    n_squared: BigUint,
    g: BigUint,
}

impl PaillierPublicKey {
    pub fn from_modulus(n: BigUint) -> Result<Self> {
        if n < BigUint::from(3u32) {
            return Err(Error::invalid("modulus too small"));
        }
        let n_squared = &n * &n;
        let g = &n + 1u32;
        Ok(Self { n, n_squared, g })
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn modulus_bits(&self) -> u32 {
        self.n.bits() as u32
    }

    fn check_ciphertext(&self, c: &BigUint) -> Result<()> {
        if c >= &self.n_squared {
            return Err(Error::range("ciphertext not below n^2"));
        }
        Ok(())
    }

    /// Fresh encryption randomness: uniform in `[1, n)` and coprime to `n`.
    pub fn sample_randomness<R: Rng + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = prime::random_below(rng, &self.n);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    pub fn encrypt<R: Rng + ?Sized>(&self, m: &BigUint, rng: &mut R) -> Result<BigUint> {
        let r = self.sample_randomness(rng);
        self.encrypt_with_randomness(m, &r)
    }

    /// Deterministic encryption with caller-chosen `r`.
    pub fn encrypt_with_randomness(&self, m: &BigUint, r: &BigUint) -> Result<BigUint> {
        if m >= &self.n {
            return Err(Error::range("plaintext not below n"));
        }
        if r.is_zero() || r >= &self.n {
            return Err(Error::range("randomness must lie in [1, n)"));
        }
        // g^m = 1 + m n (mod n^2) because g = n + 1
        let gm = (m * &self.n + 1u32) % &self.n_squared;
        let rn = r.modpow(&self.n, &self.n_squared);
        Ok((gm * rn) % &self.n_squared)
    }

    /// Homomorphic addition: `Dec(add(c1, c2)) = m1 + m2 mod n`.
    pub fn add_cipher(&self, c1: &BigUint, c2: &BigUint) -> Result<BigUint> {
        self.check_ciphertext(c1)?;
        self.check_ciphertext(c2)?;
        Ok((c1 * c2) % &self.n_squared)
    }

    /// Homomorphic scaling: `Dec(scalar_mul(c, k)) = k m mod n`.
    pub fn scalar_mul(&self, c: &BigUint, k: &BigUint) -> Result<BigUint> {
        self.check_ciphertext(c)?;
        Ok(c.modpow(k, &self.n_squared))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPrivateKey {
    lambda: BigUint,
    mu: BigUint,
}

impl PaillierPrivateKey {
    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }

    pub fn decrypt(&self, pk: &PaillierPublicKey, c: &BigUint) -> Result<BigUint> {
        pk.check_ciphertext(c)?;
        let u = c.modpow(&self.lambda, &pk.n_squared);
        Ok((l_function(&u, &pk.n) * &self.mu) % &pk.n)
    }
}

fn l_function(u: &BigUint, n: &BigUint) -> BigUint {
    (u - 1u32) / n
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Keypair {
    pub public: PaillierPublicKey,
    pub private: PaillierPrivateKey,
}

impl Keypair {
    /// Builds a keypair from two distinct primes.
    pub fn from_primes(p: &BigUint, q: &BigUint) -> Result<Self> {
        if p == q {
            return Err(Error::KeyGeneration("p and q must be distinct".into()));
        }
        let n = p * q;
        let p1 = p - 1u32;
        let q1 = q - 1u32;
        if !n.gcd(&(&p1 * &q1)).is_one() {
            return Err(Error::KeyGeneration("gcd(n, phi(n)) != 1".into()));
        }
        let public = PaillierPublicKey::from_modulus(n)?;
        let lambda = prime::lcm(&p1, &q1);
        let u = public.g.modpow(&lambda, &public.n_squared);
        let mu = l_function(&u, &public.n)
            .modinv(&public.n)
            .ok_or_else(|| Error::KeyGeneration("L(g^lambda) not invertible mod n".into()))?;
        Ok(Self { public, private: PaillierPrivateKey { lambda, mu } })
    }

    /// Restores a keypair from its components, checking consistency.
    pub fn from_parts(n: BigUint, lambda: BigUint, mu: BigUint) -> Result<Self> {
        let public = PaillierPublicKey::from_modulus(n)?;
        let private = PaillierPrivateKey { lambda, mu };
        let one = BigUint::one();
        let c = public.encrypt_with_randomness(&one, &one)?;
        if private.decrypt(&public, &c)? != one {
            return Err(Error::invalid("inconsistent Paillier key components"));
        }
        Ok(Self { public, private })
    }
}

/// Seeded keypair with a modulus of exactly `bits` bits.
pub fn keygen(bits: u32, seed: u64) -> Result<Keypair> {
    if !ALLOWED_KEY_BITS.contains(&bits) {
        return Err(Error::invalid(format!(
            "key size {bits} not in {ALLOWED_KEY_BITS:?}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let half = u64::from(bits / 2);
    let p = prime::generate_prime(half, &mut rng)?;
    let mut q = prime::generate_prime(half, &mut rng)?;
    let mut attempts = 0;
    while q == p {
        attempts += 1;
        if attempts > 16 {
            return Err(Error::KeyGeneration("could not draw distinct primes".into()));
        }
        q = prime::generate_prime(half, &mut rng)?;
    }
    let kp = Keypair::from_primes(&p, &q)?;
    debug_assert_eq!(kp.public.modulus_bits(), bits);
    Ok(kp)
}
