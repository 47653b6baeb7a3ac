//! Pluggable primitive interfaces (hash, signatures, public-key encryption)
//! and deterministic toy instantiations for tests and simulation.
//!
//! The toy schemes are keyed-hash constructions over SHA-256. Their "public"
//! keys carry the secret key material, so they model the interfaces only and
//! provide no security against anyone who sees a verify or encryption key.
//! A deployment binds real EUF-CMA signatures and IND-CCA encryption behind
//! the same traits.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const HASH_LEN: usize = 32;

const TAG_SIGN: u8 = 0x20;
const TAG_FORGE: u8 = 0x21;
const TAG_ENC_STREAM: u8 = 0x30;
const TAG_ENC_MAC: u8 = 0x31;
const NONCE_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("decryption failed")]
    DecryptionFailure,
}

pub trait HashFn: Send + Sync {
    fn digest(&self, data: &[u8]) -> [u8; HASH_LEN];
}

#[derive(Clone, PartialEq, Eq)]
pub struct SignatureKeypair {
    pub signing_key: Vec<u8>,
    pub verify_key: Vec<u8>,
}

#[derive(Clone, PartialEq, Eq)]
pub struct EncryptionKeypair {
    pub decryption_key: Vec<u8>,
    pub encryption_key: Vec<u8>,
}

impl std::fmt::Debug for SignatureKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SignatureKeypair").finish_non_exhaustive()
    }
}

impl std::fmt::Debug for EncryptionKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EncryptionKeypair").finish_non_exhaustive()
    }
}

pub trait SignatureScheme: Send + Sync {
    fn generate(&self, rng: &mut dyn RngCore) -> SignatureKeypair;
    fn sign(&self, signing_key: &[u8], message: &[u8]) -> Vec<u8>;
    /// Total: returns `false` for any malformed key or signature.
    fn verify(&self, verify_key: &[u8], message: &[u8], signature: &[u8]) -> bool;
}

pub trait EncryptionScheme: Send + Sync {
    fn generate(&self, rng: &mut dyn RngCore) -> EncryptionKeypair;
    fn encrypt(&self, encryption_key: &[u8], plaintext: &[u8], rng: &mut dyn RngCore) -> Vec<u8>;
    fn decrypt(&self, decryption_key: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError>;
}

/// The primitive bundle a protocol participant is configured with.
#[derive(Clone)]
pub struct CryptoSuite {
    pub hash: Arc<dyn HashFn>,
    pub sig: Arc<dyn SignatureScheme>,
    pub enc: Arc<dyn EncryptionScheme>,
}

pub fn sign(suite: &CryptoSuite, signing_key: &[u8], message: &[u8]) -> Vec<u8> {
    suite.sig.sign(signing_key, message)
}

pub fn verify(suite: &CryptoSuite, verify_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
    suite.sig.verify(verify_key, message, signature)
}

pub fn pke_encrypt(suite: &CryptoSuite, key: &[u8], plaintext: &[u8], rng: &mut dyn RngCore) -> Vec<u8> {
    suite.enc.encrypt(key, plaintext, rng)
}

pub fn pke_decrypt(suite: &CryptoSuite, key: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    suite.enc.decrypt(key, ciphertext)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Sha256Hash;

impl HashFn for Sha256Hash {
    fn digest(&self, data: &[u8]) -> [u8; HASH_LEN] {
        Sha256::digest(data).into()
    }
}

fn hash_parts(parts: &[&[u8]]) -> [u8; HASH_LEN] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// Keyed-hash "signature": `H(tag || salt || key || m)`. Not publicly verifiable
/// in any meaningful sense; the verify key is the signing key.
#[derive(Debug, Clone)]
pub struct ToySignature {
    salt: [u8; 32],
}

impl ToySignature {
    /// Produces a signature claimed for `message` without the signing key.
    /// It never verifies except with negligible probability.
    pub fn forge(&self, message: &[u8], rng: &mut dyn RngCore) -> Vec<u8> {
        let mut guess = [0u8; 32];
        rng.fill_bytes(&mut guess);
        hash_parts(&[&[TAG_FORGE], &self.salt, &guess, message]).to_vec()
    }
}

impl SignatureScheme for ToySignature {
    fn generate(&self, rng: &mut dyn RngCore) -> SignatureKeypair {
        let mut sk = vec![0u8; 32];
        rng.fill_bytes(&mut sk);
        SignatureKeypair { verify_key: sk.clone(), signing_key: sk }
    }

    fn sign(&self, signing_key: &[u8], message: &[u8]) -> Vec<u8> {
        hash_parts(&[&[TAG_SIGN], &self.salt, signing_key, message]).to_vec()
    }

    fn verify(&self, verify_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
        if verify_key.len() != 32 || signature.len() != HASH_LEN {
            return false;
        }
        ct_eq(&self.sign(verify_key, message), signature)
    }
}

/// Authenticated toy encryption: `nonce || (m XOR stream) || tag`, with the
/// stream and tag both derived from SHA-256 under the shared key.
#[derive(Debug, Clone)]
pub struct ToyEncryption {
    salt: [u8; 32],
}

impl ToyEncryption {
    fn stream(&self, key: &[u8], nonce: &[u8], len: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(len + HASH_LEN);
        let mut block = 0u32;
        while out.len() < len {
            out.extend_from_slice(&hash_parts(&[&[TAG_ENC_STREAM], &self.salt, key, nonce, &block.to_be_bytes()]));
            block += 1;
        }
        out.truncate(len);
        out
    }

    fn tag(&self, key: &[u8], nonce: &[u8], body: &[u8]) -> [u8; HASH_LEN] {
        hash_parts(&[&[TAG_ENC_MAC], &self.salt, key, nonce, body])
    }
}

impl EncryptionScheme for ToyEncryption {
    fn generate(&self, rng: &mut dyn RngCore) -> EncryptionKeypair {
        let mut k = vec![0u8; 32];
        rng.fill_bytes(&mut k);
        EncryptionKeypair { encryption_key: k.clone(), decryption_key: k }
    }

    fn encrypt(&self, encryption_key: &[u8], plaintext: &[u8], rng: &mut dyn RngCore) -> Vec<u8> {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let body: Vec<u8> = plaintext
            .iter()
            .zip(self.stream(encryption_key, &nonce, plaintext.len()))
            .map(|(m, s)| m ^ s)
            .collect();
        let tag = self.tag(encryption_key, &nonce, &body);
        [&nonce[..], &body, &tag].concat()
    }

    fn decrypt(&self, decryption_key: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if ciphertext.len() < NONCE_LEN + HASH_LEN {
            return Err(CryptoError::DecryptionFailure);
        }
        let (nonce, rest) = ciphertext.split_at(NONCE_LEN);
        let (body, tag) = rest.split_at(rest.len() - HASH_LEN);
        if !ct_eq(&self.tag(decryption_key, nonce, body), tag) {
            return Err(CryptoError::DecryptionFailure);
        }
        Ok(body
            .iter()
            .zip(self.stream(decryption_key, nonce, body.len()))
            .map(|(c, s)| c ^ s)
            .collect())
    }
}

/// Concrete toy primitives, with access to the forgery hook.
#[derive(Debug, Clone)]
pub struct TestSuite {
    pub hash: Sha256Hash,
    pub sig: ToySignature,
    pub enc: ToyEncryption,
}

impl TestSuite {
    pub fn suite(&self) -> CryptoSuite {
        CryptoSuite {
            hash: Arc::new(self.hash),
            sig: Arc::new(self.sig.clone()),
            enc: Arc::new(self.enc.clone()),
        }
    }

    pub fn forge_signature(&self, message: &[u8], rng: &mut dyn RngCore) -> Vec<u8> {
        self.sig.forge(message, rng)
    }
}

/// Deterministic toy primitives; identical seeds give byte-identical behavior.
pub fn make_test_suite(seed: u64) -> TestSuite {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sig_salt = [0u8; 32];
    let mut enc_salt = [0u8; 32];
    rng.fill_bytes(&mut sig_salt);
    rng.fill_bytes(&mut enc_salt);
    TestSuite {
        hash: Sha256Hash,
        sig: ToySignature { salt: sig_salt },
        enc: ToyEncryption { salt: enc_salt },
    }
}
