//! Keyed primitives used by every other module.
//!
//! Everything here is a pure function of its inputs. AES-128 provides the
//! narrow permutation and the counter-mode keystream, CMAC-AES128 provides
//! the per-hop tag and SHA-256 derives independent sub-keys per operation.

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit, KeyIvInit, StreamCipher};
use aes::Aes128;
use cmac::{Cmac, Mac};
use sha2::{Digest, Sha256};
use std::fmt;

use crate::error::CryptoError;

pub const KEY_LEN: usize = 16;
pub const MAC_LEN: usize = 16;
pub const IV_LEN: usize = 16;
/// Width of the wide keyed permutation used for forwarding segments.
pub const WIDE_BLOCK_LEN: usize = 24;
/// Longest keystream a single `prg` call will produce.
pub const MAX_STREAM: usize = 1 << 16;

type Aes128Ctr = ctr::Ctr128BE<Aes128>;

/// A 128-bit symmetric key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymKey([u8; KEY_LEN]);

impl SymKey {
    pub const fn new(bytes: [u8; KEY_LEN]) -> Self {
        SymKey(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; KEY_LEN] = bytes
            .try_into()
            .map_err(|_| CryptoError::KeyLength(bytes.len()))?;
        Ok(SymKey(arr))
    }

    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        let mut k = [0u8; KEY_LEN];
        rng.fill_bytes(&mut k);
        SymKey(k)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for SymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymKey(")?;
        for b in &self.0[..4] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

/// Purpose label for key derivation. Distinct labels give independent keys
/// for the same material.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KdfLabel {
    Prg,
    Prp,
    Mac,
    /// Stream encryption. Decryption uses the same label.
    Enc,
}

impl KdfLabel {
    fn tag(self) -> &'static [u8] {
        match self {
            KdfLabel::Prg => b"kdf/prg",
            KdfLabel::Prp => b"kdf/prp",
            KdfLabel::Mac => b"kdf/mac",
            KdfLabel::Enc => b"kdf/enc",
        }
    }
}

/// Derive a key for `label` from arbitrary key material.
pub fn kdf(material: &[u8], label: KdfLabel) -> SymKey {
    let mut h = Sha256::new();
    let tag = label.tag();
    h.update([tag.len() as u8]);
    h.update(tag);
    h.update(material);
    let out = h.finalize();
    let mut k = [0u8; KEY_LEN];
    k.copy_from_slice(&out[..KEY_LEN]);
    SymKey(k)
}

/// Same as [`kdf`] over the concatenation of `parts`, without allocating.
pub fn kdf_parts(parts: &[&[u8]], label: KdfLabel) -> SymKey {
    let mut h = Sha256::new();
    let tag = label.tag();
    h.update([tag.len() as u8]);
    h.update(tag);
    for p in parts {
        h.update(p);
    }
    let out = h.finalize();
    let mut k = [0u8; KEY_LEN];
    k.copy_from_slice(&out[..KEY_LEN]);
    SymKey(k)
}

/// Keystream of `len` octets. `prg(k, a)` is a prefix of `prg(k, b)` for a <= b.
pub fn prg(key: &SymKey, len: usize) -> Result<Vec<u8>, CryptoError> {
    let mut out = vec![0u8; len];
    prg_into(key, &mut out)?;
    Ok(out)
}

/// Fill `out` with keystream under `key`.
pub fn prg_into(key: &SymKey, out: &mut [u8]) -> Result<(), CryptoError> {
    if out.len() > MAX_STREAM {
        return Err(CryptoError::StreamTooLong {
            requested: out.len(),
            max: MAX_STREAM,
        });
    }
    out.fill(0);
    let mut c = Aes128Ctr::new(key.0[..].into(), &[0u8; IV_LEN].into());
    c.apply_keystream(out);
    Ok(())
}

/// XOR keystream of `key` into `buf`.
pub(crate) fn prg_xor(key: &SymKey, buf: &mut [u8]) {
    let mut c = Aes128Ctr::new(key.0[..].into(), &[0u8; IV_LEN].into());
    c.apply_keystream(buf);
}

fn aes(key: &[u8; KEY_LEN]) -> Aes128 {
    Aes128::new(key.into())
}

// Sub-keys for the three passes of the wide permutation.
fn wide_subkeys(key: &SymKey) -> [Aes128; 3] {
    let mk = |i: u8| aes(kdf_parts(&[key.as_bytes(), &[i]], KdfLabel::Prp).as_bytes());
    [mk(1), mk(2), mk(3)]
}

fn enc_block(c: &Aes128, b: &mut [u8]) {
    c.encrypt_block(GenericArray::from_mut_slice(b));
}

fn dec_block(c: &Aes128, b: &mut [u8]) {
    c.decrypt_block(GenericArray::from_mut_slice(b));
}

/// Length-preserving keyed permutation over 16- or 24-octet blocks.
///
/// The 24-octet width is three overlapping AES passes over `[0,16)`,
/// `[8,24)`, `[0,16)` with independent sub-keys.
pub fn prp_encrypt(key: &SymKey, block: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let mut out = block.to_vec();
    match block.len() {
        IV_LEN => enc_block(&aes(&key.0), &mut out),
        WIDE_BLOCK_LEN => {
            let [a, b, c] = wide_subkeys(key);
            enc_block(&a, &mut out[0..16]);
            enc_block(&b, &mut out[8..24]);
            enc_block(&c, &mut out[0..16]);
        }
        n => return Err(CryptoError::BlockLength(n)),
    }
    Ok(out)
}

pub fn prp_decrypt(key: &SymKey, block: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let mut out = block.to_vec();
    match block.len() {
        IV_LEN => dec_block(&aes(&key.0), &mut out),
        WIDE_BLOCK_LEN => {
            let [a, b, c] = wide_subkeys(key);
            dec_block(&c, &mut out[0..16]);
            dec_block(&b, &mut out[8..24]);
            dec_block(&a, &mut out[0..16]);
        }
        n => return Err(CryptoError::BlockLength(n)),
    }
    Ok(out)
}

/// Fixed-width variant of [`prp_encrypt`] for IVs.
pub fn prp_encrypt_iv(key: &SymKey, iv: &[u8; IV_LEN]) -> [u8; IV_LEN] {
    let mut out = *iv;
    enc_block(&aes(&key.0), &mut out);
    out
}

/// CMAC-AES128 over the concatenation of `parts`.
pub fn mac_parts(key: &SymKey, parts: &[&[u8]]) -> [u8; MAC_LEN] {
    let mut m = <Cmac<Aes128> as KeyInit>::new(key.0[..].into());
    for p in parts {
        m.update(p);
    }
    m.finalize().into_bytes().into()
}

pub fn mac(key: &SymKey, msg: &[u8]) -> [u8; MAC_LEN] {
    mac_parts(key, &[msg])
}

/// Constant-time tag comparison.
pub fn mac_eq(a: &[u8; MAC_LEN], b: &[u8]) -> bool {
    if b.len() != MAC_LEN {
        return false;
    }
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn check_nonce(nonce: &[u8]) -> Result<&[u8; IV_LEN], CryptoError> {
    nonce
        .try_into()
        .map_err(|_| CryptoError::NonceLength(nonce.len()))
}

/// AES-128-CTR with a 16-octet nonce as the initial counter block.
pub fn stream_encrypt(key: &SymKey, nonce: &[u8], msg: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let mut out = msg.to_vec();
    stream_apply(key, check_nonce(nonce)?, &mut out);
    Ok(out)
}

pub fn stream_decrypt(key: &SymKey, nonce: &[u8], ct: &[u8]) -> Result<Vec<u8>, CryptoError> {
    stream_encrypt(key, nonce, ct)
}

/// In-place counter-mode keystream application.
pub fn stream_apply(key: &SymKey, nonce: &[u8; IV_LEN], buf: &mut [u8]) {
    let mut c = Aes128Ctr::new(key.0[..].into(), nonce.into());
    c.apply_keystream(buf);
}
