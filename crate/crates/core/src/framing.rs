//! End-to-end payload framing under the sender/receiver key.
//!
//! Plaintext layout: `tag(1) | len(2, big-endian) | body | zero fill`,
//! encrypted with counter mode keyed by `kdf(s_sd, ENC)` and the IV the
//! packet carries on delivery. Chaff uses the same layout with an empty body,
//! so in-network it is indistinguishable from data.

use crate::crypto::{kdf, stream_apply, KdfLabel, SymKey, IV_LEN};
use crate::error::CodecError;

pub const FRAME_OVERHEAD: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    Data = 0x00,
    Chaff = 0x01,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Opened {
    pub kind: PayloadKind,
    pub body: Vec<u8>,
}

/// Largest body that fits in a sealed payload of `total_len` octets.
pub const fn capacity(total_len: usize) -> usize {
    total_len.saturating_sub(FRAME_OVERHEAD)
}

pub fn seal(
    s_sd: &SymKey,
    nonce: &[u8; IV_LEN],
    kind: PayloadKind,
    body: &[u8],
    total_len: usize,
) -> Result<Vec<u8>, CodecError> {
    let cap = capacity(total_len).min(u16::MAX as usize);
    if body.len() > cap {
        return Err(CodecError::BodyTooLong {
            len: body.len(),
            cap,
        });
    }
    let mut out = vec![0u8; total_len];
    out[0] = kind as u8;
    out[1..3].copy_from_slice(&(body.len() as u16).to_be_bytes());
    out[3..3 + body.len()].copy_from_slice(body);
    stream_apply(&kdf(s_sd.as_bytes(), KdfLabel::Enc), nonce, &mut out);
    Ok(out)
}

/// Decrypt and parse. `None` when the tag or length field is not valid,
/// which is what a wrong key produces with high probability.
pub fn open(s_sd: &SymKey, nonce: &[u8; IV_LEN], sealed: &[u8]) -> Option<Opened> {
    if sealed.len() < FRAME_OVERHEAD {
        return None;
    }
    let mut head = [0u8; FRAME_OVERHEAD];
    head.copy_from_slice(&sealed[..FRAME_OVERHEAD]);
    let key = kdf(s_sd.as_bytes(), KdfLabel::Enc);
    let kind = {
        let mut probe = sealed[..FRAME_OVERHEAD].to_vec();
        stream_apply(&key, nonce, &mut probe);
        head.copy_from_slice(&probe);
        match head[0] {
            0x00 => PayloadKind::Data,
            0x01 => PayloadKind::Chaff,
            _ => return None,
        }
    };
    let len = u16::from_be_bytes([head[1], head[2]]) as usize;
    if FRAME_OVERHEAD + len > sealed.len() {
        return None;
    }
    let mut plain = sealed[..FRAME_OVERHEAD + len].to_vec();
    stream_apply(&key, nonce, &mut plain);
    Some(Opened {
        kind,
        body: plain.split_off(FRAME_OVERHEAD),
    })
}
