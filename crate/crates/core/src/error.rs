use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("key must be 16 octets, got {0}")]
    KeyLength(usize),
    #[error("keystream of {requested} octets exceeds maximum {max}")]
    StreamTooLong { requested: usize, max: usize },
    #[error("unsupported permutation width {0}")]
    BlockLength(usize),
    #[error("nonce must be 16 octets, got {0}")]
    NonceLength(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("invalid packet parameters: {0}")]
    Params(&'static str),
    #[error("path has {len} hops, allowed 1..={max}")]
    PathLength { len: usize, max: usize },
    #[error("payload must be {expected} octets, got {got}")]
    PayloadSize { expected: usize, got: usize },
    #[error("{what}: expected {expected} entries, got {got}")]
    Arity {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("split index {index} out of range for a {hops}-hop path")]
    SplitIndex { index: usize, hops: usize },
    #[error("packet must be {expected} octets, got {got}")]
    PacketSize { expected: usize, got: usize },
    #[error("framed body of {len} octets does not fit in {cap}")]
    BodyTooLong { len: usize, cap: usize },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Reasons a node discards a packet in `remove_layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Drop {
    #[error("per-hop MAC mismatch")]
    BadMac,
    #[error("unknown control value {0:#04x}")]
    BadControl(u8),
    #[error("packet has wrong length")]
    BadLength,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopoError {
    #[error("unknown AS {0}")]
    UnknownAs(u32),
    #[error("compromised position {pos} outside path of length {len}")]
    PositionOutOfPath { pos: usize, len: usize },
    #[error("expected exactly one compromised AS, got {0}")]
    NotSingle(usize),
    #[error("no compromised AS given")]
    Empty,
    #[error("ASes {0} and {1} are not adjacent")]
    NotAdjacent(u32, u32),
    #[error("path of {len} ASes exceeds the limit {max}")]
    PathTooLong { len: usize, max: usize },
    #[error("path visits AS {0} twice")]
    NotSimple(u32),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}
