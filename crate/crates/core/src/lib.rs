//! Traffic-analysis-resistant onion routing building blocks.
//!
//! * [`crypto`]: keyed primitives (PRG, PRP, MAC, stream cipher, KDF).
//! * [`codec`]: fixed-size onion packets that nodes can split in two.
//! * [`framing`]: end-to-end payload sealing with a DATA/CHAFF tag.
//! * [`replay`]: rotating blocked Bloom filter replay detector.
//! * [`shaping`]: constant-rate flowlets, chaff queues and failure counters.
//! * [`mixer`]: setup-message batching.
//! * [`linklayer`]: neighbor link encryption and padding.
//! * [`topo`]: anonymity-set sizes over AS topologies.

pub mod codec;
pub mod crypto;
pub mod error;
pub mod framing;
pub mod linklayer;
pub mod mixer;
pub mod replay;
pub mod shaping;
pub mod topo;

pub use codec::{
    create_onion, create_splittable, remove_layer, split_onion, Ctrl, ForwardingSegment,
    HopMaterial, LayerOutput, OnionPacket, PacketParams, PathMaterial, RoutingSegment,
};
pub use crypto::SymKey;
pub use error::{CodecError, CryptoError, Drop};
