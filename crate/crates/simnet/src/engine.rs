//! Packet engines: how a simulation builds, processes and opens packets.
//!
//! [`CryptoEngine`] runs the real onion codec. [`SymbolicEngine`] moves small
//! tokens that follow the same control flow (layers, splits, expirations,
//! replay identities) without any cryptography, for large parameter sweeps.

use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, RngCore};
use splitonion_core::codec::{self, assign_expirations, delivered_iv, Ctrl, OnionPacket, PacketParams, PathMaterial, RoutingSegment};
use splitonion_core::crypto::IV_LEN;
use splitonion_core::framing::{self, PayloadKind};
use splitonion_core::replay::ReplayKey;
use splitonion_core::{CodecError, Drop, SymKey};

/// What the sender puts into a packet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BuildKind {
    Data(Vec<u8>),
    Chaff,
    /// Splittable chaff expanded at path node `at`.
    Split { at: usize },
}

/// One node's view of a packet after stripping its layer.
#[derive(Clone, Debug)]
pub struct Processed<P> {
    pub ctrl: Ctrl,
    pub exp_s: u32,
    pub route: RoutingSegment,
    /// Per-hop session key; identifies the flowlet at this node.
    pub flow_key: [u8; 16],
    pub replay: ReplayKey,
    /// Packet to forward (for SPLIT: the parent with its payload decrypted).
    pub next: P,
    split_ctx: Option<(SymKey, [u8; IV_LEN])>,
}

pub trait PacketEngine {
    type Packet: Clone + Debug;
    /// Sender-side state for one flowlet.
    type Handle: Clone + Debug;

    /// Octets of a packet on the wire.
    fn packet_len(&self) -> usize;

    fn max_path_len(&self) -> usize;

    /// Stand-in for the setup phase.
    fn provision(
        &mut self,
        flowlet: u32,
        path: &[u32],
        node_secrets: &[SymKey],
        routes: &[RoutingSegment],
        delta_max: u32,
        rng: &mut dyn RngCore,
    ) -> Result<Self::Handle, CodecError>;

    /// Per-hop session keys, in path order.
    fn hop_keys(&self, h: &Self::Handle) -> Vec<[u8; 16]>;

    fn build(&mut self, h: &Self::Handle, kind: BuildKind, exp_min_s: u32, rng: &mut dyn RngCore) -> Result<Self::Packet, CodecError>;

    fn process(&self, node: u32, sv: &SymKey, pkt: &Self::Packet) -> Result<Processed<Self::Packet>, Drop>;

    /// Expand a SPLIT result into its two children (still addressed to the
    /// splitting node).
    fn split(&mut self, p: &Processed<Self::Packet>) -> Result<[Self::Packet; 2], Drop>;

    /// Receiver side: recover kind and body.
    fn open(&self, h: &Self::Handle, pkt: &Self::Packet) -> Option<(PayloadKind, Vec<u8>)>;

    /// Whether `to_bytes` and `from_bytes` are implemented.
    fn has_wire_codec(&self) -> bool {
        false
    }

    /// Wire encoding for link encryption, when the engine has one.
    fn to_bytes(&self, _pkt: &Self::Packet) -> Option<Vec<u8>> {
        None
    }

    fn from_bytes(&self, _bytes: &[u8]) -> Option<Self::Packet> {
        None
    }
}

/// Full cryptographic packets.
#[derive(Clone, Debug)]
pub struct CryptoEngine {
    params: PacketParams,
}

impl CryptoEngine {
    pub fn new(params: PacketParams) -> Result<Self, CodecError> {
        params.validate()?;
        Ok(CryptoEngine { params })
    }
}

#[derive(Clone, Debug)]
pub struct CryptoHandle {
    pub path: PathMaterial,
}

fn random_iv(rng: &mut dyn RngCore) -> [u8; IV_LEN] {
    let mut iv = [0u8; IV_LEN];
    rng.fill_bytes(&mut iv);
    iv
}

impl PacketEngine for CryptoEngine {
    type Packet = OnionPacket;
    type Handle = CryptoHandle;

    fn packet_len(&self) -> usize {
        self.params.packet_len()
    }

    fn max_path_len(&self) -> usize {
        self.params.max_path_len()
    }

    fn provision(
        &mut self,
        _flowlet: u32,
        _path: &[u32],
        node_secrets: &[SymKey],
        routes: &[RoutingSegment],
        delta_max: u32,
        mut rng: &mut dyn RngCore,
    ) -> Result<CryptoHandle, CodecError> {
        Ok(CryptoHandle {
            path: PathMaterial::provision(node_secrets, routes, delta_max, &mut rng)?,
        })
    }

    fn hop_keys(&self, h: &CryptoHandle) -> Vec<[u8; 16]> {
        h.path.hops.iter().map(|hop| *hop.key.as_bytes()).collect()
    }

    fn build(&mut self, h: &CryptoHandle, kind: BuildKind, exp_min_s: u32, rng: &mut dyn RngCore) -> Result<OnionPacket, CodecError> {
        let p = &self.params;
        let hops = &h.path.hops;
        let exps = assign_expirations(hops, exp_min_s);
        let iv = random_iv(rng);
        match kind {
            BuildKind::Split { at } => {
                let civs = [random_iv(rng), random_iv(rng)];
                let t = p.child_payload_len();
                let tail = &hops[at..];
                let b0 = framing::seal(&h.path.s_sd, &delivered_iv(tail, civs[0]), PayloadKind::Chaff, &[], t)?;
                let b1 = framing::seal(&h.path.s_sd, &delivered_iv(tail, civs[1]), PayloadKind::Chaff, &[], t)?;
                codec::create_splittable(p, hops, &exps, iv, civs, [&b0, &b1], at)
            }
            BuildKind::Data(_) | BuildKind::Chaff => {
                let (k, body) = match kind {
                    BuildKind::Data(b) => (PayloadKind::Data, b),
                    _ => (PayloadKind::Chaff, Vec::new()),
                };
                let sealed = framing::seal(&h.path.s_sd, &delivered_iv(hops, iv), k, &body, p.m)?;
                codec::create_onion(p, hops, &vec![Ctrl::Fwd; hops.len()], &exps, iv, &sealed)
            }
        }
    }

    fn process(&self, _node: u32, sv: &SymKey, pkt: &OnionPacket) -> Result<Processed<OnionPacket>, Drop> {
        let out = codec::remove_layer(&self.params, pkt, sv)?;
        Ok(Processed {
            ctrl: out.ctrl,
            exp_s: out.exp,
            route: out.route,
            flow_key: *out.key.as_bytes(),
            replay: ReplayKey::derive(&out.key, &out.iv),
            split_ctx: Some((out.key, out.iv)),
            next: out.next_packet,
        })
    }

    fn split(&mut self, p: &Processed<OnionPacket>) -> Result<[OnionPacket; 2], Drop> {
        let (s, iv) = p.split_ctx.as_ref().ok_or(Drop::BadLength)?;
        let (a, b) = codec::split_onion(&self.params, &p.next.payload, s, iv).map_err(|_| Drop::BadLength)?;
        Ok([a, b])
    }

    fn open(&self, h: &CryptoHandle, pkt: &OnionPacket) -> Option<(PayloadKind, Vec<u8>)> {
        framing::open(&h.path.s_sd, &pkt.iv, &pkt.payload).map(|o| (o.kind, o.body))
    }

    fn has_wire_codec(&self) -> bool {
        true
    }

    fn to_bytes(&self, pkt: &OnionPacket) -> Option<Vec<u8>> {
        Some(pkt.to_bytes())
    }

    fn from_bytes(&self, bytes: &[u8]) -> Option<OnionPacket> {
        OnionPacket::from_bytes(&self.params, bytes).ok()
    }
}

/// Path facts shared by all tokens of a flowlet.
#[derive(Debug)]
pub struct SymPath {
    pub flowlet: u32,
    pub nodes: Vec<u32>,
    pub routes: Vec<RoutingSegment>,
    pub deltas: Vec<u32>,
    pub keys: Vec<[u8; 16]>,
}

/// A packet stand-in: which layer is next, and what it carries.
#[derive(Clone, Debug)]
pub struct Token {
    pub path: Arc<SymPath>,
    /// Index of the next layer to strip; equals the path length on delivery.
    pub layer: usize,
    pub split_at: Option<usize>,
    pub kind: PayloadKind,
    pub body: Arc<[u8]>,
    /// Identity of this packet instance, for replay detection.
    pub uid: u64,
    pub exp_min_s: u32,
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Tokens with the codec's control flow and no cryptography.
#[derive(Clone, Debug)]
pub struct SymbolicEngine {
    params: PacketParams,
    next_uid: u64,
}

impl SymbolicEngine {
    pub fn new(params: PacketParams) -> Result<Self, CodecError> {
        params.validate()?;
        Ok(SymbolicEngine { params, next_uid: 0 })
    }

    fn uid(&mut self) -> u64 {
        self.next_uid += 1;
        self.next_uid
    }
}

impl PacketEngine for SymbolicEngine {
    type Packet = Token;
    type Handle = Arc<SymPath>;

    fn packet_len(&self) -> usize {
        self.params.packet_len()
    }

    fn max_path_len(&self) -> usize {
        self.params.max_path_len()
    }

    fn provision(
        &mut self,
        flowlet: u32,
        path: &[u32],
        _node_secrets: &[SymKey],
        routes: &[RoutingSegment],
        delta_max: u32,
        rng: &mut dyn RngCore,
    ) -> Result<Arc<SymPath>, CodecError> {
        if path.is_empty() || path.len() > self.params.max_path_len() {
            return Err(CodecError::PathLength {
                len: path.len(),
                max: self.params.max_path_len(),
            });
        }
        let mut keys = Vec::with_capacity(path.len());
        for _ in path {
            let mut k = [0u8; 16];
            rng.fill_bytes(&mut k);
            keys.push(k);
        }
        let deltas = (0..path.len()).map(|_| rng.random_range(0..=delta_max)).collect();
        Ok(Arc::new(SymPath {
            flowlet,
            nodes: path.to_vec(),
            routes: routes.to_vec(),
            deltas,
            keys,
        }))
    }

    fn hop_keys(&self, h: &Arc<SymPath>) -> Vec<[u8; 16]> {
        h.keys.clone()
    }

    fn build(&mut self, h: &Arc<SymPath>, kind: BuildKind, exp_min_s: u32, _rng: &mut dyn RngCore) -> Result<Token, CodecError> {
        let (kind, body, split_at) = match kind {
            BuildKind::Data(b) => (PayloadKind::Data, b, None),
            BuildKind::Chaff => (PayloadKind::Chaff, Vec::new(), None),
            BuildKind::Split { at } => {
                if at >= h.nodes.len() {
                    return Err(CodecError::SplitIndex {
                        index: at,
                        hops: h.nodes.len(),
                    });
                }
                (PayloadKind::Chaff, Vec::new(), Some(at))
            }
        };
        Ok(Token {
            path: h.clone(),
            layer: 0,
            split_at,
            kind,
            body: body.into(),
            uid: self.uid(),
            exp_min_s,
        })
    }

    fn process(&self, node: u32, _sv: &SymKey, pkt: &Token) -> Result<Processed<Token>, Drop> {
        let path = &pkt.path;
        let i = pkt.layer;
        // a layer meant for another node fails its MAC
        if i >= path.nodes.len() || path.nodes[i] != node {
            return Err(Drop::BadMac);
        }
        // the filter expects MAC-like uniform keys
        let tag = (path.flowlet as u64) << 8 | i as u64;
        let mut rk = [0u8; 16];
        rk[..8].copy_from_slice(&mix64(pkt.uid ^ mix64(tag)).to_le_bytes());
        rk[8..].copy_from_slice(&mix64(tag ^ mix64(pkt.uid)).to_le_bytes());
        let mut next = pkt.clone();
        next.layer = i + 1;
        Ok(Processed {
            ctrl: if pkt.split_at == Some(i) { Ctrl::Split } else { Ctrl::Fwd },
            exp_s: pkt.exp_min_s.saturating_add(path.deltas[i]),
            route: path.routes[i],
            flow_key: path.keys[i],
            replay: ReplayKey(rk),
            split_ctx: None,
            next,
        })
    }

    fn split(&mut self, p: &Processed<Token>) -> Result<[Token; 2], Drop> {
        if p.ctrl != Ctrl::Split {
            return Err(Drop::BadControl(p.ctrl as u8));
        }
        let child = |uid| Token {
            layer: p.next.layer - 1,
            split_at: None,
            kind: PayloadKind::Chaff,
            body: Arc::from(&[][..]),
            uid,
            ..p.next.clone()
        };
        let (a, b) = (self.uid(), self.uid());
        Ok([child(a), child(b)])
    }

    fn open(&self, h: &Arc<SymPath>, pkt: &Token) -> Option<(PayloadKind, Vec<u8>)> {
        (pkt.layer == h.nodes.len() && Arc::ptr_eq(h, &pkt.path)).then(|| (pkt.kind, pkt.body.to_vec()))
    }
}
