//! Fixed-size onion packets with in-network splitting.
//!
//! Wire layout with default parameters (`r = 8`, `m = 1024`):
//!
//! ```text
//! [0,16)      iv
//! [16,40)     forwarding segment
//! [40,56)     per-hop MAC
//! [56,371)    beta: (r-1) blocks of ctrl(1) | exp(4) | fs(24) | mac(16)
//! [371,1395)  payload
//! ```
//!
//! Every hop strips one 45-octet block from the front of beta and appends
//! 45 octets of keystream at the back, so the packet never changes size.
//! The sender precomputes that keystream tail (the filler) so each
//! downstream MAC covers exactly what the node will see.

use crate::crypto::{
    self, kdf, kdf_parts, mac_eq, mac_parts, prg_xor, stream_apply, KdfLabel, SymKey, IV_LEN,
    KEY_LEN, MAC_LEN, WIDE_BLOCK_LEN,
};
use crate::error::{CodecError, Drop};
use rand::Rng;

pub const FS_LEN: usize = WIDE_BLOCK_LEN;
pub const CTRL_LEN: usize = 1;
pub const EXP_LEN: usize = 4;
pub const ROUTE_LEN: usize = 8;

pub const LEFT: &[u8] = b"left";
pub const RIGHT: &[u8] = b"right";

/// Size constants and derived layout offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PacketParams {
    /// Maximum number of onion layers. Paths may use at most `r - 1`.
    pub r: usize,
    /// Payload length in octets.
    pub m: usize,
}

impl Default for PacketParams {
    fn default() -> Self {
        PacketParams { r: 8, m: 1024 }
    }
}

impl PacketParams {
    pub fn new(r: usize, m: usize) -> Result<Self, CodecError> {
        let p = PacketParams { r, m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.r < 2 {
            return Err(CodecError::Params("r must be at least 2"));
        }
        if self.m % 2 != 0 {
            return Err(CodecError::Params("payload length must be even"));
        }
        if self.m < 2 * self.header_len() {
            return Err(CodecError::Params(
                "payload must hold two truncated child packets (m >= 2 * header)",
            ));
        }
        if self.r * self.block_len() > crypto::MAX_STREAM {
            return Err(CodecError::Params("header keystream too long"));
        }
        Ok(())
    }

    /// ctrl + exp
    pub const fn b(&self) -> usize {
        CTRL_LEN + EXP_LEN
    }

    /// fs + mac
    pub const fn c(&self) -> usize {
        FS_LEN + MAC_LEN
    }

    /// One per-hop block inside beta.
    pub const fn block_len(&self) -> usize {
        self.b() + self.c()
    }

    pub const fn beta_len(&self) -> usize {
        (self.r - 1) * self.block_len()
    }

    pub const fn header_len(&self) -> usize {
        IV_LEN + FS_LEN + MAC_LEN + self.beta_len()
    }

    pub const fn packet_len(&self) -> usize {
        self.header_len() + self.m
    }

    pub const fn max_path_len(&self) -> usize {
        self.r - 1
    }

    /// Octets of sender payload each split child carries.
    pub const fn child_payload_len(&self) -> usize {
        self.m / 2 - self.header_len()
    }

    /// Padding the split node appends to each child.
    pub const fn split_pad_len(&self) -> usize {
        self.m / 2 + self.header_len()
    }

    pub const fn fs_offset(&self) -> usize {
        IV_LEN
    }

    pub const fn mac_offset(&self) -> usize {
        IV_LEN + FS_LEN
    }

    pub const fn beta_offset(&self) -> usize {
        IV_LEN + FS_LEN + MAC_LEN
    }

    pub const fn payload_offset(&self) -> usize {
        self.header_len()
    }
}

/// Per-hop control action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ctrl {
    Fwd = 0,
    Split = 1,
}

impl Ctrl {
    fn from_byte(b: u8) -> Result<Ctrl, Drop> {
        match b {
            0 => Ok(Ctrl::Fwd),
            1 => Ok(Ctrl::Split),
            other => Err(Drop::BadControl(other)),
        }
    }
}

/// Ingress and egress link identifiers for one hop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RoutingSegment {
    pub ingress: u32,
    pub egress: u32,
}

impl RoutingSegment {
    /// Egress value meaning "hand to the locally attached host".
    pub const DELIVER: u32 = 0xFFFF_FFFF;

    pub fn new(ingress: u32, egress: u32) -> Self {
        RoutingSegment { ingress, egress }
    }

    pub fn deliver(ingress: u32) -> Self {
        RoutingSegment {
            ingress,
            egress: Self::DELIVER,
        }
    }

    pub fn is_deliver(&self) -> bool {
        self.egress == Self::DELIVER
    }

    pub fn to_bytes(self) -> [u8; ROUTE_LEN] {
        let mut out = [0u8; ROUTE_LEN];
        out[..4].copy_from_slice(&self.ingress.to_be_bytes());
        out[4..].copy_from_slice(&self.egress.to_be_bytes());
        out
    }

    pub fn from_bytes(b: &[u8; ROUTE_LEN]) -> Self {
        RoutingSegment {
            ingress: u32::from_be_bytes([b[0], b[1], b[2], b[3]]),
            egress: u32::from_be_bytes([b[4], b[5], b[6], b[7]]),
        }
    }
}

/// `s || R` sealed under a node-local secret.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ForwardingSegment(pub [u8; FS_LEN]);

pub fn fs_create(sv: &SymKey, s: &SymKey, route: RoutingSegment) -> ForwardingSegment {
    let mut plain = [0u8; FS_LEN];
    plain[..KEY_LEN].copy_from_slice(s.as_bytes());
    plain[KEY_LEN..].copy_from_slice(&route.to_bytes());
    let ct = crypto::prp_encrypt(sv, &plain).expect("24-octet block");
    ForwardingSegment(ct.try_into().expect("length preserved"))
}

/// Any 24 octets open to some `(s, R)`; authenticity comes from the packet MAC.
pub fn fs_open(sv: &SymKey, fs: &ForwardingSegment) -> (SymKey, RoutingSegment) {
    let pt = crypto::prp_decrypt(sv, &fs.0).expect("24-octet block");
    let s = SymKey::from_slice(&pt[..KEY_LEN]).expect("16 octets");
    let route: [u8; ROUTE_LEN] = pt[KEY_LEN..].try_into().expect("8 octets");
    (s, RoutingSegment::from_bytes(&route))
}

/// One wire packet.
#[derive(Clone, PartialEq, Eq)]
pub struct OnionPacket {
    pub iv: [u8; IV_LEN],
    pub fs: ForwardingSegment,
    pub gamma: [u8; MAC_LEN],
    pub beta: Vec<u8>,
    pub payload: Vec<u8>,
}

impl std::fmt::Debug for OnionPacket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnionPacket")
            .field("iv", &hex4(&self.iv))
            .field("beta_len", &self.beta.len())
            .field("payload_len", &self.payload.len())
            .finish()
    }
}

fn hex4(b: &[u8]) -> String {
    b.iter().take(4).map(|x| format!("{x:02x}")).collect()
}

impl OnionPacket {
    pub fn serialized_len(&self) -> usize {
        IV_LEN + FS_LEN + MAC_LEN + self.beta.len() + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.iv);
        out.extend_from_slice(&self.fs.0);
        out.extend_from_slice(&self.gamma);
        out.extend_from_slice(&self.beta);
        out.extend_from_slice(&self.payload);
    }

    pub fn from_bytes(params: &PacketParams, bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() != params.packet_len() {
            return Err(CodecError::PacketSize {
                expected: params.packet_len(),
                got: bytes.len(),
            });
        }
        let (iv, rest) = bytes.split_at(IV_LEN);
        let (fs, rest) = rest.split_at(FS_LEN);
        let (gamma, rest) = rest.split_at(MAC_LEN);
        let (beta, payload) = rest.split_at(params.beta_len());
        Ok(OnionPacket {
            iv: iv.try_into().expect("split"),
            fs: ForwardingSegment(fs.try_into().expect("split")),
            gamma: gamma.try_into().expect("split"),
            beta: beta.to_vec(),
            payload: payload.to_vec(),
        })
    }
}

/// Sender-side secrets for one hop of a flowlet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopMaterial {
    pub key: SymKey,
    pub fs: ForwardingSegment,
    /// Expiration offset in seconds, fixed for the flowlet.
    pub delta: u32,
}

/// Sender-side secrets for a whole flowlet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathMaterial {
    pub hops: Vec<HopMaterial>,
    /// End-to-end key shared with the receiver.
    pub s_sd: SymKey,
}

impl PathMaterial {
    /// Stand-in for the setup phase: draw a session key per hop, seal it
    /// with the route into a forwarding segment under that node's secret,
    /// and draw the flowlet's expiration offsets.
    pub fn provision<R: Rng + ?Sized>(
        node_secrets: &[SymKey],
        routes: &[RoutingSegment],
        delta_max: u32,
        rng: &mut R,
    ) -> Result<Self, CodecError> {
        check_arity("routes", node_secrets.len(), routes.len())?;
        let deltas = draw_deltas(node_secrets.len(), delta_max, rng);
        let hops = node_secrets
            .iter()
            .zip(routes)
            .zip(deltas)
            .map(|((sv, &route), delta)| {
                let key = SymKey::random(rng);
                HopMaterial {
                    key,
                    fs: fs_create(sv, &key, route),
                    delta,
                }
            })
            .collect();
        Ok(PathMaterial {
            hops,
            s_sd: SymKey::random(rng),
        })
    }
}

/// Result of stripping one layer.
#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub ctrl: Ctrl,
    pub exp: u32,
    pub route: RoutingSegment,
    /// Session key recovered from the forwarding segment.
    pub key: SymKey,
    /// IV the packet arrived with (before advancing).
    pub iv: [u8; IV_LEN],
    pub next_packet: OnionPacket,
}

fn check_path(params: &PacketParams, n: usize) -> Result<(), CodecError> {
    if n == 0 || n > params.max_path_len() {
        return Err(CodecError::PathLength {
            len: n,
            max: params.max_path_len(),
        });
    }
    Ok(())
}

fn check_arity(what: &'static str, expected: usize, got: usize) -> Result<(), CodecError> {
    if expected != got {
        return Err(CodecError::Arity {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

fn prp_key(s: &SymKey) -> SymKey {
    kdf(s.as_bytes(), KdfLabel::Prp)
}

fn enc_key(s: &SymKey) -> SymKey {
    kdf(s.as_bytes(), KdfLabel::Enc)
}

fn header_prg_key(s: &SymKey, iv: &[u8; IV_LEN]) -> SymKey {
    kdf_parts(&[s.as_bytes(), iv], KdfLabel::Prg)
}

fn mac_key(s: &SymKey, iv: &[u8; IV_LEN]) -> SymKey {
    kdf_parts(&[s.as_bytes(), iv], KdfLabel::Mac)
}

/// Key for the split padding of one child, derivable by both the sender and
/// the split node.
pub fn split_pad_key(s: &SymKey, iv: &[u8; IV_LEN], label: &[u8]) -> SymKey {
    kdf_parts(&[s.as_bytes(), iv, label], KdfLabel::Prg)
}

pub fn split_padding(params: &PacketParams, s: &SymKey, iv: &[u8; IV_LEN], label: &[u8]) -> Vec<u8> {
    let mut pad = vec![0u8; params.split_pad_len()];
    prg_xor(&split_pad_key(s, iv, label), &mut pad);
    pad
}

/// IV seen by each hop, plus the IV the packet leaves the last hop with.
pub fn iv_chain(keys: impl IntoIterator<Item = SymKey>, iv: [u8; IV_LEN]) -> Vec<[u8; IV_LEN]> {
    let mut out = vec![iv];
    let mut cur = iv;
    for s in keys {
        cur = crypto::prp_encrypt_iv(&prp_key(&s), &cur);
        out.push(cur);
    }
    out
}

/// IV carried by the packet when it reaches the receiver.
pub fn delivered_iv(hops: &[HopMaterial], iv: [u8; IV_LEN]) -> [u8; IV_LEN] {
    *iv_chain(hops.iter().map(|h| h.key), iv)
        .last()
        .expect("chain is never empty")
}

fn header_keystream(params: &PacketParams, s: &SymKey, iv: &[u8; IV_LEN]) -> Vec<u8> {
    let mut ks = vec![0u8; params.r * params.block_len()];
    prg_xor(&header_prg_key(s, iv), &mut ks);
    ks
}

/// Build an onion packet for `hops`, each with its own control action and
/// absolute expiration time.
pub fn create_onion(
    params: &PacketParams,
    hops: &[HopMaterial],
    ctrls: &[Ctrl],
    exps: &[u32],
    iv: [u8; IV_LEN],
    payload: &[u8],
) -> Result<OnionPacket, CodecError> {
    let n = hops.len();
    check_path(params, n)?;
    check_arity("ctrls", n, ctrls.len())?;
    check_arity("exps", n, exps.len())?;
    if payload.len() != params.m {
        return Err(CodecError::PayloadSize {
            expected: params.m,
            got: payload.len(),
        });
    }
    let d = params.block_len();
    let b = params.b();
    let r = params.r;

    let ivs = iv_chain(hops.iter().map(|h| h.key), iv);
    let streams: Vec<Vec<u8>> = (0..n)
        .map(|i| header_keystream(params, &hops[i].key, &ivs[i]))
        .collect();

    // Filler: the tail each of the first n-1 hops will append, as seen by
    // the last hop.
    let mut filler: Vec<u8> = Vec::with_capacity((n - 1) * d);
    for (i, ks) in streams.iter().enumerate().take(n - 1) {
        filler.resize(filler.len() + d, 0);
        let window = &ks[(r - i - 1) * d..r * d];
        for (f, k) in filler.iter_mut().zip(window) {
            *f ^= k;
        }
    }

    // Innermost beta: ctrl/exp for the last hop, pseudo-random slack, filler.
    let last = n - 1;
    let mut beta = vec![0u8; params.beta_len()];
    let slack = params.beta_len() - filler.len();
    prg_xor(
        &kdf_parts(&[hops[last].key.as_bytes(), &ivs[last], b"slack"], KdfLabel::Prg),
        &mut beta[..slack],
    );
    beta[0] = ctrls[last] as u8 ^ streams[last][0];
    let exp = exps[last].to_be_bytes();
    for j in 0..EXP_LEN {
        beta[1 + j] = exp[j] ^ streams[last][1 + j];
    }
    debug_assert!(slack >= b);
    beta[slack..].copy_from_slice(&filler);

    let mut body = payload.to_vec();
    stream_apply(&enc_key(&hops[last].key), &ivs[last], &mut body);
    let mut gamma = mac_parts(
        &mac_key(&hops[last].key, &ivs[last]),
        &[&hops[last].fs.0, &beta, &body],
    );

    for i in (0..last).rev() {
        let mut next = Vec::with_capacity(params.beta_len());
        next.push(ctrls[i] as u8);
        next.extend_from_slice(&exps[i].to_be_bytes());
        next.extend_from_slice(&hops[i + 1].fs.0);
        next.extend_from_slice(&gamma);
        next.extend_from_slice(&beta[..(r - 2) * d]);
        for (x, k) in next.iter_mut().zip(&streams[i]) {
            *x ^= k;
        }
        beta = next;
        stream_apply(&enc_key(&hops[i].key), &ivs[i], &mut body);
        gamma = mac_parts(&mac_key(&hops[i].key, &ivs[i]), &[&hops[i].fs.0, &beta, &body]);
    }

    Ok(OnionPacket {
        iv,
        fs: hops[0].fs,
        gamma,
        beta,
        payload: body,
    })
}

/// Build a packet that node `split_at` expands into two full-size children.
///
/// Each child is an ordinary packet for `hops[split_at..]` whose first layer
/// targets the split node itself. Child `c` carries `child_payloads[c]`
/// (exactly `child_payload_len()` octets) to the receiver.
pub fn create_splittable(
    params: &PacketParams,
    hops: &[HopMaterial],
    exps: &[u32],
    iv: [u8; IV_LEN],
    child_ivs: [[u8; IV_LEN]; 2],
    child_payloads: [&[u8]; 2],
    split_at: usize,
) -> Result<OnionPacket, CodecError> {
    let n = hops.len();
    check_path(params, n)?;
    check_arity("exps", n, exps.len())?;
    if split_at >= n {
        return Err(CodecError::SplitIndex {
            index: split_at,
            hops: n,
        });
    }
    let t = params.child_payload_len();
    for p in child_payloads {
        if p.len() != t {
            return Err(CodecError::PayloadSize {
                expected: t,
                got: p.len(),
            });
        }
    }
    let half = params.m / 2;
    let parent_ivs = iv_chain(hops[..split_at].iter().map(|h| h.key), iv);
    let split_iv = parent_ivs[split_at];
    let split_key = hops[split_at].key;
    let child_hops = &hops[split_at..];
    let child_exps = &exps[split_at..];
    let fwd = vec![Ctrl::Fwd; child_hops.len()];

    let mut merged = Vec::with_capacity(params.m);
    for (c, label) in [LEFT, RIGHT].into_iter().enumerate() {
        let pad = split_padding(params, &split_key, &split_iv, label);
        // Choose the inner tail so that after onion encryption the child's
        // outer payload ends in exactly the padding the split node appends.
        let civs = iv_chain(child_hops.iter().map(|h| h.key), child_ivs[c]);
        let mut inner = vec![0u8; params.m];
        for (h, civ) in child_hops.iter().zip(&civs) {
            stream_apply(&enc_key(&h.key), civ, &mut inner);
        }
        inner[..t].copy_from_slice(child_payloads[c]);
        for (x, p) in inner[t..].iter_mut().zip(&pad) {
            *x ^= p;
        }
        let child = create_onion(params, child_hops, &fwd, child_exps, child_ivs[c], &inner)?;
        debug_assert_eq!(child.payload[t..], pad[..]);
        let bytes = child.to_bytes();
        merged.extend_from_slice(&bytes[..half]);
    }

    let mut ctrls = vec![Ctrl::Fwd; split_at + 1];
    ctrls[split_at] = Ctrl::Split;
    create_onion(
        params,
        &hops[..=split_at],
        &ctrls,
        &exps[..=split_at],
        iv,
        &merged,
    )
}

/// Verify and strip one layer. Control flow and output size do not depend
/// on the hop's position in the path.
pub fn remove_layer(
    params: &PacketParams,
    packet: &OnionPacket,
    sv: &SymKey,
) -> Result<LayerOutput, Drop> {
    if packet.beta.len() != params.beta_len() || packet.payload.len() != params.m {
        return Err(Drop::BadLength);
    }
    let (s, route) = fs_open(sv, &packet.fs);
    let expect = mac_parts(
        &mac_key(&s, &packet.iv),
        &[&packet.fs.0, &packet.beta, &packet.payload],
    );
    if !mac_eq(&expect, &packet.gamma) {
        return Err(Drop::BadMac);
    }
    let d = params.block_len();
    let mut zeta = Vec::with_capacity(params.r * d);
    zeta.extend_from_slice(&packet.beta);
    zeta.resize(params.r * d, 0);
    prg_xor(&header_prg_key(&s, &packet.iv), &mut zeta);

    let ctrl = Ctrl::from_byte(zeta[0])?;
    let exp = u32::from_be_bytes([zeta[1], zeta[2], zeta[3], zeta[4]]);
    let b = params.b();
    let fs = ForwardingSegment(zeta[b..b + FS_LEN].try_into().expect("slice"));
    let gamma: [u8; MAC_LEN] = zeta[b + FS_LEN..d].try_into().expect("slice");
    let beta = zeta[d..].to_vec();

    let mut payload = packet.payload.clone();
    stream_apply(&enc_key(&s), &packet.iv, &mut payload);
    let iv = crypto::prp_encrypt_iv(&prp_key(&s), &packet.iv);

    Ok(LayerOutput {
        ctrl,
        exp,
        route,
        key: s,
        iv: packet.iv,
        next_packet: OnionPacket {
            iv,
            fs,
            gamma,
            beta,
            payload,
        },
    })
}

/// Expand the decrypted payload of a SPLIT packet into two full packets.
///
/// `s` and `iv` are the session key and the IV the parent arrived with.
pub fn split_onion(
    params: &PacketParams,
    payload: &[u8],
    s: &SymKey,
    iv: &[u8; IV_LEN],
) -> Result<(OnionPacket, OnionPacket), CodecError> {
    if payload.len() != params.m {
        return Err(CodecError::PayloadSize {
            expected: params.m,
            got: payload.len(),
        });
    }
    let half = params.m / 2;
    let child = |part: &[u8], label: &[u8]| {
        let mut bytes = Vec::with_capacity(params.packet_len());
        bytes.extend_from_slice(part);
        bytes.extend_from_slice(&split_padding(params, s, iv, label));
        OnionPacket::from_bytes(params, &bytes)
    };
    Ok((
        child(&payload[..half], LEFT)?,
        child(&payload[half..], RIGHT)?,
    ))
}

/// Expiration defaults: `exp_min = now + 1 s`, offsets uniform in `[0, 5]` s.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpirationPolicy {
    pub min_offset_secs: u32,
    pub delta_max_secs: u32,
}

impl Default for ExpirationPolicy {
    fn default() -> Self {
        ExpirationPolicy {
            min_offset_secs: 1,
            delta_max_secs: 5,
        }
    }
}

/// Draw one offset per hop, uniform over `[0, delta_max]` seconds. Drawn once
/// per flowlet and stored in [`HopMaterial::delta`].
pub fn draw_deltas<R: Rng + ?Sized>(hops: usize, delta_max: u32, rng: &mut R) -> Vec<u32> {
    (0..hops).map(|_| rng.random_range(0..=delta_max)).collect()
}

/// Per-hop expiration times for one packet: `exp_min + delta_i`.
pub fn assign_expirations(hops: &[HopMaterial], exp_min: u32) -> Vec<u32> {
    hops.iter().map(|h| exp_min.saturating_add(h.delta)).collect()
}
