//! Discrete-event simulation of flowlets over a line of nodes.
//!
//! ```text
//! sender --link 0--> node 0 --link 1--> ... node h-1 --link h--> receiver
//! ```
//!
//! Events are ordered by `(time, class, sequence)`; at equal times packet
//! arrivals come before link slots, node ticks and sender slots. Time is in
//! integer nanoseconds throughout.
//!
//! Randomness is split into independent streams: per-flowlet schedule
//! (split draws, pad counts), per-flowlet content (IVs, keys), per-link
//! delay and loss, and per-link chaff bodies. Which slots carry data never
//! changes any draw that affects timing.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitonion_core::codec::{Ctrl, RoutingSegment};
use splitonion_core::framing::PayloadKind;
use splitonion_core::linklayer::{LinkConfig, LinkReceiver, LinkSender};
use splitonion_core::replay::{RotatingBloom, Verdict};
use splitonion_core::shaping::{ChaffEntry, FlowletConfig, NodeFlowletState, SenderFlowlet, SlotKind, TickOutcome, NS_PER_SEC};
use splitonion_core::SymKey;

use crate::config::{EngineKind, SimConfig};
use crate::engine::{BuildKind, CryptoEngine, PacketEngine, SymbolicEngine};
use crate::error::SimError;
use crate::workload::{FlowClass, Workload};

const STREAM_SETUP: u64 = 1;
const STREAM_SCHED: u64 = 2 << 32;
const STREAM_CONTENT: u64 = 3 << 32;
const STREAM_LINK: u64 = 4 << 32;
const STREAM_LINK_PAD: u64 = 5 << 32;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

fn ms_to_ns(ms: f64) -> u64 {
    (ms * 1e6).round() as u64
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlowletOutcome {
    pub id: u32,
    pub flow: u32,
    pub class: Option<FlowClass>,
    /// No node ended the flowlet before the sender's last active slot
    /// could have reached it.
    pub success: bool,
    pub slots: u64,
    pub data_sent: u64,
    pub chaff_sent: u64,
    pub split_sent: u64,
    pub data_offered: u64,
    pub data_delivered: u64,
    pub chaff_delivered: u64,
    /// Sequence numbers of delivered data, in arrival order.
    pub delivered_seq: Vec<u64>,
    pub first_slot_ns: Option<u64>,
    pub last_active_ns: Option<u64>,
    pub terminated_ns: Vec<Option<u64>>,
    pub premature_hop: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeMetrics {
    pub mac_drops: u64,
    pub expired_drops: u64,
    pub replay_drops: u64,
    pub misrouted_drops: u64,
    pub unknown_drops: u64,
    pub tombstone_drops: u64,
    pub link_chaff_absorbed: u64,
    pub forwarded: u64,
    pub chaff_emitted: u64,
    pub splits: u64,
    pub failures: u64,
    pub terminations: u64,
    pub peak_flowlets: usize,
    /// Largest total of per-flowlet state held at once.
    pub peak_flowlet_bytes: usize,
    pub replay_bytes: usize,
}

impl NodeMetrics {
    pub fn peak_state_bytes(&self) -> usize {
        self.peak_flowlet_bytes + self.replay_bytes
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub flowlets: Vec<FlowletOutcome>,
    pub nodes: Vec<NodeMetrics>,
    pub packet_len: usize,
    pub events: u64,
}

impl RunMetrics {
    pub fn success_rate(&self) -> f64 {
        if self.flowlets.is_empty() {
            return 1.0;
        }
        self.flowlets.iter().filter(|f| f.success).count() as f64 / self.flowlets.len() as f64
    }

    /// Chaff slots per data packet sent.
    pub fn chaff_overhead(&self) -> f64 {
        let data: u64 = self.flowlets.iter().map(|f| f.data_sent).sum();
        let slots: u64 = self.flowlets.iter().map(|f| f.slots).sum();
        if data == 0 {
            return f64::INFINITY;
        }
        (slots - data) as f64 / data as f64
    }
}

/// What passive taps saw: `(departure time, frame length)` per link.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ObserverTrace {
    pub links: Vec<Vec<(u64, u32)>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimOutput {
    pub metrics: RunMetrics,
    pub trace: ObserverTrace,
    /// `(node, flowlet) -> departure times`, when recorded.
    pub departures: BTreeMap<(u32, u32), Vec<u64>>,
}

#[derive(Clone, Debug)]
enum WireBody<P> {
    Packet(P),
    Sealed(Vec<u8>),
    LinkChaff,
}

#[derive(Clone, Debug)]
struct Wire<P> {
    body: WireBody<P>,
    /// Set by the last node so the receiving host can find its flowlet.
    deliver: Option<[u8; 16]>,
    /// Link-level chaff: does not keep a padded link running.
    filler: bool,
}

#[derive(Clone, Debug)]
enum Ev<P> {
    Arrive { link: u32, wire: Wire<P> },
    LinkSlot(u32),
    Tick { node: u32, key: [u8; 16] },
    Slot(u32),
}

impl<P> Ev<P> {
    fn class(&self) -> u8 {
        match self {
            Ev::Arrive { .. } => 0,
            Ev::LinkSlot(_) => 1,
            Ev::Tick { .. } => 2,
            Ev::Slot(_) => 3,
        }
    }
}

struct Queued<P> {
    time: u64,
    class: u8,
    seq: u64,
    ev: Ev<P>,
}

impl<P> PartialEq for Queued<P> {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl<P> Eq for Queued<P> {}
impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<P> Ord for Queued<P> {
    fn cmp(&self, o: &Self) -> Ordering {
        // min-heap on (time, class, seq)
        (o.time, o.class, o.seq).cmp(&(self.time, self.class, self.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Endpoint {
    Node(u32),
    Receiver,
}

struct Padding<P> {
    period_ns: u64,
    cap: usize,
    backlog: VecDeque<Wire<P>>,
    crypt: Option<(LinkSender, LinkReceiver)>,
    rng: ChaCha8Rng,
}

struct Link<P> {
    to: Endpoint,
    latency_ns: u64,
    jitter_ns: u64,
    drop: f64,
    outages: Vec<(u64, u64, f64)>,
    attack: Option<(u64, u64)>,
    rng: ChaCha8Rng,
    carried: u64,
    padding: Option<Padding<P>>,
    tap: Option<Vec<(u64, u32)>>,
}

impl<P> Link<P> {
    fn drop_at(&self, now: u64) -> f64 {
        self.outages
            .iter()
            .rev()
            .find(|(a, b, _)| *a <= now && now < *b)
            .map_or(self.drop, |o| o.2)
    }
}

#[derive(Clone, Copy, Debug)]
struct Terms {
    flowlet: u32,
    hop: usize,
    period_ns: u64,
    cfg_h: u32,
    cap: usize,
    counting: splitonion_core::shaping::FailureCounting,
}

struct FlowEntry<P> {
    state: NodeFlowletState<P>,
    egress: u32,
    deliver: bool,
    terms: Terms,
    bytes: usize,
}

struct Node<P> {
    id: u32,
    sv: SymKey,
    replay: RotatingBloom,
    terms: HashMap<[u8; 16], Terms>,
    table: HashMap<[u8; 16], FlowEntry<P>>,
    tombstones: HashMap<[u8; 16], u64>,
    cur_bytes: usize,
    m: NodeMetrics,
}

struct Sender<H> {
    flow: SenderFlowlet<u64>,
    handle: H,
    data_ns: Vec<u64>,
    next_data: usize,
    early_shutdown: bool,
    sched: ChaCha8Rng,
    content: ChaCha8Rng,
}

pub struct Simulation<E: PacketEngine> {
    engine: E,
    cfg: SimConfig,
    packet_len: usize,
    hops: usize,
    heap: BinaryHeap<Queued<E::Packet>>,
    seq: u64,
    pending_other: u64,
    links: Vec<Link<E::Packet>>,
    nodes: Vec<Node<E::Packet>>,
    senders: Vec<Sender<E::Handle>>,
    receiver_keys: HashMap<[u8; 16], u32>,
    outcomes: Vec<FlowletOutcome>,
    departures: BTreeMap<(u32, u32), Vec<u64>>,
    hold_ns: u64,
    events: u64,
}

impl<E: PacketEngine> Simulation<E> {
    pub fn new(cfg: &SimConfig, mut engine: E, workload: &Workload) -> Result<Self, SimError> {
        cfg.validate()?;
        let net = &cfg.network;
        let hops = net.hops;
        if hops > engine.max_path_len() {
            return Err(SimError::Config(format!("path of {hops} nodes exceeds {}", engine.max_path_len())));
        }
        let seed = cfg.seed;
        let packet_len = engine.packet_len();
        let mut setup = stream(seed, STREAM_SETUP);
        let replay_cfg = cfg.replay.to_config();
        let mut nodes = Vec::with_capacity(hops);
        for id in 0..hops as u32 {
            let replay = RotatingBloom::new(replay_cfg)?;
            nodes.push(Node {
                id,
                sv: SymKey::random(&mut setup),
                m: NodeMetrics {
                    replay_bytes: replay.size_bytes(),
                    ..NodeMetrics::default()
                },
                replay,
                terms: HashMap::new(),
                table: HashMap::new(),
                tombstones: HashMap::new(),
                cur_bytes: 0,
            });
        }

        let latency_ns = ms_to_ns(net.latency_ms);
        let jitter_ns = ms_to_ns(net.jitter_ms);
        let mut links = Vec::with_capacity(hops + 1);
        for l in 0..=hops {
            let link_key = SymKey::random(&mut setup);
            let padding = net.link_padding.then(|| {
                let lc = LinkConfig {
                    link_key,
                    schedule: Vec::new(),
                    base_rate: net.link_rate_pps,
                    packet_len,
                    backlog_cap: 1,
                };
                let crypt = engine.has_wire_codec().then(|| {
                    (LinkSender::new(lc.clone()).expect("validated"), LinkReceiver::new(&link_key, packet_len))
                });
                Padding {
                    period_ns: lc.slot_period_ns(0),
                    cap: net.link_backlog,
                    backlog: VecDeque::new(),
                    crypt,
                    rng: stream(seed, STREAM_LINK_PAD | l as u64),
                }
            });
            links.push(Link {
                to: if l == hops { Endpoint::Receiver } else { Endpoint::Node(l as u32) },
                latency_ns,
                jitter_ns,
                drop: net.drop,
                outages: net
                    .outages
                    .iter()
                    .filter(|o| o.link == l)
                    .map(|o| {
                        let until = if o.until_ms.is_finite() { ms_to_ns(o.until_ms) } else { u64::MAX };
                        (ms_to_ns(o.from_ms), until, o.drop)
                    })
                    .collect(),
                attack: net
                    .replay_attacks
                    .iter()
                    .find(|a| a.link == l)
                    .map(|a| (a.every, ms_to_ns(a.delay_ms))),
                rng: stream(seed, STREAM_LINK | l as u64),
                carried: 0,
                padding,
                tap: net.taps.then(Vec::new),
            });
        }

        let path: Vec<u32> = (0..hops as u32).collect();
        let routes: Vec<RoutingSegment> = (0..hops as u32).map(|i| RoutingSegment::new(i, i + 1)).collect();
        let secrets: Vec<SymKey> = nodes.iter().map(|n| n.sv).collect();
        let mut senders = Vec::with_capacity(workload.flowlets.len());
        let mut outcomes = Vec::with_capacity(workload.flowlets.len());
        let mut receiver_keys = HashMap::new();
        for plan in &workload.flowlets {
            let fcfg: FlowletConfig = cfg.flowlet.to_config(hops, plan.pad_max);
            let mut content = stream(seed, STREAM_CONTENT | plan.id as u64);
            let handle = engine.provision(plan.id, &path, &secrets, &routes, cfg.expiration.delta_max_s, &mut content)?;
            let keys = engine.hop_keys(&handle);
            for (hop, key) in keys.iter().enumerate() {
                nodes[hop].terms.insert(
                    *key,
                    Terms {
                        flowlet: plan.id,
                        hop,
                        period_ns: fcfg.period_ns(),
                        cfg_h: fcfg.fail_threshold_h,
                        cap: fcfg.chaff_cap,
                        counting: fcfg.counting,
                    },
                );
            }
            receiver_keys.insert(*keys.last().expect("non-empty path"), plan.id);
            senders.push(Sender {
                flow: SenderFlowlet::new(fcfg, plan.start_ns)?,
                handle,
                data_ns: plan.data_ns.clone(),
                next_data: 0,
                early_shutdown: plan.early_shutdown,
                sched: stream(seed, STREAM_SCHED | plan.id as u64),
                content,
            });
            outcomes.push(FlowletOutcome {
                id: plan.id,
                flow: plan.flow,
                class: Some(plan.class),
                data_offered: plan.data_ns.len() as u64,
                terminated_ns: vec![None; hops],
                ..FlowletOutcome::default()
            });
        }

        let mut sim = Simulation {
            engine,
            cfg: cfg.clone(),
            packet_len,
            hops,
            heap: BinaryHeap::new(),
            seq: 0,
            pending_other: 0,
            links,
            nodes,
            senders,
            receiver_keys,
            outcomes,
            departures: BTreeMap::new(),
            hold_ns: jitter_ns,
            events: 0,
        };
        for (i, plan) in workload.flowlets.iter().enumerate() {
            sim.push(plan.start_ns, Ev::Slot(i as u32));
        }
        if net.link_padding {
            for l in 0..sim.links.len() {
                sim.push(0, Ev::LinkSlot(l as u32));
            }
        }
        Ok(sim)
    }

    fn counts(ev: &Ev<E::Packet>) -> bool {
        match ev {
            Ev::LinkSlot(_) => false,
            Ev::Arrive { wire, .. } => !wire.filler,
            _ => true,
        }
    }

    fn push(&mut self, time: u64, ev: Ev<E::Packet>) {
        if Self::counts(&ev) {
            self.pending_other += 1;
        }
        self.seq += 1;
        self.heap.push(Queued {
            time,
            class: ev.class(),
            seq: self.seq,
            ev,
        });
    }

    pub fn run(mut self) -> Result<SimOutput, SimError> {
        while let Some(q) = self.heap.pop() {
            self.events += 1;
            if Self::counts(&q.ev) {
                self.pending_other -= 1;
            }
            match q.ev {
                Ev::Slot(f) => self.sender_slot(f, q.time)?,
                Ev::Arrive { link, wire } => self.arrive(link, wire, q.time),
                Ev::Tick { node, key } => self.tick(node, key, q.time),
                Ev::LinkSlot(l) => self.link_slot(l, q.time),
            }
        }
        Ok(self.finish())
    }

    fn sender_slot(&mut self, f: u32, now: u64) -> Result<(), SimError> {
        let min_offset = self.cfg.expiration.min_offset_s;
        let s = &mut self.senders[f as usize];
        while s.next_data < s.data_ns.len() && s.data_ns[s.next_data] <= now {
            s.flow.push_data(s.next_data as u64);
            s.next_data += 1;
        }
        let active = s.flow.phase() == splitonion_core::shaping::SenderPhase::Active;
        if active && s.early_shutdown && s.next_data == s.data_ns.len() && s.flow.queued_data() == 0 {
            s.flow.shutdown(&mut s.sched);
        }
        let Ok(slot) = s.flow.emit(&mut s.sched) else {
            return Ok(());
        };
        let was_active = s.flow.phase() == splitonion_core::shaping::SenderPhase::Active
            || slot.index < s.flow.config().active_slots();
        let exp_min = (now.div_ceil(NS_PER_SEC) as u32).saturating_add(min_offset);
        let out = &mut self.outcomes[f as usize];
        out.slots += 1;
        out.first_slot_ns.get_or_insert(now);
        if was_active {
            out.last_active_ns = Some(now);
        }
        let kind = match slot.kind {
            SlotKind::Data(seq) => {
                out.data_sent += 1;
                let mut body = seq.to_be_bytes().to_vec();
                body.extend_from_slice(&f.to_be_bytes());
                BuildKind::Data(body)
            }
            SlotKind::Chaff => {
                out.chaff_sent += 1;
                BuildKind::Chaff
            }
            SlotKind::SplitChaff { hop } => {
                out.split_sent += 1;
                BuildKind::Split { at: hop }
            }
        };
        let pkt = self.engine.build(&s.handle, kind, exp_min, &mut s.content)?;
        if let Some(next) = s.flow.next_slot_time() {
            self.push(next, Ev::Slot(f));
        }
        self.transmit(
            0,
            Wire {
                body: WireBody::Packet(pkt),
                deliver: None,
                filler: false,
            },
            now,
        );
        Ok(())
    }

    /// Hand a packet to a link: straight onto the wire, or into the
    /// padding backlog.
    fn transmit(&mut self, l: u32, wire: Wire<E::Packet>, now: u64) {
        let link = &mut self.links[l as usize];
        if let Some(pad) = &mut link.padding {
            if pad.backlog.len() < pad.cap {
                pad.backlog.push_back(wire);
            }
            return;
        }
        let len = self.packet_len as u32;
        self.put_on_wire(l, wire, len, now);
    }

    fn put_on_wire(&mut self, l: u32, wire: Wire<E::Packet>, len: u32, now: u64) {
        let link = &mut self.links[l as usize];
        if let Some(tap) = &mut link.tap {
            tap.push((now, len));
        }
        // always draw both so loss never shifts later delays
        let jitter = if link.jitter_ns > 0 { link.rng.random_range(0..=link.jitter_ns) } else { 0 };
        let lost = link.rng.random_bool(link.drop_at(now));
        link.carried += 1;
        let arrive_at = now + link.latency_ns + jitter;
        let replay = link.attack.and_then(|(every, delay)| (link.carried % every == 0).then_some(arrive_at + delay));
        if let Some(at) = replay {
            self.push(at, Ev::Arrive { link: l, wire: wire.clone() });
        }
        if !lost {
            self.push(arrive_at, Ev::Arrive { link: l, wire });
        }
    }

    fn link_slot(&mut self, l: u32, now: u64) {
        let idle = self.pending_other == 0 && self.links.iter().all(|k| k.padding.as_ref().is_none_or(|p| p.backlog.is_empty()));
        let link = &mut self.links[l as usize];
        let pad = link.padding.as_mut().expect("slot only on padded links");
        let period = pad.period_ns;
        let queued = pad.backlog.pop_front();
        let frame_len = (self.packet_len + splitonion_core::linklayer::FRAME_OVERHEAD) as u32;
        let wire = match &mut pad.crypt {
            Some((tx, _)) => {
                if let Some(w) = &queued {
                    if let WireBody::Packet(p) = &w.body {
                        tx.offer(self.engine.to_bytes(p).expect("byte engine"));
                    }
                }
                Wire {
                    body: WireBody::Sealed(tx.send_slot(&mut pad.rng)),
                    filler: queued.is_none(),
                    deliver: queued.and_then(|w| w.deliver),
                }
            }
            None => queued.unwrap_or(Wire {
                body: WireBody::LinkChaff,
                deliver: None,
                filler: true,
            }),
        };
        self.put_on_wire(l, wire, frame_len, now);
        if !idle {
            self.push(now + period, Ev::LinkSlot(l));
        }
    }

    fn arrive(&mut self, l: u32, wire: Wire<E::Packet>, now: u64) {
        let to = self.links[l as usize].to;
        let pkt = match wire.body {
            WireBody::Packet(p) => Some(p),
            WireBody::LinkChaff => None,
            WireBody::Sealed(frame) => {
                let rx = &mut self.links[l as usize].padding.as_mut().expect("sealed implies padding").crypt.as_mut().expect("crypt").1;
                rx.receive(&frame).and_then(|b| self.engine.from_bytes(&b))
            }
        };
        let Some(pkt) = pkt else {
            if let Endpoint::Node(n) = to {
                self.nodes[n as usize].m.link_chaff_absorbed += 1;
            }
            return;
        };
        match to {
            Endpoint::Receiver => self.deliver(wire.deliver, pkt),
            Endpoint::Node(n) => self.node_receive(n, l, pkt, now),
        }
    }

    fn deliver(&mut self, key: Option<[u8; 16]>, pkt: E::Packet) {
        let Some(f) = key.and_then(|k| self.receiver_keys.get(&k).copied()) else {
            return;
        };
        let Some((kind, body)) = self.engine.open(&self.senders[f as usize].handle, &pkt) else {
            return;
        };
        let out = &mut self.outcomes[f as usize];
        match kind {
            PayloadKind::Data => {
                out.data_delivered += 1;
                if body.len() >= 8 {
                    out.delivered_seq.push(u64::from_be_bytes(body[..8].try_into().expect("8 octets")));
                }
            }
            PayloadKind::Chaff => out.chaff_delivered += 1,
        }
    }

    fn node_receive(&mut self, n: u32, l: u32, pkt: E::Packet, now: u64) {
        let ttl_ns = self.cfg.replay.to_config().ttl_ns;
        let node = &mut self.nodes[n as usize];
        let p = match self.engine.process(node.id, &node.sv, &pkt) {
            Ok(p) => p,
            Err(_) => {
                node.m.mac_drops += 1;
                return;
            }
        };
        let exp_ns = p.exp_s as u64 * NS_PER_SEC;
        if exp_ns < now || exp_ns > now + ttl_ns {
            node.m.expired_drops += 1;
            return;
        }
        if p.route.ingress != l {
            node.m.misrouted_drops += 1;
            return;
        }
        if node.replay.check_and_insert(&p.replay, now) == Verdict::Replay {
            node.m.replay_drops += 1;
            return;
        }
        if node.tombstones.contains_key(&p.flow_key) {
            node.m.tombstone_drops += 1;
            return;
        }
        let Some(&terms) = node.terms.get(&p.flow_key) else {
            node.m.unknown_drops += 1;
            return;
        };
        let egress = p.route.egress;
        if egress as usize >= self.links.len() || egress != l + 1 {
            node.m.misrouted_drops += 1;
            return;
        }
        let mut created = false;
        let entry = node.table.entry(p.flow_key).or_insert_with(|| {
            created = true;
            FlowEntry {
                state: NodeFlowletState::new(terms.cfg_h, terms.cap, terms.counting),
                egress,
                deliver: egress as usize == self.hops,
                terms,
                bytes: 0,
            }
        });
        match p.ctrl {
            Ctrl::Fwd => entry.state.enqueue_data(p.next),
            Ctrl::Split => {
                node.m.splits += 1;
                let kids = match self.engine.split(&p) {
                    Ok(k) => k,
                    Err(_) => {
                        node.m.mac_drops += 1;
                        return;
                    }
                };
                let mut cached = Vec::with_capacity(2);
                for kid in kids {
                    // the child's outer layer is addressed to this node
                    match self.engine.process(node.id, &node.sv, &kid) {
                        Ok(c) if c.ctrl == Ctrl::Fwd => cached.push(ChaffEntry {
                            packet: c.next,
                            deadline_ns: c.exp_s as u64 * NS_PER_SEC,
                        }),
                        _ => node.m.mac_drops += 1,
                    }
                }
                if let Ok(pair) = <[ChaffEntry<E::Packet>; 2]>::try_from(cached) {
                    entry.state.accept_split(pair);
                }
            }
        }
        let before = entry.bytes;
        entry.bytes = entry.state.state_bytes(self.packet_len);
        node.cur_bytes = node.cur_bytes + entry.bytes - before;
        node.m.peak_flowlet_bytes = node.m.peak_flowlet_bytes.max(node.cur_bytes);
        node.m.peak_flowlets = node.m.peak_flowlets.max(node.table.len());
        if created {
            let key = p.flow_key;
            self.push(now + self.hold_ns, Ev::Tick { node: n, key });
        }
    }

    fn tick(&mut self, n: u32, key: [u8; 16], now: u64) {
        let record = self.cfg.network.record_departures;
        let node = &mut self.nodes[n as usize];
        let Some(entry) = node.table.get_mut(&key) else {
            return;
        };
        let terms = entry.terms;
        let outcome = entry.state.tick(None, now);
        let egress = entry.egress;
        let deliver = entry.deliver.then_some(key);
        let before = entry.bytes;
        entry.bytes = entry.state.state_bytes(self.packet_len);
        node.cur_bytes = node.cur_bytes + entry.bytes - before;
        let send = match outcome {
            TickOutcome::Emit(p) => {
                node.m.forwarded += 1;
                Some(p)
            }
            TickOutcome::EmitFromChaff(p) => {
                node.m.chaff_emitted += 1;
                Some(p)
            }
            TickOutcome::CountFailure => {
                node.m.failures += 1;
                None
            }
            TickOutcome::Terminate => {
                node.m.failures += 1;
                node.m.terminations += 1;
                node.cur_bytes -= entry.bytes;
                node.table.remove(&key);
                node.tombstones.insert(key, now);
                self.outcomes[terms.flowlet as usize].terminated_ns[terms.hop] = Some(now);
                return;
            }
        };
        self.push(now + terms.period_ns, Ev::Tick { node: n, key });
        if let Some(p) = send {
            if record {
                self.departures.entry((n, terms.flowlet)).or_default().push(now);
            }
            self.transmit(
                egress,
                Wire {
                    body: WireBody::Packet(p),
                    deliver,
                    filler: false,
                },
                now,
            );
        }
    }

    /// Latest time node `hop` can still be handling the sender's last slot.
    fn reach_bound(&self, hop: usize) -> u64 {
        (0..=hop)
            .map(|l| {
                let link = &self.links[l];
                let queue = link.padding.as_ref().map_or(0, |p| (p.cap as u64 + 1) * p.period_ns);
                link.latency_ns + 2 * link.jitter_ns + queue
            })
            .sum()
    }

    fn finish(mut self) -> SimOutput {
        let bounds: Vec<u64> = (0..self.hops).map(|h| self.reach_bound(h)).collect();
        for out in &mut self.outcomes {
            out.success = match out.last_active_ns {
                None => true,
                Some(last) => {
                    out.premature_hop = out
                        .terminated_ns
                        .iter()
                        .zip(&bounds)
                        .position(|(t, b)| t.is_none_or(|t| t < last + b));
                    out.premature_hop.is_none()
                }
            };
        }
        SimOutput {
            metrics: RunMetrics {
                flowlets: self.outcomes,
                nodes: self.nodes.into_iter().map(|n| n.m).collect(),
                packet_len: self.packet_len,
                events: self.events,
            },
            trace: ObserverTrace {
                links: self.links.into_iter().map(|l| l.tap.unwrap_or_default()).collect(),
            },
            departures: self.departures,
        }
    }
}

/// Run `workload` under `cfg` with the given engine.
pub fn run_simulation<E: PacketEngine>(cfg: &SimConfig, engine: E, workload: &Workload) -> Result<SimOutput, SimError> {
    Simulation::new(cfg, engine, workload)?.run()
}

/// Build the engine and workload named by `cfg` and run.
pub fn run_config(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    let workload = cfg.workload()?;
    run_workload(cfg, &workload)
}

pub fn run_workload(cfg: &SimConfig, workload: &Workload) -> Result<SimOutput, SimError> {
    let params = cfg.params()?;
    match cfg.engine {
        EngineKind::Crypto => run_simulation(cfg, CryptoEngine::new(params)?, workload),
        EngineKind::Symbolic => run_simulation(cfg, SymbolicEngine::new(params)?, workload),
    }
}
