//! Simulation configuration, read from TOML.

use serde::{Deserialize, Serialize};
use splitonion_core::codec::PacketParams;
use splitonion_core::replay::ReplayConfig;
use splitonion_core::shaping::{FailureCounting, FlowletConfig, NS_PER_SEC};

use crate::error::SimError;
use crate::workload::{self, FlowProfile, Workload};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    #[default]
    Crypto,
    Symbolic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacketSection {
    pub r: usize,
    pub m: usize,
}

impl Default for PacketSection {
    fn default() -> Self {
        let p = PacketParams::default();
        PacketSection { r: p.r, m: p.m }
    }
}

/// Drop probability override on one link during `[from_ms, until_ms)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outage {
    pub link: usize,
    pub drop: f64,
    #[serde(default)]
    pub from_ms: f64,
    #[serde(default = "forever")]
    pub until_ms: f64,
}

fn forever() -> f64 {
    f64::INFINITY
}

/// An on-path adversary that re-injects every `every`-th packet seen on a
/// link, `delay_ms` later.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayAttack {
    pub link: usize,
    pub every: u64,
    pub delay_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Nodes on the line path between the sender and receiver hosts.
    pub hops: usize,
    pub latency_ms: f64,
    /// Per-frame delay uniform in `[0, jitter_ms]`.
    pub jitter_ms: f64,
    /// Independent per-frame drop probability on every link.
    pub drop: f64,
    /// Send fixed-rate encrypted frames between neighbors.
    pub link_padding: bool,
    pub link_rate_pps: f64,
    pub link_backlog: usize,
    pub outages: Vec<Outage>,
    pub replay_attacks: Vec<ReplayAttack>,
    /// Record `(time, length)` of every frame on every link.
    pub taps: bool,
    /// Record departure times per node and flowlet.
    pub record_departures: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hops: 4,
            latency_ms: 10.0,
            jitter_ms: 1.0,
            drop: 0.0,
            link_padding: false,
            link_rate_pps: 1_000.0,
            link_backlog: 64,
            outages: Vec::new(),
            replay_attacks: Vec::new(),
            taps: false,
            record_departures: false,
        }
    }
}

impl NetworkSection {
    pub fn links(&self) -> usize {
        self.hops + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowletSection {
    pub rate_b: f64,
    pub lifetime_t: f64,
    pub fail_threshold_h: u32,
    pub chaff_cap: usize,
    /// Per-hop split probability, the same on every path node.
    pub split_prob: f64,
    pub pad_max: u32,
    pub counting: Counting,
    pub early_shutdown: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Counting {
    #[default]
    Consecutive,
    Cumulative,
}

impl From<Counting> for FailureCounting {
    fn from(c: Counting) -> Self {
        match c {
            Counting::Consecutive => FailureCounting::Consecutive,
            Counting::Cumulative => FailureCounting::Cumulative,
        }
    }
}

impl Default for FlowletSection {
    fn default() -> Self {
        FlowletSection {
            rate_b: 1.0,
            lifetime_t: 60.0,
            fail_threshold_h: 2,
            chaff_cap: 3,
            split_prob: 0.0,
            pad_max: 16,
            counting: Counting::Consecutive,
            early_shutdown: false,
        }
    }
}

impl FlowletSection {
    pub fn to_config(&self, hops: usize, pad_max: u32) -> FlowletConfig {
        FlowletConfig {
            rate_b: self.rate_b,
            lifetime_t: self.lifetime_t,
            fail_threshold_h: self.fail_threshold_h,
            chaff_cap: self.chaff_cap,
            split_prob: vec![self.split_prob; hops],
            pad_max,
            counting: self.counting.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    pub ttl_s: f64,
    pub target_fp: f64,
    pub capacity: u64,
}

impl Default for ReplaySection {
    fn default() -> Self {
        ReplaySection {
            ttl_s: 6.0,
            target_fp: 1e-6,
            capacity: 10_000,
        }
    }
}

impl ReplaySection {
    pub fn to_config(&self) -> ReplayConfig {
        ReplayConfig {
            ttl_ns: (self.ttl_s * NS_PER_SEC as f64) as u64,
            target_fp: self.target_fp,
            capacity: self.capacity,
            ..ReplayConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpirationSection {
    pub min_offset_s: u32,
    pub delta_max_s: u32,
}

impl Default for ExpirationSection {
    fn default() -> Self {
        ExpirationSection {
            min_offset_s: 1,
            delta_max_s: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    #[default]
    Constant,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    pub kind: WorkloadKind,
    /// Constant workload: number of flowlets.
    pub flowlets: u32,
    pub spacing_ms: f64,
    /// Constant workload: data in every n-th slot, 0 for chaff only.
    pub data_every: u64,
    /// Synthetic workload.
    pub profile: FlowProfile,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        WorkloadSection {
            kind: WorkloadKind::Constant,
            flowlets: 1,
            spacing_ms: 0.0,
            data_every: 1,
            profile: FlowProfile::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub engine: EngineKind,
    pub packet: PacketSection,
    pub network: NetworkSection,
    pub flowlet: FlowletSection,
    pub replay: ReplaySection,
    pub expiration: ExpirationSection,
    pub workload: WorkloadSection,
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), SimError> {
    if cond {
        Ok(())
    } else {
        Err(SimError::Config(msg()))
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn params(&self) -> Result<PacketParams, SimError> {
        Ok(PacketParams::new(self.packet.r, self.packet.m)?)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let params = self.params()?;
        let n = &self.network;
        check(n.hops >= 1 && n.hops <= params.max_path_len(), || {
            format!("hops {} outside 1..={}", n.hops, params.max_path_len())
        })?;
        check(n.latency_ms >= 0.0 && n.jitter_ms >= 0.0, || "latency and jitter must be non-negative".into())?;
        check((0.0..=1.0).contains(&n.drop), || format!("drop {} outside [0, 1]", n.drop))?;
        check(!n.link_padding || n.link_rate_pps > 0.0, || "link rate must be positive".into())?;
        for o in &n.outages {
            check(o.link < n.links() && (0.0..=1.0).contains(&o.drop), || format!("bad outage {o:?}"))?;
        }
        for a in &n.replay_attacks {
            check(a.link < n.links() && a.every >= 1 && a.delay_ms >= 0.0, || format!("bad replay attack {a:?}"))?;
        }
        self.flowlet.to_config(n.hops, self.flowlet.pad_max).validate()?;
        let period_ns = self.flowlet.to_config(n.hops, 0).period_ns();
        let jitter_ns = (n.jitter_ms * 1e6) as u64;
        // every arrival must land inside its own slot at the next node
        check(period_ns > 2 * jitter_ns, || {
            format!("slot width {period_ns} ns must exceed twice the jitter {jitter_ns} ns")
        })?;
        self.replay.to_config().validate()?;
        // a packet must not outlive the replay detector's memory of it
        let horizon_s = self.expiration.min_offset_s as f64 + self.expiration.delta_max_s as f64 + 1.0;
        check(self.replay.ttl_s >= horizon_s, || {
            format!("replay ttl {} s shorter than the expiration horizon {horizon_s} s", self.replay.ttl_s)
        })?;
        self.workload.profile.validate()?;
        Ok(())
    }

    pub fn workload(&self) -> Result<Workload, SimError> {
        let f = &self.flowlet;
        Ok(match self.workload.kind {
            WorkloadKind::Constant => Workload::constant(
                self.workload.flowlets,
                (self.workload.spacing_ms * 1e6) as u64,
                f.rate_b,
                f.lifetime_t,
                self.workload.data_every,
                if self.workload.flowlets > 1 { f.pad_max } else { 0 },
            ),
            WorkloadKind::Synthetic => {
                let flows = workload::synth_flows(&self.workload.profile, self.seed)?;
                workload::flowletize(flows, f.rate_b, f.lifetime_t, f.pad_max, f.early_shutdown)
            }
        })
    }
}
