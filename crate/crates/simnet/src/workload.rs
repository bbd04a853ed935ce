//! Synthetic flows and their conversion into flowlets.
//!
//! A flow of rate `R` and duration `D` becomes `ceil(D/T)` consecutive
//! batches of `ceil(R/B)` simultaneous flowlets. Its packets are dealt
//! round-robin over the flowlets of the batch they fall into.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use splitonion_core::shaping::NS_PER_SEC;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowProfile {
    pub flows: usize,
    /// Pareto shape of flow sizes in packets.
    pub size_shape: f64,
    /// Pareto scale (smallest size drawn).
    pub size_scale: f64,
    /// Sizes above this are clipped.
    pub size_cap: f64,
    /// Median flow rate, packets per second (log-normal).
    pub rate_median: f64,
    pub rate_sigma: f64,
    /// Flow start times are uniform over this window.
    pub start_window_s: f64,
    /// Flows smaller than this are filtered out.
    pub min_size: u64,
    /// Flows slower than this are filtered out.
    pub min_rate: f64,
}

impl Default for FlowProfile {
    fn default() -> Self {
        FlowProfile {
            flows: 50,
            size_shape: 1.2,
            size_scale: 10.0,
            size_cap: 2_000.0,
            rate_median: 1.0,
            rate_sigma: 1.0,
            start_window_s: 60.0,
            min_size: 10,
            min_rate: 0.0,
        }
    }
}

impl FlowProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.size_shape > 0.0
            && self.size_scale > 0.0
            && self.size_cap >= self.size_scale
            && self.rate_median > 0.0
            && self.rate_sigma >= 0.0
            && self.start_window_s >= 0.0
            && self.min_rate >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("malformed flow profile {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowClass {
    Small,
    Medium,
    Large,
}

impl FlowClass {
    pub fn of(size: u64) -> Self {
        match size {
            0..100 => FlowClass::Small,
            100..1000 => FlowClass::Medium,
            _ => FlowClass::Large,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FlowClass::Small => "small",
            FlowClass::Medium => "medium",
            FlowClass::Large => "large",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub id: u32,
    pub start_ns: u64,
    /// Packets.
    pub size: u64,
    /// Packets per second.
    pub rate: f64,
}

impl Flow {
    pub fn duration_ns(&self) -> u64 {
        (self.size as f64 / self.rate * NS_PER_SEC as f64).ceil() as u64
    }

    /// Arrival time of packet `i` at the sender.
    pub fn packet_time(&self, i: u64) -> u64 {
        self.start_ns + (i as f64 * NS_PER_SEC as f64 / self.rate) as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowletPlan {
    pub id: u32,
    pub flow: u32,
    pub batch: u32,
    pub lane: u32,
    /// Simultaneous flowlets in this batch.
    pub lanes: u32,
    pub start_ns: u64,
    /// Arrival times of the data packets handed to this flowlet.
    pub data_ns: Vec<u64>,
    pub pad_max: u32,
    /// Stop once the flow's data is sent instead of running the lifetime out.
    pub early_shutdown: bool,
    pub class: FlowClass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub flows: Vec<Flow>,
    pub flowlets: Vec<FlowletPlan>,
}

impl Workload {
    pub fn is_empty(&self) -> bool {
        self.flowlets.is_empty()
    }

    /// `count` flowlets starting `spacing_ns` apart, each carrying data in
    /// every `data_every`-th slot (0 for none).
    pub fn constant(count: u32, spacing_ns: u64, rate_b: f64, lifetime_t: f64, data_every: u64, pad_max: u32) -> Self {
        let period = (NS_PER_SEC as f64 / rate_b).round() as u64;
        let slots = (lifetime_t * rate_b + 1e-9).floor() as u64;
        let flowlets = (0..count)
            .map(|id| {
                let start_ns = id as u64 * spacing_ns;
                let data_ns = match data_every {
                    0 => Vec::new(),
                    k => (0..slots).filter(|s| s % k == 0).map(|s| start_ns + s * period).collect(),
                };
                FlowletPlan {
                    id,
                    flow: id,
                    batch: 0,
                    lane: 0,
                    lanes: 1,
                    start_ns,
                    class: FlowClass::of(data_ns.len() as u64),
                    data_ns,
                    pad_max,
                    early_shutdown: false,
                }
            })
            .collect();
        Workload {
            flows: Vec::new(),
            flowlets,
        }
    }
}

/// Draw flows from `profile`, dropping those below the size and rate
/// filters. Deterministic in `seed`.
pub fn synth_flows(profile: &FlowProfile, seed: u64) -> Result<Vec<Flow>, SimError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = Pareto::new(profile.size_scale, profile.size_shape).map_err(|e| SimError::Config(e.to_string()))?;
    let rates = LogNormal::new(profile.rate_median.ln(), profile.rate_sigma).map_err(|e| SimError::Config(e.to_string()))?;
    let mut flows = Vec::new();
    for _ in 0..profile.flows {
        let size = sizes.sample(&mut rng).min(profile.size_cap).round() as u64;
        let rate = rates.sample(&mut rng);
        let start = rng.random_range(0.0..=profile.start_window_s);
        if size < profile.min_size.max(1) || rate < profile.min_rate {
            continue;
        }
        flows.push(Flow {
            id: flows.len() as u32,
            start_ns: (start * NS_PER_SEC as f64) as u64,
            size,
            rate,
        });
    }
    Ok(flows)
}

/// Cut flows into flowlets of rate `rate_b` and lifetime `lifetime_t`.
/// Batches with a single flowlet get no shutdown padding.
pub fn flowletize(flows: Vec<Flow>, rate_b: f64, lifetime_t: f64, pad_max: u32, early_shutdown: bool) -> Workload {
    let t_ns = (lifetime_t * NS_PER_SEC as f64).round() as u64;
    let mut flowlets = Vec::new();
    for f in &flows {
        let lanes = (f.rate / rate_b).ceil().max(1.0) as u32;
        let batches = f.duration_ns().div_ceil(t_ns.max(1)).max(1) as u32;
        let first = flowlets.len();
        for b in 0..batches {
            for lane in 0..lanes {
                flowlets.push(FlowletPlan {
                    id: flowlets.len() as u32,
                    flow: f.id,
                    batch: b,
                    lane,
                    lanes,
                    start_ns: f.start_ns + b as u64 * t_ns,
                    data_ns: Vec::new(),
                    pad_max: if lanes > 1 { pad_max } else { 0 },
                    early_shutdown: early_shutdown && b + 1 == batches,
                    class: FlowClass::of(f.size),
                });
            }
        }
        for i in 0..f.size {
            let t = f.packet_time(i);
            let b = (((t - f.start_ns) / t_ns.max(1)) as u32).min(batches - 1);
            let lane = (i % lanes as u64) as u32;
            flowlets[first + (b * lanes + lane) as usize].data_ns.push(t);
        }
    }
    Workload { flows, flowlets }
}

pub fn synth_workload(profile: &FlowProfile, rate_b: f64, lifetime_t: f64, pad_max: u32, seed: u64) -> Result<Workload, SimError> {
    Ok(flowletize(synth_flows(profile, seed)?, rate_b, lifetime_t, pad_max, false))
}
