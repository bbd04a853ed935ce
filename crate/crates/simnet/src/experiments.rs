//! Parameter sweeps over the simulator.
//!
//! Every sweep reads a TOML manifest; all fields have defaults, so an
//! empty manifest runs the standard grid. Repetition `i` of every grid
//! cell uses seed `seed + i`, so cells share workloads and loss streams
//! rep by rep.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use splitonion_core::mixer::{expected_batch_latency, measure_poisson_latency};

use crate::config::{EngineKind, SimConfig, WorkloadKind};
use crate::error::SimError;
use crate::sim::run_workload;
use crate::stats::summarize;
use crate::workload::{self, FlowClass, FlowProfile};

/// Overlay `text` onto the serialized defaults so that partial nested
/// tables keep the experiment's own defaults.
fn parse_over_defaults<T: Serialize + for<'de> Deserialize<'de> + Default>(text: &str) -> Result<T, SimError> {
    fn merge(base: &mut toml::Table, over: toml::Table) {
        for (k, v) in over {
            match (base.get_mut(&k), v) {
                (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
                (_, v) => {
                    base.insert(k, v);
                }
            }
        }
    }
    let over: toml::Table = toml::from_str(text)?;
    let mut base = toml::Table::try_from(T::default()).map_err(|e| SimError::Config(e.to_string()))?;
    merge(&mut base, over);
    Ok(base.try_into()?)
}

pub const SPLIT_RATE_HEADER: [&str; 5] = ["drop_rate", "split_rate", "H", "success_rate", "ci95"];
pub const CHAFF_OVERHEAD_HEADER: [&str; 3] = ["B", "overhead_ratio", "flow_class"];
pub const MIX_LATENCY_HEADER: [&str; 6] = [
    "batch_size",
    "setup_rate",
    "mean_batch_delay_ms",
    "std_batch_delay_ms",
    "mean_wait_ms",
    "expected_ms",
];

fn split_rate_base() -> SimConfig {
    let mut c = SimConfig {
        engine: EngineKind::Symbolic,
        ..SimConfig::default()
    };
    c.network.hops = 4;
    c.flowlet.rate_b = 1.0;
    c.flowlet.lifetime_t = 60.0;
    c.flowlet.chaff_cap = 3;
    c.flowlet.early_shutdown = true;
    c.workload.kind = WorkloadKind::Synthetic;
    c
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRateExperiment {
    pub drop_rates: Vec<f64>,
    pub split_rates: Vec<f64>,
    pub h_values: Vec<u32>,
    pub reps: u32,
    /// Everything else; grid values override the matching fields.
    pub base: SimConfig,
}

impl Default for SplitRateExperiment {
    fn default() -> Self {
        SplitRateExperiment {
            drop_rates: vec![0.0, 0.002, 0.05, 0.10, 0.15],
            split_rates: vec![0.0, 0.02, 0.05, 0.10],
            h_values: vec![1, 2, 4],
            reps: 30,
            base: split_rate_base(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRateRow {
    pub drop_rate: f64,
    pub split_rate: f64,
    pub h: u32,
    pub success_rate: f64,
    pub ci95: f64,
}

impl SplitRateRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.drop_rate.to_string(),
            self.split_rate.to_string(),
            self.h.to_string(),
            format!("{:.6}", self.success_rate),
            format!("{:.6}", self.ci95),
        ]
    }
}

impl SplitRateExperiment {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let e: Self = parse_over_defaults(text)?;
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.drop_rates.is_empty() || self.split_rates.is_empty() || self.h_values.is_empty() || self.reps == 0 {
            return Err(SimError::Config("split-rate grid is empty".into()));
        }
        for (&d, &s, &h) in self.cells() {
            self.cell_config(d, s, h, 0).validate()?;
        }
        Ok(())
    }

    fn cells(&self) -> impl Iterator<Item = (&f64, &f64, &u32)> {
        self.drop_rates
            .iter()
            .flat_map(move |d| self.split_rates.iter().flat_map(move |s| self.h_values.iter().map(move |h| (d, s, h))))
    }

    fn cell_config(&self, drop: f64, split: f64, h: u32, rep: u32) -> SimConfig {
        let mut c = self.base.clone();
        c.seed = self.base.seed.wrapping_add(rep as u64);
        c.network.drop = drop;
        c.flowlet.split_prob = split;
        c.flowlet.fail_threshold_h = h;
        c
    }

    /// One row per grid cell, in grid order.
    pub fn run(&self) -> Result<Vec<SplitRateRow>, SimError> {
        self.validate()?;
        let cells: Vec<(f64, f64, u32)> = self.cells().map(|(d, s, h)| (*d, *s, *h)).collect();
        let jobs: Vec<(usize, u32)> = (0..cells.len()).flat_map(|c| (0..self.reps).map(move |r| (c, r))).collect();
        let rates = jobs
            .par_iter()
            .map(|&(c, r)| {
                let (d, s, h) = cells[c];
                let cfg = self.cell_config(d, s, h, r);
                let w = cfg.workload()?;
                Ok(run_workload(&cfg, &w)?.metrics.success_rate())
            })
            .collect::<Result<Vec<f64>, SimError>>()?;
        Ok(cells
            .iter()
            .enumerate()
            .map(|(c, &(drop_rate, split_rate, h))| {
                let reps = self.reps as usize;
                let s = summarize(&rates[c * reps..(c + 1) * reps]);
                SplitRateRow {
                    drop_rate,
                    split_rate,
                    h,
                    success_rate: s.mean,
                    ci95: s.ci95,
                }
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChaffOverheadExperiment {
    /// Flowlet rates to sweep, packets per second.
    pub rates_b: Vec<f64>,
    pub lifetime_t: f64,
    pub pad_max: u32,
    pub early_shutdown: bool,
    pub profile: FlowProfile,
    pub seed: u64,
}

impl Default for ChaffOverheadExperiment {
    fn default() -> Self {
        ChaffOverheadExperiment {
            rates_b: vec![0.5, 1.0, 2.0, 4.0],
            lifetime_t: 60.0,
            pad_max: 0,
            early_shutdown: false,
            profile: FlowProfile {
                flows: 200,
                ..FlowProfile::default()
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChaffOverheadRow {
    pub rate_b: f64,
    pub overhead_ratio: f64,
    /// `None` for all flows together.
    pub class: Option<FlowClass>,
}

impl ChaffOverheadRow {
    pub fn record(&self) -> Vec<String> {
        let class = self.class.map_or("all", FlowClass::name);
        vec![self.rate_b.to_string(), format!("{:.6}", self.overhead_ratio), class.to_string()]
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    slots: u64,
    data: u64,
}

impl Tally {
    fn ratio(&self) -> f64 {
        if self.data == 0 {
            f64::NAN
        } else {
            (self.slots - self.data) as f64 / self.data as f64
        }
    }
}

impl ChaffOverheadExperiment {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let e: Self = parse_over_defaults(text)?;
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.rates_b.is_empty() || self.rates_b.iter().any(|b| !(*b > 0.0)) || !(self.lifetime_t > 0.0) {
            return Err(SimError::Config("chaff-overhead needs positive rates and lifetime".into()));
        }
        self.profile.validate()
    }

    /// Added chaff divided by real traffic, per rate and flow class, from
    /// a sender-only run on one lossless hop.
    pub fn run(&self) -> Result<Vec<ChaffOverheadRow>, SimError> {
        self.validate()?;
        let flows = workload::synth_flows(&self.profile, self.seed)?;
        if flows.is_empty() {
            return Err(SimError::Config("workload has no flows".into()));
        }
        let per_rate = self
            .rates_b
            .par_iter()
            .map(|&b| {
                let mut cfg = SimConfig {
                    seed: self.seed,
                    engine: EngineKind::Symbolic,
                    ..SimConfig::default()
                };
                cfg.network.hops = 1;
                cfg.network.jitter_ms = 0.0;
                cfg.network.latency_ms = 0.0;
                cfg.flowlet.rate_b = b;
                cfg.flowlet.lifetime_t = self.lifetime_t;
                cfg.flowlet.pad_max = self.pad_max;
                cfg.flowlet.early_shutdown = self.early_shutdown;
                let w = workload::flowletize(flows.clone(), b, self.lifetime_t, self.pad_max, self.early_shutdown);
                let out = run_workload(&cfg, &w)?;
                let mut by_class = [Tally::default(); 3];
                let mut all = Tally::default();
                for f in &out.metrics.flowlets {
                    let t = &mut by_class[f.class.expect("synthetic plan") as usize];
                    t.slots += f.slots;
                    t.data += f.data_sent;
                    all.slots += f.slots;
                    all.data += f.data_sent;
                }
                let mut rows = vec![ChaffOverheadRow {
                    rate_b: b,
                    overhead_ratio: all.ratio(),
                    class: None,
                }];
                for class in [FlowClass::Small, FlowClass::Medium, FlowClass::Large] {
                    let t = by_class[class as usize];
                    if t.data > 0 {
                        rows.push(ChaffOverheadRow {
                            rate_b: b,
                            overhead_ratio: t.ratio(),
                            class: Some(class),
                        });
                    }
                }
                Ok(rows)
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        Ok(per_rate.into_iter().flatten().collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixLatencyExperiment {
    pub batch_sizes: Vec<usize>,
    /// Setup messages per second arriving at the mixer.
    pub setup_rates: Vec<f64>,
    pub batches: u64,
    pub seed: u64,
}

impl Default for MixLatencyExperiment {
    fn default() -> Self {
        MixLatencyExperiment {
            batch_sizes: vec![16, 128],
            setup_rates: vec![10_000.0],
            batches: 2_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixLatencyRow {
    pub batch_size: usize,
    pub setup_rate: f64,
    pub mean_batch_delay_ms: f64,
    pub std_batch_delay_ms: f64,
    pub mean_wait_ms: f64,
    pub expected_ms: f64,
}

impl MixLatencyRow {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.batch_size.to_string(),
            self.setup_rate.to_string(),
            format!("{:.4}", self.mean_batch_delay_ms),
            format!("{:.4}", self.std_batch_delay_ms),
            format!("{:.4}", self.mean_wait_ms),
            format!("{:.4}", self.expected_ms),
        ]
    }
}

impl MixLatencyExperiment {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let e: Self = parse_over_defaults(text)?;
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = !self.batch_sizes.is_empty()
            && !self.setup_rates.is_empty()
            && self.batch_sizes.iter().all(|&k| k >= 1)
            && self.setup_rates.iter().all(|&r| r > 0.0)
            && self.batches > 0;
        if ok {
            Ok(())
        } else {
            Err(SimError::Config("mix-latency needs batch sizes, positive rates and batches".into()))
        }
    }

    pub fn run(&self) -> Result<Vec<MixLatencyRow>, SimError> {
        self.validate()?;
        let mut rows = Vec::new();
        for (i, &k) in self.batch_sizes.iter().enumerate() {
            for (j, &r) in self.setup_rates.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(((i as u64) << 32) | j as u64);
                let s = measure_poisson_latency(k, r, self.batches, &mut rng)?;
                rows.push(MixLatencyRow {
                    batch_size: k,
                    setup_rate: r,
                    mean_batch_delay_ms: s.mean_batch_delay * 1e3,
                    std_batch_delay_ms: s.std_batch_delay * 1e3,
                    mean_wait_ms: s.mean_wait * 1e3,
                    expected_ms: expected_batch_latency(k, r) * 1e3,
                });
            }
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lossless_cells_always_succeed() {
        let mut e = SplitRateExperiment {
            drop_rates: vec![0.0],
            split_rates: vec![0.0, 0.05],
            h_values: vec![1],
            reps: 2,
            ..SplitRateExperiment::default()
        };
        e.base.workload.profile.flows = 10;
        let rows = e.run().unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.success_rate == 1.0 && r.ci95 == 0.0));
        assert_eq!(rows[1].record().join(","), "0,0.05,1,1.000000,0.000000");
    }

    #[test]
    fn one_packet_flow_overhead() {
        // one data packet among 600 slots
        let e = ChaffOverheadExperiment {
            rates_b: vec![10.0],
            profile: FlowProfile {
                flows: 1,
                size_scale: 1.0,
                size_cap: 1.0,
                min_size: 1,
                ..FlowProfile::default()
            },
            ..ChaffOverheadExperiment::default()
        };
        let rows = e.run().unwrap();
        assert_eq!(rows[0].overhead_ratio, 599.0);
    }

    #[test]
    fn manifests_parse() {
        let e = SplitRateExperiment::from_toml("drop_rates = [0.1]\nreps = 3\n[base.network]\nhops = 3\n").unwrap();
        assert_eq!(e.base.network.hops, 3);
        assert_eq!(e.base.engine, EngineKind::Symbolic);
        assert!(SplitRateExperiment::from_toml("h_values = []\n").is_err());
        assert!(ChaffOverheadExperiment::from_toml("rates_b = [0]\n").is_err());
        assert_eq!(MixLatencyExperiment::from_toml("").unwrap(), MixLatencyExperiment::default());
    }
}
