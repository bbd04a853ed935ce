//! Subcommands of the `splitonion` binary.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitonion_core::codec::{
    assign_expirations, create_onion, create_splittable, remove_layer, split_onion, Ctrl, PacketParams, PathMaterial, RoutingSegment,
};
use splitonion_core::replay::{bloom_bits_closed_form, dimension_blocked, size_filter, subfilter_target, ReplayConfig};
use splitonion_core::shaping::NS_PER_SEC;
use splitonion_core::topo::{parse_topology, DEFAULT_MAX_NODES, TOY_TOPOLOGY};
use splitonion_core::SymKey;
use splitonion_simnet::experiments::{
    ChaffOverheadExperiment, MixLatencyExperiment, SplitRateExperiment, CHAFF_OVERHEAD_HEADER, MIX_LATENCY_HEADER, SPLIT_RATE_HEADER,
};
use splitonion_simnet::{run_config, SimConfig, SimError};

pub const SIMULATE_HEADER: [&str; 12] = [
    "flowlet",
    "flow",
    "flow_class",
    "success",
    "slots",
    "data_sent",
    "chaff_sent",
    "split_sent",
    "data_offered",
    "data_delivered",
    "chaff_delivered",
    "premature_hop",
];
pub const NODES_HEADER: [&str; 14] = [
    "node",
    "mac_drops",
    "expired_drops",
    "replay_drops",
    "misrouted_drops",
    "unknown_drops",
    "tombstone_drops",
    "forwarded",
    "chaff_emitted",
    "splits",
    "terminations",
    "peak_flowlets",
    "peak_flowlet_bytes",
    "replay_bytes",
];
pub const TRACE_HEADER: [&str; 3] = ["link", "time_ns", "len"];
pub const TOPOLOGY_HEADER: [&str; 4] = ["scenario", "S_s", "S_d", "S_r"];
pub const REPLAY_SIZE_HEADER: [&str; 12] = [
    "bandwidth_gbps",
    "avg_pkt",
    "ttl_s",
    "fp",
    "packets_per_s",
    "keys_per_subfilter",
    "subfilter_fp",
    "closed_form_bits",
    "blocks",
    "hashes",
    "total_bytes",
    "total_mb",
];
pub const BENCH_HEADER: [&str; 6] = ["op", "hops", "m", "iterations", "mean_ns", "per_second"];

#[derive(Debug, Parser)]
#[command(name = "splitonion", version, about = "Simulate and size constant-rate onion flowlets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write per-flowlet metrics.
    Simulate(SimulateArgs),
    /// Run a parameter sweep.
    Experiment(ExperimentArgs),
    /// Anonymity-set sizes for the scenarios in a topology file.
    AnalyzeTopology(TopologyArgs),
    /// Replay detector memory for a link.
    ReplaySize(ReplaySizeArgs),
    /// Time packet creation and processing on this machine.
    BenchCodec(BenchArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV output file; standard output if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Also write per-node counters here.
    #[arg(long)]
    pub nodes: Option<PathBuf>,
    /// Also write the passive tap trace of every link here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    SplitRate,
    ChaffOverhead,
    MixLatency,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    pub kind: ExperimentKind,
    #[command(flatten)]
    pub common: Common,
    /// Repetitions per grid cell (split-rate only).
    #[arg(long)]
    pub reps: Option<u32>,
}

#[derive(Debug, Args)]
pub struct TopologyArgs {
    /// Topology file; the built-in six-AS example if omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Longest path considered, in ASes.
    #[arg(long, default_value_t = DEFAULT_MAX_NODES)]
    pub max_nodes: usize,
}

#[derive(Debug, Args)]
pub struct ReplaySizeArgs {
    #[arg(long, default_value_t = 10.0)]
    pub bandwidth_gbps: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub fp: f64,
    #[arg(long, default_value_t = 6.0)]
    pub ttl: f64,
    /// Mean packet size in octets.
    #[arg(long, default_value_t = 1395)]
    pub avg_pkt: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 7)]
    pub hops: usize,
    /// Payload octets.
    #[arg(long, default_value_t = 1024)]
    pub m: usize,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 2.
    Usage(String),
    /// Failure while running: exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl ToString) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Configuration problems are usage errors; anything else is a runtime one.
fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::Config(m) => CliError::Usage(m),
        other => runtime(other),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_opt(path: &Option<PathBuf>) -> Result<String, CliError> {
    path.as_deref().map_or(Ok(String::new()), read_text)
}

fn writer(path: &Option<PathBuf>) -> Result<csv::Writer<Box<dyn Write>>, CliError> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(File::create(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?),
        None => Box::new(io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn write_table<I, R>(path: &Option<PathBuf>, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(runtime)?;
    for r in rows {
        w.write_record(r).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Experiment(a) => experiment(a),
        Command::AnalyzeTopology(a) => analyze_topology(a),
        Command::ReplaySize(a) => replay_size(a),
        Command::BenchCodec(a) => bench_codec(a),
    }
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let path = a.common.config.as_ref().ok_or_else(|| usage("simulate needs --config"))?;
    let mut cfg = SimConfig::from_toml(&read_text(path)?).map_err(sim_error)?;
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    if a.trace.is_some() {
        cfg.network.taps = true;
    }
    let out = run_config(&cfg).map_err(sim_error)?;
    let m = &out.metrics;
    write_table(
        &a.common.out,
        &SIMULATE_HEADER,
        m.flowlets.iter().map(|f| {
            vec![
                f.id.to_string(),
                f.flow.to_string(),
                f.class.map_or("", |c| c.name()).to_string(),
                u8::from(f.success).to_string(),
                f.slots.to_string(),
                f.data_sent.to_string(),
                f.chaff_sent.to_string(),
                f.split_sent.to_string(),
                f.data_offered.to_string(),
                f.data_delivered.to_string(),
                f.chaff_delivered.to_string(),
                f.premature_hop.map_or(String::new(), |h| h.to_string()),
            ]
        }),
    )?;
    if a.nodes.is_some() {
        write_table(
            &a.nodes,
            &NODES_HEADER,
            m.nodes.iter().enumerate().map(|(i, n)| {
                [
                    i as u64,
                    n.mac_drops,
                    n.expired_drops,
                    n.replay_drops,
                    n.misrouted_drops,
                    n.unknown_drops,
                    n.tombstone_drops,
                    n.forwarded,
                    n.chaff_emitted,
                    n.splits,
                    n.terminations,
                    n.peak_flowlets as u64,
                    n.peak_flowlet_bytes as u64,
                    n.replay_bytes as u64,
                ]
                .map(|v| v.to_string())
            }),
        )?;
    }
    if a.trace.is_some() {
        write_table(
            &a.trace,
            &TRACE_HEADER,
            out.trace
                .links
                .iter()
                .enumerate()
                .flat_map(|(l, frames)| frames.iter().map(move |(t, len)| [l.to_string(), t.to_string(), len.to_string()])),
        )?;
    }
    eprintln!(
        "flowlets {} success_rate {:.4} chaff_overhead {:.4} events {}",
        m.flowlets.len(),
        m.success_rate(),
        m.chaff_overhead(),
        m.events
    );
    Ok(())
}

pub fn experiment(a: ExperimentArgs) -> Result<(), CliError> {
    let text = read_opt(&a.common.config)?;
    match a.kind {
        ExperimentKind::SplitRate => {
            let mut e = SplitRateExperiment::from_toml(&text).map_err(sim_error)?;
            if let Some(s) = a.common.seed {
                e.base.seed = s;
            }
            if let Some(r) = a.reps {
                e.reps = r;
            }
            let rows = e.run().map_err(sim_error)?;
            write_table(&a.common.out, &SPLIT_RATE_HEADER, rows.iter().map(|r| r.record()))
        }
        ExperimentKind::ChaffOverhead => {
            let mut e = ChaffOverheadExperiment::from_toml(&text).map_err(sim_error)?;
            if let Some(s) = a.common.seed {
                e.seed = s;
            }
            let rows = e.run().map_err(sim_error)?;
            write_table(&a.common.out, &CHAFF_OVERHEAD_HEADER, rows.iter().map(|r| r.record()))
        }
        ExperimentKind::MixLatency => {
            let mut e = MixLatencyExperiment::from_toml(&text).map_err(sim_error)?;
            if let Some(s) = a.common.seed {
                e.seed = s;
            }
            let rows = e.run().map_err(sim_error)?;
            write_table(&a.common.out, &MIX_LATENCY_HEADER, rows.iter().map(|r| r.record()))
        }
    }
}

pub fn analyze_topology(a: TopologyArgs) -> Result<(), CliError> {
    let text = match &a.config {
        Some(p) => read_text(p)?,
        None => TOY_TOPOLOGY.to_string(),
    };
    let file = parse_topology(&text).map_err(usage)?;
    let rows = file.evaluate(a.max_nodes).map_err(usage)?;
    write_table(
        &a.out,
        &TOPOLOGY_HEADER,
        rows.iter().map(|r| [r.name.clone(), r.s_s.to_string(), r.s_d.to_string(), r.s_r.to_string()]),
    )
}

pub fn replay_size(a: ReplaySizeArgs) -> Result<(), CliError> {
    if !(a.bandwidth_gbps > 0.0 && a.ttl > 0.0 && a.avg_pkt > 0) {
        return Err(usage("bandwidth, ttl and packet size must be positive"));
    }
    // one subfilter collects the keys of one half-ttl epoch
    let pps = a.bandwidth_gbps * 1e9 / (8.0 * a.avg_pkt as f64);
    let keys = (pps * a.ttl / 2.0).ceil() as u64;
    let cfg = ReplayConfig {
        ttl_ns: (a.ttl * NS_PER_SEC as f64) as u64,
        target_fp: a.fp,
        capacity: keys,
        ..ReplayConfig::default()
    };
    cfg.validate().map_err(usage)?;
    let sub_fp = subfilter_target(&cfg);
    let dims = dimension_blocked(keys, sub_fp, cfg.block_bits());
    let total = size_filter(&cfg);
    write_table(
        &a.out,
        &REPLAY_SIZE_HEADER,
        [[
            a.bandwidth_gbps.to_string(),
            a.avg_pkt.to_string(),
            a.ttl.to_string(),
            a.fp.to_string(),
            format!("{pps:.0}"),
            keys.to_string(),
            format!("{sub_fp:e}"),
            format!("{:.0}", bloom_bits_closed_form(keys as f64, sub_fp).ceil()),
            dims.blocks.to_string(),
            dims.hashes.to_string(),
            total.to_string(),
            format!("{:.3}", total as f64 / 1e6),
        ]],
    )
}

struct Timer {
    op: &'static str,
    iterations: u64,
    nanos: u128,
}

pub fn bench_codec(a: BenchArgs) -> Result<(), CliError> {
    let params = PacketParams::new(a.hops.max(1) + 1, a.m).map_err(usage)?;
    if a.hops == 0 || a.iterations == 0 {
        return Err(usage("hops and iterations must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let svs: Vec<SymKey> = (0..a.hops).map(|_| SymKey::random(&mut rng)).collect();
    let routes: Vec<RoutingSegment> = (0..a.hops as u32).map(|i| RoutingSegment::new(i, i + 1)).collect();
    let path = PathMaterial::provision(&svs, &routes, 5, &mut rng).map_err(runtime)?;
    let exps = assign_expirations(&path.hops, 1_000);
    let fwd = vec![Ctrl::Fwd; a.hops];
    let mut payload = vec![0u8; a.m];
    rng.fill_bytes(&mut payload);
    let mut iv = [0u8; 16];
    rng.fill_bytes(&mut iv);
    let child = vec![0u8; params.child_payload_len()];
    let mut timers = Vec::new();

    let t = Instant::now();
    let mut pkt = None;
    for _ in 0..a.iterations {
        pkt = Some(create_onion(&params, &path.hops, &fwd, &exps, iv, &payload).map_err(runtime)?);
    }
    timers.push(Timer {
        op: "create_onion",
        iterations: a.iterations,
        nanos: t.elapsed().as_nanos(),
    });
    let pkt = pkt.expect("at least one iteration");

    let t = Instant::now();
    for _ in 0..a.iterations {
        std::hint::black_box(remove_layer(&params, &pkt, &svs[0]).map_err(|e| runtime(format!("{e:?}")))?);
    }
    timers.push(Timer {
        op: "remove_layer",
        iterations: a.iterations,
        nanos: t.elapsed().as_nanos(),
    });

    let t = Instant::now();
    let mut sp = None;
    for _ in 0..a.iterations {
        sp = Some(create_splittable(&params, &path.hops, &exps, iv, [iv, iv], [&child, &child], 0).map_err(runtime)?);
    }
    timers.push(Timer {
        op: "create_splittable",
        iterations: a.iterations,
        nanos: t.elapsed().as_nanos(),
    });
    let sp = sp.expect("at least one iteration");

    let t = Instant::now();
    for _ in 0..a.iterations {
        let out = remove_layer(&params, &sp, &svs[0]).map_err(|e| runtime(format!("{e:?}")))?;
        std::hint::black_box(split_onion(&params, &out.next_packet.payload, &out.key, &out.iv).map_err(runtime)?);
    }
    timers.push(Timer {
        op: "remove_layer_split",
        iterations: a.iterations,
        nanos: t.elapsed().as_nanos(),
    });

    write_table(
        &a.out,
        &BENCH_HEADER,
        timers.iter().map(|t| {
            let mean = t.nanos as f64 / t.iterations as f64;
            [
                t.op.to_string(),
                a.hops.to_string(),
                a.m.to_string(),
                t.iterations.to_string(),
                format!("{mean:.1}"),
                format!("{:.0}", 1e9 / mean.max(1e-9)),
            ]
        }),
    )
}
