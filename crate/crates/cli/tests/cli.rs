use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splitonion"))
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn stdout(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn header(text: &str) -> &str {
    text.lines().next().unwrap_or("")
}

fn cfg(name: &str) -> String {
    configs().join(name).display().to_string()
}

#[test]
fn golden_headers() {
    let dir = tempfile::tempdir().unwrap();
    let nodes = dir.path().join("nodes.csv");
    let trace = dir.path().join("trace.csv");
    let sim = stdout(&[
        "simulate",
        "--config",
        &cfg("baseline.toml"),
        "--nodes",
        nodes.to_str().unwrap(),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(
        header(&sim),
        "flowlet,flow,flow_class,success,slots,data_sent,chaff_sent,split_sent,data_offered,data_delivered,chaff_delivered,premature_hop"
    );
    let nodes = std::fs::read_to_string(nodes).unwrap();
    assert_eq!(
        header(&nodes),
        "node,mac_drops,expired_drops,replay_drops,misrouted_drops,unknown_drops,tombstone_drops,forwarded,chaff_emitted,splits,terminations,peak_flowlets,peak_flowlet_bytes,replay_bytes"
    );
    assert_eq!(header(&std::fs::read_to_string(trace).unwrap()), "link,time_ns,len");
    assert_eq!(header(&stdout(&["analyze-topology"])), "scenario,S_s,S_d,S_r");
    assert_eq!(
        header(&stdout(&["replay-size"])),
        "bandwidth_gbps,avg_pkt,ttl_s,fp,packets_per_s,keys_per_subfilter,subfilter_fp,closed_form_bits,blocks,hashes,total_bytes,total_mb"
    );
    assert_eq!(header(&stdout(&["bench-codec", "--iterations", "3"])), "op,hops,m,iterations,mean_ns,per_second");
    assert_eq!(
        header(&stdout(&["experiment", "mix-latency", "--config", &cfg("mix_latency.toml")])),
        "batch_size,setup_rate,mean_batch_delay_ms,std_batch_delay_ms,mean_wait_ms,expected_ms"
    );
    let dir2 = tempfile::tempdir().unwrap();
    let grid = dir2.path().join("grid.toml");
    std::fs::write(&grid, "drop_rates = [0.0]\nsplit_rates = [0.0]\nh_values = [2]\n[base.workload.profile]\nflows = 5\n").unwrap();
    let split = stdout(&["experiment", "split-rate", "--config", grid.to_str().unwrap(), "--reps", "2"]);
    assert_eq!(split, "drop_rate,split_rate,H,success_rate,ci95\n0,0,2,1.000000,0.000000\n");
    let chaff = stdout(&["experiment", "chaff-overhead", "--config", &cfg("chaff_overhead.toml")]);
    assert_eq!(header(&chaff), "B,overhead_ratio,flow_class");
}

#[test]
fn baseline_is_deterministic_and_lossless() {
    let a = stdout(&["simulate", "--config", &cfg("baseline.toml")]);
    assert_eq!(a, stdout(&["simulate", "--config", &cfg("baseline.toml")]));
    assert_eq!(a.lines().nth(1).unwrap(), "0,0,large,1,1000,1000,0,0,1000,1000,0,");
}

#[test]
fn seeds_change_traces_not_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    for seed in ["1", "2"] {
        let t = dir.path().join(format!("t{seed}.csv"));
        stdout(&["simulate", "--config", &cfg("baseline.toml"), "--seed", seed, "--trace", t.to_str().unwrap()]);
        traces.push(std::fs::read_to_string(t).unwrap());
    }
    assert_ne!(traces[0], traces[1]);
    assert_eq!(header(&traces[0]), header(&traces[1]));
    assert_eq!(traces[0].lines().count(), traces[1].lines().count());
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["simulate", "--config", "/definitely/missing.toml"]).status.code(), Some(2));
    assert_eq!(run(&["simulate"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["experiment", "nonsense"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[network]\nhops = 99\n").unwrap();
    assert_eq!(run(&["simulate", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&bad, "as 0 1\nedge 0 9\n").unwrap();
    assert_eq!(run(&["analyze-topology", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn topology_matches_worked_example() {
    let out = stdout(&["analyze-topology", "--config", &cfg("toy_topology.txt")]);
    assert_eq!(out, stdout(&["analyze-topology"]));
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(
        rows,
        vec!["as2-unknown,16,24,384", "as2-known,8,8,64", "as0-as2-correlating,1,24,24", "as0-as2-independent,1,24,56"]
    );
}

fn replay_field(args: &[&str], col: usize) -> f64 {
    let mut full = vec!["replay-size"];
    full.extend_from_slice(args);
    stdout(&full).lines().nth(1).unwrap().split(',').nth(col).unwrap().parse().unwrap()
}

#[test]
fn replay_size_scales_with_bandwidth() {
    let bits1 = replay_field(&["--bandwidth-gbps", "10"], 7);
    let bits2 = replay_field(&["--bandwidth-gbps", "20"], 7);
    assert!((bits2 / bits1 - 2.0).abs() < 1e-6);
    let total1 = replay_field(&["--bandwidth-gbps", "10"], 10);
    let total2 = replay_field(&["--bandwidth-gbps", "20"], 10);
    assert!((total2 / total1 - 2.0).abs() < 0.05, "{total1} {total2}");
    // one key at fp 0.5 fits in one block per subfilter
    let tiny = replay_field(&["--bandwidth-gbps", "1e-9", "--fp", "0.5"], 10);
    assert_eq!(tiny, 3.0 * 64.0);
}

#[test]
fn bench_reports_every_op() {
    let out = stdout(&["bench-codec", "--hops", "7", "--iterations", "20"]);
    let ops: Vec<&str> = out.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ops, vec!["create_onion", "remove_layer", "create_splittable", "remove_layer_split"]);
    for l in out.lines().skip(1) {
        let per_s: f64 = l.rsplit(',').next().unwrap().parse().unwrap();
        assert!(per_s > 0.0 && per_s.is_finite());
        assert_eq!(l.split(',').nth(3), Some("20"));
    }
}
