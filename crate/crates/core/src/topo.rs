//! Anonymity-set sizes seen by compromised ASes on a path.
//!
//! A compromised AS at path index `j` observes the link a packet came in on
//! and the link it leaves on. Senders are the ASes that can reach it through
//! the ingress neighbor, receivers those reachable through the egress
//! neighbor. At the first (last) AS the sender (receiver) host is attached
//! directly, so that side collapses to a single host.
//!
//! Paths are simple and at most `max_nodes` ASes long. When the header
//! leaks the position, the distances to both ends are known exactly.
//!
//! Graph text format, one statement per line, `#` starts a comment:
//!
//! ```text
//! as <id> <hosts>
//! edge <a> <b>
//! path <name> <as> <as> ...
//! scenario <name> <path> <known|unknown> <correlating|independent> <index> [<index> ...]
//! ```

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::error::TopoError;

/// ASes on a path, `r - 1` at the default packet parameters.
pub const DEFAULT_MAX_NODES: usize = 7;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AsGraph {
    hosts: BTreeMap<u32, u64>,
    adj: BTreeMap<u32, BTreeSet<u32>>,
    paths: Vec<(String, Vec<u32>)>,
}

impl AsGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_as(&mut self, id: u32, hosts: u64) {
        self.hosts.insert(id, hosts);
        self.adj.entry(id).or_default();
    }

    pub fn add_edge(&mut self, a: u32, b: u32) -> Result<(), TopoError> {
        for x in [a, b] {
            if !self.hosts.contains_key(&x) {
                return Err(TopoError::UnknownAs(x));
            }
        }
        if a != b {
            self.adj.entry(a).or_default().insert(b);
            self.adj.entry(b).or_default().insert(a);
        }
        Ok(())
    }

    pub fn add_path(&mut self, name: impl Into<String>, path: Vec<u32>) -> Result<(), TopoError> {
        self.check_path(&path, usize::MAX)?;
        self.paths.push((name.into(), path));
        Ok(())
    }

    pub fn hosts(&self, id: u32) -> Option<u64> {
        self.hosts.get(&id).copied()
    }

    pub fn ases(&self) -> impl Iterator<Item = u32> + '_ {
        self.hosts.keys().copied()
    }

    pub fn neighbors(&self, id: u32) -> impl Iterator<Item = u32> + '_ {
        self.adj.get(&id).into_iter().flatten().copied()
    }

    pub fn adjacent(&self, a: u32, b: u32) -> bool {
        self.adj.get(&a).is_some_and(|n| n.contains(&b))
    }

    pub fn path(&self, name: &str) -> Option<&[u32]> {
        self.paths.iter().find(|(n, _)| n == name).map(|(_, p)| p.as_slice())
    }

    pub fn paths(&self) -> &[(String, Vec<u32>)] {
        &self.paths
    }

    pub fn host_sum<'a>(&self, ases: impl IntoIterator<Item = &'a u32>) -> u64 {
        ases.into_iter().map(|a| self.hosts.get(a).copied().unwrap_or(0)).sum()
    }

    pub fn check_path(&self, path: &[u32], max_nodes: usize) -> Result<(), TopoError> {
        if path.is_empty() {
            return Err(TopoError::Empty);
        }
        if path.len() > max_nodes {
            return Err(TopoError::PathTooLong {
                len: path.len(),
                max: max_nodes,
            });
        }
        let mut seen = BTreeSet::new();
        for &a in path {
            if !self.hosts.contains_key(&a) {
                return Err(TopoError::UnknownAs(a));
            }
            if !seen.insert(a) {
                return Err(TopoError::NotSimple(a));
            }
        }
        for w in path.windows(2) {
            if !self.adjacent(w[0], w[1]) {
                return Err(TopoError::NotAdjacent(w[0], w[1]));
            }
        }
        Ok(())
    }
}

/// The example graph: AS0(8) - AS1(8) - AS2(24) - AS3(8), with AS4(8) and
/// AS5(8) hanging off AS3. Path `example` runs AS0 to AS3.
pub fn build_toy_topology() -> AsGraph {
    let mut g = AsGraph::new();
    for (id, hosts) in [(0, 8), (1, 8), (2, 24), (3, 8), (4, 8), (5, 8)] {
        g.add_as(id, hosts);
    }
    for (a, b) in [(0, 1), (1, 2), (2, 3), (3, 4), (3, 5)] {
        g.add_edge(a, b).expect("known ASes");
    }
    g.add_path("example", vec![0, 1, 2, 3]).expect("valid path");
    g
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompromiseScenario {
    pub path: Vec<u32>,
    /// Indices into `path`.
    pub compromised: Vec<usize>,
    pub position_known: bool,
    pub correlating: bool,
}

/// One side of an observation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Side {
    /// The endpoint host is attached to the observing AS.
    Host(u32),
    /// Endpoint lies in one of these ASes.
    Ases(BTreeSet<u32>),
}

impl Side {
    pub fn size(&self, g: &AsGraph) -> u64 {
        match self {
            Side::Host(_) => 1,
            Side::Ases(s) => g.host_sum(s),
        }
    }

    /// Every endpoint this side admits is also admitted by `other`.
    pub fn is_subset_of(&self, other: &Side) -> bool {
        match (self, other) {
            (Side::Host(a), Side::Host(b)) => a == b,
            (Side::Host(a), Side::Ases(s)) => s.contains(a),
            (Side::Ases(_), Side::Host(_)) => false,
            (Side::Ases(a), Side::Ases(b)) => a.is_subset(b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnonymitySets {
    pub senders: Side,
    pub receivers: Side,
    pub s_s: u64,
    pub s_d: u64,
    pub s_r: u128,
}

impl AnonymitySets {
    fn new(g: &AsGraph, senders: Side, receivers: Side) -> Self {
        let s_s = senders.size(g);
        let s_d = receivers.size(g);
        AnonymitySets {
            senders,
            receivers,
            s_s,
            s_d,
            s_r: s_s as u128 * s_d as u128,
        }
    }
}

/// Shortest-hop BFS from `start`, never entering `blocked`.
fn bfs(g: &AsGraph, start: u32, blocked: &BTreeSet<u32>) -> BTreeMap<u32, usize> {
    let mut dist = BTreeMap::from([(start, 0usize)]);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let d = dist[&v];
        for w in g.neighbors(v) {
            if !blocked.contains(&w) && !dist.contains_key(&w) {
                dist.insert(w, d + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Endpoints of simple paths leaving `at` through `first`, avoiding
/// `avoid`, with at most `max_nodes` ASes counting `at`.
fn reachable_half(g: &AsGraph, at: u32, first: u32, avoid: Option<u32>, max_nodes: usize) -> BTreeSet<u32> {
    let blocked: BTreeSet<u32> = std::iter::once(at).chain(avoid).collect();
    bfs(g, first, &blocked)
        .into_iter()
        .filter(|&(_, d)| d + 2 <= max_nodes)
        .map(|(v, _)| v)
        .collect()
}

/// All simple walks of exactly `edges` hops from `at` whose first hop is
/// `first`, not touching `avoid`. Each walk excludes `at`.
fn exact_halves(g: &AsGraph, at: u32, first: u32, avoid: Option<u32>, edges: usize) -> Vec<Vec<u32>> {
    fn go(g: &AsGraph, stack: &mut Vec<u32>, left: usize, banned: &BTreeSet<u32>, out: &mut Vec<Vec<u32>>) {
        if left == 0 {
            out.push(stack.clone());
            return;
        }
        let tip = *stack.last().expect("non-empty");
        for w in g.neighbors(tip) {
            if !banned.contains(&w) && !stack.contains(&w) {
                stack.push(w);
                go(g, stack, left - 1, banned, out);
                stack.pop();
            }
        }
    }
    let banned: BTreeSet<u32> = std::iter::once(at).chain(avoid).collect();
    let mut out = Vec::new();
    if edges == 0 || banned.contains(&first) {
        return out;
    }
    go(g, &mut vec![first], edges - 1, &banned, &mut out);
    out
}

/// Sender and receiver sets for one compromised index `j`.
pub fn observe(g: &AsGraph, path: &[u32], j: usize, position_known: bool, max_nodes: usize) -> Result<AnonymitySets, TopoError> {
    g.check_path(path, max_nodes)?;
    if j >= path.len() {
        return Err(TopoError::PositionOutOfPath {
            pos: j,
            len: path.len(),
        });
    }
    let at = path[j];
    let ingress = j.checked_sub(1).map(|i| path[i]);
    let egress = path.get(j + 1).copied();
    let (senders, receivers) = if position_known {
        known_sides(g, at, ingress, egress, j, path.len() - 1 - j)
    } else {
        let s = match ingress {
            None => Side::Host(at),
            // the shortest receiver side is one AS beyond `at`, or none
            Some(first) => Side::Ases(reachable_half(g, at, first, egress, max_nodes - egress.map_or(0, |_| 1))),
        };
        let d = match egress {
            None => Side::Host(at),
            Some(first) => Side::Ases(reachable_half(g, at, first, ingress, max_nodes - ingress.map_or(0, |_| 1))),
        };
        (s, d)
    };
    Ok(AnonymitySets::new(g, senders, receivers))
}

fn known_sides(g: &AsGraph, at: u32, ingress: Option<u32>, egress: Option<u32>, ds: usize, dd: usize) -> (Side, Side) {
    let s_halves = ingress.map(|f| exact_halves(g, at, f, egress, ds));
    let d_halves = egress.map(|f| exact_halves(g, at, f, ingress, dd));
    match (s_halves, d_halves) {
        (None, None) => (Side::Host(at), Side::Host(at)),
        (Some(s), None) => (Side::Ases(ends(&s)), Side::Host(at)),
        (None, Some(d)) => (Side::Host(at), Side::Ases(ends(&d))),
        (Some(s), Some(d)) => {
            // keep only combinations whose halves are disjoint
            let mut senders = BTreeSet::new();
            let mut receivers = BTreeSet::new();
            for sh in &s {
                for dh in &d {
                    if sh.iter().all(|v| !dh.contains(v)) {
                        senders.insert(*sh.last().expect("non-empty"));
                        receivers.insert(*dh.last().expect("non-empty"));
                    }
                }
            }
            (Side::Ases(senders), Side::Ases(receivers))
        }
    }
}

fn ends(halves: &[Vec<u32>]) -> BTreeSet<u32> {
    halves.iter().filter_map(|h| h.last().copied()).collect()
}

/// Sets for a scenario with exactly one compromised AS.
pub fn anonymity_sets(g: &AsGraph, sc: &CompromiseScenario, max_nodes: usize) -> Result<AnonymitySets, TopoError> {
    match sc.compromised.as_slice() {
        [] => Err(TopoError::Empty),
        &[j] => observe(g, &sc.path, j, sc.position_known, max_nodes),
        many => Err(TopoError::NotSingle(many.len())),
    }
}

/// `|S_r|` for `q >= 1` compromised ASes. Correlating adversaries combine
/// the smallest sender and receiver sets; otherwise the best single view
/// counts.
pub fn multi_compromise(g: &AsGraph, sc: &CompromiseScenario, max_nodes: usize) -> Result<u128, TopoError> {
    let views = per_as_views(g, sc, max_nodes)?;
    Ok(combine(&views, sc.correlating))
}

pub fn per_as_views(g: &AsGraph, sc: &CompromiseScenario, max_nodes: usize) -> Result<Vec<AnonymitySets>, TopoError> {
    if sc.compromised.is_empty() {
        return Err(TopoError::Empty);
    }
    sc.compromised
        .iter()
        .map(|&j| observe(g, &sc.path, j, sc.position_known, max_nodes))
        .collect()
}

pub fn combine(views: &[AnonymitySets], correlating: bool) -> u128 {
    if correlating {
        let s = views.iter().map(|v| v.s_s).min().unwrap_or(0);
        let d = views.iter().map(|v| v.s_d).min().unwrap_or(0);
        s as u128 * d as u128
    } else {
        views.iter().map(|v| v.s_r).min().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NamedScenario {
    pub name: String,
    pub path_name: String,
    pub scenario: CompromiseScenario,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopoFile {
    pub graph: AsGraph,
    pub scenarios: Vec<NamedScenario>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioResult {
    pub name: String,
    pub s_s: u64,
    pub s_d: u64,
    pub s_r: u128,
}

impl TopoFile {
    /// One row per scenario. `S_s`/`S_d` are the minima over compromised
    /// ASes and `S_r` follows the scenario's correlation mode.
    pub fn evaluate(&self, max_nodes: usize) -> Result<Vec<ScenarioResult>, TopoError> {
        self.scenarios
            .iter()
            .map(|ns| {
                let views = per_as_views(&self.graph, &ns.scenario, max_nodes)?;
                Ok(ScenarioResult {
                    name: ns.name.clone(),
                    s_s: views.iter().map(|v| v.s_s).min().unwrap_or(0),
                    s_d: views.iter().map(|v| v.s_d).min().unwrap_or(0),
                    s_r: combine(&views, ns.scenario.correlating),
                })
            })
            .collect()
    }
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, TopoError> {
    let tok = tok.ok_or_else(|| TopoError::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| TopoError::Parse {
        line,
        msg: format!("bad {what} {tok:?}"),
    })
}

pub fn parse_topology(text: &str) -> Result<TopoFile, TopoError> {
    let mut graph = AsGraph::new();
    let mut pending = Vec::new();
    let err = |line: usize, msg: String| TopoError::Parse { line, msg };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let kw = toks.next().expect("non-empty");
        let at_line = |e: TopoError| match e {
            TopoError::Parse { .. } => e,
            other => err(line, other.to_string()),
        };
        match kw {
            "as" => {
                let id = parse_num(toks.next(), line, "AS id")?;
                let hosts = parse_num(toks.next(), line, "host count")?;
                graph.add_as(id, hosts);
            }
            "edge" => {
                let a = parse_num(toks.next(), line, "AS id")?;
                let b = parse_num(toks.next(), line, "AS id")?;
                graph.add_edge(a, b).map_err(at_line)?;
            }
            "path" => {
                let name = toks.next().ok_or_else(|| err(line, "missing path name".into()))?;
                let ases = toks.map(|t| parse_num(Some(t), line, "AS id")).collect::<Result<Vec<u32>, _>>()?;
                graph.add_path(name, ases).map_err(at_line)?;
            }
            "scenario" => {
                let name = toks.next().ok_or_else(|| err(line, "missing scenario name".into()))?;
                let path = toks.next().ok_or_else(|| err(line, "missing path name".into()))?;
                let position_known = match toks.next() {
                    Some("known") => true,
                    Some("unknown") => false,
                    other => return Err(err(line, format!("expected known|unknown, got {other:?}"))),
                };
                let correlating = match toks.next() {
                    Some("correlating") => true,
                    Some("independent") => false,
                    other => return Err(err(line, format!("expected correlating|independent, got {other:?}"))),
                };
                let compromised = toks.map(|t| parse_num(Some(t), line, "index")).collect::<Result<Vec<usize>, _>>()?;
                if compromised.is_empty() {
                    return Err(err(line, "no compromised index".into()));
                }
                pending.push((line, name.to_string(), path.to_string(), position_known, correlating, compromised));
            }
            other => return Err(err(line, format!("unknown statement {other:?}"))),
        }
    }
    let scenarios = pending
        .into_iter()
        .map(|(line, name, path_name, position_known, correlating, compromised)| {
            let path = graph
                .path(&path_name)
                .ok_or_else(|| err(line, format!("unknown path {path_name:?}")))?
                .to_vec();
            if let Some(&pos) = compromised.iter().find(|&&p| p >= path.len()) {
                return Err(err(line, TopoError::PositionOutOfPath { pos, len: path.len() }.to_string()));
            }
            Ok(NamedScenario {
                name,
                path_name,
                scenario: CompromiseScenario {
                    path,
                    compromised,
                    position_known,
                    correlating,
                },
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(TopoFile { graph, scenarios })
}

/// The example graph and its worked scenarios in text form.
pub const TOY_TOPOLOGY: &str = "\
# six-AS example, sender in AS0, receiver in AS3
as 0 8
as 1 8
as 2 24
as 3 8
as 4 8
as 5 8
edge 0 1
edge 1 2
edge 2 3
edge 3 4
edge 3 5
path example 0 1 2 3
scenario as2-unknown example unknown independent 2
scenario as2-known example known independent 2
scenario as0-as2-correlating example unknown correlating 0 2
scenario as0-as2-independent example unknown independent 0 2
";

/// Reference computation by enumerating every simple path in the graph.
pub mod oracle {
    use super::*;

    fn all_simple_paths(g: &AsGraph, max_nodes: usize) -> Vec<Vec<u32>> {
        fn extend(g: &AsGraph, cur: &mut Vec<u32>, max: usize, out: &mut Vec<Vec<u32>>) {
            out.push(cur.clone());
            if cur.len() == max {
                return;
            }
            let tip = *cur.last().expect("non-empty");
            let next: Vec<u32> = g.neighbors(tip).filter(|w| !cur.contains(w)).collect();
            for w in next {
                cur.push(w);
                extend(g, cur, max, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        for a in g.ases() {
            extend(g, &mut vec![a], max_nodes, &mut out);
        }
        out
    }

    /// Sender and receiver sides implied by every full path that produces
    /// the same observation at index `j` of `path`.
    pub fn observe(g: &AsGraph, path: &[u32], j: usize, position_known: bool, max_nodes: usize) -> (Side, Side) {
        let at = path[j];
        let ingress = j.checked_sub(1).map(|i| path[i]);
        let egress = path.get(j + 1).copied();
        let mut senders = BTreeSet::new();
        let mut receivers = BTreeSet::new();
        for cand in all_simple_paths(g, max_nodes) {
            let Some(k) = cand.iter().position(|&v| v == at) else {
                continue;
            };
            let c_in = k.checked_sub(1).map(|i| cand[i]);
            let c_out = cand.get(k + 1).copied();
            if c_in != ingress || c_out != egress {
                continue;
            }
            if position_known && (k != j || cand.len() != path.len()) {
                continue;
            }
            senders.insert(cand[0]);
            receivers.insert(*cand.last().expect("non-empty"));
        }
        let s = if ingress.is_none() { Side::Host(at) } else { Side::Ases(senders) };
        let d = if egress.is_none() { Side::Host(at) } else { Side::Ases(receivers) };
        (s, d)
    }
}
