//! The analytic latency model and its simulated-clock counterpart.
//!
//! Two deployment patterns are modeled for a workflow over worker
//! services, with per-hop latencies `t1` (same node), `t2` (same zone),
//! and `t3` (across zones), all in integer microseconds so predictions
//! and simulations compare exactly:
//!
//! * the three-service chain: orchestration costs `6*t2`, the
//!   decentralized deployment costs `6*t1 + 3*t2`;
//! * the n-worker fan: orchestration costs `2*t2 + 2*n*t3`, the
//!   decentralized deployment costs `2*(n+1)*t1 + (n-1)*t2 + 2*t2`.
//!
//! The simulated clock assigns every send/receive pair the topology
//! latency of its endpoints' nodes and computes the critical path of
//! the recorded execution with computation time taken as zero, so on
//! the canonical patterns it reproduces the closed forms exactly.

use serde::Serialize;
use std::collections::{BTreeMap, VecDeque};
use troupe_kernel::parse::parse_choreography;
use troupe_kernel::project::project_all;
use troupe_kernel::{Choreography, NetConfig, ProcName, TransitionLabel, VarStore};
use troupe_trace::ExecutionTrace;

pub type Micros = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Pattern {
    Orchestration,
    Decentralized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// The three-service chain microbenchmark.
    Chain,
    /// One entry service plus `n` workers in an isolated zone.
    Workers(u64),
}

#[derive(Debug, Clone, Copy)]
pub struct LatencyParams {
    pub t1: Micros,
    pub t2: Micros,
    pub t3: Micros,
}

/// Closed-form end-to-end latency prediction.
pub fn predict_latency(pattern: Pattern, scenario: Scenario, p: LatencyParams) -> Micros {
    match (scenario, pattern) {
        (Scenario::Chain, Pattern::Orchestration) => 6 * p.t2,
        (Scenario::Chain, Pattern::Decentralized) => 6 * p.t1 + 3 * p.t2,
        (Scenario::Workers(n), Pattern::Orchestration) => 2 * p.t2 + 2 * n * p.t3,
        (Scenario::Workers(n), Pattern::Decentralized) => {
            2 * (n + 1) * p.t1 + (n - 1) * p.t2 + 2 * p.t2
        }
    }
}

/// Node placement and pairwise latency map. Latencies are symmetric and
/// the diagonal holds the intra-node hop cost.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    latency: BTreeMap<(String, String), Micros>,
    assignment: BTreeMap<ProcName, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LatencyError {
    #[error("process `{0}` is not mapped to a node")]
    UnmappedProcess(ProcName),
    #[error("no latency between nodes `{0}` and `{1}`")]
    MissingEdge(String, String),
    #[error("receive without a matching send: {0}")]
    UnmatchedReceive(String),
}

impl Topology {
    pub fn assign(&mut self, process: &str, node: &str) {
        self.assignment
            .insert(ProcName::new(process), node.to_owned());
    }

    pub fn set_latency(&mut self, a: &str, b: &str, micros: Micros) {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.latency.insert((a.to_owned(), b.to_owned()), micros);
    }

    pub fn latency_between(&self, from: &ProcName, to: &ProcName) -> Result<Micros, LatencyError> {
        let a = self
            .assignment
            .get(from)
            .ok_or_else(|| LatencyError::UnmappedProcess(from.clone()))?;
        let b = self
            .assignment
            .get(to)
            .ok_or_else(|| LatencyError::UnmappedProcess(to.clone()))?;
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        self.latency
            .get(&(x.clone(), y.clone()))
            .copied()
            .ok_or_else(|| LatencyError::MissingEdge(a.clone(), b.clone()))
    }
}

/// Critical-path duration of a recorded execution under a topology:
/// sends are asynchronous, a receive completes at the sender's clock at
/// send time plus the link latency, and local steps take zero time.
pub fn simulate_latency(
    trace: &ExecutionTrace,
    topology: &Topology,
) -> Result<Micros, LatencyError> {
    let mut clocks: BTreeMap<ProcName, Micros> = BTreeMap::new();
    let mut in_flight: BTreeMap<(ProcName, ProcName), VecDeque<Micros>> = BTreeMap::new();
    for step in trace.steps() {
        match &step.label {
            TransitionLabel::SendEv(p, _, q) | TransitionLabel::SelSendEv(p, _, q) => {
                let at = clocks.get(p).copied().unwrap_or(0);
                in_flight
                    .entry((p.clone(), q.clone()))
                    .or_default()
                    .push_back(at);
            }
            TransitionLabel::RecvEv(p, _, q) | TransitionLabel::SelRecvEv(p, _, q) => {
                let sent_at = in_flight
                    .entry((p.clone(), q.clone()))
                    .or_default()
                    .pop_front()
                    .ok_or_else(|| LatencyError::UnmatchedReceive(step.label.to_string()))?;
                let lat = topology.latency_between(p, q)?;
                let arrival = sent_at + lat;
                let clock = clocks.entry(q.clone()).or_insert(0);
                *clock = (*clock).max(arrival);
            }
            _ => {}
        }
    }
    Ok(clocks.values().copied().max().unwrap_or(0))
}

/// A canonical microbenchmark deployment: projected endpoint programs
/// plus the topology realizing the pattern's latency structure.
pub struct Setup {
    pub programs: BTreeMap<ProcName, troupe_kernel::ProcProgram>,
    pub topology: Topology,
}

impl Setup {
    pub fn initial_config(&self) -> NetConfig {
        NetConfig::initial(self.programs.clone(), VarStore::default())
    }
}

fn project_setup(chor: &Choreography, topology: Topology) -> Setup {
    let projected = project_all(chor, &Default::default());
    assert!(projected.is_ok(), "canonical patterns are projectable");
    Setup {
        programs: projected.programs,
        topology,
    }
}

/// The three-service chain.
///
/// Orchestration: one orchestrator node calls the three workers in
/// turn, six inter-node messages of latency `t2`. Decentralized: each
/// worker gets a co-located sidecar (request/response at `t1`) and the
/// sidecars hand off point to point (`t2`), closing the loop back to
/// the initiator.
pub fn chain_setup(pattern: Pattern, p: LatencyParams) -> Setup {
    match pattern {
        Pattern::Orchestration => {
            let src = "\
orch.0 -> w1.req
w1.1 -> orch.r1
orch.2 -> w2.req
w2.3 -> orch.r2
orch.4 -> w3.req
w3.5 -> orch.r3
";
            let chor = parse_choreography(src, &Default::default()).unwrap();
            let mut topo = Topology::default();
            topo.assign("orch", "n0");
            for (i, w) in ["w1", "w2", "w3"].iter().enumerate() {
                let node = format!("n{}", i + 1);
                topo.assign(w, &node);
                topo.set_latency("n0", &node, p.t2);
            }
            project_setup(&chor, topo)
        }
        Pattern::Decentralized => {
            let src = "\
sc1.0 -> w1.req
w1.1 -> sc1.resp
sc1.2 -> sc2.hop
sc2.3 -> w2.req
w2.4 -> sc2.resp
sc2.5 -> sc3.hop
sc3.6 -> w3.req
w3.7 -> sc3.resp
sc3.8 -> sc1.done
";
            let chor = parse_choreography(src, &Default::default()).unwrap();
            let mut topo = Topology::default();
            for i in 1..=3 {
                let node = format!("n{i}");
                topo.assign(&format!("sc{i}"), &node);
                topo.assign(&format!("w{i}"), &node);
                topo.set_latency(&node, &node, p.t1);
            }
            for i in 1..=3 {
                for j in (i + 1)..=3 {
                    topo.set_latency(&format!("n{i}"), &format!("n{j}"), p.t2);
                }
            }
            project_setup(&chor, topo)
        }
    }
}

/// The n-worker fan with the workers in their own zone.
///
/// Orchestration: entry to orchestrator and back at `t2`, plus `2n`
/// cross-zone calls at `t3`. Decentralized: every service (entry
/// included) gets a co-located sidecar (`2(n+1)` hops at `t1`) and the
/// sidecar ring costs `n+1` inter-node messages at `t2`.
pub fn workers_setup(pattern: Pattern, n: u64, p: LatencyParams) -> Setup {
    assert!(n >= 1);
    match pattern {
        Pattern::Orchestration => {
            let mut src = String::from("entry.0 -> orch.go\n");
            for i in 1..=n {
                src.push_str(&format!("orch.{i} -> w{i}.req\n"));
                src.push_str(&format!("w{i}.{i} -> orch.r{i}\n"));
            }
            src.push_str("orch.9 -> entry.fin\n");
            let chor = parse_choreography(&src, &Default::default()).unwrap();
            let mut topo = Topology::default();
            topo.assign("entry", "ne");
            topo.assign("orch", "no");
            topo.set_latency("ne", "no", p.t2);
            for i in 1..=n {
                let node = format!("nw{i}");
                topo.assign(&format!("w{i}"), &node);
                topo.set_latency("no", &node, p.t3);
            }
            project_setup(&chor, topo)
        }
        Pattern::Decentralized => {
            let mut src = String::from("sce.0 -> esvc.req\nesvc.1 -> sce.resp\n");
            src.push_str("sce.2 -> sc1.hop\n");
            for i in 1..=n {
                src.push_str(&format!("sc{i}.{i} -> w{i}.req\n"));
                src.push_str(&format!("w{i}.{i} -> sc{i}.resp\n"));
                if i < n {
                    src.push_str(&format!("sc{i}.8 -> sc{}.hop\n", i + 1));
                }
            }
            src.push_str(&format!("sc{n}.9 -> sce.done\n"));
            let chor = parse_choreography(&src, &Default::default()).unwrap();
            let mut topo = Topology::default();
            let mut nodes = vec![("sce".to_string(), "esvc".to_string(), "ne".to_string())];
            for i in 1..=n {
                nodes.push((format!("sc{i}"), format!("w{i}"), format!("nn{i}")));
            }
            for (sidecar, service, node) in &nodes {
                topo.assign(sidecar, node);
                topo.assign(service, node);
                topo.set_latency(node, node, p.t1);
            }
            for a in 0..nodes.len() {
                for b in (a + 1)..nodes.len() {
                    topo.set_latency(&nodes[a].2, &nodes[b].2, p.t2);
                }
            }
            project_setup(&chor, topo)
        }
    }
}
