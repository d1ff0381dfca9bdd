//! Co-exploration of a choreography and its projected network.
//!
//! The joint invariant on a reachable pair is that the shared stores
//! and active set coincide and the network sits above the projection of
//! the residual choreography in the branch-pruning order (a branch in
//! the network may carry labels the choreography has already discarded
//! by taking the other side of a conditional).
//!
//! Completeness direction: every choreography step is matched by an
//! identically labeled network step whose target re-establishes the
//! invariant. Soundness direction: every non-restart network step is
//! matched by an identically labeled choreography step likewise. The
//! first unmatched step is reported as a counterexample.

use serde::Serialize;
use std::collections::{BTreeSet, HashSet, VecDeque};
use troupe_kernel::chor::{chor_steps, ChorConfig};
use troupe_kernel::net::net_steps;
use troupe_kernel::project::{network_geq, project_all};
use troupe_kernel::{ChorConfig as Cc, Choreography, NetConfig, ProcName, Semantics, VarStore};

#[derive(Debug, Clone, Serialize)]
pub struct BisimReport {
    pub pairs_checked: usize,
    pub depth_reached: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub direction: &'static str,
    pub label: String,
    pub choreography: String,
    pub network: String,
    pub detail: String,
}

fn stores_equal(c: &ChorConfig, n: &NetConfig) -> bool {
    c.vars == n.vars
        && c.msgs == n.msgs
        && c.seqs == n.seqs
        && c.logs == n.logs
        && c.active == n.active
        && c.start_active == n.start_active
}

fn invariant(c: &ChorConfig, n: &NetConfig) -> bool {
    if !stores_equal(c, n) {
        return false;
    }
    let declared: BTreeSet<ProcName> = n.net.processes().cloned().collect();
    let projected = project_all(&c.chor, &declared);
    projected.is_ok() && network_geq(&n.net.procs, &projected.programs)
}

/// Check both projection lemmas by co-exploration up to `depth_bound`.
pub fn check_bisimulation(
    sem: &Semantics,
    chor: &Choreography,
    declared: &BTreeSet<ProcName>,
    depth_bound: usize,
) -> Result<BisimReport, Box<Counterexample>> {
    let projection = project_all(chor, declared);
    if !projection.is_ok() {
        return Err(Box::new(Counterexample {
            direction: "projection",
            label: String::new(),
            choreography: chor.to_string(),
            network: String::new(),
            detail: projection
                .diagnostics
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        }));
    }
    let processes: BTreeSet<ProcName> = projection.programs.keys().cloned().collect();
    let c0 = Cc::initial(chor.clone(), processes);
    let n0 = NetConfig::initial(projection.programs, VarStore::default());
    check_bisimulation_from(sem, c0, n0, depth_bound)
}

/// Co-explore from an explicit starting pair. Exposed so negative
/// controls can pair a choreography with a corrupted network.
pub fn check_bisimulation_from(
    sem: &Semantics,
    c0: ChorConfig,
    n0: NetConfig,
    depth_bound: usize,
) -> Result<BisimReport, Box<Counterexample>> {
    let mut seen: HashSet<(ChorConfig, NetConfig)> = HashSet::new();
    let mut queue: VecDeque<(ChorConfig, NetConfig, usize)> = VecDeque::new();
    seen.insert((c0.clone(), n0.clone()));
    queue.push_back((c0, n0, 0));
    let mut pairs_checked = 0usize;
    let mut depth_reached = 0usize;

    while let Some((c, n, depth)) = queue.pop_front() {
        pairs_checked += 1;
        depth_reached = depth_reached.max(depth);
        if depth >= depth_bound {
            continue;
        }
        let cs = chor_steps(sem, &c);
        let ns = net_steps(sem, &n, false);

        // Completeness: choreography step -> network step.
        for (label, c_next) in &cs {
            let matched = ns
                .iter()
                .find(|(l, n_next)| l == label && invariant(c_next, n_next));
            match matched {
                Some((_, n_next)) => {
                    let pair = (c_next.clone(), n_next.clone());
                    if seen.insert(pair.clone()) {
                        queue.push_back((pair.0, pair.1, depth + 1));
                    }
                }
                None => {
                    return Err(Box::new(Counterexample {
                        direction: "completeness",
                        label: label.to_string(),
                        choreography: c.chor.to_string(),
                        network: render_net(&n),
                        detail: "no network step with this label reaches a configuration \
                                 above the projected successor"
                            .into(),
                    }))
                }
            }
        }

        // Soundness: network step -> choreography step.
        for (label, n_next) in &ns {
            let matched = cs
                .iter()
                .find(|(l, c_next)| l == label && invariant(c_next, n_next));
            match matched {
                Some((_, c_next)) => {
                    let pair = (c_next.clone(), n_next.clone());
                    if seen.insert(pair.clone()) {
                        queue.push_back((pair.0, pair.1, depth + 1));
                    }
                }
                None => {
                    return Err(Box::new(Counterexample {
                        direction: "soundness",
                        label: label.to_string(),
                        choreography: c.chor.to_string(),
                        network: render_net(&n),
                        detail: "no choreography step with this label stays below the \
                                 network successor"
                            .into(),
                    }))
                }
            }
        }
    }
    Ok(BisimReport {
        pairs_checked,
        depth_reached,
    })
}

fn render_net(n: &NetConfig) -> String {
    n.net
        .procs
        .iter()
        .map(|(p, prog)| format!("{p}[{prog}]"))
        .collect::<Vec<_>>()
        .join(" | ")
}
