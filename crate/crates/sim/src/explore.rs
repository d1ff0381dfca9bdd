//! Exhaustive small-scope exploration.
//!
//! States are pairs of a configuration and the number of restarts spent
//! so far; every interleaving and every placement of up to the budgeted
//! number of restarts is enumerated. The explored graph is acyclic
//! because every non-restart step strictly shrinks a well-founded
//! measure (program size plus active-set size) and restarts strictly
//! consume budget, so the longest path is finite and is reported as the
//! witness for bounded termination.

use crate::policy::FaultPolicy;
use serde::Serialize;
use std::collections::{HashMap, HashSet};
use troupe_kernel::chor::{chor_steps, ChorConfig};
use troupe_kernel::net::{is_net_deadlocked, net_steps, restart_process};
use troupe_kernel::{NetConfig, Semantics};

#[derive(Debug, Clone, Serialize)]
pub struct ExploreReport {
    /// Distinct (configuration, restarts-used) nodes visited.
    pub states: usize,
    /// Semantic terminal configurations (no non-restart step enabled).
    pub terminals: usize,
    /// Terminals that are deadlocked: unfinished programs, active set
    /// non-empty.
    pub deadlocked: Vec<String>,
    /// Terminals violating the all-or-nothing saga shape.
    pub atomicity_violations: Vec<String>,
    /// Longest path length in the budgeted transition graph.
    pub max_path_len: usize,
    /// Set when the state bound was hit; results are partial.
    pub inconclusive: bool,
}

impl ExploreReport {
    pub fn ok(&self) -> bool {
        !self.inconclusive && self.deadlocked.is_empty() && self.atomicity_violations.is_empty()
    }
}

/// Whether a terminal network configuration satisfies the saga
/// dichotomy: everyone finished with compensation-free logs, or
/// everyone inactive with fully reverse-compensated logs.
pub fn net_atomicity_ok(cfg: &NetConfig) -> bool {
    if cfg.active == cfg.start_active {
        cfg.net.all_nil() && !cfg.logs.has_any_comp()
    } else if cfg.active.is_empty() {
        cfg.start_active
            .iter()
            .all(|p| cfg.logs.is_fully_compensated(p))
    } else {
        false
    }
}

/// Whether a terminal choreographic configuration satisfies the
/// dichotomy at the choreography level.
pub fn chor_atomicity_ok(cfg: &ChorConfig) -> bool {
    if cfg.active == cfg.start_active {
        cfg.chor.is_nil() && !cfg.logs.has_any_comp()
    } else if cfg.active.is_empty() {
        cfg.start_active
            .iter()
            .all(|p| cfg.logs.is_fully_compensated(p))
    } else {
        false
    }
}

/// Exhaustively explore the network under the fault policy.
pub fn explore_exhaustive(
    sem: &Semantics,
    start: &NetConfig,
    policy: &FaultPolicy,
    state_bound: usize,
) -> ExploreReport {
    let mut explorer = NetExplorer {
        sem,
        policy,
        state_bound,
        memo: HashMap::new(),
        on_stack: HashSet::new(),
        terminals: HashSet::new(),
        deadlocked: Vec::new(),
        atomicity_violations: Vec::new(),
        inconclusive: false,
    };
    let max_path_len = explorer.longest_path(start.clone(), 0);
    ExploreReport {
        states: explorer.memo.len(),
        terminals: explorer.terminals.len(),
        deadlocked: explorer.deadlocked,
        atomicity_violations: explorer.atomicity_violations,
        max_path_len,
        inconclusive: explorer.inconclusive,
    }
}

struct NetExplorer<'a> {
    sem: &'a Semantics<'a>,
    policy: &'a FaultPolicy,
    state_bound: usize,
    memo: HashMap<(NetConfig, u32), usize>,
    on_stack: HashSet<(NetConfig, u32)>,
    terminals: HashSet<NetConfig>,
    deadlocked: Vec<String>,
    atomicity_violations: Vec<String>,
    inconclusive: bool,
}

impl NetExplorer<'_> {
    fn longest_path(&mut self, cfg: NetConfig, used: u32) -> usize {
        let key = (cfg, used);
        if let Some(&n) = self.memo.get(&key) {
            return n;
        }
        if self.memo.len() >= self.state_bound {
            self.inconclusive = true;
            return 0;
        }
        assert!(
            self.on_stack.insert(key.clone()),
            "cycle in the budgeted transition graph: unbounded execution"
        );
        let (cfg, used) = (&key.0, key.1);

        let plain = net_steps(self.sem, cfg, false);
        if plain.is_empty() && self.terminals.insert(cfg.clone()) {
            if is_net_deadlocked(self.sem, cfg) {
                self.deadlocked.push(render_net_terminal(cfg));
            }
            if !net_atomicity_ok(cfg) {
                self.atomicity_violations.push(render_net_terminal(cfg));
            }
        }

        let mut best = 0;
        for (_, next) in plain {
            best = best.max(1 + self.longest_path(next, used));
        }
        if used < self.policy.max_restarts {
            for p in cfg.net.processes().cloned().collect::<Vec<_>>() {
                if self.policy.may_restart(&p) {
                    let next = restart_process(cfg, &p).expect("declared process");
                    best = best.max(1 + self.longest_path(next, used + 1));
                }
            }
        }
        self.on_stack.remove(&key);
        self.memo.insert(key, best);
        best
    }
}

fn render_net_terminal(cfg: &NetConfig) -> String {
    let progs: Vec<String> = cfg
        .net
        .procs
        .iter()
        .map(|(p, prog)| format!("{p}[{prog}]"))
        .collect();
    let logs: Vec<String> = cfg
        .start_active
        .iter()
        .map(|p| {
            let entries: Vec<String> = cfg
                .logs
                .log_of(p)
                .iter()
                .map(|e| e.to_string())
                .collect();
            format!("T({p})=<{}>", entries.join(", "))
        })
        .collect();
    format!(
        "{} | A={{{}}} | {}",
        progs.join(" | "),
        cfg.active
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(","),
        logs.join(" ")
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct ChorExploreReport {
    pub states: usize,
    pub terminals: usize,
    /// Terminals violating the deadlock-freedom dichotomy: program not
    /// finished yet active set non-empty.
    pub stuck: Vec<String>,
    pub atomicity_violations: Vec<String>,
    pub max_path_len: usize,
    pub inconclusive: bool,
}

impl ChorExploreReport {
    pub fn ok(&self) -> bool {
        !self.inconclusive && self.stuck.is_empty() && self.atomicity_violations.is_empty()
    }
}

/// Exhaustively explore a choreography (no restarts at this level).
pub fn explore_chor(sem: &Semantics, start: &ChorConfig, state_bound: usize) -> ChorExploreReport {
    let mut memo: HashMap<ChorConfig, usize> = HashMap::new();
    let mut stuck = Vec::new();
    let mut violations = Vec::new();
    let mut terminals = 0usize;
    let mut inconclusive = false;
    let mut stack: Vec<(ChorConfig, Option<Vec<ChorConfig>>)> = vec![(start.clone(), None)];

    // Iterative post-order longest-path over the acyclic step graph.
    while let Some((cfg, succs)) = stack.pop() {
        match succs {
            None => {
                if memo.contains_key(&cfg) {
                    continue;
                }
                if memo.len() >= state_bound {
                    inconclusive = true;
                    continue;
                }
                let next: Vec<ChorConfig> =
                    chor_steps(sem, &cfg).into_iter().map(|(_, c)| c).collect();
                if next.is_empty() {
                    terminals += 1;
                    let finished = cfg.chor.is_nil() || cfg.active.is_empty();
                    if !finished {
                        stuck.push(cfg.chor.to_string());
                    }
                    if !chor_atomicity_ok(&cfg) {
                        violations.push(cfg.chor.to_string());
                    }
                    memo.insert(cfg, 0);
                    continue;
                }
                stack.push((cfg, Some(next.clone())));
                for s in next {
                    stack.push((s, None));
                }
            }
            Some(next) => {
                let best = next
                    .iter()
                    .map(|s| memo.get(s).copied().unwrap_or(0) + 1)
                    .max()
                    .unwrap_or(0);
                memo.insert(cfg, best);
            }
        }
    }

    let max_path_len = memo.get(start).copied().unwrap_or(0);
    ChorExploreReport {
        states: memo.len(),
        terminals,
        stuck,
        atomicity_violations: violations,
        max_path_len,
        inconclusive,
    }
}
