//! The seeded pseudo-random scheduler: a maximal execution drawn
//! uniformly over enabled steps, with restart injection under a budget.
//!
//! Runs are reproducible per seed. The scheduler consumes the whole
//! restart budget: if the network terminates while budget remains, an
//! eligible process is restarted and replays, so a requested fault
//! count is actually exercised.

use crate::policy::FaultPolicy;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use troupe_kernel::net::{net_steps, restart_process};
use troupe_kernel::project::project_all;
use troupe_kernel::{Choreography, NetConfig, ProcName, Semantics, TransitionLabel, VarStore};
use troupe_trace::{ExecutionTrace, TraceStep};

const RESTART_PROBABILITY: f64 = 0.2;
const STEP_LIMIT: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunError {
    #[error("run exceeded {0} steps; the configuration should have terminated")]
    StepLimit(usize),
    #[error("choreography is not projectable: {0}")]
    Unprojectable(String),
}

/// A maximal execution of the network from its initial configuration.
pub fn run_random(
    sem: &Semantics,
    start: NetConfig,
    policy: &FaultPolicy,
    seed: u64,
) -> Result<ExecutionTrace, RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eligible: Vec<ProcName> = start
        .net
        .processes()
        .filter(|p| policy.may_restart(p))
        .cloned()
        .collect();
    let mut steps: Vec<TraceStep> = Vec::new();
    let mut cur = start.clone();
    let mut restarts_used = 0u32;

    loop {
        if steps.len() > STEP_LIMIT {
            return Err(RunError::StepLimit(STEP_LIMIT));
        }
        let enabled = net_steps(sem, &cur, false);
        let budget_left = restarts_used < policy.max_restarts && !eligible.is_empty();
        let inject = budget_left && (enabled.is_empty() || rng.gen_bool(RESTART_PROBABILITY));
        if inject {
            let p = eligible.choose(&mut rng).expect("nonempty");
            let next = restart_process(&cur, p).expect("declared process");
            steps.push(TraceStep {
                label: TransitionLabel::RestartEv(p.clone()),
                next: next.clone(),
            });
            cur = next;
            restarts_used += 1;
            continue;
        }
        if enabled.is_empty() {
            break;
        }
        let (label, next) = enabled.choose(&mut rng).expect("nonempty").clone();
        steps.push(TraceStep {
            label,
            next: next.clone(),
        });
        cur = next;
    }
    Ok(ExecutionTrace::from_steps_unchecked(start, steps))
}

/// Project a choreography and run the resulting network.
pub fn run_random_chor(
    sem: &Semantics,
    chor: &Choreography,
    declared: &BTreeSet<ProcName>,
    policy: &FaultPolicy,
    seed: u64,
) -> Result<ExecutionTrace, RunError> {
    let projection = project_all(chor, declared);
    if !projection.is_ok() {
        return Err(RunError::Unprojectable(
            projection
                .diagnostics
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        ));
    }
    let start = NetConfig::initial(projection.programs, VarStore::default());
    run_random(sem, start, policy, seed)
}
