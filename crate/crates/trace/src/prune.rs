//! Constructive restart pruning.
//!
//! Given a terminated execution with at least one restart, remove the
//! last restart event together with the pruned process's replay steps,
//! producing an execution with one fewer restart that sits below the
//! original in the efficiency ordering.
//!
//! Taking the restart of process `p` at index `r`, the window extends
//! forward until the first of:
//!
//! * `p` replays back to its pre-restart program, store rows, and
//!   sequence rows (re-convergence) — drop the restart and the replay
//!   steps, after which both sides are in the same configuration;
//! * `p` compensates — drop the restart and the replayed steps and
//!   keep the compensation, re-anchored at `p`'s pre-restart program
//!   (a compensation is insensitive to `p`'s position, and afterwards
//!   `p` is inactive so the residual divergence is invisible);
//! * `p` restarts again — drop the earlier restart and the partial
//!   replay, keep the later restart (a restart erases the divergence
//!   outright);
//! * the trace ends without any further step by `p` — only possible
//!   when `p` is already inactive, so dropping the restart leaves a
//!   congruent suffix.
//!
//! Every non-`p` step in the window is kept and re-applied; the steps
//! being dropped are checked to touch nothing outside `p`, so a failed
//! splice is reported loudly instead of silently producing a wrong
//! trace: it would contradict the recovery property.

use crate::prec::{agree_outside, PrecWitness};
use crate::trace::{ExecutionTrace, TraceStep};
use troupe_kernel::net::{is_net_terminated, net_steps};
use troupe_kernel::{NetConfig, ProcName, Semantics, TransitionLabel};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PruneError {
    #[error("trace has no restart event")]
    NoRestart,
    #[error("trace is not terminated")]
    NotTerminated,
    #[error(
        "step {index} ({label}) by the pruned process touches shared state and cannot be \
         dropped; this contradicts replay recovery"
    )]
    ImpureReplayStep { index: usize, label: String },
    #[error("no successor with label {label} re-applies at spliced step {index}")]
    SpliceFailed { index: usize, label: String },
    #[error(
        "restarted process {0} is still active at the end of the trace without re-converging, \
         compensating, or restarting again"
    )]
    DanglingReplay(ProcName),
}

enum WindowEnd {
    /// Right-exclusive index just past the last dropped replay step.
    Reconverged(usize),
    /// Index of the kept reset step (compensate or second restart).
    Reset(usize),
    /// The trace ends with `p` inactive and silent.
    TraceEnd,
}

/// Remove the last restart of `trace`, returning the pruned execution
/// and the certificate placing it below `trace` in the ordering.
pub fn prune_one_restart(
    trace: &ExecutionTrace,
    sem: &Semantics,
) -> Result<(ExecutionTrace, PrecWitness), PruneError> {
    let r = trace
        .steps()
        .iter()
        .rposition(|s| s.label.is_restart())
        .ok_or(PruneError::NoRestart)?;
    if !is_net_terminated(sem, trace.final_config()) {
        return Err(PruneError::NotTerminated);
    }
    let p = trace.steps()[r].label.performer().clone();
    let snapshot = trace.config_at(r).local_snapshot(&p);

    // Find where the window ends. Only p's steps move p's snapshot, so
    // checking re-convergence at every boundary also covers a restart
    // that was already at p's initial state.
    let mut end = WindowEnd::TraceEnd;
    for i in (r + 1)..=trace.len() {
        if trace.config_at(i).local_snapshot(&p) == snapshot {
            end = WindowEnd::Reconverged(i);
            break;
        }
        if i == trace.len() {
            break;
        }
        let step = &trace.steps()[i];
        if step.label.performer() != &p {
            continue;
        }
        match &step.label {
            TransitionLabel::RestartEv(_) | TransitionLabel::CompensateEv(_) => {
                end = WindowEnd::Reset(i);
                break;
            }
            _ => {}
        }
    }
    let (window_end_right, keep_reset) = match end {
        WindowEnd::Reconverged(i) => (i, false),
        WindowEnd::Reset(i) => (i + 1, true),
        WindowEnd::TraceEnd => {
            if trace.final_config().active.contains(&p) {
                return Err(PruneError::DanglingReplay(p));
            }
            (trace.len(), false)
        }
    };

    // Rebuild: shared prefix, spliced window, re-anchored suffix.
    let mut steps: Vec<TraceStep> = trace.steps()[..r].to_vec();
    let mut cur: NetConfig = trace.config_at(r).clone();
    let mut kept_in_window = 0usize;

    for i in r..window_end_right {
        let step = &trace.steps()[i];
        let is_reset_step = keep_reset && i == window_end_right - 1;
        if step.label.performer() == &p && !is_reset_step {
            // Dropped: must be the restart itself or a pure replay step.
            if !agree_outside(trace.config_at(i), &step.next, &p) {
                return Err(PruneError::ImpureReplayStep {
                    index: i,
                    label: step.label.to_string(),
                });
            }
            continue;
        }
        cur = apply_matching(sem, &cur, &step.label, &step.next, &p, i)?;
        steps.push(TraceStep {
            label: step.label.clone(),
            next: cur.clone(),
        });
        kept_in_window += 1;
    }

    for i in window_end_right..trace.len() {
        let step = &trace.steps()[i];
        cur = apply_matching(sem, &cur, &step.label, &step.next, &p, i)?;
        steps.push(TraceStep {
            label: step.label.clone(),
            next: cur.clone(),
        });
    }

    let witness = PrecWitness {
        process: p,
        prefix_len: r,
        left_window_end: r + kept_in_window,
        right_window_end: window_end_right,
    };
    Ok((
        ExecutionTrace::from_steps_unchecked(trace.init().clone(), steps),
        witness,
    ))
}

/// Apply `label` from `cur`, choosing the successor that agrees with
/// the reference configuration outside `p`.
fn apply_matching(
    sem: &Semantics,
    cur: &NetConfig,
    label: &TransitionLabel,
    reference: &NetConfig,
    p: &ProcName,
    index: usize,
) -> Result<NetConfig, PruneError> {
    net_steps(sem, cur, label.is_restart())
        .into_iter()
        .find(|(l, next)| l == label && agree_outside(next, reference, p))
        .map(|(_, next)| next)
        .ok_or_else(|| PruneError::SpliceFailed {
            index,
            label: label.to_string(),
        })
}
