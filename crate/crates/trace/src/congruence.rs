//! Congruence of configurations and executions.
//!
//! Two network configurations are congruent when the durable stores
//! (message map and transaction logs) and the active set are equal, and
//! the programs, variable stores, and sequence rows agree on every
//! *active* process. A process that has compensated is opaque: whatever
//! program or local state it is stuck with cannot influence anything.

use crate::trace::ExecutionTrace;
use troupe_kernel::NetConfig;

pub fn cfg_congruent(a: &NetConfig, b: &NetConfig) -> bool {
    if a.msgs != b.msgs || a.logs != b.logs || a.active != b.active {
        return false;
    }
    if a.start_active != b.start_active {
        return false;
    }
    for p in &a.active {
        if a.net.program_of(p) != b.net.program_of(p) {
            return false;
        }
    }
    a.vars.restrict(&a.active) == b.vars.restrict(&b.active)
        && a.seqs.restrict(&a.active) == b.seqs.restrict(&b.active)
}

/// Pointwise congruence: equal length, equal labels, and congruent
/// configurations throughout, including the initial ones.
pub fn exec_congruent(a: &ExecutionTrace, b: &ExecutionTrace) -> bool {
    if a.len() != b.len() {
        return false;
    }
    if !cfg_congruent(a.init(), b.init()) {
        return false;
    }
    a.steps()
        .iter()
        .zip(b.steps())
        .all(|(x, y)| x.label == y.label && cfg_congruent(&x.next, &y.next))
}
