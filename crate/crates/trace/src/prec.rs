//! The efficiency ordering on executions.
//!
//! An execution is below another when they share an exact prefix, then
//! differ in a window where one distinguished process `p` has had steps
//! pruned, and end in congruent suffixes:
//!
//! * inside the window, a step by any process other than `p` appears on
//!   both sides; a plain step by `p` appears only on the right (it was
//!   pruned from the left);
//! * a restart or compensation by `p` may also appear on both sides:
//!   both reset whatever divergence `p` accumulated, a restart by
//!   returning `p` to its fixed initial state and a compensation by
//!   deactivating `p`, and their effect on the shared stores depends
//!   only on state the two sides agree on;
//! * at every aligned point the two sides agree on everything except
//!   `p`'s own program, store rows, and sequence rows, and the durable
//!   stores are equal outright.
//!
//! The ordering is closed under chaining, which is how traces with
//! several pruned restarts relate to their restart-free core.

use crate::congruence::cfg_congruent;
use crate::trace::ExecutionTrace;
use std::collections::{BTreeSet, HashMap};
use troupe_kernel::{NetConfig, ProcName, TransitionLabel};

/// A factorization certificate for one application of the ordering:
/// `prefix_len` steps of exact common prefix, then a window pruned for
/// `process`, then pointwise-congruent suffixes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrecWitness {
    pub process: ProcName,
    pub prefix_len: usize,
    pub left_window_end: usize,
    pub right_window_end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PrecError {
    #[error("initial configurations differ")]
    InitMismatch,
    #[error("witness indices out of range or inconsistent suffix lengths")]
    BadIndices,
    #[error("common prefix diverges at step {0}")]
    PrefixMismatch(usize),
    #[error("window does not match for process {0}")]
    WindowMismatch(ProcName),
    #[error("suffixes are not pointwise congruent at offset {0}")]
    SuffixMismatch(usize),
}

/// Agreement on everything except `p`'s own components: equal message
/// map, transaction logs, and active set; equal programs, store rows,
/// and sequence rows for every process other than `p`.
pub fn agree_outside(a: &NetConfig, b: &NetConfig, p: &ProcName) -> bool {
    if a.msgs != b.msgs || a.logs != b.logs || a.active != b.active {
        return false;
    }
    let others: BTreeSet<ProcName> = a
        .net
        .processes()
        .chain(b.net.processes())
        .filter(|q| *q != p)
        .cloned()
        .collect();
    for q in &others {
        if a.net.program_of(q) != b.net.program_of(q) {
            return false;
        }
    }
    a.vars.restrict(&others) == b.vars.restrict(&others)
        && a.seqs.restrict(&others) == b.seqs.restrict(&others)
}

/// Whether a step by `p` may be matched on both sides of the window:
/// the two label kinds that erase `p`'s accumulated divergence.
fn is_reset_label(label: &TransitionLabel, p: &ProcName) -> bool {
    matches!(
        label,
        TransitionLabel::RestartEv(q) | TransitionLabel::CompensateEv(q) if q == p
    )
}

/// The per-process window relation between `left` and `right`, both
/// taken as whole traces. The anchors must agree outside `p`.
pub fn prec_p(left: &ExecutionTrace, right: &ExecutionTrace, p: &ProcName) -> bool {
    if !agree_outside(left.init(), right.init(), p) {
        return false;
    }
    let mut memo = HashMap::new();
    window_match(left, right, p, 0, 0, &mut memo)
}

fn window_match(
    left: &ExecutionTrace,
    right: &ExecutionTrace,
    p: &ProcName,
    i: usize,
    j: usize,
    memo: &mut HashMap<(usize, usize), bool>,
) -> bool {
    if let Some(&r) = memo.get(&(i, j)) {
        return r;
    }
    let result = (|| {
        if j == right.len() {
            return i == left.len();
        }
        let rs = &right.steps()[j];
        if rs.label.performer() != p {
            // Common step by another process: must appear on both sides.
            let Some(ls) = left.steps().get(i) else {
                return false;
            };
            if ls.label != rs.label || !agree_outside(&ls.next, &rs.next, p) {
                return false;
            }
            return window_match(left, right, p, i + 1, j + 1, memo);
        }
        // A step by p. Option one: it was pruned from the left, which is
        // only sound if it touched nothing but p's own components.
        if agree_outside(left.config_at(i), &rs.next, p)
            && window_match(left, right, p, i, j + 1, memo)
        {
            return true;
        }
        // Option two: a reset step kept on both sides.
        if is_reset_label(&rs.label, p) {
            if let Some(ls) = left.steps().get(i) {
                if ls.label == rs.label
                    && agree_outside(&ls.next, &rs.next, p)
                    && window_match(left, right, p, i + 1, j + 1, memo)
                {
                    return true;
                }
            }
        }
        false
    })();
    memo.insert((i, j), result);
    result
}

/// Check a single application of the ordering against its certificate.
pub fn check_prec_witness(
    left: &ExecutionTrace,
    right: &ExecutionTrace,
    w: &PrecWitness,
) -> Result<(), PrecError> {
    let a = w.prefix_len;
    if a > w.left_window_end
        || a > w.right_window_end
        || w.left_window_end > left.len()
        || w.right_window_end > right.len()
        || left.len() - w.left_window_end != right.len() - w.right_window_end
    {
        return Err(PrecError::BadIndices);
    }
    if left.init() != right.init() {
        return Err(PrecError::InitMismatch);
    }
    // Exact common prefix: labels and configurations.
    for k in 0..a {
        if left.steps()[k] != right.steps()[k] {
            return Err(PrecError::PrefixMismatch(k));
        }
    }
    // Window.
    let (_, left_rest) = left.split_at(a);
    let (left_win, left_suffix) = left_rest.split_at(w.left_window_end - a);
    let (_, right_rest) = right.split_at(a);
    let (right_win, right_suffix) = right_rest.split_at(w.right_window_end - a);
    if !prec_p(&left_win, &right_win, &w.process) {
        return Err(PrecError::WindowMismatch(w.process.clone()));
    }
    // Congruent suffixes, anchors included.
    if !cfg_congruent(left_suffix.init(), right_suffix.init()) {
        return Err(PrecError::SuffixMismatch(0));
    }
    for (k, (ls, rs)) in left_suffix
        .steps()
        .iter()
        .zip(right_suffix.steps())
        .enumerate()
    {
        if ls.label != rs.label || !cfg_congruent(&ls.next, &rs.next) {
            return Err(PrecError::SuffixMismatch(k + 1));
        }
    }
    Ok(())
}

/// Single-application search: does some factorization witness
/// `left` below `right`? Includes reflexivity through congruence
/// (an empty window). Chains are checked by `prec_chain`.
pub fn prec(left: &ExecutionTrace, right: &ExecutionTrace) -> bool {
    if crate::congruence::exec_congruent(left, right) {
        return true;
    }
    if left.init() != right.init() || left.len() > right.len() {
        return false;
    }
    // Longest exact common prefix.
    let mut max_a = 0;
    while max_a < left.len()
        && max_a < right.len()
        && left.steps()[max_a] == right.steps()[max_a]
    {
        max_a += 1;
    }
    let delta = right.len() - left.len();
    let mut candidates: BTreeSet<ProcName> = right.init().net.processes().cloned().collect();
    candidates.extend(left.init().net.processes().cloned());
    for a in 0..=max_a {
        for b in (a + delta)..=right.len() {
            let left_end = b - delta;
            for p in &candidates {
                let w = PrecWitness {
                    process: p.clone(),
                    prefix_len: a,
                    left_window_end: left_end,
                    right_window_end: b,
                };
                if check_prec_witness(left, right, &w).is_ok() {
                    return true;
                }
            }
        }
    }
    false
}

/// Verify a chain `t0 <= t1 <= ... <= tn` given per-link certificates.
pub fn prec_chain(
    traces: &[ExecutionTrace],
    witnesses: &[PrecWitness],
) -> Result<(), (usize, PrecError)> {
    assert_eq!(traces.len(), witnesses.len() + 1);
    for (k, w) in witnesses.iter().enumerate() {
        check_prec_witness(&traces[k], &traces[k + 1], w).map_err(|e| (k, e))?;
    }
    Ok(())
}
