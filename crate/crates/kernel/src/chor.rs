//! The choreography language: one global program over all processes,
//! with a labeled out-of-order semantics.
//!
//! A choreography is a finite sequence of instructions:
//!
//! ```text
//! C ::= I ; C | 0
//! I ::= p.e -> q.x          value send (runtime residual: p ~> q.x)
//!     | p -> q[L]           selection send (residual: p ~> q[L])
//!     | p.x := e            local assignment
//!     | if p.e { C1 } else { C2 }
//!     | p.x := t(e)         local transaction
//! ```
//!
//! Configurations are 6-tuples of the program and the shared stores.
//! A send appends to the durable message map and leaves an in-flight
//! residual; the matching receive consumes the mapped value by sequence
//! number. Transactions commit into an append-only log or fail, and a
//! failure removes the process from the active set after compensating
//! its log in reverse order; once the active set has shrunk, every
//! remaining active process may compensate at any time.
//!
//! Steps may fire past earlier instructions whose pending actions
//! belong to other processes (the delay rule), which is what makes the
//! semantics complete for the per-process interleavings of projected
//! networks.

use crate::expr::{eval_expr, Expr};
use crate::label::TransitionLabel;
use crate::state::{
    comp, ActiveSet, Direction, LabelName, Msg, MsgState, ProcName, SeqState, TransState, VarName,
    VarStore,
};
use crate::txn::{Outcome, TransName};
use crate::Semantics;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChorInstr {
    /// `p.e -> q.x`: `p` evaluates `e` and sends it to `q`, to be bound
    /// to `q`'s variable `x`.
    Send(ProcName, Expr, ProcName, VarName),
    /// `p ~> q.x`: the message from `p` is already in the message map
    /// and only the receive at `q` is pending. Runtime-only: source
    /// programs contain none.
    InFlight(ProcName, ProcName, VarName),
    /// `p -> q[L]`: `p` sends selection label `L` to `q`.
    SelSend(ProcName, ProcName, LabelName),
    /// `p ~> q[L]`: the selection label is in flight; only the receive
    /// at `q` is pending. Runtime-only.
    SelInFlight(ProcName, ProcName, LabelName),
    /// `p.x := e`: local assignment at `p`.
    Assign(ProcName, VarName, Expr),
    /// `if p.e { C1 } else { C2 }`: conditional decided at `p`.
    Cond(ProcName, Expr, Arc<Choreography>, Arc<Choreography>),
    /// `p.x := t(e)`: local transaction `t` at `p` with input `e`.
    Trans(ProcName, VarName, TransName, Expr),
}

impl ChorInstr {
    /// Whether this instruction form may appear in a source program.
    pub fn is_runtime_only(&self) -> bool {
        matches!(self, ChorInstr::InFlight(..) | ChorInstr::SelInFlight(..))
    }

    /// Processes with a pending projected action in this instruction.
    /// A later step by any of these may not be delayed past it.
    pub fn blocking_procs(&self, out: &mut BTreeSet<ProcName>) {
        match self {
            ChorInstr::Send(p, _, q, _) | ChorInstr::SelSend(p, q, _) => {
                out.insert(p.clone());
                out.insert(q.clone());
            }
            // The sender already acted: only the receive is pending.
            ChorInstr::InFlight(_, q, _) | ChorInstr::SelInFlight(_, q, _) => {
                out.insert(q.clone());
            }
            ChorInstr::Assign(p, _, _) | ChorInstr::Trans(p, _, _, _) => {
                out.insert(p.clone());
            }
            ChorInstr::Cond(p, _, c1, c2) => {
                out.insert(p.clone());
                c1.collect_procs(out);
                c2.collect_procs(out);
            }
        }
    }
}

impl fmt::Display for ChorInstr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChorInstr::Send(p, e, q, x) => write!(f, "{p}.{e} -> {q}.{x}"),
            ChorInstr::InFlight(p, q, x) => write!(f, "{p} ~> {q}.{x}"),
            ChorInstr::SelSend(p, q, l) => write!(f, "{p} -> {q}[{l}]"),
            ChorInstr::SelInFlight(p, q, l) => write!(f, "{p} ~> {q}[{l}]"),
            ChorInstr::Assign(p, x, e) => write!(f, "{p}.{x} := {e}"),
            ChorInstr::Cond(p, e, c1, c2) => {
                write!(f, "if {p}.{e} {{ {c1} }} else {{ {c2} }}")
            }
            ChorInstr::Trans(p, x, t, e) => write!(f, "{p}.{x} := {t}({e})"),
        }
    }
}

/// A finite instruction sequence. Tails are shared, so consuming the
/// head of a long program is cheap.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Choreography {
    Nil,
    Seq(ChorInstr, Arc<Choreography>),
}

impl Choreography {
    pub fn nil() -> Choreography {
        Choreography::Nil
    }

    pub fn from_instrs(instrs: Vec<ChorInstr>) -> Choreography {
        let mut c = Choreography::Nil;
        for i in instrs.into_iter().rev() {
            c = Choreography::Seq(i, Arc::new(c));
        }
        c
    }

    pub fn is_nil(&self) -> bool {
        matches!(self, Choreography::Nil)
    }

    /// Sequential composition: every instruction of `self`, then `rest`.
    pub fn concat(&self, rest: &Choreography) -> Choreography {
        match self {
            Choreography::Nil => rest.clone(),
            Choreography::Seq(i, tail) => {
                Choreography::Seq(i.clone(), Arc::new(tail.concat(rest)))
            }
        }
    }

    /// The instructions along the spine (not descending into branches).
    pub fn instrs(&self) -> ChorIter<'_> {
        ChorIter { cur: self }
    }

    pub fn len(&self) -> usize {
        self.instrs().count()
    }

    pub fn is_empty(&self) -> bool {
        self.is_nil()
    }

    /// Every process performing anything anywhere in the program,
    /// descending into conditional branches.
    pub fn collect_procs(&self, out: &mut BTreeSet<ProcName>) {
        for i in self.instrs() {
            i.blocking_procs(out);
            // blocking_procs already descends into Cond branches and
            // covers senders/receivers; in-flight senders are the one
            // role it skips, which is fine here: an in-flight sender
            // has no pending action.
        }
    }

    pub fn procs(&self) -> BTreeSet<ProcName> {
        let mut out = BTreeSet::new();
        self.collect_procs(&mut out);
        out
    }

    /// Whether any instruction (recursively) is a runtime-only residual.
    pub fn has_runtime_terms(&self) -> bool {
        self.instrs().any(|i| match i {
            ChorInstr::InFlight(..) | ChorInstr::SelInFlight(..) => true,
            ChorInstr::Cond(_, _, c1, c2) => c1.has_runtime_terms() || c2.has_runtime_terms(),
            _ => false,
        })
    }
}

impl fmt::Display for Choreography {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for i in self.instrs() {
            if !first {
                write!(f, "; ")?;
            }
            write!(f, "{i}")?;
            first = false;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

pub struct ChorIter<'a> {
    cur: &'a Choreography,
}

impl<'a> Iterator for ChorIter<'a> {
    type Item = &'a ChorInstr;

    fn next(&mut self) -> Option<&'a ChorInstr> {
        match self.cur {
            Choreography::Nil => None,
            Choreography::Seq(i, tail) => {
                self.cur = tail;
                Some(i)
            }
        }
    }
}

/// A choreographic configuration: the residual program plus the shared
/// stores and the active set, with the initial process set kept around
/// because the compensation rule compares against it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChorConfig {
    pub chor: Choreography,
    pub vars: VarStore,
    pub msgs: MsgState,
    pub seqs: SeqState,
    pub logs: TransState,
    pub active: ActiveSet,
    pub start_active: ActiveSet,
}

impl ChorConfig {
    /// Initial configuration over the given process set, which must
    /// cover every process the program mentions.
    pub fn initial(chor: Choreography, processes: BTreeSet<ProcName>) -> ChorConfig {
        debug_assert!(chor.procs().is_subset(&processes));
        ChorConfig {
            chor,
            vars: VarStore::default(),
            msgs: MsgState::default(),
            seqs: SeqState::default(),
            logs: TransState::default(),
            active: processes.clone(),
            start_active: processes,
        }
    }
}

/// All configurations reachable in exactly one labeled step, in a
/// deterministic order (lexicographic on the label encoding, with the
/// construction order breaking ties).
pub fn chor_steps(sem: &Semantics, cfg: &ChorConfig) -> Vec<(TransitionLabel, ChorConfig)> {
    let mut out: Vec<(TransitionLabel, ChorConfig)> = Vec::new();

    // Instruction steps, recursing past instructions whose pending
    // processes do not include the stepping one.
    let mut blocked: BTreeSet<ProcName> = BTreeSet::new();
    let mut prefix: Vec<ChorInstr> = Vec::new();
    let mut cur = &cfg.chor;
    while let Choreography::Seq(instr, tail) = cur {
        step_instr(sem, cfg, instr, tail, &blocked, &prefix, &mut out);
        instr.blocking_procs(&mut blocked);
        prefix.push(instr.clone());
        if blocked.is_superset(&cfg.active) {
            break;
        }
        cur = tail;
    }

    // Compensation: once someone has failed, every remaining active
    // process may compensate at any moment, whatever the program shape.
    if cfg.active != cfg.start_active {
        for p in &cfg.active {
            let mut next = cfg.clone();
            next.logs = comp(&cfg.logs, p, sem.txns);
            next.active.remove(p);
            out.push((TransitionLabel::CompensateEv(p.clone()), next));
        }
    }

    out.sort_by(|a, b| a.0.canonical_key().cmp(&b.0.canonical_key()));
    out
}

/// Try to step `instr` (at some spine position with `prefix` before it
/// and `tail` after it), honoring the delay-blocking set.
fn step_instr(
    sem: &Semantics,
    cfg: &ChorConfig,
    instr: &ChorInstr,
    tail: &Arc<Choreography>,
    blocked: &BTreeSet<ProcName>,
    prefix: &[ChorInstr],
    out: &mut Vec<(TransitionLabel, ChorConfig)>,
) {
    let rebuild = |core: Choreography| -> Choreography {
        let mut c = core;
        for i in prefix.iter().rev() {
            c = Choreography::Seq(i.clone(), Arc::new(c));
        }
        c
    };
    let consumed = || rebuild((**tail).clone());

    match instr {
        ChorInstr::Send(p, e, q, x) => {
            if blocked.contains(p) || !cfg.active.contains(p) {
                return;
            }
            let Ok(v) = eval_expr(&cfg.vars, p, e, sem.fns) else {
                return;
            };
            let i = cfg.seqs.get(p, q, Direction::Send);
            let mut next = cfg.clone();
            next.msgs.bind(p, q, i, Msg::Val(v.clone()));
            next.seqs.inc_send(p, q);
            next.chor = rebuild(Choreography::Seq(
                ChorInstr::InFlight(p.clone(), q.clone(), x.clone()),
                tail.clone(),
            ));
            out.push((TransitionLabel::SendEv(p.clone(), v, q.clone()), next));
        }
        ChorInstr::InFlight(p, q, x) => {
            if blocked.contains(q) || !cfg.active.contains(q) {
                return;
            }
            let i = cfg.seqs.get(q, p, Direction::Receive);
            let Some(Msg::Val(v)) = cfg.msgs.get(p, q, i).cloned() else {
                return;
            };
            let mut next = cfg.clone();
            next.vars.set(q, x, v.clone());
            next.seqs.inc_recv(q, p);
            next.chor = consumed();
            out.push((TransitionLabel::RecvEv(p.clone(), v, q.clone()), next));
        }
        ChorInstr::SelSend(p, q, l) => {
            if blocked.contains(p) || !cfg.active.contains(p) {
                return;
            }
            let i = cfg.seqs.get(p, q, Direction::Send);
            let mut next = cfg.clone();
            next.msgs.bind(p, q, i, Msg::Label(l.clone()));
            next.seqs.inc_send(p, q);
            next.chor = rebuild(Choreography::Seq(
                ChorInstr::SelInFlight(p.clone(), q.clone(), l.clone()),
                tail.clone(),
            ));
            out.push((
                TransitionLabel::SelSendEv(p.clone(), l.clone(), q.clone()),
                next,
            ));
        }
        ChorInstr::SelInFlight(p, q, l) => {
            if blocked.contains(q) || !cfg.active.contains(q) {
                return;
            }
            let i = cfg.seqs.get(q, p, Direction::Receive);
            let Some(Msg::Label(got)) = cfg.msgs.get(p, q, i) else {
                return;
            };
            if got != l {
                return;
            }
            let mut next = cfg.clone();
            next.seqs.inc_recv(q, p);
            next.chor = consumed();
            out.push((
                TransitionLabel::SelRecvEv(p.clone(), l.clone(), q.clone()),
                next,
            ));
        }
        ChorInstr::Assign(p, x, e) => {
            if blocked.contains(p) || !cfg.active.contains(p) {
                return;
            }
            let Ok(v) = eval_expr(&cfg.vars, p, e, sem.fns) else {
                return;
            };
            let mut next = cfg.clone();
            next.vars.set(p, x, v);
            next.chor = consumed();
            out.push((TransitionLabel::Tau(p.clone()), next));
        }
        ChorInstr::Cond(p, e, c1, c2) => {
            if blocked.contains(p) || !cfg.active.contains(p) {
                return;
            }
            let Ok(v) = eval_expr(&cfg.vars, p, e, sem.fns) else {
                return;
            };
            let Some(b) = v.as_bool() else {
                return;
            };
            let branch = if b { c1 } else { c2 };
            let mut next = cfg.clone();
            next.chor = rebuild(branch.concat(tail));
            out.push((TransitionLabel::Tau(p.clone()), next));
        }
        ChorInstr::Trans(p, x, t, e) => {
            if blocked.contains(p) || !cfg.active.contains(p) {
                return;
            }
            let Ok(v) = eval_expr(&cfg.vars, p, e, sem.fns) else {
                return;
            };
            // Idempotent replay: a commit of (t, v) already in the log
            // returns the recorded output without appending.
            if let Some(out_v) = cfg.logs.committed_output(p, t, &v) {
                let mut next = cfg.clone();
                next.vars.set(p, x, out_v);
                next.chor = consumed();
                out.push((TransitionLabel::Tau(p.clone()), next));
                return;
            }
            match sem.txns.run_commit(t, &v) {
                Some(Outcome::Ok(out_v)) => {
                    let mut next = cfg.clone();
                    next.vars.set(p, x, out_v.clone());
                    next.logs.append_commit(p, t.clone(), v, out_v);
                    next.chor = consumed();
                    out.push((TransitionLabel::Tau(p.clone()), next));
                }
                Some(Outcome::Fail) => {
                    // Fail fires only when no commit of this name is on
                    // the log; a replayed name cannot fail.
                    if !cfg.logs.has_commit_named(p, t) {
                        let mut next = cfg.clone();
                        next.logs = comp(&cfg.logs, p, sem.txns);
                        next.active.remove(p);
                        next.chor = consumed();
                        out.push((TransitionLabel::CompensateEv(p.clone()), next));
                    }
                }
                // Unregistered transaction names offer no step; callers
                // validate registries up front via `validate_registered`.
                None => {}
            }
        }
    }
}

/// True iff no rule applies: the program is done and nobody can
/// compensate, or the active set is empty.
pub fn is_chor_terminated(sem: &Semantics, cfg: &ChorConfig) -> bool {
    chor_steps(sem, cfg).is_empty()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WellformedError {
    #[error("dangling in-flight {0}: message map has no value at {1}")]
    DanglingInFlight(String, u64),
    #[error("in-flight term inside a conditional branch: {0}")]
    InFlightInBranch(String),
    #[error("self-communication: {0}")]
    SelfCommunication(String),
    #[error("unprojectable conditional: {0}")]
    Unprojectable(String),
    #[error("active set is not a subset of the initial process set")]
    ActiveNotSubset,
}

/// Well-formedness of a choreographic configuration:
///
/// (a) every in-flight residual has its message bound in the map at
///     its in-order position, and no residual hides inside a branch;
/// (b) no instruction communicates a process with itself;
/// (c) the residual program is projectable;
/// (d) the active set is within the initial process set.
pub fn check_chor_wellformed(cfg: &ChorConfig) -> Result<(), Vec<WellformedError>> {
    let mut errs = Vec::new();

    check_no_self_comm(&cfg.chor, &mut errs);

    // Clause (a): count in-flight residuals per (sender, receiver) pair
    // along the spine; the j-th pending one must be bound at the
    // receiver's next expected index plus j.
    let mut offsets: std::collections::BTreeMap<(ProcName, ProcName), u64> =
        std::collections::BTreeMap::new();
    for instr in cfg.chor.instrs() {
        match instr {
            ChorInstr::InFlight(p, q, _) | ChorInstr::SelInFlight(p, q, _) => {
                let off = offsets.entry((p.clone(), q.clone())).or_insert(0);
                let idx = cfg.seqs.get(q, p, Direction::Receive) + *off;
                let bound = cfg.msgs.get(p, q, idx);
                let ok = match (instr, bound) {
                    (ChorInstr::InFlight(..), Some(Msg::Val(_))) => true,
                    (ChorInstr::SelInFlight(_, _, l), Some(Msg::Label(got))) => got == l,
                    _ => false,
                };
                if !ok {
                    errs.push(WellformedError::DanglingInFlight(instr.to_string(), idx));
                }
                *off += 1;
            }
            ChorInstr::Cond(_, _, c1, c2) => {
                if c1.has_runtime_terms() || c2.has_runtime_terms() {
                    errs.push(WellformedError::InFlightInBranch(instr.to_string()));
                }
            }
            _ => {}
        }
    }

    if let Err(diags) = crate::project::check_projectability(&cfg.chor) {
        for d in diags {
            errs.push(WellformedError::Unprojectable(d.to_string()));
        }
    }

    if !cfg.active.is_subset(&cfg.start_active) {
        errs.push(WellformedError::ActiveNotSubset);
    }

    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

fn check_no_self_comm(c: &Choreography, errs: &mut Vec<WellformedError>) {
    for instr in c.instrs() {
        match instr {
            ChorInstr::Send(p, _, q, _)
            | ChorInstr::InFlight(p, q, _)
            | ChorInstr::SelSend(p, q, _)
            | ChorInstr::SelInFlight(p, q, _) => {
                if p == q {
                    errs.push(WellformedError::SelfCommunication(instr.to_string()));
                }
            }
            ChorInstr::Cond(_, _, c1, c2) => {
                check_no_self_comm(c1, errs);
                check_no_self_comm(c2, errs);
            }
            _ => {}
        }
    }
}

/// Every function and transaction name the program mentions must be
/// registered; run this before execution so step enumeration never has
/// to guess at missing names.
pub fn validate_registered(c: &Choreography, sem: &Semantics) -> Result<(), String> {
    for instr in c.instrs() {
        let exprs: Vec<&Expr> = match instr {
            ChorInstr::Send(_, e, _, _)
            | ChorInstr::Assign(_, _, e)
            | ChorInstr::Trans(_, _, _, e)
            | ChorInstr::Cond(_, e, _, _) => vec![e],
            _ => vec![],
        };
        for e in exprs {
            let mut names = Vec::new();
            e.function_names(&mut names);
            for n in names {
                if !sem.fns.contains(&n) {
                    return Err(format!("unregistered function `{n}` in `{instr}`"));
                }
            }
        }
        match instr {
            ChorInstr::Trans(_, _, t, _) => {
                if !sem.txns.contains(t) {
                    return Err(format!("unregistered transaction `{t}` in `{instr}`"));
                }
            }
            ChorInstr::Cond(_, _, c1, c2) => {
                validate_registered(c1, sem)?;
                validate_registered(c2, sem)?;
            }
            _ => {}
        }
    }
    Ok(())
}
