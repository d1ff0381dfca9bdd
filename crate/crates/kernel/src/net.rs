//! The network language: one sequential endpoint program per process,
//! composed in parallel over the shared stores.
//!
//! ```text
//! P ::= I ; P | 0
//! I ::= q ! e                 send value to q
//!     | p ? x                 receive value from p
//!     | q (+) L               send selection label to q
//!     | p & { L1: P1, ... }   branch on a label from p
//!     | x := e                local assignment
//!     | if e { P } else { Q } local conditional
//!     | x := t(e)             local transaction
//! ```
//!
//! The semantics mirrors the choreography rules process-wise, plus a
//! `restart` transition that resets one process to its initial program,
//! initial store rows, and zeroed sequence rows while the durable
//! message map and transaction logs persist. Replay after a restart is
//! invisible: sends rebind equal values, receives reread the map, and
//! committed transactions return their recorded outputs.

use crate::expr::{eval_expr, Expr};
use crate::label::TransitionLabel;
use crate::state::{
    comp, ActiveSet, Direction, LabelName, Msg, MsgState, ProcName, SeqState, TransState, VarName,
    VarStore,
};
use crate::txn::{Outcome, TransName};
use crate::value::Value;
use crate::Semantics;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProcInstr {
    /// `q ! e`: send the value of `e` to `q`.
    SendTo(ProcName, Expr),
    /// `p ? x`: receive a value from `p` into `x`.
    RecvFrom(ProcName, VarName),
    /// `q (+) L`: send selection label `L` to `q`.
    Select(ProcName, LabelName),
    /// `p & { L1: P1, ... }`: receive a label from `p` and continue
    /// with the matching branch. Labels are non-empty and unique.
    Branch(ProcName, BTreeMap<LabelName, ProcProgram>),
    /// `x := e`.
    Assign(VarName, Expr),
    /// `if e { P } else { Q }`.
    Cond(Expr, Arc<ProcProgram>, Arc<ProcProgram>),
    /// `x := t(e)`.
    Trans(VarName, TransName, Expr),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProcProgram {
    Nil,
    Seq(Box<ProcInstr>, Arc<ProcProgram>),
}

impl ProcProgram {
    pub fn nil() -> ProcProgram {
        ProcProgram::Nil
    }

    pub fn from_instrs(instrs: Vec<ProcInstr>) -> ProcProgram {
        let mut p = ProcProgram::Nil;
        for i in instrs.into_iter().rev() {
            p = ProcProgram::Seq(Box::new(i), Arc::new(p));
        }
        p
    }

    pub fn is_nil(&self) -> bool {
        matches!(self, ProcProgram::Nil)
    }

    pub fn seq(head: ProcInstr, tail: ProcProgram) -> ProcProgram {
        ProcProgram::Seq(Box::new(head), Arc::new(tail))
    }

    pub fn concat(&self, rest: &ProcProgram) -> ProcProgram {
        match self {
            ProcProgram::Nil => rest.clone(),
            ProcProgram::Seq(i, tail) => {
                ProcProgram::Seq(i.clone(), Arc::new(tail.concat(rest)))
            }
        }
    }

    pub fn head(&self) -> Option<(&ProcInstr, &Arc<ProcProgram>)> {
        match self {
            ProcProgram::Nil => None,
            ProcProgram::Seq(i, tail) => Some((i, tail)),
        }
    }

    pub fn instrs(&self) -> ProgIter<'_> {
        ProgIter { cur: self }
    }

    pub fn len(&self) -> usize {
        self.instrs().count()
    }

    pub fn is_empty(&self) -> bool {
        self.is_nil()
    }
}

pub struct ProgIter<'a> {
    cur: &'a ProcProgram,
}

impl<'a> Iterator for ProgIter<'a> {
    type Item = &'a ProcInstr;

    fn next(&mut self) -> Option<&'a ProcInstr> {
        match self.cur {
            ProcProgram::Nil => None,
            ProcProgram::Seq(i, tail) => {
                self.cur = tail;
                Some(i)
            }
        }
    }
}

impl fmt::Display for ProcInstr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcInstr::SendTo(q, e) => write!(f, "{q} ! {e}"),
            ProcInstr::RecvFrom(p, x) => write!(f, "{p} ? {x}"),
            ProcInstr::Select(q, l) => write!(f, "{q} (+) {l}"),
            ProcInstr::Branch(p, arms) => {
                write!(f, "{p} & {{ ")?;
                for (i, (l, prog)) in arms.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "{l}: {{ {prog} }}")?;
                }
                write!(f, " }}")
            }
            ProcInstr::Assign(x, e) => write!(f, "{x} := {e}"),
            ProcInstr::Cond(e, p, q) => write!(f, "if {e} {{ {p} }} else {{ {q} }}"),
            ProcInstr::Trans(x, t, e) => write!(f, "{x} := {t}({e})"),
        }
    }
}

impl fmt::Display for ProcProgram {
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

/// The immutable baseline captured when a network is built: initial
/// programs and initial variable store, which the restart rule resets
/// processes to.
#[derive(Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkStart {
    pub programs: BTreeMap<ProcName, ProcProgram>,
    pub vars: VarStore,
}

/// The parallel composition: the current program of every declared
/// process (finished processes map to `Nil`), plus the shared baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Network {
    pub procs: BTreeMap<ProcName, ProcProgram>,
    pub start: Arc<NetworkStart>,
}

impl Network {
    pub fn new(programs: BTreeMap<ProcName, ProcProgram>, initial_vars: VarStore) -> Network {
        Network {
            procs: programs.clone(),
            start: Arc::new(NetworkStart {
                programs,
                vars: initial_vars,
            }),
        }
    }

    pub fn program_of(&self, p: &ProcName) -> &ProcProgram {
        self.procs.get(p).unwrap_or(&ProcProgram::Nil)
    }

    pub fn processes(&self) -> impl Iterator<Item = &ProcName> {
        self.procs.keys()
    }

    pub fn all_nil(&self) -> bool {
        self.procs.values().all(ProcProgram::is_nil)
    }
}

// The baseline is constant within a run; configuration equality and
// hashing cover the current programs only.
impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.procs == other.procs
    }
}
impl Eq for Network {}
impl Hash for Network {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.procs.hash(state);
    }
}

/// A network configuration: the parallel composition plus the shared
/// stores, the active set, and the initial process set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetConfig {
    pub net: Network,
    pub vars: VarStore,
    pub msgs: MsgState,
    pub seqs: SeqState,
    pub logs: TransState,
    pub active: ActiveSet,
    pub start_active: ActiveSet,
}

impl NetConfig {
    pub fn initial(programs: BTreeMap<ProcName, ProcProgram>, initial_vars: VarStore) -> NetConfig {
        let processes: BTreeSet<ProcName> = programs.keys().cloned().collect();
        NetConfig {
            net: Network::new(programs, initial_vars.clone()),
            vars: initial_vars,
            msgs: MsgState::default(),
            seqs: SeqState::default(),
            logs: TransState::default(),
            active: processes.clone(),
            start_active: processes,
        }
    }

    /// One process's local snapshot: the pieces a restart resets.
    pub fn local_snapshot(&self, p: &ProcName) -> LocalSnapshot {
        LocalSnapshot {
            program: self.net.program_of(p).clone(),
            vars: self.vars.rows_of(p),
            seqs: self.seqs.rows_of(p),
        }
    }
}

/// The per-process components touched by a restart: used to detect
/// replay re-convergence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalSnapshot {
    pub program: ProcProgram,
    pub vars: BTreeMap<VarName, Value>,
    pub seqs: BTreeMap<(ProcName, Direction), u64>,
}

/// Reset `p` to its initial program and store rows; the message map,
/// transaction logs, and active set persist.
pub fn restart_process(cfg: &NetConfig, p: &ProcName) -> Result<NetConfig, UnknownProcess> {
    if !cfg.net.procs.contains_key(p) {
        return Err(UnknownProcess(p.clone()));
    }
    let mut next = cfg.clone();
    let start_prog = cfg
        .net
        .start
        .programs
        .get(p)
        .cloned()
        .unwrap_or(ProcProgram::Nil);
    next.net.procs.insert(p.clone(), start_prog);
    next.vars.reset_process(p, &cfg.net.start.vars);
    next.seqs.reset_process(p);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown process `{0}`")]
pub struct UnknownProcess(pub ProcName);

/// All one-step successors, in deterministic order. Restart successors
/// for every process are included only when `allow_restart` is set;
/// budget accounting belongs to the caller.
pub fn net_steps(
    sem: &Semantics,
    cfg: &NetConfig,
    allow_restart: bool,
) -> Vec<(TransitionLabel, NetConfig)> {
    let mut out: Vec<(TransitionLabel, NetConfig)> = Vec::new();

    for (p, prog) in &cfg.net.procs {
        let Some((instr, tail)) = prog.head() else {
            continue;
        };
        step_proc_instr(sem, cfg, p, instr, tail, &mut out);
    }

    if cfg.active != cfg.start_active {
        for p in &cfg.active {
            let mut next = cfg.clone();
            next.logs = comp(&cfg.logs, p, sem.txns);
            next.active.remove(p);
            out.push((TransitionLabel::CompensateEv(p.clone()), next));
        }
    }

    if allow_restart {
        for p in cfg.net.procs.keys() {
            let next = restart_process(cfg, p).expect("declared process");
            out.push((TransitionLabel::RestartEv(p.clone()), next));
        }
    }

    out.sort_by(|a, b| a.0.canonical_key().cmp(&b.0.canonical_key()));
    out
}

fn step_proc_instr(
    sem: &Semantics,
    cfg: &NetConfig,
    p: &ProcName,
    instr: &ProcInstr,
    tail: &Arc<ProcProgram>,
    out: &mut Vec<(TransitionLabel, NetConfig)>,
) {
    if !cfg.active.contains(p) {
        return;
    }
    let advance = |next: &mut NetConfig, prog: ProcProgram| {
        next.net.procs.insert(p.clone(), prog);
    };
    match instr {
        ProcInstr::SendTo(q, e) => {
            let Ok(v) = eval_expr(&cfg.vars, p, e, sem.fns) else {
                return;
            };
            let i = cfg.seqs.get(p, q, Direction::Send);
            let mut next = cfg.clone();
            next.msgs.bind(p, q, i, Msg::Val(v.clone()));
            next.seqs.inc_send(p, q);
            advance(&mut next, (**tail).clone());
            out.push((TransitionLabel::SendEv(p.clone(), v, q.clone()), next));
        }
        ProcInstr::RecvFrom(from, x) => {
            let i = cfg.seqs.get(p, from, Direction::Receive);
            let Some(Msg::Val(v)) = cfg.msgs.get(from, p, i).cloned() else {
                return;
            };
            let mut next = cfg.clone();
            next.vars.set(p, x, v.clone());
            next.seqs.inc_recv(p, from);
            advance(&mut next, (**tail).clone());
            out.push((TransitionLabel::RecvEv(from.clone(), v, p.clone()), next));
        }
        ProcInstr::Select(q, l) => {
            let i = cfg.seqs.get(p, q, Direction::Send);
            let mut next = cfg.clone();
            next.msgs.bind(p, q, i, Msg::Label(l.clone()));
            next.seqs.inc_send(p, q);
            advance(&mut next, (**tail).clone());
            out.push((
                TransitionLabel::SelSendEv(p.clone(), l.clone(), q.clone()),
                next,
            ));
        }
        ProcInstr::Branch(from, arms) => {
            let i = cfg.seqs.get(p, from, Direction::Receive);
            let Some(Msg::Label(l)) = cfg.msgs.get(from, p, i) else {
                return;
            };
            // A bound label outside the branch set is a protocol
            // violation; it yields no step here and is surfaced by
            // `protocol_violations`. Projected networks cannot hit it.
            let Some(armed) = arms.get(l) else {
                return;
            };
            let mut next = cfg.clone();
            next.seqs.inc_recv(p, from);
            advance(&mut next, armed.concat(tail));
            out.push((
                TransitionLabel::SelRecvEv(from.clone(), l.clone(), p.clone()),
                next,
            ));
        }
        ProcInstr::Assign(x, e) => {
            let Ok(v) = eval_expr(&cfg.vars, p, e, sem.fns) else {
                return;
            };
            let mut next = cfg.clone();
            next.vars.set(p, x, v);
            advance(&mut next, (**tail).clone());
            out.push((TransitionLabel::Tau(p.clone()), next));
        }
        ProcInstr::Cond(e, pt, pf) => {
            let Ok(v) = eval_expr(&cfg.vars, p, e, sem.fns) else {
                return;
            };
            let Some(b) = v.as_bool() else {
                return;
            };
            let branch = if b { pt } else { pf };
            let mut next = cfg.clone();
            advance(&mut next, branch.concat(tail));
            out.push((TransitionLabel::Tau(p.clone()), next));
        }
        ProcInstr::Trans(x, t, e) => {
            let Ok(v) = eval_expr(&cfg.vars, p, e, sem.fns) else {
                return;
            };
            if let Some(out_v) = cfg.logs.committed_output(p, t, &v) {
                let mut next = cfg.clone();
                next.vars.set(p, x, out_v);
                advance(&mut next, (**tail).clone());
                out.push((TransitionLabel::Tau(p.clone()), next));
                return;
            }
            match sem.txns.run_commit(t, &v) {
                Some(Outcome::Ok(out_v)) => {
                    let mut next = cfg.clone();
                    next.vars.set(p, x, out_v.clone());
                    next.logs.append_commit(p, t.clone(), v, out_v);
                    advance(&mut next, (**tail).clone());
                    out.push((TransitionLabel::Tau(p.clone()), next));
                }
                Some(Outcome::Fail) => {
                    if !cfg.logs.has_commit_named(p, t) {
                        let mut next = cfg.clone();
                        next.logs = comp(&cfg.logs, p, sem.txns);
                        next.active.remove(p);
                        advance(&mut next, (**tail).clone());
                        out.push((TransitionLabel::CompensateEv(p.clone()), next));
                    }
                }
                None => {}
            }
        }
    }
}

/// Commit transaction `t` with input `v` at `p`, outside of program
/// position: the store-level flow shared with the step rule. Replayed
/// commits return the recorded output without touching the log; a
/// fresh failure compensates `p` and removes it from the active set.
pub fn commit_transaction_net(
    sem: &Semantics,
    cfg: &NetConfig,
    p: &ProcName,
    t: &TransName,
    v: &Value,
) -> Result<(Outcome, NetConfig), UnknownTransaction> {
    if !sem.txns.contains(t) {
        return Err(UnknownTransaction(t.clone()));
    }
    assert!(cfg.active.contains(p), "commit by inactive process {p}");
    if let Some(out_v) = cfg.logs.committed_output(p, t, v) {
        return Ok((Outcome::Ok(out_v), cfg.clone()));
    }
    match sem.txns.run_commit(t, v).expect("registered") {
        Outcome::Ok(out_v) => {
            let mut next = cfg.clone();
            next.logs.append_commit(p, t.clone(), v.clone(), out_v.clone());
            Ok((Outcome::Ok(out_v), next))
        }
        Outcome::Fail => {
            let mut next = cfg.clone();
            next.logs = comp(&cfg.logs, p, sem.txns);
            next.active.remove(p);
            Ok((Outcome::Fail, next))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unregistered transaction `{0}`")]
pub struct UnknownTransaction(pub TransName);

/// Terminated: no non-restart step is enabled.
pub fn is_net_terminated(sem: &Semantics, cfg: &NetConfig) -> bool {
    net_steps(sem, cfg, false).is_empty()
}

/// Deadlocked: terminated, but some program is unfinished while the
/// active set is non-empty.
pub fn is_net_deadlocked(sem: &Semantics, cfg: &NetConfig) -> bool {
    is_net_terminated(sem, cfg) && !cfg.net.all_nil() && !cfg.active.is_empty()
}

/// Branch heads facing a bound label outside their label set. These are
/// fatal protocol errors in hand-written networks; projected networks
/// cannot produce them.
pub fn protocol_violations(cfg: &NetConfig) -> Vec<String> {
    let mut out = Vec::new();
    for (p, prog) in &cfg.net.procs {
        if let Some((ProcInstr::Branch(from, arms), _)) = prog.head() {
            let i = cfg.seqs.get(p, from, Direction::Receive);
            if let Some(Msg::Label(l)) = cfg.msgs.get(from, p, i) {
                if !arms.contains_key(l) {
                    out.push(format!(
                        "{p}: branch on {from} expects one of {:?}, queue holds [{l}]",
                        arms.keys().map(|k| k.to_string()).collect::<Vec<_>>()
                    ));
                }
            }
        }
    }
    out
}
