//! The sidecar node: a TCP listener demultiplexing framed messages into
//! per-session execution contexts, a single-threaded core owning all
//! state, and an outbound worker doing one-shot sends.
//!
//! Sessions are interpreted endpoint programs. A session advances until
//! it blocks on a receive; sends return control immediately and await
//! their acknowledgment asynchronously. In at-least-once mode every
//! inbound message is persisted to the inbox and acknowledged before
//! delivery, acknowledged sends are persisted to the outbox, and
//! transaction commits are journaled atomically with their effect, so a
//! session restart replays through the tables without duplicating
//! anything external. In at-most-once mode nothing is durable: late or
//! duplicate frames are dropped by sequence number and a session past
//! its deadline is killed and tombstoned.
//!
//! All faults inside a session funnel into one of two moves: restart
//! the session (replay) or fail it (compensate committed transactions
//! in reverse order and broadcast the failure so every participant
//! aborts).

use crate::config::{ChorRegistration, NodeConfig};
use crate::store::{DurableStore, KillSwitch, Mode, SessionStatus, StoreError, WalRecord};
use crate::wire::{Frame, FrameKind};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, Sender, SyncSender};
use std::sync::Arc;
use std::time::{Duration, Instant};
use troupe_kernel::{
    eval_expr, FnRegistry, LabelName, Outcome, ProcInstr, ProcName, ProcProgram, TransName,
    TxnRegistry, Value, VarStore,
};

const TICK: Duration = Duration::from_millis(5);
const CONNECT_TIMEOUT: Duration = Duration::from_millis(250);

pub enum NodeEvent {
    Frame(Frame),
    Start {
        chor: String,
        input: Value,
        session_id: Option<u128>,
        reply: SyncSender<Result<u128, String>>,
    },
    Query(SyncSender<Snapshot>),
    Shutdown,
}

/// Observable node state for tests and operators.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub name: ProcName,
    pub dead: bool,
    pub sessions: BTreeMap<u128, crate::store::SessionRow>,
    pub txns: BTreeMap<u128, Vec<crate::store::TxnRow>>,
    pub live_sessions: usize,
    /// Consumed message tuples (session, sender, seqnum), in order.
    pub deliveries: Vec<(u128, String, u64)>,
    pub conflicts: Vec<String>,
    pub wal_appends: u64,
}

struct SessionCtx {
    chor: String,
    program: ProcProgram,
    vars: VarStore,
    send_seq: BTreeMap<ProcName, u64>,
    recv_seq: BTreeMap<ProcName, u64>,
    /// Out-of-order buffer, at-most-once mode only.
    buffer: BTreeMap<(ProcName, u64), (FrameKind, Vec<u8>)>,
    /// Unacknowledged sends: deadline plus the frame for outbox rows.
    pending_acks: BTreeMap<(ProcName, u64), (Instant, FrameKind, Vec<u8>)>,
    /// Set while blocked on a receive.
    wait_deadline: Option<Instant>,
    /// Replay backoff gate after a restart.
    resume_at: Option<Instant>,
    attempts: u32,
    expires_at: Instant,
}

impl SessionCtx {
    fn fresh(reg: &ChorRegistration, input: Option<Value>, now: Instant, ttl: Duration) -> SessionCtx {
        let mut vars = VarStore::default();
        if let Some(v) = input {
            // Session-local store; the role name scopes the row.
            vars.set(&ProcName::new("self"), &reg.input_var, v);
        }
        SessionCtx {
            chor: reg.id.clone(),
            program: reg.program.clone(),
            vars,
            send_seq: BTreeMap::new(),
            recv_seq: BTreeMap::new(),
            buffer: BTreeMap::new(),
            pending_acks: BTreeMap::new(),
            wait_deadline: None,
            resume_at: None,
            attempts: 0,
            expires_at: now + ttl,
        }
    }

}

struct Core {
    cfg: NodeConfig,
    fns: FnRegistry,
    txns: TxnRegistry,
    store: DurableStore,
    sessions: BTreeMap<u128, SessionCtx>,
    outbound: Sender<(ProcName, Vec<u8>)>,
    dead: bool,
    deliveries: Vec<(u128, String, u64)>,
    conflicts: Vec<String>,
    kill: KillSwitch,
}

impl Core {
    /// Store appends funnel through here so a fired kill switch turns
    /// the node inert, like a power cut at that exact step.
    fn persist(&mut self, rec: WalRecord) -> Result<(), StoreError> {
        match self.store.append(rec) {
            Ok(()) => Ok(()),
            Err(e) => {
                if matches!(e, StoreError::Killed(_)) {
                    log::warn!("{}: kill switch fired, node is dead", self.cfg.name);
                    self.dead = true;
                } else {
                    log::error!("{}: store failure: {e}", self.cfg.name);
                    self.dead = true;
                }
                Err(e)
            }
        }
    }

    fn send_frame(&self, to: &ProcName, frame: Frame) {
        let _ = self.outbound.send((to.clone(), frame.encode()));
    }

    fn frame(&self, kind: FrameKind, session: u128, chor: &str, seqnum: u64, payload: Vec<u8>) -> Frame {
        Frame {
            kind,
            session_id: session,
            choreography_id: chor.to_owned(),
            sender_id: self.cfg.name.to_string(),
            seqnum,
            telemetry: Vec::new(),
            payload,
        }
    }

    // ---- session lifecycle ----

    fn start_session(
        &mut self,
        chor: &str,
        input: Value,
        explicit: Option<u128>,
        now: Instant,
    ) -> Result<u128, String> {
        if self.dead {
            return Err("node is dead".into());
        }
        let Some(reg) = self.cfg.choreographies.get(chor).cloned() else {
            return Err(format!("unknown choreography `{chor}`"));
        };
        let id = explicit.unwrap_or_else(rand::random::<u128>);
        if self.store.sessions.contains_key(&id) {
            return Err(format!("session {id:032x} already exists"));
        }
        self.persist(WalRecord::SessionStarted {
            session: id,
            choreography: chor.to_owned(),
            mode: self.cfg.mode,
            input_hex: Some(hex::encode(input.to_canonical_bytes())),
        })
        .map_err(|e| e.to_string())?;
        let ctx = SessionCtx::fresh(&reg, Some(input), now, self.cfg.timeouts.session_ttl);
        self.sessions.insert(id, ctx);
        self.advance(id, now);
        Ok(id)
    }

    fn instantiate_from_frame(&mut self, frame: &Frame, now: Instant) -> bool {
        let Some(reg) = self.cfg.choreographies.get(&frame.choreography_id).cloned() else {
            log::warn!(
                "{}: dropping frame for unknown choreography `{}`",
                self.cfg.name,
                frame.choreography_id
            );
            return false;
        };
        if self
            .persist(WalRecord::SessionStarted {
                session: frame.session_id,
                choreography: frame.choreography_id.clone(),
                mode: self.cfg.mode,
                input_hex: None,
            })
            .is_err()
        {
            return false;
        }
        let ctx = SessionCtx::fresh(&reg, None, now, self.cfg.timeouts.session_ttl);
        self.sessions.insert(frame.session_id, ctx);
        true
    }

    fn session_status(&self, id: u128) -> Option<SessionStatus> {
        self.store.sessions.get(&id).map(|r| r.status)
    }

    /// Run the session's program until it blocks, completes, or fails.
    fn advance(&mut self, id: u128, now: Instant) {
        loop {
            if self.dead || self.session_status(id) != Some(SessionStatus::Started) {
                return;
            }
            let Some(ctx) = self.sessions.get(&id) else {
                return;
            };
            if ctx.resume_at.is_some_and(|at| at > now) {
                return;
            }
            let Some((instr, tail)) = ctx.program.head() else {
                // Program done: completion waits for outstanding acks.
                if self.cfg.mode == Mode::AtLeastOnce && !ctx.pending_acks.is_empty() {
                    return;
                }
                self.complete_session(id);
                return;
            };
            let instr = instr.clone();
            let tail = (**tail).clone();
            match self.exec_instr(id, instr, tail, now) {
                StepOutcome::Continue => continue,
                StepOutcome::Blocked | StepOutcome::Stopped => return,
            }
        }
    }

    fn exec_instr(
        &mut self,
        id: u128,
        instr: ProcInstr,
        tail: ProcProgram,
        now: Instant,
    ) -> StepOutcome {
        let me = ProcName::new("self");
        match instr {
            ProcInstr::Assign(x, e) => {
                let ctx = self.sessions.get_mut(&id).expect("live session");
                match eval_expr(&ctx.vars, &me, &e, &self.fns) {
                    Ok(v) => {
                        ctx.vars.set(&me, &x, v);
                        ctx.program = tail;
                        StepOutcome::Continue
                    }
                    Err(err) => {
                        self.fail_session(id, &format!("evaluation error: {err}"));
                        StepOutcome::Stopped
                    }
                }
            }
            ProcInstr::Cond(e, a, b) => {
                let ctx = self.sessions.get_mut(&id).expect("live session");
                match eval_expr(&ctx.vars, &me, &e, &self.fns).map(|v| v.as_bool()) {
                    Ok(Some(cond)) => {
                        let branch = if cond { &a } else { &b };
                        ctx.program = branch.concat(&tail);
                        StepOutcome::Continue
                    }
                    _ => {
                        self.fail_session(id, "conditional guard is not a boolean");
                        StepOutcome::Stopped
                    }
                }
            }
            ProcInstr::Trans(x, t, e) => {
                let ctx = self.sessions.get_mut(&id).expect("live session");
                let input = match eval_expr(&ctx.vars, &me, &e, &self.fns) {
                    Ok(v) => v,
                    Err(err) => {
                        self.fail_session(id, &format!("evaluation error: {err}"));
                        return StepOutcome::Stopped;
                    }
                };
                match self.commit_transaction(id, &t, &input) {
                    Ok(Some(output)) => {
                        let ctx = self.sessions.get_mut(&id).expect("live session");
                        ctx.vars.set(&me, &x, output);
                        ctx.program = tail;
                        StepOutcome::Continue
                    }
                    Ok(None) => {
                        // Commit refused: the saga aborts here.
                        self.fail_session(id, &format!("transaction `{t}` failed"));
                        StepOutcome::Stopped
                    }
                    Err(()) => StepOutcome::Stopped,
                }
            }
            ProcInstr::SendTo(q, e) => self.do_send(id, q, None, e, tail, now),
            ProcInstr::Select(q, l) => {
                self.do_send(id, q, Some(l), troupe_kernel::Expr::Lit(Value::Unit), tail, now)
            }
            ProcInstr::RecvFrom(p, x) => match self.take_inbound(id, &p) {
                Some((FrameKind::Value, payload)) => {
                    match Value::from_canonical_bytes(&payload) {
                        Ok(v) => {
                            let ctx = self.sessions.get_mut(&id).expect("live session");
                            ctx.vars.set(&me, &x, v);
                            ctx.program = tail;
                            ctx.wait_deadline = None;
                            StepOutcome::Continue
                        }
                        Err(e) => {
                            self.fail_session(id, &format!("undecodable value payload: {e}"));
                            StepOutcome::Stopped
                        }
                    }
                }
                Some((other, _)) => {
                    self.fail_session(
                        id,
                        &format!("protocol error: expected a value from {p}, got {other:?}"),
                    );
                    StepOutcome::Stopped
                }
                None => self.block_on_receive(id, now),
            },
            ProcInstr::Branch(p, arms) => match self.take_inbound(id, &p) {
                Some((FrameKind::Label, payload)) => {
                    let label = LabelName::new(String::from_utf8_lossy(&payload).into_owned());
                    match arms.get(&label) {
                        Some(arm) => {
                            let ctx = self.sessions.get_mut(&id).expect("live session");
                            ctx.program = arm.concat(&tail);
                            ctx.wait_deadline = None;
                            StepOutcome::Continue
                        }
                        None => {
                            self.fail_session(
                                id,
                                &format!("protocol error: unexpected branch label `{label}`"),
                            );
                            StepOutcome::Stopped
                        }
                    }
                }
                Some((other, _)) => {
                    self.fail_session(
                        id,
                        &format!("protocol error: expected a label from {p}, got {other:?}"),
                    );
                    StepOutcome::Stopped
                }
                None => self.block_on_receive(id, now),
            },
        }
    }

    fn do_send(
        &mut self,
        id: u128,
        to: ProcName,
        label: Option<LabelName>,
        expr: troupe_kernel::Expr,
        tail: ProcProgram,
        now: Instant,
    ) -> StepOutcome {
        let me = ProcName::new("self");
        let ctx = self.sessions.get_mut(&id).expect("live session");
        let (kind, payload) = match &label {
            Some(l) => (FrameKind::Label, l.as_str().as_bytes().to_vec()),
            None => match eval_expr(&ctx.vars, &me, &expr, &self.fns) {
                Ok(v) => (FrameKind::Value, v.to_canonical_bytes()),
                Err(err) => {
                    self.fail_session(id, &format!("evaluation error: {err}"));
                    return StepOutcome::Stopped;
                }
            },
        };
        let seq = {
            let ctx = self.sessions.get_mut(&id).expect("live session");
            let seq = ctx.send_seq.entry(to.clone()).or_insert(0);
            let s = *seq;
            *seq += 1;
            s
        };
        let chor = self.sessions[&id].chor.clone();
        let already_acked = self.cfg.mode == Mode::AtLeastOnce
            && self
                .store
                .outbox
                .contains_key(&(id, to.to_string(), seq));
        if !already_acked {
            let frame = self.frame(kind, id, &chor, seq, payload.clone());
            self.send_frame(&to, frame);
            if self.cfg.mode == Mode::AtLeastOnce {
                let deadline = now + self.cfg.timeouts.ack_timeout;
                let ctx = self.sessions.get_mut(&id).expect("live session");
                ctx.pending_acks.insert((to, seq), (deadline, kind, payload));
            }
        }
        let ctx = self.sessions.get_mut(&id).expect("live session");
        ctx.program = tail;
        StepOutcome::Continue
    }

    fn block_on_receive(&mut self, id: u128, now: Instant) -> StepOutcome {
        let recv_timeout = self.cfg.timeouts.recv_timeout;
        let ctx = self.sessions.get_mut(&id).expect("live session");
        if ctx.wait_deadline.is_none() {
            ctx.wait_deadline = Some(now + recv_timeout);
        }
        StepOutcome::Blocked
    }

    /// Next in-order message from `p`, from the durable inbox in
    /// at-least-once mode or the in-memory buffer otherwise.
    fn take_inbound(&mut self, id: u128, p: &ProcName) -> Option<(FrameKind, Vec<u8>)> {
        let ctx = self.sessions.get_mut(&id).expect("live session");
        let expected = *ctx.recv_seq.get(p).unwrap_or(&0);
        let got = match self.cfg.mode {
            Mode::AtLeastOnce => self
                .store
                .inbox
                .get(&(id, p.to_string(), expected))
                .map(|(k, payload)| (FrameKind::from_byte(*k).expect("stored kind"), payload.clone())),
            Mode::AtMostOnce => ctx.buffer.remove(&(p.clone(), expected)),
        };
        if got.is_some() {
            ctx.recv_seq.insert(p.clone(), expected + 1);
            self.deliveries.push((id, p.to_string(), expected));
        }
        got
    }

    /// The local transaction flow: `Ok(Some(v))` on success or replay,
    /// `Ok(None)` when the commit action refuses, `Err(())` when the
    /// node died mid-commit.
    fn commit_transaction(
        &mut self,
        id: u128,
        t: &TransName,
        input: &Value,
    ) -> Result<Option<Value>, ()> {
        let digest = hex::encode(Sha256::digest(input.to_canonical_bytes()));
        if let Some(stored) = self.store.committed_output(id, t.as_str(), &digest) {
            let v = Value::from_canonical_bytes(&stored).expect("stored output decodes");
            return Ok(Some(v));
        }
        match self.txns.run_commit(t, input) {
            None => {
                self.fail_session(id, &format!("unregistered transaction `{t}`"));
                Err(())
            }
            Some(Outcome::Ok(output)) => {
                // The callback ran; journaling the record commits the
                // effect. Dying in between aborts both, like rolling
                // back the enclosing database transaction.
                match self.persist(WalRecord::TxnCommitted {
                    session: id,
                    name: t.to_string(),
                    input_digest: digest,
                    input_hex: hex::encode(input.to_canonical_bytes()),
                    output_hex: hex::encode(output.to_canonical_bytes()),
                }) {
                    Ok(()) => Ok(Some(output)),
                    Err(_) => Err(()),
                }
            }
            Some(Outcome::Fail) => Ok(None),
        }
    }

    fn complete_session(&mut self, id: u128) {
        if self
            .persist(WalRecord::SessionStatusChanged {
                session: id,
                status: SessionStatus::Completed,
                choreography: None,
            })
            .is_err()
        {
            return;
        }
        let chor = self.sessions.get(&id).map(|c| c.chor.clone());
        if let Some(chor) = chor {
            // Best-effort completion notice; informational for peers.
            for peer in self.participants_of(&chor) {
                let frame = self.frame(FrameKind::Finished, id, &chor, 0, Vec::new());
                self.send_frame(&peer, frame);
            }
        }
        self.sessions.remove(&id);
    }

    /// Abort: mark failed, compensate this node's committed
    /// transactions in reverse order, broadcast, stop the context.
    fn fail_session(&mut self, id: u128, why: &str) {
        log::info!("{}: session {:08x} failed: {why}", self.cfg.name, id as u32);
        match self.session_status(id) {
            Some(SessionStatus::Failed) => {
                self.sessions.remove(&id);
                return;
            }
            Some(SessionStatus::Completed) => {
                self.conflicts.push(format!(
                    "failure for completed session {id:032x}: terminal status wins"
                ));
                return;
            }
            _ => {}
        }
        let chor = self
            .sessions
            .get(&id)
            .map(|c| c.chor.clone())
            .or_else(|| self.store.sessions.get(&id).map(|r| r.choreography.clone()));
        if self
            .persist(WalRecord::SessionStatusChanged {
                session: id,
                status: SessionStatus::Failed,
                choreography: chor.clone(),
            })
            .is_err()
        {
            return;
        }
        self.sessions.remove(&id);
        if self.compensate_session(id).is_err() {
            return;
        }
        self.broadcast_failure(id, chor.as_deref());
    }

    /// Reverse-order compensation of everything committed and not yet
    /// compensated. Each step journals before invoking the callback, so
    /// recovery re-runs only what is missing from the journal.
    fn compensate_session(&mut self, id: u128) -> Result<(), ()> {
        let rows: Vec<_> = self
            .store
            .txns
            .get(&id)
            .map(|rows| {
                rows.iter()
                    .rev()
                    .filter(|r| !r.compensated)
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        for row in rows {
            if self
                .persist(WalRecord::TxnCompensated {
                    session: id,
                    name: row.name.clone(),
                    input_digest: row.input_digest.clone(),
                })
                .is_err()
            {
                return Err(());
            }
            let input = Value::from_canonical_bytes(&hex::decode(&row.input_hex).unwrap())
                .expect("stored input decodes");
            let output = Value::from_canonical_bytes(&hex::decode(&row.output_hex).unwrap())
                .expect("stored output decodes");
            self.txns
                .run_compensate(&TransName::new(row.name.clone()), &input, &output);
        }
        Ok(())
    }

    fn participants_of(&self, chor: &str) -> Vec<ProcName> {
        match self.cfg.choreographies.get(chor) {
            Some(reg) => reg
                .participants
                .iter()
                .filter(|p| **p != self.cfg.name)
                .cloned()
                .collect(),
            None => self.cfg.peers.keys().cloned().collect(),
        }
    }

    fn broadcast_failure(&mut self, id: u128, chor: Option<&str>) {
        let chor_name = chor.unwrap_or("").to_owned();
        for peer in self.participants_of(&chor_name) {
            let frame = self.frame(FrameKind::FailureBroadcast, id, &chor_name, 0, Vec::new());
            self.send_frame(&peer, frame);
        }
    }

    // ---- inbound ----

    fn handle_frame(&mut self, frame: Frame, now: Instant) {
        if self.dead {
            return;
        }
        match frame.kind {
            FrameKind::Ack => self.handle_ack(frame),
            FrameKind::Value | FrameKind::Label => self.handle_message(frame, now),
            FrameKind::FailureBroadcast => self.handle_failure_broadcast(frame),
            FrameKind::Finished => {
                log::debug!(
                    "{}: peer finished session {:08x}",
                    self.cfg.name,
                    frame.session_id as u32
                );
            }
        }
    }

    fn handle_ack(&mut self, frame: Frame) {
        let id = frame.session_id;
        let acker = ProcName::new(String::from_utf8_lossy(&frame.payload).into_owned());
        let Some(ctx) = self.sessions.get_mut(&id) else {
            return;
        };
        if let Some((_, kind, payload)) = ctx.pending_acks.remove(&(acker.clone(), frame.seqnum)) {
            if self.cfg.mode == Mode::AtLeastOnce
                && self
                    .persist(WalRecord::OutboxAck {
                        session: id,
                        receiver: acker.to_string(),
                        seqnum: frame.seqnum,
                        kind: kind.to_byte(),
                        payload_hex: hex::encode(payload),
                    })
                    .is_err()
            {
                return;
            }
            // Completion may have been gated on this ack.
            self.advance(id, Instant::now());
        }
    }

    fn handle_message(&mut self, frame: Frame, now: Instant) {
        let id = frame.session_id;
        let sender = frame.sender_id.clone();

        match self.session_status(id) {
            None => {
                // First contact: join the session via the choreography
                // id, unless a failure tombstone got here first.
                if !self.instantiate_from_frame(&frame, now) {
                    return;
                }
            }
            Some(SessionStatus::Started) => {}
            Some(_) => {
                // Killed, completed, or failed: re-ack a duplicate the
                // peer is still retrying, otherwise drop.
                if self.cfg.mode == Mode::AtLeastOnce
                    && self
                        .store
                        .inbox
                        .contains_key(&(id, sender.clone(), frame.seqnum))
                {
                    self.send_ack(&frame);
                }
                return;
            }
        }
        if !self.sessions.contains_key(&id) {
            // Status row says started but no live context: a previous
            // incarnation died between persist and context creation.
            if !self.recreate_context(id, now) {
                return;
            }
        }

        match self.cfg.mode {
            Mode::AtLeastOnce => {
                if self
                    .store
                    .inbox
                    .contains_key(&(id, sender.clone(), frame.seqnum))
                {
                    self.send_ack(&frame);
                    return;
                }
                if self
                    .persist(WalRecord::InboxPut {
                        session: id,
                        sender: sender.clone(),
                        seqnum: frame.seqnum,
                        kind: frame.kind.to_byte(),
                        payload_hex: hex::encode(&frame.payload),
                    })
                    .is_err()
                {
                    return;
                }
                self.send_ack(&frame);
                self.advance(id, now);
            }
            Mode::AtMostOnce => {
                let ctx = self.sessions.get_mut(&id).expect("live session");
                let sender_name = ProcName::new(sender.clone());
                let expected = *ctx.recv_seq.get(&sender_name).unwrap_or(&0);
                if frame.seqnum < expected {
                    return; // already consumed: duplicate
                }
                ctx.buffer
                    .entry((sender_name, frame.seqnum))
                    .or_insert((frame.kind, frame.payload.clone()));
                self.advance(id, now);
            }
        }
    }

    fn send_ack(&mut self, original: &Frame) {
        let mut ack = self.frame(
            FrameKind::Ack,
            original.session_id,
            &original.choreography_id,
            original.seqnum,
            self.cfg.name.to_string().into_bytes(),
        );
        // Acks echo the original sender id.
        ack.sender_id = original.sender_id.clone();
        self.send_frame(&ProcName::new(original.sender_id.clone()), ack);
    }

    fn handle_failure_broadcast(&mut self, frame: Frame) {
        let id = frame.session_id;
        match self.session_status(id) {
            Some(SessionStatus::Failed) => {}
            Some(SessionStatus::Completed) => {
                self.conflicts.push(format!(
                    "failure broadcast for completed session {id:032x}: terminal status wins"
                ));
            }
            Some(SessionStatus::Started) => {
                self.fail_session(id, "failure broadcast received");
            }
            None => {
                // Tombstone so a late first message cannot resurrect
                // the session, and gossip the abort onward once.
                if self
                    .persist(WalRecord::SessionStatusChanged {
                        session: id,
                        status: SessionStatus::Failed,
                        choreography: Some(frame.choreography_id.clone()),
                    })
                    .is_ok()
                {
                    self.broadcast_failure(id, Some(&frame.choreography_id));
                }
            }
        }
    }

    fn recreate_context(&mut self, id: u128, now: Instant) -> bool {
        let Some(row) = self.store.sessions.get(&id).cloned() else {
            return false;
        };
        let Some(reg) = self.cfg.choreographies.get(&row.choreography).cloned() else {
            return false;
        };
        let input = row
            .input_hex
            .as_deref()
            .and_then(|h| hex::decode(h).ok())
            .and_then(|b| Value::from_canonical_bytes(&b).ok());
        let ctx = SessionCtx::fresh(&reg, input, now, self.cfg.timeouts.session_ttl);
        self.sessions.insert(id, ctx);
        true
    }

    // ---- timers ----

    fn tick(&mut self, now: Instant) {
        if self.dead {
            return;
        }
        let ids: Vec<u128> = self.sessions.keys().copied().collect();
        for id in ids {
            let Some(ctx) = self.sessions.get(&id) else {
                continue;
            };
            match self.cfg.mode {
                Mode::AtMostOnce => {
                    if now >= ctx.expires_at {
                        self.expire_session(id);
                    }
                }
                Mode::AtLeastOnce => {
                    if ctx.resume_at.is_some_and(|at| now >= at) {
                        let ctx = self.sessions.get_mut(&id).expect("live");
                        ctx.resume_at = None;
                        self.advance(id, now);
                        continue;
                    }
                    let ack_expired = ctx
                        .pending_acks
                        .values()
                        .any(|(deadline, _, _)| now >= *deadline);
                    let recv_expired = ctx.wait_deadline.is_some_and(|d| now >= d);
                    if ack_expired || recv_expired {
                        self.restart_session(id, now);
                    }
                }
            }
        }
    }

    /// Kill an at-most-once session past its deadline: resources are
    /// reclaimed and the tombstone makes late messages drop.
    fn expire_session(&mut self, id: u128) {
        log::info!("{}: session {:08x} expired", self.cfg.name, id as u32);
        let _ = self.persist(WalRecord::SessionStatusChanged {
            session: id,
            status: SessionStatus::Failed,
            choreography: None,
        });
        self.sessions.remove(&id);
    }

    /// Reset the session to its initial state for replay. Durable
    /// tables make the replay externally silent: receives re-read the
    /// inbox, acknowledged sends are skipped, unacknowledged ones are
    /// retransmitted, committed transactions return recorded outputs.
    fn restart_session(&mut self, id: u128, now: Instant) {
        let Some(ctx) = self.sessions.get_mut(&id) else {
            return;
        };
        ctx.attempts += 1;
        if ctx.attempts > self.cfg.timeouts.max_attempts {
            self.fail_session(id, "retry budget exhausted");
            return;
        }
        let attempts = ctx.attempts;
        let chor = ctx.chor.clone();
        let Some(reg) = self.cfg.choreographies.get(&chor).cloned() else {
            self.fail_session(id, "choreography no longer registered");
            return;
        };
        let input = self
            .store
            .sessions
            .get(&id)
            .and_then(|row| row.input_hex.as_deref())
            .and_then(|h| hex::decode(h).ok())
            .and_then(|b| Value::from_canonical_bytes(&b).ok());
        let backoff = self.cfg.timeouts.backoff(attempts);
        log::debug!(
            "{}: restarting session {:08x} (attempt {attempts}, backoff {backoff:?})",
            self.cfg.name,
            id as u32
        );
        let mut fresh = SessionCtx::fresh(&reg, input, now, self.cfg.timeouts.session_ttl);
        fresh.attempts = attempts;
        fresh.resume_at = Some(now + backoff);
        self.sessions.insert(id, fresh);
    }

    /// Boot-time recovery: relaunch every started at-least-once session
    /// from its initial state and finish compensation of failed ones.
    fn recover_on_boot(&mut self, now: Instant) {
        let rows: Vec<_> = self.store.sessions.values().cloned().collect();
        for row in rows {
            if row.mode != Mode::AtLeastOnce {
                continue;
            }
            match row.status {
                SessionStatus::Started => {
                    if self.recreate_context(row.session, now) {
                        self.advance(row.session, now);
                    }
                }
                SessionStatus::Failed => {
                    if self.compensate_session(row.session).is_err() {
                        return;
                    }
                    // Re-gossip unconditionally: the pre-crash
                    // incarnation may have died between marking the
                    // failure and telling anyone.
                    self.broadcast_failure(row.session, Some(&row.choreography));
                }
                SessionStatus::Completed => {}
            }
        }
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            name: self.cfg.name.clone(),
            dead: self.dead,
            sessions: self.store.sessions.clone(),
            txns: self.store.txns.clone(),
            live_sessions: self.sessions.len(),
            deliveries: self.deliveries.clone(),
            conflicts: self.conflicts.clone(),
            wal_appends: self.kill.appends_so_far(),
        }
    }
}

enum StepOutcome {
    Continue,
    Blocked,
    Stopped,
}

/// A running node: spawn, interact, shut down.
pub struct NodeHandle {
    pub name: ProcName,
    pub local_addr: std::net::SocketAddr,
    events: Sender<NodeEvent>,
    shutdown_flag: Arc<AtomicBool>,
    core_join: Option<std::thread::JoinHandle<()>>,
    listener_join: Option<std::thread::JoinHandle<()>>,
    outbound_join: Option<std::thread::JoinHandle<()>>,
}

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("store error: {0}")]
    Store(#[from] StoreError),
    #[error("bind error on {0}: {1}")]
    Bind(String, std::io::Error),
    #[error("node is not responding")]
    NotResponding,
    #[error("{0}")]
    Rejected(String),
}

pub fn spawn(
    cfg: NodeConfig,
    fns: FnRegistry,
    txns: TxnRegistry,
    kill_after: Option<u64>,
) -> Result<NodeHandle, NodeError> {
    let listener = TcpListener::bind(&cfg.listen)
        .map_err(|e| NodeError::Bind(cfg.listen.clone(), e))?;
    spawn_with_listener(cfg, fns, txns, kill_after, listener)
}

pub fn spawn_with_listener(
    cfg: NodeConfig,
    fns: FnRegistry,
    txns: TxnRegistry,
    kill_after: Option<u64>,
    listener: TcpListener,
) -> Result<NodeHandle, NodeError> {
    let kill = match kill_after {
        Some(n) => KillSwitch::after(n),
        None => KillSwitch::default(),
    };
    let mut store = DurableStore::open_with_kill(&cfg.wal_path, kill.clone())?;
    if let Some(threshold) = cfg.compact_after {
        if store.records_replayed() > threshold {
            store.compact()?;
        }
    }

    let (event_tx, event_rx) = std::sync::mpsc::channel::<NodeEvent>();
    let (out_tx, out_rx) = std::sync::mpsc::channel::<(ProcName, Vec<u8>)>();
    let shutdown_flag = Arc::new(AtomicBool::new(false));
    let name = cfg.name.clone();
    let local_addr = listener.local_addr().expect("bound listener");

    let listener_join = {
        let events = event_tx.clone();
        let flag = shutdown_flag.clone();
        let node = name.clone();
        std::thread::Builder::new()
            .name(format!("{node}-listener"))
            .spawn(move || listen_loop(listener, events, flag))
            .expect("spawn listener")
    };

    let outbound_join = {
        let peers: BTreeMap<ProcName, String> = cfg.peers.clone();
        let node = name.clone();
        std::thread::Builder::new()
            .name(format!("{node}-outbound"))
            .spawn(move || outbound_loop(out_rx, peers))
            .expect("spawn outbound")
    };

    let core_join = {
        let mut core = Core {
            cfg,
            fns,
            txns,
            store,
            sessions: BTreeMap::new(),
            outbound: out_tx,
            dead: false,
            deliveries: Vec::new(),
            conflicts: Vec::new(),
            kill,
        };
        let node = name.clone();
        std::thread::Builder::new()
            .name(format!("{node}-core"))
            .spawn(move || core_loop(&mut core, event_rx))
            .expect("spawn core")
    };

    Ok(NodeHandle {
        name,
        local_addr,
        events: event_tx,
        shutdown_flag,
        core_join: Some(core_join),
        listener_join: Some(listener_join),
        outbound_join: Some(outbound_join),
    })
}

fn core_loop(core: &mut Core, events: Receiver<NodeEvent>) {
    core.recover_on_boot(Instant::now());
    loop {
        match events.recv_timeout(TICK) {
            Ok(NodeEvent::Frame(frame)) => core.handle_frame(frame, Instant::now()),
            Ok(NodeEvent::Start {
                chor,
                input,
                session_id,
                reply,
            }) => {
                let result = core.start_session(&chor, input, session_id, Instant::now());
                let _ = reply.send(result);
            }
            Ok(NodeEvent::Query(reply)) => {
                let _ = reply.send(core.snapshot());
            }
            Ok(NodeEvent::Shutdown) => break,
            Err(std::sync::mpsc::RecvTimeoutError::Timeout) => {}
            Err(std::sync::mpsc::RecvTimeoutError::Disconnected) => break,
        }
        core.tick(Instant::now());
    }
}

fn listen_loop(listener: TcpListener, events: Sender<NodeEvent>, shutdown: Arc<AtomicBool>) {
    listener
        .set_nonblocking(true)
        .expect("nonblocking listener");
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let events = events.clone();
                std::thread::spawn(move || read_frames(stream, events));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(TICK);
            }
            Err(_) => break,
        }
    }
}

fn read_frames(stream: TcpStream, events: Sender<NodeEvent>) {
    stream.set_nonblocking(false).ok();
    stream
        .set_read_timeout(Some(Duration::from_secs(5)))
        .ok();
    let mut reader = std::io::BufReader::new(stream);
    loop {
        match Frame::read_from(&mut reader) {
            Ok(Some(frame)) => {
                if events.send(NodeEvent::Frame(frame)).is_err() {
                    return;
                }
            }
            Ok(None) => return,
            Err(e) => {
                log::debug!("connection error: {e}");
                return;
            }
        }
    }
}

fn outbound_loop(rx: Receiver<(ProcName, Vec<u8>)>, peers: BTreeMap<ProcName, String>) {
    while let Ok((to, bytes)) = rx.recv() {
        let Some(addr) = peers.get(&to) else {
            log::warn!("no address for peer {to}");
            continue;
        };
        let Ok(mut addrs) = addr.to_socket_addrs() else {
            continue;
        };
        let Some(sockaddr) = addrs.next() else {
            continue;
        };
        match TcpStream::connect_timeout(&sockaddr, CONNECT_TIMEOUT) {
            Ok(mut stream) => {
                let _ = stream.write_all(&bytes);
                let _ = stream.flush();
            }
            Err(e) => log::debug!("connect to {to} ({addr}) failed: {e}"),
        }
    }
}

impl NodeHandle {
    pub fn start_session(&self, chor: &str, input: Value) -> Result<u128, NodeError> {
        self.start_session_with_id(chor, input, None)
    }

    pub fn start_session_with_id(
        &self,
        chor: &str,
        input: Value,
        session_id: Option<u128>,
    ) -> Result<u128, NodeError> {
        let (tx, rx) = std::sync::mpsc::sync_channel(1);
        self.events
            .send(NodeEvent::Start {
                chor: chor.to_owned(),
                input,
                session_id,
                reply: tx,
            })
            .map_err(|_| NodeError::NotResponding)?;
        rx.recv_timeout(Duration::from_secs(5))
            .map_err(|_| NodeError::NotResponding)?
            .map_err(NodeError::Rejected)
    }

    pub fn snapshot(&self) -> Result<Snapshot, NodeError> {
        let (tx, rx) = std::sync::mpsc::sync_channel(1);
        self.events
            .send(NodeEvent::Query(tx))
            .map_err(|_| NodeError::NotResponding)?;
        rx.recv_timeout(Duration::from_secs(5))
            .map_err(|_| NodeError::NotResponding)
    }

    pub fn shutdown(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        self.shutdown_flag.store(true, Ordering::SeqCst);
        let _ = self.events.send(NodeEvent::Shutdown);
        if let Some(j) = self.core_join.take() {
            let _ = j.join();
        }
        if let Some(j) = self.listener_join.take() {
            let _ = j.join();
        }
        if let Some(j) = self.outbound_join.take() {
            let _ = j.join();
        }
    }
}

impl Drop for NodeHandle {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}
