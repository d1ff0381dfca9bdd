//! Hand-derived single-step oracles for the two semantics and the
//! projection function: each case applies one inference rule on paper
//! and pins the entire successor configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use troupe_kernel::chor::{check_chor_wellformed, chor_steps, is_chor_terminated};
use troupe_kernel::net::{
    commit_transaction_net, is_net_deadlocked, is_net_terminated, net_steps, restart_process,
};
use troupe_kernel::parse::{parse_choreography, parse_proc_program};
use troupe_kernel::project::{check_projectability, merge, project};
use troupe_kernel::{
    ChorConfig, ChorInstr, Choreography, Direction, Expr, FnRegistry, Msg, NetConfig, Outcome,
    ProcInstr, ProcName, ProcProgram, Semantics, TransitionLabel, TxnRegistry, Value, VarName,
    VarStore,
};
use troupe_kernel::{TransName, TransactionDef};

fn p(name: &str) -> ProcName {
    ProcName::new(name)
}

fn procs(names: &[&str]) -> BTreeSet<ProcName> {
    names.iter().map(|n| ProcName::new(*n)).collect()
}

fn no_txns() -> BTreeSet<String> {
    BTreeSet::new()
}

fn chor(src: &str) -> Choreography {
    parse_choreography(src, &no_txns()).unwrap()
}

struct Ctx {
    fns: FnRegistry,
    txns: TxnRegistry,
}

impl Ctx {
    fn new() -> Ctx {
        Ctx {
            fns: FnRegistry::with_builtins(),
            txns: TxnRegistry::default(),
        }
    }

    fn with_txn(mut self, def: TransactionDef) -> Ctx {
        self.txns.register(def);
        self
    }

    fn sem(&self) -> Semantics<'_> {
        Semantics::new(&self.fns, &self.txns)
    }
}

// ---- choreography steps ----

#[test]
fn empty_choreography_offers_no_step() {
    let ctx = Ctx::new();
    let cfg = ChorConfig::initial(Choreography::Nil, procs(&["p", "q"]));
    assert!(chor_steps(&ctx.sem(), &cfg).is_empty());
    assert!(is_chor_terminated(&ctx.sem(), &cfg));
}

#[test]
fn send_step_matches_hand_applied_rule() {
    // p.1 -> q.x steps with label p.1->q!, binds the message at index
    // 0, bumps p's send row, and leaves the in-flight residual.
    let ctx = Ctx::new();
    let cfg = ChorConfig::initial(chor("p.1 -> q.x\n"), procs(&["p", "q"]));
    let steps = chor_steps(&ctx.sem(), &cfg);
    assert_eq!(steps.len(), 1);
    let (label, next) = &steps[0];
    assert_eq!(
        *label,
        TransitionLabel::SendEv(p("p"), Value::Int(1), p("q"))
    );

    let mut expected = cfg.clone();
    expected.chor = Choreography::Seq(
        ChorInstr::InFlight(p("p"), p("q"), VarName::new("x")),
        Arc::new(Choreography::Nil),
    );
    expected.msgs.bind(&p("p"), &p("q"), 0, Msg::Val(Value::Int(1)));
    expected.seqs.inc_send(&p("p"), &p("q"));
    assert_eq!(next, &expected);

    // The follow-up receive consumes the message and bumps q's
    // receiver-local row.
    let steps2 = chor_steps(&ctx.sem(), next);
    assert_eq!(steps2.len(), 1);
    let (label2, done) = &steps2[0];
    assert_eq!(
        *label2,
        TransitionLabel::RecvEv(p("p"), Value::Int(1), p("q"))
    );
    assert!(done.chor.is_nil());
    assert_eq!(done.vars.get(&p("q"), &VarName::new("x")), Value::Int(1));
    assert_eq!(done.seqs.get(&p("q"), &p("p"), Direction::Receive), 1);
    assert_eq!(done.seqs.get(&p("p"), &p("q"), Direction::Send), 1);
}

#[test]
fn delay_allows_independent_processes_to_step() {
    // p.x := 1 ; q.y := 2: both assignments are enabled, q's through
    // the delay rule.
    let ctx = Ctx::new();
    let cfg = ChorConfig::initial(chor("p.x := 1\nq.y := 2\n"), procs(&["p", "q"]));
    let steps = chor_steps(&ctx.sem(), &cfg);
    let labels: Vec<_> = steps.iter().map(|(l, _)| l.clone()).collect();
    assert_eq!(
        labels,
        vec![TransitionLabel::Tau(p("p")), TransitionLabel::Tau(p("q"))]
    );
}

#[test]
fn delay_blocks_the_pending_receiver() {
    // p.1 -> q.x ; q.y := 2: q's assignment must wait for the receive,
    // so only the send is enabled initially.
    let ctx = Ctx::new();
    let cfg = ChorConfig::initial(chor("p.1 -> q.x\nq.y := 2\n"), procs(&["p", "q"]));
    let steps = chor_steps(&ctx.sem(), &cfg);
    assert_eq!(steps.len(), 1);
    assert!(matches!(steps[0].0, TransitionLabel::SendEv(..)));
}

#[test]
fn delay_lets_the_sender_continue_past_its_in_flight() {
    // After p's send, p's next instruction no longer waits on q's
    // receive.
    let ctx = Ctx::new();
    let cfg = ChorConfig::initial(chor("p.1 -> q.x\np.z := 3\n"), procs(&["p", "q"]));
    let steps = chor_steps(&ctx.sem(), &cfg);
    let (_, after_send) = steps
        .iter()
        .find(|(l, _)| matches!(l, TransitionLabel::SendEv(..)))
        .unwrap();
    let labels: Vec<_> = chor_steps(&ctx.sem(), after_send)
        .into_iter()
        .map(|(l, _)| l)
        .collect();
    assert!(labels.contains(&TransitionLabel::Tau(p("p"))));
    assert!(labels
        .iter()
        .any(|l| matches!(l, TransitionLabel::RecvEv(..))));
}

#[test]
fn conditional_steps_to_the_evaluated_branch() {
    let ctx = Ctx::new();
    let src = "p.b := true\nif p.b {\n  p.x := 1\n} else {\n  p.x := 2\n}\n";
    let cfg = ChorConfig::initial(chor(src), procs(&["p"]));
    let sem = ctx.sem();
    let (_, s1) = &chor_steps(&sem, &cfg)[0];
    let (_, s2) = &chor_steps(&sem, s1)[0];
    let (_, s3) = &chor_steps(&sem, s2)[0];
    assert_eq!(s3.vars.get(&p("p"), &VarName::new("x")), Value::Int(1));
    assert!(s3.chor.is_nil());
}

#[test]
fn failed_transaction_compensates_and_deactivates() {
    let ctx = Ctx::new()
        .with_txn(TransactionDef::new(
            "t1",
            |v| Outcome::Ok(Value::Int(v.as_int().unwrap_or(0) + 1)),
            |_, _| {},
        ))
        .with_txn(TransactionDef::failing("t2"));
    let names: BTreeSet<String> = ["t1", "t2"].iter().map(|s| s.to_string()).collect();
    let c = parse_choreography("p.a := t1(5)\np.b := t2(1)\n", &names).unwrap();
    let cfg = ChorConfig::initial(c, procs(&["p", "q"]));
    let sem = ctx.sem();

    let (l1, s1) = &chor_steps(&sem, &cfg)[0];
    assert_eq!(*l1, TransitionLabel::Tau(p("p")));
    assert_eq!(s1.vars.get(&p("p"), &VarName::new("a")), Value::Int(6));
    assert_eq!(s1.logs.log_of(&p("p")).len(), 1);

    let (l2, s2) = &chor_steps(&sem, s1)[0];
    assert_eq!(*l2, TransitionLabel::CompensateEv(p("p")));
    assert!(!s2.active.contains(&p("p")));
    assert!(s2.logs.is_fully_compensated(&p("p")));
    // b is never assigned by the failing rule.
    assert_eq!(s2.vars.get(&p("p"), &VarName::new("b")), Value::Unit);

    // q may now compensate too (trivially, with an empty log), after
    // which nothing is enabled.
    let steps = chor_steps(&sem, s2);
    assert_eq!(steps.len(), 1);
    let (l3, s3) = &steps[0];
    assert_eq!(*l3, TransitionLabel::CompensateEv(p("q")));
    assert!(s3.active.is_empty());
    assert!(is_chor_terminated(&sem, s3));
}

#[test]
fn empty_active_set_terminates_everything() {
    let ctx = Ctx::new();
    let mut cfg = ChorConfig::initial(chor("p.x := 1\n"), procs(&["p"]));
    assert!(!is_chor_terminated(&ctx.sem(), &cfg));
    cfg.active.clear();
    assert!(is_chor_terminated(&ctx.sem(), &cfg));
}

#[test]
fn enumeration_is_deterministic() {
    let ctx = Ctx::new();
    let cfg = ChorConfig::initial(
        chor("p.x := 1\nq.y := 2\nr.z := 3\np.1 -> q.w\n"),
        procs(&["p", "q", "r"]),
    );
    let a = chor_steps(&ctx.sem(), &cfg);
    let b = chor_steps(&ctx.sem(), &cfg);
    assert_eq!(a, b);
}

// ---- well-formedness ----

#[test]
fn source_program_is_wellformed() {
    let cfg = ChorConfig::initial(
        chor("p.1 -> q.x\nif p.true {\n  p -> q[L]\n} else {\n  p -> q[R]\n}\n"),
        procs(&["p", "q"]),
    );
    assert!(check_chor_wellformed(&cfg).is_ok());
}

#[test]
fn dangling_in_flight_is_rejected() {
    let mut cfg = ChorConfig::initial(Choreography::Nil, procs(&["p", "q"]));
    cfg.chor = Choreography::Seq(
        ChorInstr::InFlight(p("p"), p("q"), VarName::new("x")),
        Arc::new(Choreography::Nil),
    );
    let errs = check_chor_wellformed(&cfg).unwrap_err();
    assert!(errs
        .iter()
        .any(|e| e.to_string().contains("dangling in-flight")));
}

#[test]
fn self_send_is_rejected() {
    let mut cfg = ChorConfig::initial(Choreography::Nil, procs(&["p"]));
    cfg.chor = Choreography::Seq(
        ChorInstr::Send(p("p"), Expr::int(1), p("p"), VarName::new("x")),
        Arc::new(Choreography::Nil),
    );
    let errs = check_chor_wellformed(&cfg).unwrap_err();
    assert!(errs
        .iter()
        .any(|e| e.to_string().contains("self-communication")));
}

// ---- network steps ----

fn two_proc_net(p_src: &str, q_src: &str) -> NetConfig {
    let mut programs = BTreeMap::new();
    programs.insert(p("p"), parse_proc_program(p_src, &no_txns()).unwrap());
    programs.insert(p("q"), parse_proc_program(q_src, &no_txns()).unwrap());
    NetConfig::initial(programs, VarStore::default())
}

#[test]
fn finished_network_offers_no_step() {
    let ctx = Ctx::new();
    let cfg = two_proc_net("", "");
    assert!(net_steps(&ctx.sem(), &cfg, false).is_empty());
    assert!(is_net_terminated(&ctx.sem(), &cfg));
    assert!(!is_net_deadlocked(&ctx.sem(), &cfg));
}

#[test]
fn send_then_receive_in_the_network() {
    let ctx = Ctx::new();
    let cfg = two_proc_net("q ! 1\n", "p ? x\n");
    let sem = ctx.sem();
    let steps = net_steps(&sem, &cfg, false);
    assert_eq!(steps.len(), 1);
    assert_eq!(
        steps[0].0,
        TransitionLabel::SendEv(p("p"), Value::Int(1), p("q"))
    );
    let after = &steps[0].1;
    let steps2 = net_steps(&sem, after, false);
    assert_eq!(steps2.len(), 1);
    assert_eq!(
        steps2[0].0,
        TransitionLabel::RecvEv(p("p"), Value::Int(1), p("q"))
    );
    let done = &steps2[0].1;
    assert_eq!(done.vars.get(&p("q"), &VarName::new("x")), Value::Int(1));
    assert!(is_net_terminated(&sem, done));
    assert!(!is_net_deadlocked(&sem, done));
}

#[test]
fn the_two_receivers_deadlock() {
    // p[q?x] | q[p?x] is terminated but not finished: the canonical
    // deadlocked network.
    let ctx = Ctx::new();
    let cfg = two_proc_net("q ? x\n", "p ? x\n");
    assert!(is_net_terminated(&ctx.sem(), &cfg));
    assert!(is_net_deadlocked(&ctx.sem(), &cfg));
}

#[test]
fn restart_successors_cover_every_process() {
    let ctx = Ctx::new();
    let cfg = two_proc_net("q ! 1\n", "p ? x\n");
    let steps = net_steps(&ctx.sem(), &cfg, true);
    let restarts: Vec<_> = steps
        .iter()
        .filter(|(l, _)| l.is_restart())
        .map(|(l, _)| l.performer().clone())
        .collect();
    assert_eq!(restarts, vec![p("p"), p("q")]);
}

#[test]
fn restart_on_fresh_config_is_a_fixpoint() {
    let ctx = Ctx::new();
    let cfg = two_proc_net("q ! 1\n", "p ? x\n");
    let restarted = restart_process(&cfg, &p("p")).unwrap();
    assert_eq!(cfg, restarted);
    let _ = ctx;
}

#[test]
fn restart_replays_sends_as_equal_rebinds() {
    let ctx = Ctx::new();
    let cfg = two_proc_net("q ! 1\n", "p ? x\n");
    let sem = ctx.sem();
    let after_send = net_steps(&sem, &cfg, false).remove(0).1;
    let restarted = restart_process(&after_send, &p("p")).unwrap();
    // K and T persist; p's program and rows reset; A unchanged.
    assert_eq!(restarted.msgs, after_send.msgs);
    assert_eq!(restarted.logs, after_send.logs);
    assert_eq!(restarted.active, after_send.active);
    assert_eq!(restarted.seqs.get(&p("p"), &p("q"), Direction::Send), 0);
    // Replaying the send converges back to the pre-restart state.
    let replayed = net_steps(&sem, &restarted, false)
        .into_iter()
        .find(|(l, _)| matches!(l, TransitionLabel::SendEv(..)))
        .unwrap()
        .1;
    assert_eq!(replayed, after_send);
}

#[test]
fn commit_transaction_flow() {
    let ctx = Ctx::new().with_txn(TransactionDef::new(
        "t",
        |v| Outcome::Ok(Value::Int(v.as_int().unwrap_or(0) + 1)),
        |_, _| {},
    ));
    let sem = ctx.sem();
    let cfg = two_proc_net("", "");
    let t = TransName::new("t");

    let (out1, cfg1) = commit_transaction_net(&sem, &cfg, &p("p"), &t, &Value::Int(5)).unwrap();
    assert_eq!(out1, Outcome::Ok(Value::Int(6)));
    assert_eq!(cfg1.logs.log_of(&p("p")).len(), 1);

    // Replay: same outcome, log untouched.
    let (out2, cfg2) = commit_transaction_net(&sem, &cfg1, &p("p"), &t, &Value::Int(5)).unwrap();
    assert_eq!(out2, Outcome::Ok(Value::Int(6)));
    assert_eq!(cfg2.logs.log_of(&p("p")).len(), 1);

    // A failing commit compensates the log and removes the process.
    let ctx2 = Ctx::new()
        .with_txn(TransactionDef::identity("a"))
        .with_txn(TransactionDef::failing("boom"));
    let sem2 = ctx2.sem();
    let (_, with_a) =
        commit_transaction_net(&sem2, &cfg, &p("p"), &TransName::new("a"), &Value::Int(1))
            .unwrap();
    let (out3, failed) = commit_transaction_net(
        &sem2,
        &with_a,
        &p("p"),
        &TransName::new("boom"),
        &Value::Int(9),
    )
    .unwrap();
    assert_eq!(out3, Outcome::Fail);
    assert!(!failed.active.contains(&p("p")));
    assert!(failed.logs.is_fully_compensated(&p("p")));
    assert_eq!(failed.logs.log_of(&p("p")).len(), 2);
}

#[test]
fn inactive_processes_cannot_step_but_can_restart() {
    let ctx = Ctx::new();
    let mut cfg = two_proc_net("q ! 1\n", "p ? x\n");
    cfg.active.remove(&p("p"));
    let steps = net_steps(&ctx.sem(), &cfg, true);
    assert!(steps.iter().all(|(l, _)| match l {
        TransitionLabel::RestartEv(_) => true,
        TransitionLabel::CompensateEv(who) => who == &p("q"),
        _ => false,
    }));
}

// ---- projection ----

#[test]
fn projection_of_a_send() {
    let c = chor("p.1 -> q.x\n");
    assert_eq!(
        project(&c, &p("p")).unwrap(),
        parse_proc_program("q ! 1\n", &no_txns()).unwrap()
    );
    assert_eq!(
        project(&c, &p("q")).unwrap(),
        parse_proc_program("p ? x\n", &no_txns()).unwrap()
    );
    assert_eq!(project(&c, &p("r")).unwrap(), ProcProgram::Nil);
}

#[test]
fn projection_of_an_in_flight_skips_the_sender() {
    let c = Choreography::Seq(
        ChorInstr::InFlight(p("p"), p("q"), VarName::new("x")),
        Arc::new(Choreography::Nil),
    );
    assert_eq!(project(&c, &p("p")).unwrap(), ProcProgram::Nil);
    assert_eq!(
        project(&c, &p("q")).unwrap(),
        parse_proc_program("p ? x\n", &no_txns()).unwrap()
    );
}

#[test]
fn projection_of_nil_is_nil() {
    assert_eq!(project(&Choreography::Nil, &p("r")).unwrap(), ProcProgram::Nil);
}

#[test]
fn merge_is_idempotent() {
    let prog = parse_proc_program("q ! 1\nx := 2\n", &no_txns()).unwrap();
    assert_eq!(merge(&prog, &prog).unwrap(), prog);
}

#[test]
fn merge_unions_disjoint_branch_labels() {
    let a = parse_proc_program("p & { L: { x := 1 } }\n", &no_txns()).unwrap();
    let b = parse_proc_program("p & { R: { x := 2 } }\n", &no_txns()).unwrap();
    let merged = merge(&a, &b).unwrap();
    let expected =
        parse_proc_program("p & { L: { x := 1 } R: { x := 2 } }\n", &no_txns()).unwrap();
    assert_eq!(merged, expected);
}

#[test]
fn merge_rejects_divergent_sends() {
    let a = parse_proc_program("q ! 1\n", &no_txns()).unwrap();
    let b = parse_proc_program("q ! 2\n", &no_txns()).unwrap();
    assert!(merge(&a, &b).is_err());
}

#[test]
fn projectability_of_straight_line_code() {
    assert!(check_projectability(&chor("p.1 -> q.x\nq.2 -> r.y\n")).is_ok());
}

#[test]
fn selection_makes_a_conditional_projectable() {
    let src = "if p.b {\n  p -> q[L]\n  p.1 -> q.x\n} else {\n  p -> q[R]\n  q.y := 2\n}\n";
    assert!(check_projectability(&chor(src)).is_ok());
}

#[test]
fn missing_selection_is_rejected_naming_the_process() {
    let src = "if p.b {\n  p.1 -> q.x\n} else {\n  q.y := 2\n}\n";
    let errs = check_projectability(&chor(src)).unwrap_err();
    assert_eq!(errs.len(), 1);
    assert!(errs[0].to_string().contains("process q"));
}

#[test]
fn projected_branch_captures_branch_local_behavior() {
    // The receiver's arms hold its branch-local continuation; behavior
    // shared by both branches follows the branch instruction.
    let src = "if p.b {\n  p -> q[L]\n  p.1 -> q.x\n} else {\n  p -> q[R]\n}\nq.done := 1\n";
    let c = chor(src);
    let at_q = project(&c, &p("q")).unwrap();
    match at_q.head() {
        Some((ProcInstr::Branch(from, arms), tail)) => {
            assert_eq!(from, &p("p"));
            assert_eq!(arms.len(), 2);
            let l_arm = &arms[&troupe_kernel::LabelName::new("L")];
            assert!(matches!(
                l_arm.head(),
                Some((ProcInstr::RecvFrom(..), _))
            ));
            assert!(arms[&troupe_kernel::LabelName::new("R")].is_nil());
            assert!(matches!(tail.head(), Some((ProcInstr::Assign(..), _))));
        }
        other => panic!("expected branch head, got {other:?}"),
    }
}
