//! Congruence, ordering, and pruning on hand-built executions. Each
//! trace is driven step by step through the semantics, picking
//! transitions by label, so the expected shapes are derived on paper
//! and pinned here.

use std::collections::BTreeMap;
use troupe_trace::file::{read_trace, write_trace};
use troupe_trace::{
    cfg_congruent, check_prec_witness, exec_congruent, prec, prec_p, prune_one_restart,
    ExecutionTrace, TraceStep,
};
use troupe_kernel::net::net_steps;
use troupe_kernel::parse::parse_proc_program;
use troupe_kernel::{
    FnRegistry, NetConfig, ProcName, ProcProgram, Semantics, TransactionDef, TransitionLabel,
    TxnRegistry, Value, VarStore,
};

fn p(name: &str) -> ProcName {
    ProcName::new(name)
}

fn prog(src: &str, txns: &[&str]) -> ProcProgram {
    let names = txns.iter().map(|s| s.to_string()).collect();
    parse_proc_program(src, &names).unwrap()
}

fn net(programs: &[(&str, ProcProgram)]) -> NetConfig {
    let map: BTreeMap<ProcName, ProcProgram> = programs
        .iter()
        .map(|(n, p)| (ProcName::new(*n), p.clone()))
        .collect();
    NetConfig::initial(map, VarStore::default())
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

/// Drive a trace by matching each label against the enumerated steps.
fn drive(sem: &Semantics, init: NetConfig, labels: &[TransitionLabel]) -> ExecutionTrace {
    let mut steps = Vec::new();
    let mut cur = init.clone();
    for want in labels {
        let (_, next) = net_steps(sem, &cur, true)
            .into_iter()
            .find(|(l, _)| l == want)
            .unwrap_or_else(|| panic!("label {want} not enabled at {cur:?}"));
        steps.push(TraceStep {
            label: want.clone(),
            next: next.clone(),
        });
        cur = next;
    }
    ExecutionTrace::new_validated(init, steps, sem).unwrap()
}

fn tau(name: &str) -> TransitionLabel {
    TransitionLabel::Tau(p(name))
}
fn send(from: &str, v: i64, to: &str) -> TransitionLabel {
    TransitionLabel::SendEv(p(from), Value::Int(v), p(to))
}
fn recv(from: &str, v: i64, to: &str) -> TransitionLabel {
    TransitionLabel::RecvEv(p(from), Value::Int(v), p(to))
}
fn restart(name: &str) -> TransitionLabel {
    TransitionLabel::RestartEv(p(name))
}
fn compensate(name: &str) -> TransitionLabel {
    TransitionLabel::CompensateEv(p(name))
}

// ---- configuration congruence ----

#[test]
fn congruence_is_reflexive_and_sees_through_inactive_processes() {
    let cfg = net(&[("p", prog("q ! 1\n", &[])), ("q", prog("p ? x\n", &[]))]);
    assert!(cfg_congruent(&cfg, &cfg));

    // Mutating an inactive process's program is invisible.
    let mut inactive = cfg.clone();
    inactive.active.remove(&p("p"));
    let mut mutated = inactive.clone();
    mutated
        .net
        .procs
        .insert(p("p"), prog("q ! 42\nq ! 43\n", &[]));
    assert!(cfg_congruent(&inactive, &mutated));

    // The message map is compared globally.
    let ctx = Ctx::new();
    let stepped = net_steps(&ctx.sem(), &cfg, false).remove(0).1;
    let mut k_differs = cfg.clone();
    k_differs.net = stepped.net.clone();
    assert!(!cfg_congruent(&stepped, &cfg));
}

#[test]
fn exec_congruence_requires_matching_shape() {
    let ctx = Ctx::new();
    let cfg = net(&[("p", prog("q ! 1\n", &[])), ("q", prog("p ? x\n", &[]))]);
    let full = drive(&ctx.sem(), cfg.clone(), &[send("p", 1, "q"), recv("p", 1, "q")]);
    let short = drive(&ctx.sem(), cfg, &[send("p", 1, "q")]);
    assert!(exec_congruent(&full, &full));
    assert!(!exec_congruent(&full, &short));
}

// ---- the per-process window relation ----

#[test]
fn empty_window_below_a_single_step_of_the_distinguished_process() {
    let ctx = Ctx::new();
    let cfg = net(&[("p", prog("x := 1\n", &[])), ("q", ProcProgram::Nil)]);
    let one = drive(&ctx.sem(), cfg.clone(), &[tau("p")]);
    let none = ExecutionTrace::empty(cfg);
    assert!(prec_p(&none, &one, &p("p")));
    // From q's perspective, p's step cannot be pruned.
    assert!(!prec_p(&none, &one, &p("q")));
}

#[test]
fn identical_step_by_another_process_is_kept() {
    let ctx = Ctx::new();
    let cfg = net(&[("p", ProcProgram::Nil), ("q", prog("x := 2\n", &[]))]);
    let one = drive(&ctx.sem(), cfg, &[tau("q")]);
    assert!(prec_p(&one, &one, &p("p")));
}

#[test]
fn extra_left_step_by_the_distinguished_process_fails() {
    let ctx = Ctx::new();
    let cfg = net(&[("p", prog("x := 1\n", &[])), ("q", ProcProgram::Nil)]);
    let one = drive(&ctx.sem(), cfg.clone(), &[tau("p")]);
    let none = ExecutionTrace::empty(cfg);
    assert!(!prec_p(&one, &none, &p("p")));
}

// ---- the ordering ----

#[test]
fn ordering_is_reflexive() {
    let ctx = Ctx::new();
    let cfg = net(&[("p", prog("x := 1\n", &[])), ("q", prog("y := 2\n", &[]))]);
    let t = drive(&ctx.sem(), cfg, &[tau("p"), tau("q")]);
    assert!(prec(&t, &t));
}

#[test]
fn replay_pruning_relates_the_restart_execution_to_the_clean_one() {
    // p receives from r, restarts, replays the receive while q's send
    // lands in between, then consumes q's message. The pruned execution
    // drops the restart and the replayed receive.
    let ctx = Ctx::new();
    let cfg = net(&[
        ("p", prog("r ? a\nq ? x\n", &[])),
        ("q", prog("p ! 1\n", &[])),
        ("r", prog("p ! 7\n", &[])),
    ]);
    let faulty = drive(
        &ctx.sem(),
        cfg.clone(),
        &[
            send("r", 7, "p"),
            recv("r", 7, "p"),
            restart("p"),
            send("q", 1, "p"),
            recv("r", 7, "p"),
            recv("q", 1, "p"),
        ],
    );
    let clean = drive(
        &ctx.sem(),
        cfg,
        &[
            send("r", 7, "p"),
            recv("r", 7, "p"),
            send("q", 1, "p"),
            recv("q", 1, "p"),
        ],
    );
    assert_eq!(faulty.restart_count(), 1);

    let (pruned, witness) = prune_one_restart(&faulty, &ctx.sem()).unwrap();
    assert_eq!(pruned.restart_count(), 0);
    assert_eq!(pruned, clean);
    check_prec_witness(&pruned, &faulty, &witness).unwrap();
    assert!(prec(&pruned, &faulty));
    assert_eq!(pruned.final_config(), faulty.final_config());
}

#[test]
fn compensate_first_pruning_reanchors_the_compensation() {
    // p assigns twice and restarts; q's transaction fails; p replays
    // one assignment and then compensates instead of re-converging.
    // The pruned execution is (fail, compensate) from p's pre-restart
    // state.
    let ctx = Ctx::new().with_txn(TransactionDef::failing("boom"));
    let cfg = net(&[
        ("p", prog("a := 1\nb := 2\nq ? y\n", &[])),
        ("q", prog("z := boom(0)\n", &["boom"])),
    ]);
    let faulty = drive(
        &ctx.sem(),
        cfg.clone(),
        &[
            tau("p"),
            tau("p"),
            restart("p"),
            compensate("q"),
            tau("p"),
            compensate("p"),
        ],
    );
    assert!(troupe_kernel::net::is_net_terminated(&ctx.sem(), faulty.final_config()));

    let (pruned, witness) = prune_one_restart(&faulty, &ctx.sem()).unwrap();
    assert_eq!(pruned.restart_count(), 0);
    let labels: Vec<String> = pruned.labels().map(|l| l.to_string()).collect();
    assert_eq!(
        labels,
        vec!["tau@p", "tau@p", "compensate@q", "compensate@p"]
    );
    check_prec_witness(&pruned, &faulty, &witness).unwrap();
    assert!(prec(&pruned, &faulty));
    // Final configurations are congruent but not equal: p is stuck at
    // different residual programs, inactive on both sides.
    assert!(cfg_congruent(pruned.final_config(), faulty.final_config()));
    assert_ne!(pruned.final_config(), faulty.final_config());
    assert_eq!(pruned.final_config().logs, faulty.final_config().logs);
}

#[test]
fn swapping_independent_steps_is_not_a_single_application() {
    let ctx = Ctx::new();
    let cfg = net(&[("p", prog("x := 1\n", &[])), ("q", prog("y := 2\n", &[]))]);
    let pq = drive(&ctx.sem(), cfg.clone(), &[tau("p"), tau("q")]);
    let qp = drive(&ctx.sem(), cfg, &[tau("q"), tau("p")]);
    assert!(!prec(&pq, &qp));
    assert!(!prec(&qp, &pq));
}

#[test]
fn restart_of_a_fresh_process_prunes_to_identity() {
    let ctx = Ctx::new();
    let cfg = net(&[("p", prog("x := 1\n", &[])), ("q", ProcProgram::Nil)]);
    let faulty = drive(&ctx.sem(), cfg.clone(), &[restart("p"), tau("p")]);
    let (pruned, witness) = prune_one_restart(&faulty, &ctx.sem()).unwrap();
    assert_eq!(pruned.len(), 1);
    check_prec_witness(&pruned, &faulty, &witness).unwrap();
    assert_eq!(pruned.final_config(), faulty.final_config());
}

#[test]
fn restart_of_a_compensated_process_is_dropped() {
    // q fails; p compensates; p then pointlessly restarts. The restart
    // is pruned and the suffix is congruent despite p's reset state.
    let ctx = Ctx::new().with_txn(TransactionDef::failing("boom"));
    let cfg = net(&[
        ("p", prog("a := 1\nq ? y\n", &[])),
        ("q", prog("z := boom(0)\n", &["boom"])),
    ]);
    let faulty = drive(
        &ctx.sem(),
        cfg.clone(),
        &[tau("p"), compensate("q"), compensate("p"), restart("p")],
    );
    let (pruned, witness) = prune_one_restart(&faulty, &ctx.sem()).unwrap();
    assert_eq!(pruned.restart_count(), 0);
    assert_eq!(pruned.len(), 3);
    check_prec_witness(&pruned, &faulty, &witness).unwrap();
    assert!(cfg_congruent(pruned.final_config(), faulty.final_config()));
}

#[test]
fn pruning_requires_a_terminated_trace() {
    let ctx = Ctx::new();
    let cfg = net(&[("p", prog("x := 1\n", &[])), ("q", ProcProgram::Nil)]);
    let unfinished = drive(&ctx.sem(), cfg, &[restart("p")]);
    assert!(prune_one_restart(&unfinished, &ctx.sem()).is_err());
}

// ---- trace files ----

#[test]
fn trace_file_roundtrip() {
    let ctx = Ctx::new();
    let cfg = net(&[
        ("p", prog("q ! 1\n", &[])),
        ("q", prog("p ? x\n", &[])),
    ]);
    let t = drive(
        &ctx.sem(),
        cfg,
        &[send("p", 1, "q"), restart("p"), send("p", 1, "q"), recv("p", 1, "q")],
    );
    let text = write_trace(&t);
    assert_eq!(text.lines().count(), 5);
    let back = read_trace(&text, &ctx.sem()).unwrap();
    assert_eq!(&back, &t);
}

#[test]
fn trace_file_rejects_wrong_digest() {
    let ctx = Ctx::new();
    let cfg = net(&[("p", prog("q ! 1\n", &[])), ("q", prog("p ? x\n", &[]))]);
    let t = drive(&ctx.sem(), cfg, &[send("p", 1, "q")]);
    let text = write_trace(&t);
    let tampered = text.replace(
        text.lines().nth(1).unwrap().split("\"state_digest\":\"").nth(1).unwrap()
            .split('"').next().unwrap(),
        &"0".repeat(64),
    );
    assert!(read_trace(&tampered, &ctx.sem()).is_err());
}
