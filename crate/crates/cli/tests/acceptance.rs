//! The acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line (run with `-- --nocapture` to see them as they go).
//!
//! 1. Deadlock freedom of projected saga choreographies, exhaustively.
//! 2. All-or-nothing saga shape under forced failures and restarts.
//! 3. Projection bisimulation, both directions.
//! 4. Restart pruning with verified ordering certificates.
//! 5. Bounded termination under a restart budget.
//! 6. The analytic latency model, reproduced exactly on a simulated
//!    clock.
//! 7. Crash-injected warehouse saga on loopback TCP: agreement and
//!    exactly-once effects across a systematic kill sweep.
//! 8. At-most-once mode under a drop/reorder/duplicate proxy.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};
use tempfile::tempdir;
use troupe_kernel::project::project_all;
use troupe_kernel::{FnRegistry, NetConfig, Semantics, VarStore};
use troupe_sim::{
    chain_setup, check_bisimulation, explore_exhaustive, generate_choreography, predict_latency,
    run_random, run_random_chor, simulate_latency, workers_setup, ChorGenSpec, FaultPolicy,
    LatencyParams, Pattern, Scenario,
};
use troupe_trace::{cfg_congruent, check_prec_witness, prune_one_restart};

struct Criterion {
    number: u32,
    name: &'static str,
    budget: Duration,
    started: Instant,
}

impl Criterion {
    fn start(number: u32, name: &'static str, budget_secs: u64) -> Criterion {
        Criterion {
            number,
            name,
            budget: Duration::from_secs(budget_secs),
            started: Instant::now(),
        }
    }

    fn pass(self, detail: String) {
        let elapsed = self.started.elapsed();
        println!(
            "ACCEPTANCE {} ({}): PASS — {detail} [{elapsed:.2?} / budget {:?}]",
            self.number, self.name, self.budget
        );
        assert!(
            elapsed <= self.budget,
            "criterion {} exceeded its runtime budget: {elapsed:?} > {:?}",
            self.number,
            self.budget
        );
    }

    fn fail(&self, detail: impl Into<String>) -> ! {
        let detail = detail.into();
        println!("ACCEPTANCE {} ({}): FAIL — {detail}", self.number, self.name);
        panic!("criterion {} failed: {detail}", self.number);
    }
}

const CORPUS: u64 = 500;

#[test]
fn criterion_1_deadlock_freedom() {
    let c = Criterion::start(1, "deadlock freedom", 60);
    let fns = FnRegistry::with_builtins();
    let mut total_states = 0usize;
    for seed in 0..CORPUS {
        let out = generate_choreography(&ChorGenSpec::scope(seed).with_fail_rate(0.4));
        let sem = Semantics::new(&fns, &out.registry);
        let projected = project_all(&out.chor, &out.processes);
        if !projected.is_ok() {
            c.fail(format!("seed {seed}: generated choreography is unprojectable"));
        }
        let start = NetConfig::initial(projected.programs, VarStore::default());
        let report = explore_exhaustive(&sem, &start, &FaultPolicy::no_faults(), 500_000);
        if report.inconclusive {
            c.fail(format!("seed {seed}: state bound exceeded"));
        }
        if !report.deadlocked.is_empty() {
            c.fail(format!(
                "seed {seed}: deadlocked terminal state:\n{}",
                report.deadlocked.join("\n")
            ));
        }
        total_states += report.states;
    }
    c.pass(format!(
        "{CORPUS} projected choreographies, k=0, {total_states} states explored, 0 deadlocks"
    ));
}

#[test]
fn criterion_2_weak_atomicity() {
    let c = Criterion::start(2, "weak atomicity / network safety", 300);
    let fns = FnRegistry::with_builtins();
    let mut total_terminals = 0usize;
    let mut programs_with_compensation = 0usize;
    for seed in 0..CORPUS {
        let out = generate_choreography(&ChorGenSpec::scope(seed).with_fail_rate(0.4));
        let sem = Semantics::new(&fns, &out.registry);
        let projected = project_all(&out.chor, &out.processes);
        let start = NetConfig::initial(projected.programs, VarStore::default());
        let report = explore_exhaustive(&sem, &start, &FaultPolicy::restarts(2), 500_000);
        if report.inconclusive {
            c.fail(format!("seed {seed}: state bound exceeded"));
        }
        if !report.deadlocked.is_empty() {
            c.fail(format!("seed {seed}: deadlock under restarts"));
        }
        if !report.atomicity_violations.is_empty() {
            c.fail(format!(
                "seed {seed}: saga shape violated:\n{}",
                report.atomicity_violations.join("\n")
            ));
        }
        total_terminals += report.terminals;
        if report.states > 0 && !report.deadlocked.iter().any(|_| true) {
            // Count programs whose corpus actually exercises failure.
            let has_failing = out
                .registry
                .names()
                .any(|t| matches!(out.registry.run_commit(t, &troupe_kernel::Value::Int(0)),
                    Some(troupe_kernel::Outcome::Fail)));
            if has_failing {
                programs_with_compensation += 1;
            }
        }
    }
    assert!(
        programs_with_compensation > CORPUS as usize / 10,
        "corpus failed to force transaction failures"
    );
    c.pass(format!(
        "{CORPUS} choreographies with forced failures, k<=2, {total_terminals} terminal states, \
         0 violations ({programs_with_compensation} programs carried failing transactions)"
    ));
}

#[test]
fn criterion_3_epp_bisimulation() {
    let c = Criterion::start(3, "endpoint projection bisimulation", 120);
    let fns = FnRegistry::with_builtins();
    let mut pairs = 0usize;
    for seed in 0..200u64 {
        let out = generate_choreography(&ChorGenSpec::scope(seed).with_fail_rate(0.3));
        let sem = Semantics::new(&fns, &out.registry);
        match check_bisimulation(&sem, &out.chor, &out.processes, 50) {
            Ok(report) => pairs += report.pairs_checked,
            Err(cex) => c.fail(format!(
                "seed {seed}: {} counterexample at label {}: {}",
                cex.direction, cex.label, cex.detail
            )),
        }
    }
    c.pass(format!(
        "200 choreographies co-explored to depth 50 in both directions, {pairs} pairs, \
         0 counterexamples"
    ));
}

#[test]
fn criterion_4_recovery_pruning() {
    let c = Criterion::start(4, "recovery via restart pruning", 120);
    let fns = FnRegistry::with_builtins();
    let mut pruned = 0usize;
    for seed in 0..200u64 {
        let k = (seed % 3 + 1) as u32;
        let out = generate_choreography(&ChorGenSpec::scope(seed).with_fail_rate(0.3));
        let sem = Semantics::new(&fns, &out.registry);
        let trace = match run_random_chor(
            &sem,
            &out.chor,
            &out.processes,
            &FaultPolicy::restarts(k),
            seed,
        ) {
            Ok(t) => t,
            Err(e) => c.fail(format!("seed {seed}: simulation failed: {e}")),
        };
        if trace.restart_count() != k as usize {
            c.fail(format!(
                "seed {seed}: expected {k} restarts, got {}",
                trace.restart_count()
            ));
        }
        let original = trace.clone();
        let mut cur = trace;
        while cur.restart_count() > 0 {
            let (next, witness) = match prune_one_restart(&cur, &sem) {
                Ok(v) => v,
                Err(e) => c.fail(format!("seed {seed}: pruning failed: {e}")),
            };
            if let Err(e) = check_prec_witness(&next, &cur, &witness) {
                c.fail(format!("seed {seed}: ordering certificate rejected: {e}"));
            }
            cur = next;
            pruned += 1;
        }
        if !cfg_congruent(cur.final_config(), original.final_config()) {
            c.fail(format!("seed {seed}: final configurations not congruent"));
        }
        if cur.final_config().logs != original.final_config().logs {
            c.fail(format!("seed {seed}: transaction logs differ after pruning"));
        }
    }
    c.pass(format!(
        "200 traces with k in {{1,2,3}} injected restarts pruned to restart-free executions, \
         {pruned} verified ordering certificates, congruent final configurations"
    ));
}

#[test]
fn criterion_5_bounded_termination() {
    let c = Criterion::start(5, "bounded termination", 300);
    let fns = FnRegistry::with_builtins();
    let mut max_n = [0usize; 3];
    for seed in 0..CORPUS {
        let out = generate_choreography(&ChorGenSpec::scope(seed).with_fail_rate(0.4));
        let sem = Semantics::new(&fns, &out.registry);
        let projected = project_all(&out.chor, &out.processes);
        let start = NetConfig::initial(projected.programs, VarStore::default());
        let mut prev = 0usize;
        for k in 0..=2u32 {
            let report = explore_exhaustive(&sem, &start, &FaultPolicy::restarts(k), 500_000);
            if report.inconclusive {
                c.fail(format!("seed {seed}, k={k}: state bound exceeded"));
            }
            // The explorer itself asserts acyclicity; a finite number
            // here is the witness n(k).
            if report.max_path_len < prev {
                c.fail(format!("seed {seed}: n(k) shrank with a larger budget"));
            }
            prev = report.max_path_len;
            max_n[k as usize] = max_n[k as usize].max(report.max_path_len);
        }
    }
    c.pass(format!(
        "{CORPUS} programs, finite longest paths for every budget: \
         max n(0)={}, n(1)={}, n(2)={}",
        max_n[0], max_n[1], max_n[2]
    ));
}

#[test]
fn criterion_6_latency_model() {
    let c = Criterion::start(6, "analytic latency model", 60);
    let fns = FnRegistry::with_builtins();
    let txns = troupe_kernel::TxnRegistry::default();
    let sem = Semantics::new(&fns, &txns);

    let simulated = |pattern: Pattern, scenario: Scenario, params: LatencyParams| -> u64 {
        let setup = match scenario {
            Scenario::Chain => chain_setup(pattern, params),
            Scenario::Workers(n) => workers_setup(pattern, n, params),
        };
        let trace = run_random(&sem, setup.initial_config(), &FaultPolicy::no_faults(), 3)
            .expect("canonical pattern runs");
        simulate_latency(&trace, &setup.topology).expect("mapped topology")
    };

    // The 3-service chain at t2 = 10 ms, t1 = 0.1 ms.
    let chain = LatencyParams { t1: 100, t2: 10_000, t3: 0 };
    let orch = predict_latency(Pattern::Orchestration, Scenario::Chain, chain);
    let dec = predict_latency(Pattern::Decentralized, Scenario::Chain, chain);
    if orch != 6 * chain.t2 || dec != 6 * chain.t1 + 3 * chain.t2 {
        c.fail(format!("chain closed forms wrong: {orch}, {dec}"));
    }
    for pattern in [Pattern::Orchestration, Pattern::Decentralized] {
        let sim = simulated(pattern, Scenario::Chain, chain);
        let pred = predict_latency(pattern, Scenario::Chain, chain);
        if sim != pred {
            c.fail(format!("chain {pattern:?}: simulated {sim} != predicted {pred}"));
        }
    }

    // The n-worker pattern for n in 1..=9.
    let fan = LatencyParams { t1: 100, t2: 2_000, t3: 9_000 };
    for n in 1..=9u64 {
        let orch = predict_latency(Pattern::Orchestration, Scenario::Workers(n), fan);
        let dec = predict_latency(Pattern::Decentralized, Scenario::Workers(n), fan);
        if orch != 2 * fan.t2 + 2 * n * fan.t3 {
            c.fail(format!("workers({n}) orchestration form wrong"));
        }
        if dec != 2 * (n + 1) * fan.t1 + (n - 1) * fan.t2 + 2 * fan.t2 {
            c.fail(format!("workers({n}) decentralized form wrong"));
        }
        for pattern in [Pattern::Orchestration, Pattern::Decentralized] {
            let sim = simulated(pattern, Scenario::Workers(n), fan);
            let pred = predict_latency(pattern, Scenario::Workers(n), fan);
            if sim != pred {
                c.fail(format!(
                    "workers({n}) {pattern:?}: simulated {sim} != predicted {pred}"
                ));
            }
        }
    }

    // Crossover at fixed t1 = 0.1 ms: decentralized wins once t2 grows.
    let at = |t2: u64| LatencyParams { t1: 100, t2, t3: 0 };
    let crossover = (1..=1000u64)
        .map(|i| i * 10)
        .find(|&t2| {
            predict_latency(Pattern::Decentralized, Scenario::Chain, at(t2))
                < predict_latency(Pattern::Orchestration, Scenario::Chain, at(t2))
        });
    let Some(t2_star) = crossover else {
        c.fail("no crossover point exists for t1 = 0.1 ms");
    };
    c.pass(format!(
        "chain 6*t2 vs 6*t1+3*t2 and workers 2*t2+2n*t3 vs 2(n+1)*t1+(n-1)*t2+2*t2 reproduced \
         exactly (zero tolerance) for n in 1..=9; crossover at t2* = {t2_star} us"
    ));
}

#[test]
fn criterion_7_crash_injected_saga() {
    let c = Criterion::start(7, "runtime all-or-nothing under crash injection", 180);
    use troupe_sidecar::harness::{fault_free_append_counts, run_saga_with_kill};
    use troupe_sidecar::SessionStatus;

    // Scenario order values: clean success, failure at the payment
    // charge, failure at the loyalty award.
    let scenarios: [(i64, &str); 3] = [
        (42, "success"),
        (troupe_sidecar::demo::INSUFFICIENT_FUNDS, "fail-at-charge"),
        (troupe_sidecar::demo::POINTS_REJECTED, "fail-at-award"),
    ];

    let mut kill_points: Vec<(i64, &'static str, String, u64)> = Vec::new();
    for (order, scenario) in scenarios {
        let dir = tempdir().unwrap();
        let appends = fault_free_append_counts(dir.path(), order);
        for (role, count) in appends {
            for k in 0..count {
                kill_points.push((order, scenario, role.clone(), k));
            }
        }
    }
    if kill_points.len() < 30 {
        c.fail(format!(
            "only {} kill points; the sweep needs at least 30",
            kill_points.len()
        ));
    }

    let mut runs = 0usize;
    for (order, scenario, victim, k) in &kill_points {
        let dir = tempdir().unwrap();
        let outcome = run_saga_with_kill(dir.path(), *order, victim, *k);
        runs += 1;
        let Some(_session) = outcome.session else {
            continue; // initiator died before the session existed
        };
        let present: Vec<SessionStatus> =
            outcome.statuses.values().flatten().copied().collect();
        let all_completed =
            present.len() == 3 && present.iter().all(|s| *s == SessionStatus::Completed);
        let all_failed =
            !present.is_empty() && present.iter().all(|s| *s == SessionStatus::Failed);
        if !(all_completed || all_failed) {
            c.fail(format!(
                "{scenario}, victim {victim}, kill point {k}: divergent outcome {:?}",
                outcome.statuses
            ));
        }
        for ((role, txn), count) in &outcome.commit_counts {
            if *count != 1 {
                c.fail(format!(
                    "{scenario}, victim {victim}, kill point {k}: {role}/{txn} committed \
                     {count} times"
                ));
            }
            let compensations = outcome
                .compensation_counts
                .get(&(role.clone(), txn.clone()))
                .copied()
                .unwrap_or(0);
            let expected = if all_failed { 1 } else { 0 };
            if compensations != expected {
                c.fail(format!(
                    "{scenario}, victim {victim}, kill point {k}: {role}/{txn} compensated \
                     {compensations} times (expected {expected})"
                ));
            }
        }
        if all_completed && outcome.commit_counts.len() != 3 {
            c.fail(format!(
                "{scenario}, victim {victim}, kill point {k}: completed with {} commits",
                outcome.commit_counts.len()
            ));
        }
    }
    c.pass(format!(
        "{runs} crash-injected runs across {} kill points (3 scenarios x 3 victims), \
         all quiesced in agreement with every effect exactly once",
        kill_points.len()
    ));
}

#[test]
fn criterion_8_at_most_once_mode() {
    let c = Criterion::start(8, "at-most-once mode", 60);
    use troupe_kernel::parse::parse_proc_program;
    use troupe_kernel::{Outcome, ProcName, TransactionDef, TxnRegistry, Value, VarName};
    use troupe_sidecar::harness::{send_frame, wait_until, FakePeer, Proxy, ProxyAction};
    use troupe_sidecar::{
        spawn, ChorRegistration, Frame, FrameKind, Mode, NodeConfig, SessionStatus, Timeouts,
    };

    let dir = tempdir().unwrap();
    let effect_count = Arc::new(AtomicUsize::new(0));
    let mut txns = TxnRegistry::default();
    {
        let effects = effect_count.clone();
        txns.register(TransactionDef::new(
            "tally",
            move |v| {
                effects.fetch_add(1, Ordering::SeqCst);
                Outcome::Ok(v.clone())
            },
            |_, _| {},
        ));
    }
    let txn_names: BTreeSet<String> = ["tally"].iter().map(|s| s.to_string()).collect();
    let program =
        parse_proc_program("peer ? x\nv := tally(x)\npeer ? y\n", &txn_names).unwrap();

    let peer = FakePeer::bind();
    let mut choreographies = BTreeMap::new();
    choreographies.insert(
        "pair".to_owned(),
        ChorRegistration {
            id: "pair".to_owned(),
            program,
            participants: [ProcName::new("node"), ProcName::new("peer")]
                .into_iter()
                .collect(),
            input_var: VarName::new("input"),
        },
    );
    let mut peers = BTreeMap::new();
    peers.insert(ProcName::new("peer"), peer.addr.clone());
    let node = spawn(
        NodeConfig {
            name: ProcName::new("node"),
            listen: "127.0.0.1:0".into(),
            peers,
            mode: Mode::AtMostOnce,
            timeouts: Timeouts {
                session_ttl: Duration::from_millis(1200),
                ..Timeouts::default()
            },
            choreographies,
            wal_path: dir.path().join("amo.wal"),
            compact_after: None,
        },
        FnRegistry::with_builtins(),
        txns,
        None,
    )
    .unwrap();
    let node_addr = node.local_addr.to_string();

    // A proxy that duplicates every 5th frame, delays every 7th (which
    // reorders it behind its successor), and withholds the stalled
    // session's second message so it can never finish.
    const STALLED: u128 = 0xdead;
    let policy = Arc::new(move |frame: &Frame, n: usize| {
        if frame.session_id == STALLED && frame.seqnum >= 1 {
            ProxyAction::Drop
        } else if n % 5 == 0 {
            ProxyAction::Duplicate
        } else if n % 7 == 3 {
            ProxyAction::Delay(Duration::from_millis(20))
        } else {
            ProxyAction::Forward
        }
    });
    let proxy = Proxy::spawn(node_addr.clone(), policy);

    let value_frame = |session: u128, seq: u64, v: i64| Frame {
        kind: FrameKind::Value,
        session_id: session,
        choreography_id: "pair".to_owned(),
        sender_id: "peer".to_owned(),
        seqnum: seq,
        telemetry: vec![],
        payload: Value::Int(v).to_canonical_bytes(),
    };

    // 100 interleaved sessions plus the stalled one, all through the
    // proxy.
    let sessions: Vec<u128> = (1..=100u128).collect();
    send_frame(&proxy.addr, &value_frame(STALLED, 0, -1));
    for &s in &sessions {
        send_frame(&proxy.addr, &value_frame(s, 0, s as i64));
    }
    send_frame(&proxy.addr, &value_frame(STALLED, 1, -2));
    for &s in &sessions {
        send_frame(&proxy.addr, &value_frame(s, 1, s as i64));
    }

    let snap = wait_until(Duration::from_secs(20), || {
        let snap = node.snapshot().ok()?;
        let done = sessions
            .iter()
            .filter(|s| {
                snap.sessions.get(s).map(|r| r.status) == Some(SessionStatus::Completed)
            })
            .count();
        (done == sessions.len()).then_some(snap)
    })
    .unwrap_or_else(|| c.fail("interleaved sessions did not all complete"));

    // The stalled session must not have blocked anyone: it is still
    // pending while the other 100 are done.
    match snap.sessions.get(&STALLED).map(|r| r.status) {
        None | Some(SessionStatus::Started) => {}
        other => c.fail(format!("stalled session resolved unexpectedly: {other:?}")),
    }

    // No session effect applied twice, despite duplication: one tally
    // per completed session, plus the stalled session's single tally
    // (it consumes its first message before blocking), and no
    // duplicate deliveries.
    let effects = effect_count.load(Ordering::SeqCst);
    if effects != sessions.len() + 1 {
        c.fail(format!(
            "tally ran {effects} times for {} sessions plus one stalled",
            sessions.len()
        ));
    }
    let mut seen = BTreeSet::new();
    for d in &snap.deliveries {
        if !seen.insert(d.clone()) {
            c.fail(format!("duplicate delivery {d:?}"));
        }
    }

    // Expiry: the stalled session is eventually killed, and late
    // messages for it are dropped.
    wait_until(Duration::from_secs(10), || {
        let snap = node.snapshot().ok()?;
        (snap.sessions.get(&STALLED).map(|r| r.status) == Some(SessionStatus::Failed)
            && snap.live_sessions == 0)
            .then_some(())
    })
    .unwrap_or_else(|| c.fail("stalled session did not expire"));
    let before = node.snapshot().unwrap().deliveries.len();
    send_frame(&node_addr, &value_frame(STALLED, 0, -1));
    std::thread::sleep(Duration::from_millis(150));
    let after = node.snapshot().unwrap();
    if after.deliveries.len() != before {
        c.fail("late message for an expired session was delivered");
    }

    node.shutdown();
    c.pass(format!(
        "100 interleaved sessions completed through a drop/duplicate/delay proxy with \
         exactly {effects} effects, independent of one stalled session; expired session \
         dropped its late message"
    ));
}
