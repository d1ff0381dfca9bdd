//! Command implementations. Every machine-facing line on stdout is one
//! JSON record.

use anyhow::{bail, Context, Result};
use serde_json::json;
use std::collections::BTreeSet;
use std::path::Path;
use troupe_kernel::chor::validate_registered;
use troupe_kernel::parse::{parse_choreography, prog_to_dsl};
use troupe_kernel::project::project_all;
use troupe_kernel::{
    Choreography, FnRegistry, NetConfig, ProcName, Semantics, TransactionDef, TxnRegistry, Value,
    VarStore,
};
use troupe_sim::{
    check_bisimulation, explore_exhaustive, predict_latency, run_random, run_random_chor,
    simulate_latency, workers_setup, chain_setup, FaultPolicy, LatencyParams, Pattern, Scenario,
};
use troupe_trace::file::{read_trace, write_trace};
use troupe_trace::{check_prec_witness, prune_one_restart};

/// Parse `--txn` declarations: `name`, `name=fail`, `name=fail@INT`,
/// `name=add_one`.
fn build_txn_registry(specs: &[String]) -> Result<(TxnRegistry, BTreeSet<String>)> {
    let mut registry = TxnRegistry::default();
    let mut names = BTreeSet::new();
    for spec in specs {
        let (name, behavior) = match spec.split_once('=') {
            Some((n, b)) => (n.trim(), b.trim()),
            None => (spec.trim(), "identity"),
        };
        let def = if behavior == "identity" {
            TransactionDef::identity(name)
        } else if behavior == "fail" {
            TransactionDef::failing(name)
        } else if behavior == "add_one" {
            TransactionDef::new(
                name,
                |v| match v {
                    Value::Int(n) => troupe_kernel::Outcome::Ok(Value::Int(n + 1)),
                    other => troupe_kernel::Outcome::Ok(other.clone()),
                },
                |_, _| {},
            )
        } else if let Some(raw) = behavior.strip_prefix("fail@") {
            let bad: i64 = raw
                .parse()
                .with_context(|| format!("bad fail@ value in `{spec}`"))?;
            TransactionDef::fail_on(name, Value::Int(bad))
        } else {
            bail!("unknown transaction behavior `{behavior}` in `{spec}`");
        };
        registry.register(def);
        names.insert(name.to_owned());
    }
    Ok((registry, names))
}

fn load_chor(path: &Path, txn_names: &BTreeSet<String>) -> Result<Choreography> {
    let src = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let chor = parse_choreography(&src, txn_names)
        .map_err(|e| anyhow::anyhow!("{}:{}", path.display(), e))?;
    Ok(chor)
}

pub fn project(path: &Path, only: Option<&str>, txns: &[String]) -> Result<bool> {
    let (_, names) = build_txn_registry(txns)?;
    let chor = load_chor(path, &names)?;
    let result = project_all(&chor, &BTreeSet::new());
    if !result.is_ok() {
        for d in &result.diagnostics {
            eprintln!("{}: {d}", path.display());
        }
        return Ok(false);
    }
    match only {
        Some(process) => {
            let p = ProcName::new(process);
            match result.programs.get(&p) {
                Some(prog) => print!("{}", prog_to_dsl(prog)),
                None => {
                    eprintln!("process `{process}` does not occur in the choreography");
                    return Ok(false);
                }
            }
        }
        None => {
            for (p, prog) in &result.programs {
                println!("# --- {p} ---");
                print!("{}", prog_to_dsl(prog));
            }
        }
    }
    Ok(true)
}

pub fn simulate(
    path: &Path,
    seed: u64,
    restarts: u32,
    txns: &[String],
    out: Option<&Path>,
) -> Result<bool> {
    let (registry, names) = build_txn_registry(txns)?;
    let chor = load_chor(path, &names)?;
    let fns = FnRegistry::with_builtins();
    let sem = Semantics::new(&fns, &registry);
    validate_registered(&chor, &sem).map_err(|e| anyhow::anyhow!(e))?;
    let trace = run_random_chor(
        &sem,
        &chor,
        &chor.procs(),
        &FaultPolicy::restarts(restarts),
        seed,
    )?;
    let text = write_trace(&trace);
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    eprintln!(
        "simulated {} steps, {} restarts, terminated={}",
        trace.len(),
        trace.restart_count(),
        troupe_kernel::net::is_net_terminated(&sem, trace.final_config()),
    );
    Ok(true)
}

pub fn verify(
    path: &Path,
    scope: usize,
    budget: u32,
    check: &str,
    depth: usize,
    samples: u64,
    txns: &[String],
) -> Result<bool> {
    let (registry, names) = build_txn_registry(txns)?;
    let chor = load_chor(path, &names)?;
    let fns = FnRegistry::with_builtins();
    let sem = Semantics::new(&fns, &registry);
    validate_registered(&chor, &sem).map_err(|e| anyhow::anyhow!(e))?;
    let declared = chor.procs();

    let projection = project_all(&chor, &declared);
    if !projection.is_ok() {
        for d in &projection.diagnostics {
            eprintln!("{d}");
        }
        println!(
            "{}",
            json!({"check": "projectability", "ok": false})
        );
        return Ok(false);
    }
    let start = NetConfig::initial(projection.programs.clone(), VarStore::default());
    let mut all_ok = true;
    let want = |name: &str| check == "all" || check == name;

    if want("deadlock") || want("atomicity") {
        let report = explore_exhaustive(&sem, &start, &FaultPolicy::restarts(budget), scope);
        if want("deadlock") {
            let ok = !report.inconclusive && report.deadlocked.is_empty();
            println!(
                "{}",
                json!({
                    "check": "deadlock", "ok": ok,
                    "states": report.states,
                    "terminals": report.terminals,
                    "max_path_len": report.max_path_len,
                    "inconclusive": report.inconclusive,
                    "deadlocked": report.deadlocked,
                })
            );
            all_ok &= ok;
        }
        if want("atomicity") {
            let ok = !report.inconclusive && report.atomicity_violations.is_empty();
            println!(
                "{}",
                json!({
                    "check": "atomicity", "ok": ok,
                    "violations": report.atomicity_violations,
                })
            );
            all_ok &= ok;
        }
    }

    if want("bisim") {
        match check_bisimulation(&sem, &chor, &declared, depth) {
            Ok(report) => {
                println!(
                    "{}",
                    json!({
                        "check": "bisim", "ok": true,
                        "pairs": report.pairs_checked,
                        "depth": report.depth_reached,
                    })
                );
            }
            Err(cex) => {
                println!(
                    "{}",
                    json!({
                        "check": "bisim", "ok": false,
                        "direction": cex.direction,
                        "label": cex.label,
                        "detail": cex.detail,
                    })
                );
                all_ok = false;
            }
        }
    }

    if want("recovery") {
        let mut pruned_restarts = 0usize;
        let mut failures: Vec<String> = Vec::new();
        for seed in 0..samples {
            let policy = FaultPolicy::restarts(budget.max(1));
            let trace = run_random_chor(&sem, &chor, &declared, &policy, seed)?;
            let mut cur = trace;
            while cur.restart_count() > 0 {
                match prune_one_restart(&cur, &sem) {
                    Ok((next, witness)) => {
                        if let Err(e) = check_prec_witness(&next, &cur, &witness) {
                            failures.push(format!("seed {seed}: certificate rejected: {e}"));
                            break;
                        }
                        cur = next;
                        pruned_restarts += 1;
                    }
                    Err(e) => {
                        failures.push(format!("seed {seed}: {e}"));
                        break;
                    }
                }
            }
            if cur.restart_count() == 0 && !troupe_trace::cfg_congruent(
                cur.final_config(),
                cur.final_config(),
            ) {
                unreachable!("congruence is reflexive");
            }
        }
        let ok = failures.is_empty();
        println!(
            "{}",
            json!({
                "check": "recovery", "ok": ok,
                "traces": samples,
                "pruned_restarts": pruned_restarts,
                "failures": failures,
            })
        );
        all_ok &= ok;
    }
    Ok(all_ok)
}

pub fn latency(
    pattern: &str,
    t1: u64,
    t2: u64,
    t3: u64,
    workers: Option<u64>,
    check_simulated: bool,
) -> Result<bool> {
    let params = LatencyParams { t1, t2, t3 };
    let scenario = match workers {
        Some(n) => Scenario::Workers(n),
        None => Scenario::Chain,
    };
    let patterns: Vec<Pattern> = match pattern {
        "orchestration" => vec![Pattern::Orchestration],
        "decentralized" => vec![Pattern::Decentralized],
        "both" => vec![Pattern::Orchestration, Pattern::Decentralized],
        other => bail!("unknown pattern `{other}` (expected orchestration, decentralized, or both)"),
    };
    let mut ok = true;
    for p in patterns {
        let predicted = predict_latency(p, scenario, params);
        let mut record = json!({
            "pattern": format!("{p:?}").to_lowercase(),
            "scenario": match scenario {
                Scenario::Chain => "chain".to_owned(),
                Scenario::Workers(n) => format!("workers:{n}"),
            },
            "t1_us": t1, "t2_us": t2, "t3_us": t3,
            "predicted_us": predicted,
        });
        if check_simulated {
            let fns = FnRegistry::with_builtins();
            let txns = TxnRegistry::default();
            let sem = Semantics::new(&fns, &txns);
            let setup = match scenario {
                Scenario::Chain => chain_setup(p, params),
                Scenario::Workers(n) => workers_setup(p, n, params),
            };
            let trace = run_random(&sem, setup.initial_config(), &FaultPolicy::no_faults(), 1)?;
            let simulated = simulate_latency(&trace, &setup.topology)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            record["simulated_us"] = json!(simulated);
            record["exact_match"] = json!(simulated == predicted);
            ok &= simulated == predicted;
        }
        println!("{record}");
    }
    Ok(ok)
}

pub fn run_node(config: &Path, kill_after: Option<u64>) -> Result<bool> {
    let (cfg, registry) = troupe_sidecar::load_config(config)?;
    let name = cfg.name.clone();
    let node = troupe_sidecar::spawn(cfg, FnRegistry::with_builtins(), registry, kill_after)?;
    eprintln!("node {name} listening on {}", node.local_addr);
    loop {
        std::thread::sleep(std::time::Duration::from_millis(200));
        let snap = node.snapshot()?;
        if snap.dead {
            eprintln!("node {name} halted (kill switch or store failure)");
            return Ok(false);
        }
    }
}

pub fn demo_saga(
    role: &str,
    listen: &str,
    peer_specs: &[String],
    wal: &Path,
    order: Option<i64>,
) -> Result<bool> {
    use troupe_sidecar::demo;
    if !demo::ROLES.contains(&role) {
        bail!("unknown role `{role}` (expected warehouse, payment, or loyalty)");
    }
    let mut peers = std::collections::BTreeMap::new();
    for spec in peer_specs {
        let Some((r, addr)) = spec.split_once('=') else {
            bail!("--peer expects role=host:port, got `{spec}`");
        };
        peers.insert(ProcName::new(r.trim()), addr.trim().to_owned());
    }
    let cfg = demo::demo_config(
        role,
        listen.to_owned(),
        peers,
        wal.to_owned(),
        troupe_sidecar::Timeouts::default(),
    );
    let node = troupe_sidecar::spawn(cfg, FnRegistry::with_builtins(), demo::demo_registry(), None)?;
    eprintln!("demo {role} listening on {}", node.local_addr);

    if let Some(value) = order {
        if role != "warehouse" {
            bail!("--order is only meaningful for the warehouse role");
        }
        let session = node
            .start_session(demo::CHOR_ID, Value::Int(value))
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        eprintln!("started order session {session:032x}");
        loop {
            std::thread::sleep(std::time::Duration::from_millis(100));
            let snap = node.snapshot()?;
            if let Some(row) = snap.sessions.get(&session) {
                if row.status != troupe_sidecar::SessionStatus::Started {
                    println!(
                        "{}",
                        json!({
                            "session": format!("{session:032x}"),
                            "status": format!("{:?}", row.status),
                            "transactions": snap.txns.get(&session).map(|rows| rows
                                .iter()
                                .map(|r| json!({"name": r.name, "compensated": r.compensated}))
                                .collect::<Vec<_>>()),
                        })
                    );
                    return Ok(row.status == troupe_sidecar::SessionStatus::Completed);
                }
            }
        }
    }
    loop {
        std::thread::sleep(std::time::Duration::from_millis(500));
        if node.snapshot()?.dead {
            return Ok(false);
        }
    }
}

pub fn trace_check(trace_path: &Path, chor: &Path, txns: &[String], prune: bool) -> Result<bool> {
    let (registry, names) = build_txn_registry(txns)?;
    let _ = load_chor(chor, &names)?; // surface parse errors with file context
    let fns = FnRegistry::with_builtins();
    let sem = Semantics::new(&fns, &registry);
    let text = std::fs::read_to_string(trace_path)
        .with_context(|| format!("cannot read {}", trace_path.display()))?;
    let trace = read_trace(&text, &sem).map_err(|e| anyhow::anyhow!("{e}"))?;
    println!(
        "{}",
        json!({
            "check": "trace",
            "ok": true,
            "steps": trace.len(),
            "restarts": trace.restart_count(),
            "terminated": troupe_kernel::net::is_net_terminated(&sem, trace.final_config()),
        })
    );
    if prune {
        let mut cur = trace;
        let mut applications = 0usize;
        while cur.restart_count() > 0 {
            let (next, witness) = prune_one_restart(&cur, &sem)
                .map_err(|e| anyhow::anyhow!("pruning failed: {e}"))?;
            check_prec_witness(&next, &cur, &witness)
                .map_err(|e| anyhow::anyhow!("certificate rejected: {e}"))?;
            cur = next;
            applications += 1;
        }
        println!(
            "{}",
            json!({
                "check": "prune",
                "ok": true,
                "applications": applications,
                "final_steps": cur.len(),
            })
        );
    }
    Ok(true)
}
