//! Random projectable saga choreographies for property testing.
//!
//! Projectability is by construction rather than generate-and-filter:
//! every conditional starts each branch with a distinct selection label
//! to every process that participates in either branch, so all merges
//! are branch unions and always succeed. Transaction names are unique
//! per program (a failing name must not collide with a committed one),
//! and each name draws its commit behavior from the fail rate when the
//! program is generated, so runs are deterministic end to end.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use troupe_kernel::{
    ChorInstr, Choreography, Expr, LabelName, ProcName, TransactionDef, TxnRegistry, Value,
    VarName,
};

#[derive(Debug, Clone)]
pub struct ChorGenSpec {
    pub processes: usize,
    pub depth: usize,
    pub conditional_probability: f64,
    pub max_conditionals: usize,
    pub max_transactions: usize,
    pub transaction_fail_rate: f64,
    pub seed: u64,
}

impl ChorGenSpec {
    /// The default verification scope: 3 processes, depth 8, at most
    /// 2 conditionals and 3 transactions.
    pub fn scope(seed: u64) -> ChorGenSpec {
        ChorGenSpec {
            processes: 3,
            depth: 8,
            conditional_probability: 0.25,
            max_conditionals: 2,
            max_transactions: 3,
            transaction_fail_rate: 0.0,
            seed,
        }
    }

    pub fn with_fail_rate(mut self, rate: f64) -> ChorGenSpec {
        self.transaction_fail_rate = rate;
        self
    }
}

#[derive(Debug, Clone)]
pub struct GenOutput {
    pub chor: Choreography,
    pub registry: TxnRegistry,
    pub processes: BTreeSet<ProcName>,
}

struct GenState {
    procs: Vec<ProcName>,
    vars: Vec<VarName>,
    cond_budget: usize,
    txn_budget: usize,
    txn_counter: usize,
    fail_rate: f64,
    registry: TxnRegistry,
}

pub fn generate_choreography(spec: &ChorGenSpec) -> GenOutput {
    assert!(spec.processes >= 2, "need at least two processes");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut st = GenState {
        procs: (0..spec.processes)
            .map(|i| ProcName::new(format!("p{i}")))
            .collect(),
        vars: ["x", "y", "z"].iter().map(|v| VarName::new(*v)).collect(),
        cond_budget: spec.max_conditionals,
        txn_budget: spec.max_transactions,
        txn_counter: 0,
        fail_rate: spec.transaction_fail_rate,
        registry: TxnRegistry::default(),
    };
    let instrs = gen_block(&mut rng, spec.depth, spec.conditional_probability, &mut st);
    GenOutput {
        chor: Choreography::from_instrs(instrs),
        registry: st.registry,
        processes: st.procs.into_iter().collect(),
    }
}

fn gen_block(
    rng: &mut ChaCha8Rng,
    budget: usize,
    cond_prob: f64,
    st: &mut GenState,
) -> Vec<ChorInstr> {
    let mut out = Vec::new();
    let mut left = budget;
    while left > 0 {
        if left >= 3 && st.cond_budget > 0 && rng.gen_bool(cond_prob) {
            st.cond_budget -= 1;
            let inner = (left - 1) / 2;
            let decider = pick_proc(rng, st);
            let guard = gen_guard(rng, st);
            let b1 = gen_block(rng, inner, cond_prob, st);
            let b2 = gen_block(rng, inner, cond_prob, st);
            out.push(guarded_conditional(&decider, guard, b1, b2));
            left = left.saturating_sub(1 + inner);
        } else {
            out.push(gen_simple(rng, st));
            left -= 1;
        }
    }
    out
}

/// Wrap branch bodies with distinct selections from the decider to
/// every other participant of either branch, which is exactly the
/// knowledge-of-choice discipline that makes projection merge.
fn guarded_conditional(
    decider: &ProcName,
    guard: Expr,
    b1: Vec<ChorInstr>,
    b2: Vec<ChorInstr>,
) -> ChorInstr {
    let c1 = Choreography::from_instrs(b1);
    let c2 = Choreography::from_instrs(b2);
    let mut participants = c1.procs();
    participants.extend(c2.procs());
    participants.remove(decider);

    let mut left = Vec::new();
    let mut right = Vec::new();
    for r in &participants {
        left.push(ChorInstr::SelSend(
            decider.clone(),
            r.clone(),
            LabelName::new("L"),
        ));
        right.push(ChorInstr::SelSend(
            decider.clone(),
            r.clone(),
            LabelName::new("R"),
        ));
    }
    left.extend(c1.instrs().cloned());
    right.extend(c2.instrs().cloned());
    ChorInstr::Cond(
        decider.clone(),
        guard,
        std::sync::Arc::new(Choreography::from_instrs(left)),
        std::sync::Arc::new(Choreography::from_instrs(right)),
    )
}

fn gen_simple(rng: &mut ChaCha8Rng, st: &mut GenState) -> ChorInstr {
    let can_txn = st.txn_budget > 0;
    let roll: f64 = rng.gen();
    if can_txn && roll < 0.25 {
        st.txn_budget -= 1;
        let name = format!("t{}", st.txn_counter);
        st.txn_counter += 1;
        let fails = rng.gen_bool(st.fail_rate);
        let def = if fails {
            TransactionDef::failing(name.clone())
        } else {
            TransactionDef::identity(name.clone())
        };
        st.registry.register(def);
        let p = pick_proc(rng, st);
        let x = pick_var(rng, st);
        ChorInstr::Trans(
            p,
            x,
            troupe_kernel::TransName::new(name),
            gen_expr(rng, st),
        )
    } else if roll < 0.6 {
        let p = pick_proc(rng, st);
        let x = pick_var(rng, st);
        ChorInstr::Assign(p, x, gen_expr(rng, st))
    } else {
        let p = pick_proc(rng, st);
        let q = loop {
            let q = pick_proc(rng, st);
            if q != p {
                break q;
            }
        };
        let x = pick_var(rng, st);
        ChorInstr::Send(p, gen_expr(rng, st), q, x)
    }
}

fn gen_expr(rng: &mut ChaCha8Rng, st: &mut GenState) -> Expr {
    match rng.gen_range(0..4) {
        0 => Expr::Lit(Value::Int(rng.gen_range(0..5))),
        1 => Expr::Var(pick_var(rng, st)),
        2 => Expr::Call(
            "add".into(),
            vec![
                Expr::Var(pick_var(rng, st)),
                Expr::Lit(Value::Int(rng.gen_range(0..3))),
            ],
        ),
        _ => Expr::Lit(Value::Int(rng.gen_range(0..2))),
    }
}

fn gen_guard(rng: &mut ChaCha8Rng, st: &mut GenState) -> Expr {
    match rng.gen_range(0..3) {
        0 => Expr::Lit(Value::Bool(rng.gen())),
        1 => Expr::Call(
            "eq".into(),
            vec![
                Expr::Var(pick_var(rng, st)),
                Expr::Lit(Value::Int(rng.gen_range(0..2))),
            ],
        ),
        _ => Expr::Lit(Value::Bool(true)),
    }
}

fn pick_proc(rng: &mut ChaCha8Rng, st: &GenState) -> ProcName {
    st.procs.choose(rng).expect("nonempty").clone()
}

fn pick_var(rng: &mut ChaCha8Rng, st: &GenState) -> VarName {
    st.vars.choose(rng).expect("nonempty").clone()
}
