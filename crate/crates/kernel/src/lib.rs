//! Kernel calculi for decentralized saga choreographies.
//!
//! The crate has three layers:
//!
//! * a *choreography* language: one global program describing every
//!   participant's moves, with value/label communications, local
//!   assignments, conditionals, and local transactions that may commit
//!   or fail and trigger reverse-order compensation;
//! * a *network* language: one sequential program per process composed
//!   in parallel, with the same store model plus a `restart` transition
//!   that resets a process to its initial program for replay recovery;
//! * *endpoint projection* compiling the former into the latter, with
//!   branch merging and projectability diagnostics.
//!
//! Both semantics are pure functions from configurations to labeled
//! successor sets, so exhaustive exploration and deterministic replay
//! are trivial to build on top (see the `troupe-sim` crate).

pub mod chor;
pub mod expr;
pub mod label;
pub mod net;
pub mod parse;
pub mod project;
pub mod state;
pub mod txn;
pub mod value;

pub use chor::{ChorConfig, ChorInstr, Choreography};
pub use expr::{eval_expr, EvalError, Expr, FnRegistry};
pub use label::TransitionLabel;
pub use net::{NetConfig, Network, ProcInstr, ProcProgram};
pub use state::{
    ActiveSet, Direction, LabelName, Msg, MsgState, ProcName, SeqState, TransEntry, TransState,
    VarName, VarStore,
};
pub use txn::{Outcome, TransName, TransactionDef, TxnRegistry};
pub use value::Value;

/// Shared evaluation context: the function registry used by expressions
/// and the transaction registry used by `x := t(e)` instructions.
#[derive(Clone, Copy)]
pub struct Semantics<'a> {
    pub fns: &'a FnRegistry,
    pub txns: &'a TxnRegistry,
}

impl<'a> Semantics<'a> {
    pub fn new(fns: &'a FnRegistry, txns: &'a TxnRegistry) -> Self {
        Semantics { fns, txns }
    }
}
