//! Execution traces over network configurations, and the analysis the
//! recovery argument rests on:
//!
//! * configuration and execution congruence (equality from the
//!   perspective of active processes, with the durable stores compared
//!   globally);
//! * the efficiency ordering on executions, relating an execution to
//!   one with fewer restart events;
//! * constructive restart pruning: removing the last restart of a
//!   terminated execution together with the pruned process's replay
//!   steps, yielding a smaller execution below the original in the
//!   ordering.

pub mod congruence;
pub mod file;
pub mod prec;
pub mod prune;
pub mod trace;

pub use congruence::{cfg_congruent, exec_congruent};
pub use prec::{check_prec_witness, prec, prec_p, PrecError, PrecWitness};
pub use prune::{prune_one_restart, PruneError};
pub use trace::{ExecutionTrace, TraceError, TraceStep};
