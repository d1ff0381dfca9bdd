//! Simulation and verification harness over the kernel calculi:
//!
//! * a seeded pseudo-random scheduler producing reproducible maximal
//!   executions under a restart budget;
//! * an exhaustive small-scope explorer that enumerates every
//!   interleaving and every restart placement, reporting terminal
//!   states, deadlocks, saga-shape violations, and the longest path;
//! * a bisimulation checker co-exploring a choreography against its
//!   projected network;
//! * a generator of random projectable saga choreographies;
//! * the analytic latency model for the orchestration and decentralized
//!   communication patterns, with a simulated-clock evaluator that
//!   computes critical paths over recorded traces.

pub mod bisim;
pub mod explore;
pub mod generate;
pub mod latency;
pub mod policy;
pub mod run;

pub use bisim::{check_bisimulation, check_bisimulation_from, BisimReport, Counterexample};
pub use explore::{explore_chor, explore_exhaustive, ChorExploreReport, ExploreReport};
pub use generate::{generate_choreography, ChorGenSpec, GenOutput};
pub use latency::{
    chain_setup, predict_latency, simulate_latency, workers_setup, LatencyParams, Micros,
    Pattern, Scenario, Topology,
};
pub use policy::FaultPolicy;
pub use run::{run_random, run_random_chor, RunError};
