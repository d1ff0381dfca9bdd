//! `troupe`: one binary wiring the kernel, the verification harness,
//! and the sidecar runtime.
//!
//! Machine-readable output goes to stdout as line-delimited JSON;
//! diagnostics go to stderr. Exit code 0 means success (all checks
//! passed), 1 means a check or run failed, 2 means a usage error.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "troupe", version, about = "Decentralized saga choreographies: projection, simulation, verification, and a sidecar runtime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project a choreography file onto endpoint programs.
    Project {
        /// Choreography source file.
        file: PathBuf,
        /// Emit only this process's program.
        #[arg(long)]
        process: Option<String>,
        /// Declare a transaction: NAME, NAME=fail, or NAME=fail@INT.
        #[arg(long = "txn")]
        txns: Vec<String>,
    },
    /// Project and run a choreography under the random scheduler,
    /// emitting the trace as line-delimited records.
    Simulate {
        #[arg(long)]
        chor: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restart budget (all of it is injected).
        #[arg(long, default_value_t = 0)]
        restarts: u32,
        #[arg(long = "txn")]
        txns: Vec<String>,
        /// Write the trace here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustively check a choreography: deadlock freedom, saga
    /// atomicity, projection bisimulation, and restart recovery.
    Verify {
        #[arg(long)]
        chor: PathBuf,
        /// State bound for exhaustive exploration.
        #[arg(long, default_value_t = 500_000)]
        scope: usize,
        /// Restart budget.
        #[arg(long, default_value_t = 1)]
        budget: u32,
        /// deadlock | atomicity | bisim | recovery | all
        #[arg(long, default_value = "all")]
        check: String,
        /// Co-exploration depth for the bisimulation check.
        #[arg(long, default_value_t = 50)]
        depth: usize,
        /// Random traces for the recovery check.
        #[arg(long, default_value_t = 20)]
        samples: u64,
        #[arg(long = "txn")]
        txns: Vec<String>,
    },
    /// Evaluate the analytic latency model (microseconds).
    Latency {
        /// orchestration | decentralized | both
        #[arg(long, default_value = "both")]
        pattern: String,
        /// Intra-node hop, microseconds.
        #[arg(long, default_value_t = 100)]
        t1: u64,
        /// Same-zone hop, microseconds.
        #[arg(long, default_value_t = 1000)]
        t2: u64,
        /// Cross-zone hop, microseconds.
        #[arg(long, default_value_t = 10_000)]
        t3: u64,
        /// Use the n-worker pattern instead of the 3-service chain.
        #[arg(long)]
        workers: Option<u64>,
        /// Cross-check the closed form against the simulated clock.
        #[arg(long)]
        simulate: bool,
    },
    /// Run a sidecar node from a config file.
    RunNode {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a sidecar node that dies after N successful log appends
    /// (crash-injection test hook), then exits.
    Inject {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        kill_after: u64,
    },
    /// Run one role of the built-in warehouse saga.
    DemoSaga {
        /// warehouse | payment | loyalty
        #[arg(long)]
        role: String,
        #[arg(long, default_value = "127.0.0.1:7101")]
        listen: String,
        /// Peer address as role=host:port (repeatable).
        #[arg(long = "peer")]
        peers: Vec<String>,
        #[arg(long, default_value = "troupe-demo.wal")]
        wal: PathBuf,
        /// Start an order with this value (warehouse only) and wait
        /// for the saga outcome.
        #[arg(long)]
        order: Option<i64>,
    },
    /// Re-validate a recorded trace file and optionally prune its
    /// restarts with verified ordering certificates.
    TraceCheck {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        chor: PathBuf,
        #[arg(long = "txn")]
        txns: Vec<String>,
        /// Iteratively remove restarts, verifying each certificate.
        #[arg(long)]
        prune: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Project {
            file,
            process,
            txns,
        } => commands::project(&file, process.as_deref(), &txns),
        Command::Simulate {
            chor,
            seed,
            restarts,
            txns,
            out,
        } => commands::simulate(&chor, seed, restarts, &txns, out.as_deref()),
        Command::Verify {
            chor,
            scope,
            budget,
            check,
            depth,
            samples,
            txns,
        } => commands::verify(&chor, scope, budget, &check, depth, samples, &txns),
        Command::Latency {
            pattern,
            t1,
            t2,
            t3,
            workers,
            simulate,
        } => commands::latency(&pattern, t1, t2, t3, workers, simulate),
        Command::RunNode { config } => commands::run_node(&config, None),
        Command::Inject { config, kill_after } => commands::run_node(&config, Some(kill_after)),
        Command::DemoSaga {
            role,
            listen,
            peers,
            wal,
            order,
        } => commands::demo_saga(&role, &listen, &peers, &wal, order),
        Command::TraceCheck {
            trace,
            chor,
            txns,
            prune,
        } => commands::trace_check(&trace, &chor, &txns, prune),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
