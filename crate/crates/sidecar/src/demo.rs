//! The warehouse saga demo: a three-service order workflow with a
//! local transaction at each hop and deterministic commit stubs.
//!
//! The warehouse reserves stock, the payment service charges the order,
//! and the loyalty service awards points, each step handing the order
//! value to the next sidecar; the warehouse then fans the final result
//! back out. The fan-out is what makes the saga all-or-nothing at the
//! session level: no participant's program can finish before the whole
//! chain has succeeded, so a failure broadcast always finds the others
//! abortable and nobody is completed on one node while failed on
//! another. A charge of order value 13 fails (insufficient funds) and
//! an award of order value 7 fails, driving the full compensation path
//! from either depth.

use crate::config::{ChorRegistration, NodeConfig, Timeouts};
use crate::store::Mode;
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use troupe_kernel::parse::parse_choreography;
use troupe_kernel::project::project;
use troupe_kernel::{
    Choreography, ProcName, TransactionDef, TxnRegistry, Value, VarName,
};

pub const CHOR_ID: &str = "warehouse-order";
pub const ROLES: [&str; 3] = ["warehouse", "payment", "loyalty"];

/// Order value that makes the payment charge fail.
pub const INSUFFICIENT_FUNDS: i64 = 13;
/// Order value that makes the loyalty award fail.
pub const POINTS_REJECTED: i64 = 7;

const CHOR_SRC: &str = "\
warehouse.res := reserve(input)
warehouse.res -> payment.ord
payment.paid := charge(ord)
payment.paid -> loyalty.ord2
loyalty.pts := award(ord2)
loyalty.pts -> warehouse.ack
warehouse.ack -> payment.fin
warehouse.ack -> loyalty.fin
";

pub fn demo_choreography() -> Choreography {
    let txns = ["reserve", "charge", "award"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    parse_choreography(CHOR_SRC, &txns).expect("demo choreography parses")
}

/// Deterministic transaction stubs for the demo.
pub fn demo_registry() -> TxnRegistry {
    let mut reg = TxnRegistry::default();
    reg.register(TransactionDef::identity("reserve"));
    reg.register(TransactionDef::fail_on(
        "charge",
        Value::Int(INSUFFICIENT_FUNDS),
    ));
    reg.register(TransactionDef::fail_on("award", Value::Int(POINTS_REJECTED)));
    reg
}

pub fn demo_registration(role: &str) -> ChorRegistration {
    let chor = demo_choreography();
    let program = project(&chor, &ProcName::new(role)).expect("demo projects");
    ChorRegistration {
        id: CHOR_ID.to_owned(),
        program,
        participants: ROLES.iter().map(|r| ProcName::new(*r)).collect(),
        input_var: VarName::new("input"),
    }
}

/// A ready-to-spawn node config for one demo role.
pub fn demo_config(
    role: &str,
    listen: String,
    peers: BTreeMap<ProcName, String>,
    wal_path: PathBuf,
    timeouts: Timeouts,
) -> NodeConfig {
    let mut choreographies = BTreeMap::new();
    choreographies.insert(CHOR_ID.to_owned(), demo_registration(role));
    NodeConfig {
        name: ProcName::new(role),
        listen,
        peers,
        mode: Mode::AtLeastOnce,
        timeouts,
        choreographies,
        wal_path,
        compact_after: None,
    }
}

/// The endpoint DSL text per role, for `project`-style output and for
/// writing demo config bundles.
pub fn demo_program_text(role: &str) -> String {
    let chor = demo_choreography();
    let program = project(&chor, &ProcName::new(role)).expect("demo projects");
    troupe_kernel::parse::prog_to_dsl(&program)
}

pub fn demo_roles() -> BTreeSet<ProcName> {
    ROLES.iter().map(|r| ProcName::new(*r)).collect()
}
