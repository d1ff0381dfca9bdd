//! Node configuration: identity, listen address, peer address map,
//! delivery mode, timeout and backoff parameters, registered
//! choreographies, and transaction bindings.
//!
//! The TOML form references endpoint programs by file path; the
//! in-memory form carries them parsed. Registration rejects a program
//! that could invoke the same transaction name twice on one execution
//! path: replay idempotence keys on (session, name, input digest), so a
//! repeated (name, input) pair within one session would be
//! indistinguishable from a replay.

use crate::store::Mode;
use serde::Deserialize;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;
use troupe_kernel::parse::parse_proc_program;
use troupe_kernel::{ProcInstr, ProcName, ProcProgram, TransactionDef, TxnRegistry, Value, VarName};

#[derive(Debug, Clone)]
pub struct Timeouts {
    /// How long a send awaits its acknowledgment before the session
    /// restarts.
    pub ack_timeout: Duration,
    /// How long a blocked receive waits before the session restarts.
    pub recv_timeout: Duration,
    /// At-most-once sessions are killed this long after they start.
    pub session_ttl: Duration,
    pub backoff_initial: Duration,
    pub backoff_cap: Duration,
    /// Restart attempts before the session is marked failed locally.
    pub max_attempts: u32,
}

impl Default for Timeouts {
    fn default() -> Timeouts {
        Timeouts {
            ack_timeout: Duration::from_millis(500),
            recv_timeout: Duration::from_millis(500),
            session_ttl: Duration::from_secs(10),
            backoff_initial: Duration::from_millis(100),
            backoff_cap: Duration::from_secs(5),
            max_attempts: 25,
        }
    }
}

impl Timeouts {
    pub fn backoff(&self, attempts: u32) -> Duration {
        let exp = attempts.saturating_sub(1).min(16);
        let raw = self.backoff_initial.saturating_mul(1u32 << exp);
        raw.min(self.backoff_cap)
    }
}

#[derive(Debug, Clone)]
pub struct ChorRegistration {
    pub id: String,
    /// The endpoint program this node runs for the choreography.
    pub program: ProcProgram,
    /// Every role of the choreography, for failure broadcast fan-out.
    pub participants: BTreeSet<ProcName>,
    /// Variable the initiator's input value is bound to.
    pub input_var: VarName,
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    /// The process name this sidecar runs as.
    pub name: ProcName,
    pub listen: String,
    pub peers: BTreeMap<ProcName, String>,
    pub mode: Mode,
    pub timeouts: Timeouts,
    pub choreographies: BTreeMap<String, ChorRegistration>,
    pub wal_path: PathBuf,
    /// Compact the log on boot when it holds more records than this.
    pub compact_after: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config I/O error reading {0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("program parse error in {0}: {1}")]
    Program(PathBuf, troupe_kernel::parse::ParseError),
    #[error("choreography {chor}: transaction `{name}` may run twice in one session")]
    DuplicateTransaction { chor: String, name: String },
    #[error("unknown transaction behavior `{0}` (expected identity, add_one, fail, or fail_on)")]
    BadBehavior(String),
}

/// Reject programs that can hit the same transaction name twice on one
/// path (branch alternatives do not conflict with each other).
pub fn check_transaction_uniqueness(
    chor: &str,
    program: &ProcProgram,
) -> Result<(), ConfigError> {
    let mut names = BTreeSet::new();
    collect_txn_names(program, &mut names);
    for name in names {
        if max_path_uses(program, &name) > 1 {
            return Err(ConfigError::DuplicateTransaction {
                chor: chor.to_owned(),
                name,
            });
        }
    }
    Ok(())
}

fn collect_txn_names(p: &ProcProgram, out: &mut BTreeSet<String>) {
    for i in p.instrs() {
        match i {
            ProcInstr::Trans(_, t, _) => {
                out.insert(t.to_string());
            }
            ProcInstr::Cond(_, a, b) => {
                collect_txn_names(a, out);
                collect_txn_names(b, out);
            }
            ProcInstr::Branch(_, arms) => {
                for arm in arms.values() {
                    collect_txn_names(arm, out);
                }
            }
            _ => {}
        }
    }
}

fn max_path_uses(p: &ProcProgram, name: &str) -> usize {
    let mut total = 0;
    for i in p.instrs() {
        total += match i {
            ProcInstr::Trans(_, t, _) if t.as_str() == name => 1,
            ProcInstr::Cond(_, a, b) => max_path_uses(a, name).max(max_path_uses(b, name)),
            ProcInstr::Branch(_, arms) => arms
                .values()
                .map(|arm| max_path_uses(arm, name))
                .max()
                .unwrap_or(0),
            _ => 0,
        };
    }
    total
}

// ---- TOML surface ----

#[derive(Debug, Deserialize)]
struct TomlConfig {
    name: String,
    listen: String,
    mode: String,
    wal: String,
    #[serde(default)]
    compact_after: Option<usize>,
    #[serde(default)]
    peers: BTreeMap<String, String>,
    #[serde(default)]
    timeouts: Option<TomlTimeouts>,
    #[serde(default, rename = "choreography")]
    choreographies: Vec<TomlChor>,
    #[serde(default, rename = "transaction")]
    transactions: Vec<TomlTxn>,
}

#[derive(Debug, Deserialize)]
struct TomlTimeouts {
    ack_ms: Option<u64>,
    recv_ms: Option<u64>,
    session_ttl_ms: Option<u64>,
    backoff_initial_ms: Option<u64>,
    backoff_cap_ms: Option<u64>,
    max_attempts: Option<u32>,
}

#[derive(Debug, Deserialize)]
struct TomlChor {
    id: String,
    program: String,
    participants: Vec<String>,
    #[serde(default)]
    input_var: Option<String>,
    #[serde(default)]
    transactions: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct TomlTxn {
    name: String,
    behavior: String,
    #[serde(default)]
    fail_on: Option<i64>,
}

/// Load a node configuration and its transaction registry from a TOML
/// file; program paths resolve relative to the config file.
pub fn load_config(path: &Path) -> Result<(NodeConfig, TxnRegistry), ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_owned(), e))?;
    let parsed: TomlConfig = toml::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mode = match parsed.mode.as_str() {
        "at-most-once" => Mode::AtMostOnce,
        _ => Mode::AtLeastOnce,
    };
    let mut timeouts = Timeouts::default();
    if let Some(t) = parsed.timeouts {
        if let Some(ms) = t.ack_ms {
            timeouts.ack_timeout = Duration::from_millis(ms);
        }
        if let Some(ms) = t.recv_ms {
            timeouts.recv_timeout = Duration::from_millis(ms);
        }
        if let Some(ms) = t.session_ttl_ms {
            timeouts.session_ttl = Duration::from_millis(ms);
        }
        if let Some(ms) = t.backoff_initial_ms {
            timeouts.backoff_initial = Duration::from_millis(ms);
        }
        if let Some(ms) = t.backoff_cap_ms {
            timeouts.backoff_cap = Duration::from_millis(ms);
        }
        if let Some(n) = t.max_attempts {
            timeouts.max_attempts = n;
        }
    }

    let mut registry = TxnRegistry::default();
    for txn in &parsed.transactions {
        let def = match txn.behavior.as_str() {
            "identity" => TransactionDef::identity(txn.name.clone()),
            "add_one" => TransactionDef::new(
                txn.name.clone(),
                |v| match v {
                    Value::Int(n) => troupe_kernel::Outcome::Ok(Value::Int(n + 1)),
                    other => troupe_kernel::Outcome::Ok(other.clone()),
                },
                |_, _| {},
            ),
            "fail" => TransactionDef::failing(txn.name.clone()),
            "fail_on" => {
                TransactionDef::fail_on(txn.name.clone(), Value::Int(txn.fail_on.unwrap_or(0)))
            }
            other => return Err(ConfigError::BadBehavior(other.to_owned())),
        };
        registry.register(def);
    }

    let mut choreographies = BTreeMap::new();
    for chor in &parsed.choreographies {
        let prog_path = base.join(&chor.program);
        let src = std::fs::read_to_string(&prog_path)
            .map_err(|e| ConfigError::Io(prog_path.clone(), e))?;
        let txn_names: BTreeSet<String> = chor.transactions.iter().cloned().collect();
        let program = parse_proc_program(&src, &txn_names)
            .map_err(|e| ConfigError::Program(prog_path, e))?;
        check_transaction_uniqueness(&chor.id, &program)?;
        choreographies.insert(
            chor.id.clone(),
            ChorRegistration {
                id: chor.id.clone(),
                program,
                participants: chor.participants.iter().map(ProcName::new).collect(),
                input_var: VarName::new(
                    chor.input_var.clone().unwrap_or_else(|| "input".into()),
                ),
            },
        );
    }

    Ok((
        NodeConfig {
            name: ProcName::new(parsed.name),
            listen: parsed.listen,
            peers: parsed
                .peers
                .into_iter()
                .map(|(k, v)| (ProcName::new(k), v))
                .collect(),
            mode,
            timeouts,
            choreographies,
            wal_path: base.join(parsed.wal),
            compact_after: parsed.compact_after,
        },
        registry,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_transaction_on_one_path_is_rejected() {
        let names: BTreeSet<String> = ["book"].iter().map(|s| s.to_string()).collect();
        let prog = parse_proc_program("x := book(1)\ny := book(2)\n", &names).unwrap();
        assert!(check_transaction_uniqueness("c", &prog).is_err());
    }

    #[test]
    fn transactions_in_alternative_branches_are_fine() {
        let names: BTreeSet<String> = ["book"].iter().map(|s| s.to_string()).collect();
        let prog = parse_proc_program(
            "p & { L: { x := book(1) } R: { y := book(2) } }\n",
            &names,
        )
        .unwrap();
        assert!(check_transaction_uniqueness("c", &prog).is_ok());
    }

    #[test]
    fn backoff_is_exponential_and_capped() {
        let t = Timeouts {
            backoff_initial: Duration::from_millis(100),
            backoff_cap: Duration::from_secs(5),
            ..Timeouts::default()
        };
        assert_eq!(t.backoff(1), Duration::from_millis(100));
        assert_eq!(t.backoff(2), Duration::from_millis(200));
        assert_eq!(t.backoff(3), Duration::from_millis(400));
        assert_eq!(t.backoff(10), Duration::from_secs(5));
    }
}
