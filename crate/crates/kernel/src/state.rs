//! The shared store tuple used by both the choreography and network
//! semantics: variable stores, the durable message map, sequence
//! numbers, per-process transaction logs, and the active set.
//!
//! Store maps are total with defaults (unit for variables, zero for
//! sequence numbers), so writes of the default value normalize to a
//! key removal and structural equality coincides with semantic
//! equality of the total functions.

use crate::txn::{TransName, TxnRegistry};
use crate::value::Value;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Tuple-keyed maps serialize as ordered `[key, value]` entry lists so
/// the JSON form is canonical and digestable.
mod map_as_pairs {
    use serde::de::Deserializer;
    use serde::ser::Serializer;
    use serde::{Deserialize, Serialize};
    use std::collections::BTreeMap;

    pub fn serialize<K, V, S>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error>
    where
        K: Serialize,
        V: Serialize,
        S: Serializer,
    {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        let entries: Vec<(K, V)> = Vec::deserialize(d)?;
        Ok(entries.into_iter().collect())
    }
}

macro_rules! name_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(
            Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_owned())
            }
        }
    };
}

name_type!(
    /// A process name.
    ProcName
);
name_type!(
    /// A variable name, scoped per process by the store.
    VarName
);
name_type!(
    /// A selection label communicated to resolve choice.
    LabelName
);

/// A queued message: either a plain value or a selection label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Msg {
    Val(Value),
    Label(LabelName),
}

impl fmt::Display for Msg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Msg::Val(v) => write!(f, "{v}"),
            Msg::Label(l) => write!(f, "[{l}]"),
        }
    }
}

/// The variable store: a total map from (process, variable) to a value,
/// defaulting to unit. Writes are per-process scoped and lookups never
/// fail.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarStore {
    #[serde(with = "map_as_pairs")]
    vars: BTreeMap<(ProcName, VarName), Value>,
}

impl VarStore {
    pub fn get(&self, p: &ProcName, x: &VarName) -> Value {
        self.vars
            .get(&(p.clone(), x.clone()))
            .cloned()
            .unwrap_or(Value::Unit)
    }

    pub fn set(&mut self, p: &ProcName, x: &VarName, v: Value) {
        if v == Value::Unit {
            self.vars.remove(&(p.clone(), x.clone()));
        } else {
            self.vars.insert((p.clone(), x.clone()), v);
        }
    }

    /// Remove every binding of process `p` and copy in `p`'s bindings
    /// from `from`. This is the store half of a process restart.
    pub fn reset_process(&mut self, p: &ProcName, from: &VarStore) {
        self.vars.retain(|(q, _), _| q != p);
        for ((q, x), v) in &from.vars {
            if q == p {
                self.vars.insert((q.clone(), x.clone()), v.clone());
            }
        }
    }

    /// `p`'s bindings only, for congruence checks and snapshots.
    pub fn rows_of(&self, p: &ProcName) -> BTreeMap<VarName, Value> {
        self.vars
            .iter()
            .filter(|((q, _), _)| q == p)
            .map(|((_, x), v)| (x.clone(), v.clone()))
            .collect()
    }

    /// Bindings restricted to processes in `keep`.
    pub fn restrict(&self, keep: &BTreeSet<ProcName>) -> VarStore {
        VarStore {
            vars: self
                .vars
                .iter()
                .filter(|((p, _), _)| keep.contains(p))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(ProcName, VarName), &Value)> {
        self.vars.iter()
    }
}

/// The durable message map: (sender, receiver, sequence number) to a
/// queued message. A key, once bound, is never unbound; rebinding to an
/// equal message is a no-op and rebinding to a different message is a
/// fatal determinism violation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MsgState {
    #[serde(with = "map_as_pairs")]
    msgs: BTreeMap<(ProcName, ProcName, u64), Msg>,
}

impl MsgState {
    pub fn get(&self, from: &ProcName, to: &ProcName, seq: u64) -> Option<&Msg> {
        self.msgs.get(&(from.clone(), to.clone(), seq))
    }

    /// Write-once bind. Panics on a rebind to a different message: that
    /// can only happen if a registered function or transaction is not
    /// deterministic, which voids every guarantee downstream.
    pub fn bind(&mut self, from: &ProcName, to: &ProcName, seq: u64, msg: Msg) {
        let key = (from.clone(), to.clone(), seq);
        match self.msgs.get(&key) {
            None => {
                self.msgs.insert(key, msg);
            }
            Some(existing) if *existing == msg => {}
            Some(existing) => panic!(
                "determinism violation: message slot {}->{}#{} already holds {existing}, \
                 refusing rebind to {msg}",
                from, to, seq
            ),
        }
    }

    pub fn len(&self) -> usize {
        self.msgs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.msgs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(ProcName, ProcName, u64), &Msg)> {
        self.msgs.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    Send,
    Receive,
}

/// Sequence number state: a total map from (local process, remote
/// process, direction) to the next sequence number, defaulting to zero.
/// Rows only increase, except through `reset_process` which zeroes
/// every row of one local process.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SeqState {
    #[serde(with = "map_as_pairs")]
    rows: BTreeMap<(ProcName, ProcName, Direction), u64>,
}

impl SeqState {
    pub fn get(&self, local: &ProcName, remote: &ProcName, dir: Direction) -> u64 {
        self.rows
            .get(&(local.clone(), remote.clone(), dir))
            .copied()
            .unwrap_or(0)
    }

    /// Increment `local`'s send count towards `remote`.
    pub fn inc_send(&mut self, local: &ProcName, remote: &ProcName) {
        *self
            .rows
            .entry((local.clone(), remote.clone(), Direction::Send))
            .or_insert(0) += 1;
    }

    /// Increment `local`'s receive count from `remote`.
    pub fn inc_recv(&mut self, local: &ProcName, remote: &ProcName) {
        *self
            .rows
            .entry((local.clone(), remote.clone(), Direction::Receive))
            .or_insert(0) += 1;
    }

    /// Zero every row whose local process is `p`, both directions.
    pub fn reset_process(&mut self, p: &ProcName) {
        self.rows.retain(|(local, _, _), _| local != p);
    }

    /// `p`'s rows only, for congruence checks and snapshots.
    pub fn rows_of(&self, p: &ProcName) -> BTreeMap<(ProcName, Direction), u64> {
        self.rows
            .iter()
            .filter(|((local, _, _), _)| local == p)
            .map(|((_, remote, dir), n)| ((remote.clone(), *dir), *n))
            .collect()
    }

    pub fn restrict(&self, keep: &BTreeSet<ProcName>) -> SeqState {
        SeqState {
            rows: self
                .rows
                .iter()
                .filter(|((local, _, _), _)| keep.contains(local))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }
}

/// One entry of a process transaction log: a commit `t(v) = v'` or the
/// compensation of an earlier commit, `c(t(v) = v')`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransEntry {
    Commit {
        name: TransName,
        input: Value,
        output: Value,
    },
    Comp {
        name: TransName,
        input: Value,
        output: Value,
    },
}

impl TransEntry {
    pub fn is_commit(&self) -> bool {
        matches!(self, TransEntry::Commit { .. })
    }
}

impl fmt::Display for TransEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransEntry::Commit { name, input, output } => {
                write!(f, "{name}({input})={output}")
            }
            TransEntry::Comp { name, input, output } => {
                write!(f, "c({name}({input})={output})")
            }
        }
    }
}

/// Transaction state: an append-only map from process names to ordered
/// transaction logs, defaulting to the empty log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TransState {
    logs: BTreeMap<ProcName, Vec<TransEntry>>,
}

impl TransState {
    pub fn log_of(&self, p: &ProcName) -> &[TransEntry] {
        self.logs.get(p).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn append_commit(&mut self, p: &ProcName, name: TransName, input: Value, output: Value) {
        self.logs
            .entry(p.clone())
            .or_default()
            .push(TransEntry::Commit { name, input, output });
    }

    /// The recorded output of an earlier commit of `(name, input)` by
    /// `p`, if any. This is the idempotent-replay lookup.
    pub fn committed_output(&self, p: &ProcName, name: &TransName, input: &Value) -> Option<Value> {
        self.log_of(p).iter().find_map(|e| match e {
            TransEntry::Commit { name: n, input: i, output } if n == name && i == input => {
                Some(output.clone())
            }
            _ => None,
        })
    }

    /// Whether `p` has any commit of transaction `name`, regardless of
    /// input. This is the `t` membership test of the fail rule.
    pub fn has_commit_named(&self, p: &ProcName, name: &TransName) -> bool {
        self.log_of(p)
            .iter()
            .any(|e| matches!(e, TransEntry::Commit { name: n, .. } if n == name))
    }

    pub fn has_any_comp(&self) -> bool {
        self.logs
            .values()
            .any(|log| log.iter().any(|e| !e.is_commit()))
    }

    pub fn processes(&self) -> impl Iterator<Item = &ProcName> {
        self.logs.keys()
    }

    /// Whether `p`'s log has the fully compensated saga shape
    /// `t1, ..., ti, c(ti), ..., c(t1)` (with i possibly zero).
    pub fn is_fully_compensated(&self, p: &ProcName) -> bool {
        let log = self.log_of(p);
        let commits: Vec<_> = log.iter().take_while(|e| e.is_commit()).collect();
        let comps = &log[commits.len()..];
        if comps.len() != commits.len() {
            return false;
        }
        commits.iter().rev().zip(comps.iter()).all(|(commit, comp)| {
            match (commit, comp) {
                (
                    TransEntry::Commit { name, input, output },
                    TransEntry::Comp { name: cn, input: ci, output: co },
                ) => name == cn && input == ci && output == co,
            _ => false,
            }
        })
    }
}

/// Append compensations for every commit in `p`'s log, in reverse
/// commit order, and invoke the registered compensation callbacks in
/// that same order. The precondition (enforced by removal from the
/// active set) is that `p` has not compensated before.
pub fn comp(trans: &TransState, p: &ProcName, registry: &TxnRegistry) -> TransState {
    let mut out = trans.clone();
    let log = trans.log_of(p);
    assert!(
        log.iter().all(TransEntry::is_commit),
        "double compensation at {p}: log already contains compensations"
    );
    let mut comps = Vec::new();
    for entry in log.iter().rev() {
        if let TransEntry::Commit { name, input, output } = entry {
            registry.run_compensate(name, input, output);
            comps.push(TransEntry::Comp {
                name: name.clone(),
                input: input.clone(),
                output: output.clone(),
            });
        }
    }
    if !comps.is_empty() {
        out.logs.entry(p.clone()).or_default().extend(comps);
    }
    out
}

/// The set of processes that have not compensated. Only ever shrinks.
pub type ActiveSet = BTreeSet<ProcName>;
