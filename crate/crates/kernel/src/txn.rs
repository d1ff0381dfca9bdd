//! Local transaction definitions: a named commit function that either
//! produces an output value or fails, paired with a compensation
//! callback invoked when a saga rolls back.
//!
//! Commit functions must be deterministic: within one run, committing
//! the same transaction with the same input yields the same outcome.
//! Replay recovery depends on this.

use crate::value::Value;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransName(pub String);

impl TransName {
    pub fn new(s: impl Into<String>) -> Self {
        TransName(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TransName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Result of running a commit function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Ok(Value),
    Fail,
}

type CommitFn = Arc<dyn Fn(&Value) -> Outcome + Send + Sync>;
type CompensateFn = Arc<dyn Fn(&Value, &Value) + Send + Sync>;

#[derive(Clone)]
pub struct TransactionDef {
    pub name: TransName,
    commit: CommitFn,
    compensate: CompensateFn,
}

impl TransactionDef {
    pub fn new(
        name: impl Into<String>,
        commit: impl Fn(&Value) -> Outcome + Send + Sync + 'static,
        compensate: impl Fn(&Value, &Value) + Send + Sync + 'static,
    ) -> Self {
        TransactionDef {
            name: TransName::new(name),
            commit: Arc::new(commit),
            compensate: Arc::new(compensate),
        }
    }

    /// A transaction that always succeeds, returning its input, with a
    /// no-op compensation. Handy default for tests and generators.
    pub fn identity(name: impl Into<String>) -> Self {
        TransactionDef::new(name, |v| Outcome::Ok(v.clone()), |_, _| {})
    }

    /// A transaction that always fails.
    pub fn failing(name: impl Into<String>) -> Self {
        TransactionDef::new(name, |_| Outcome::Fail, |_, _| {})
    }

    /// A transaction that fails exactly when its input equals `bad`.
    pub fn fail_on(name: impl Into<String>, bad: Value) -> Self {
        TransactionDef::new(
            name,
            move |v| {
                if *v == bad {
                    Outcome::Fail
                } else {
                    Outcome::Ok(v.clone())
                }
            },
            |_, _| {},
        )
    }

    pub fn run_commit(&self, input: &Value) -> Outcome {
        (self.commit)(input)
    }

    pub fn run_compensate(&self, input: &Value, output: &Value) {
        (self.compensate)(input, output)
    }
}

impl fmt::Debug for TransactionDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransactionDef").field("name", &self.name).finish()
    }
}

#[derive(Clone, Default)]
pub struct TxnRegistry {
    txns: BTreeMap<TransName, TransactionDef>,
}

impl TxnRegistry {
    pub fn register(&mut self, def: TransactionDef) {
        self.txns.insert(def.name.clone(), def);
    }

    pub fn contains(&self, name: &TransName) -> bool {
        self.txns.contains_key(name)
    }

    pub fn get(&self, name: &TransName) -> Option<&TransactionDef> {
        self.txns.get(name)
    }

    /// Commit outcome for `name` on `input`; `None` if unregistered.
    pub fn run_commit(&self, name: &TransName, input: &Value) -> Option<Outcome> {
        self.txns.get(name).map(|d| d.run_commit(input))
    }

    /// Invoke the compensation callback, if registered. Unregistered
    /// names are ignored here: the log entry is the effect of record.
    pub fn run_compensate(&self, name: &TransName, input: &Value, output: &Value) {
        if let Some(d) = self.txns.get(name) {
            d.run_compensate(input, output);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &TransName> {
        self.txns.keys()
    }
}

impl fmt::Debug for TxnRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TxnRegistry")
            .field("names", &self.txns.keys().collect::<Vec<_>>())
            .finish()
    }
}
