//! An execution: an initial network configuration followed by labeled
//! steps, each validated against the semantics on construction.

use serde::{Deserialize, Serialize};
use troupe_kernel::net::net_steps;
use troupe_kernel::{NetConfig, Semantics, TransitionLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub label: TransitionLabel,
    pub next: NetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    init: NetConfig,
    steps: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("step {index} ({label}) is not a transition of the semantics")]
    InvalidStep { index: usize, label: String },
    #[error("concatenation mismatch: final configuration differs from the start of the suffix")]
    ConcatMismatch,
}

impl ExecutionTrace {
    /// Build a trace, checking every `(config, label, successor)`
    /// triple against the step enumeration (restarts allowed).
    pub fn new_validated(
        init: NetConfig,
        steps: Vec<TraceStep>,
        sem: &Semantics,
    ) -> Result<ExecutionTrace, TraceError> {
        let mut cur = &init;
        for (index, step) in steps.iter().enumerate() {
            let ok = net_steps(sem, cur, true)
                .into_iter()
                .any(|(l, next)| l == step.label && next == step.next);
            if !ok {
                return Err(TraceError::InvalidStep {
                    index,
                    label: step.label.to_string(),
                });
            }
            cur = &step.next;
        }
        Ok(ExecutionTrace { init, steps })
    }

    /// Build a trace without validation. For internal use where every
    /// step was just produced by the step function itself.
    pub fn from_steps_unchecked(init: NetConfig, steps: Vec<TraceStep>) -> ExecutionTrace {
        ExecutionTrace { init, steps }
    }

    pub fn empty(at: NetConfig) -> ExecutionTrace {
        ExecutionTrace {
            init: at,
            steps: Vec::new(),
        }
    }

    pub fn init(&self) -> &NetConfig {
        &self.init
    }

    pub fn steps(&self) -> &[TraceStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The configuration after `i` steps; `config_at(0)` is the start.
    pub fn config_at(&self, i: usize) -> &NetConfig {
        if i == 0 {
            &self.init
        } else {
            &self.steps[i - 1].next
        }
    }

    /// The final configuration.
    pub fn final_config(&self) -> &NetConfig {
        self.config_at(self.len())
    }

    pub fn labels(&self) -> impl Iterator<Item = &TransitionLabel> {
        self.steps.iter().map(|s| &s.label)
    }

    pub fn restart_count(&self) -> usize {
        self.labels().filter(|l| l.is_restart()).count()
    }

    /// Split into prefix of `i` steps and the suffix anchored at the
    /// configuration after them.
    pub fn split_at(&self, i: usize) -> (ExecutionTrace, ExecutionTrace) {
        assert!(i <= self.len());
        let prefix = ExecutionTrace {
            init: self.init.clone(),
            steps: self.steps[..i].to_vec(),
        };
        let suffix = ExecutionTrace {
            init: self.config_at(i).clone(),
            steps: self.steps[i..].to_vec(),
        };
        (prefix, suffix)
    }

    /// Concatenation: defined only when this trace ends exactly where
    /// `other` starts.
    pub fn concat(&self, other: &ExecutionTrace) -> Result<ExecutionTrace, TraceError> {
        if self.final_config() != other.init() {
            return Err(TraceError::ConcatMismatch);
        }
        let mut steps = self.steps.clone();
        steps.extend(other.steps.iter().cloned());
        Ok(ExecutionTrace {
            init: self.init.clone(),
            steps,
        })
    }
}
