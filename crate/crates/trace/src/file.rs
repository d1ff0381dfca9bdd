//! The trace file format: line-delimited JSON records.
//!
//! The first record carries the full initial configuration; each
//! following record carries one step as
//! `{"type":"step","seq":N,"label":{"kind","p","q"?,"value"?},"state_digest":...}`.
//! The digest is the lowercase hex SHA-256 of the canonical JSON
//! serialization of the successor configuration (serde_json with map
//! keys in sorted order and fixed struct field order), so independent
//! implementations can agree on it byte for byte.
//!
//! Steps store digests rather than configurations; a reader replays
//! the labels through the semantics and uses the digest to pick the
//! successor whenever the label alone is ambiguous.

use crate::trace::{ExecutionTrace, TraceStep};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use troupe_kernel::net::net_steps;
use troupe_kernel::{LabelName, NetConfig, ProcName, Semantics, TransitionLabel, Value};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceRecord {
    Init {
        config: Box<NetConfig>,
    },
    Step {
        seq: usize,
        label: LabelRecord,
        state_digest: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub kind: String,
    pub p: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<serde_json::Value>,
}

impl LabelRecord {
    pub fn from_label(label: &TransitionLabel) -> LabelRecord {
        let (kind, p, q, value) = match label {
            TransitionLabel::Tau(p) => ("tau", p.clone(), None, None),
            TransitionLabel::SendEv(p, v, q) => (
                "send",
                p.clone(),
                Some(q.clone()),
                Some(serde_json::to_value(v).unwrap()),
            ),
            TransitionLabel::RecvEv(p, v, q) => (
                "recv",
                p.clone(),
                Some(q.clone()),
                Some(serde_json::to_value(v).unwrap()),
            ),
            TransitionLabel::SelSendEv(p, l, q) => (
                "sel_send",
                p.clone(),
                Some(q.clone()),
                Some(serde_json::Value::String(l.to_string())),
            ),
            TransitionLabel::SelRecvEv(p, l, q) => (
                "sel_recv",
                p.clone(),
                Some(q.clone()),
                Some(serde_json::Value::String(l.to_string())),
            ),
            TransitionLabel::CompensateEv(p) => ("compensate", p.clone(), None, None),
            TransitionLabel::RestartEv(p) => ("restart", p.clone(), None, None),
        };
        LabelRecord {
            kind: kind.to_owned(),
            p: p.to_string(),
            q: q.map(|q| q.to_string()),
            value,
        }
    }

    pub fn to_label(&self) -> Result<TransitionLabel, TraceFileError> {
        let p = ProcName::new(self.p.clone());
        let q = || -> Result<ProcName, TraceFileError> {
            self.q
                .clone()
                .map(ProcName::new)
                .ok_or_else(|| TraceFileError::Malformed("missing q".into()))
        };
        let val = || -> Result<Value, TraceFileError> {
            serde_json::from_value(
                self.value
                    .clone()
                    .ok_or_else(|| TraceFileError::Malformed("missing value".into()))?,
            )
            .map_err(|e| TraceFileError::Malformed(e.to_string()))
        };
        let lab = || -> Result<LabelName, TraceFileError> {
            match &self.value {
                Some(serde_json::Value::String(s)) => Ok(LabelName::new(s.clone())),
                _ => Err(TraceFileError::Malformed("missing selection label".into())),
            }
        };
        Ok(match self.kind.as_str() {
            "tau" => TransitionLabel::Tau(p),
            "send" => TransitionLabel::SendEv(p, val()?, q()?),
            "recv" => TransitionLabel::RecvEv(p, val()?, q()?),
            "sel_send" => TransitionLabel::SelSendEv(p, lab()?, q()?),
            "sel_recv" => TransitionLabel::SelRecvEv(p, lab()?, q()?),
            "compensate" => TransitionLabel::CompensateEv(p),
            "restart" => TransitionLabel::RestartEv(p),
            other => {
                return Err(TraceFileError::Malformed(format!(
                    "unknown label kind `{other}`"
                )))
            }
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceFileError {
    #[error("malformed trace record: {0}")]
    Malformed(String),
    #[error("trace file is empty or missing the init record")]
    MissingInit,
    #[error("record {0}: {1}")]
    Json(usize, serde_json::Error),
    #[error("step {seq}: no transition with label {label} and digest {digest}")]
    NoMatchingStep {
        seq: usize,
        label: String,
        digest: String,
    },
}

/// Canonical configuration digest: SHA-256 over the canonical JSON.
pub fn config_digest(cfg: &NetConfig) -> String {
    let json = serde_json::to_string(cfg).expect("configs serialize");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hex::encode(hasher.finalize())
}

/// Render a trace as line-delimited records.
pub fn write_trace(trace: &ExecutionTrace) -> String {
    let mut out = String::new();
    let init = TraceRecord::Init {
        config: Box::new(trace.init().clone()),
    };
    out.push_str(&serde_json::to_string(&init).unwrap());
    out.push('\n');
    for (i, step) in trace.steps().iter().enumerate() {
        let rec = TraceRecord::Step {
            seq: i,
            label: LabelRecord::from_label(&step.label),
            state_digest: config_digest(&step.next),
        };
        out.push_str(&serde_json::to_string(&rec).unwrap());
        out.push('\n');
    }
    out
}

/// Parse and re-execute a trace file, checking each digest.
pub fn read_trace(src: &str, sem: &Semantics) -> Result<ExecutionTrace, TraceFileError> {
    let mut lines = src.lines().filter(|l| !l.trim().is_empty()).enumerate();
    let (_, first) = lines.next().ok_or(TraceFileError::MissingInit)?;
    let init = match serde_json::from_str(first).map_err(|e| TraceFileError::Json(0, e))? {
        TraceRecord::Init { config } => *config,
        TraceRecord::Step { .. } => return Err(TraceFileError::MissingInit),
    };
    let mut steps = Vec::new();
    let mut cur = init.clone();
    for (n, line) in lines {
        let rec: TraceRecord =
            serde_json::from_str(line).map_err(|e| TraceFileError::Json(n, e))?;
        let TraceRecord::Step {
            seq,
            label,
            state_digest,
        } = rec
        else {
            return Err(TraceFileError::Malformed(format!(
                "record {n}: duplicate init record"
            )));
        };
        let want = label.to_label()?;
        let next = net_steps(sem, &cur, want.is_restart())
            .into_iter()
            .find(|(l, next)| *l == want && config_digest(next) == state_digest)
            .map(|(_, next)| next)
            .ok_or_else(|| TraceFileError::NoMatchingStep {
                seq,
                label: want.to_string(),
                digest: state_digest.clone(),
            })?;
        steps.push(TraceStep {
            label: want,
            next: next.clone(),
        });
        cur = next;
    }
    Ok(ExecutionTrace::from_steps_unchecked(init, steps))
}
