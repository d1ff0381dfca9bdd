//! Transition labels: the observable event of a single semantic step.
//!
//! Every label has a unique performing process, used by the delay rule
//! (a continuation may only step out of order for a process with no
//! pending earlier instruction) and by the efficiency ordering (which
//! prunes steps of one distinguished process).

use crate::state::{LabelName, Msg, ProcName};
use crate::value::Value;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransitionLabel {
    /// An internal step at a process: assignment, conditional, or a
    /// successful (or replayed) transaction commit.
    Tau(ProcName),
    /// `p.v -> q!`: `p` appended value `v` for `q` to the message map.
    SendEv(ProcName, Value, ProcName),
    /// `p.v -> q?`: `q` consumed value `v` sent by `p`. Performed by `q`.
    RecvEv(ProcName, Value, ProcName),
    /// `p` appended selection label `l` for `q`.
    SelSendEv(ProcName, LabelName, ProcName),
    /// `q` consumed selection label `l` sent by `p`. Performed by `q`.
    SelRecvEv(ProcName, LabelName, ProcName),
    /// `p` compensated its committed transactions and left the active
    /// set, either because its own transaction failed or because it
    /// observed that some other process already failed.
    CompensateEv(ProcName),
    /// `p` was reset to its initial program, store, and sequence rows.
    RestartEv(ProcName),
}

impl TransitionLabel {
    /// The process that performs the step: the sender for send events,
    /// the receiver for receive events.
    pub fn performer(&self) -> &ProcName {
        match self {
            TransitionLabel::Tau(p)
            | TransitionLabel::CompensateEv(p)
            | TransitionLabel::RestartEv(p) => p,
            TransitionLabel::SendEv(p, _, _) | TransitionLabel::SelSendEv(p, _, _) => p,
            TransitionLabel::RecvEv(_, _, q) | TransitionLabel::SelRecvEv(_, _, q) => q,
        }
    }

    pub fn is_restart(&self) -> bool {
        matches!(self, TransitionLabel::RestartEv(_))
    }

    pub fn is_compensate(&self) -> bool {
        matches!(self, TransitionLabel::CompensateEv(_))
    }

    /// The sent or received message, for send/receive events.
    pub fn message(&self) -> Option<Msg> {
        match self {
            TransitionLabel::SendEv(_, v, _) | TransitionLabel::RecvEv(_, v, _) => {
                Some(Msg::Val(v.clone()))
            }
            TransitionLabel::SelSendEv(_, l, _) | TransitionLabel::SelRecvEv(_, l, _) => {
                Some(Msg::Label(l.clone()))
            }
            _ => None,
        }
    }

    /// Canonical string encoding. Step enumeration sorts successors by
    /// this key so exploration order is reproducible.
    pub fn canonical_key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TransitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransitionLabel::Tau(p) => write!(f, "tau@{p}"),
            TransitionLabel::SendEv(p, v, q) => write!(f, "{p}.{v}->{q}!"),
            TransitionLabel::RecvEv(p, v, q) => write!(f, "{p}.{v}->{q}?"),
            TransitionLabel::SelSendEv(p, l, q) => write!(f, "{p}->{q}[{l}]!"),
            TransitionLabel::SelRecvEv(p, l, q) => write!(f, "{p}->{q}[{l}]?"),
            TransitionLabel::CompensateEv(p) => write!(f, "compensate@{p}"),
            TransitionLabel::RestartEv(p) => write!(f, "restart@{p}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn performer_is_receiver_for_receive_events() {
        let l = TransitionLabel::RecvEv("p".into(), Value::Int(1), "q".into());
        assert_eq!(l.performer(), &ProcName::new("q"));
        let l = TransitionLabel::SelRecvEv("p".into(), LabelName::new("L"), "q".into());
        assert_eq!(l.performer(), &ProcName::new("q"));
    }

    #[test]
    fn performer_is_sender_for_send_events() {
        let l = TransitionLabel::SendEv("p".into(), Value::Int(1), "q".into());
        assert_eq!(l.performer(), &ProcName::new("p"));
    }
}
