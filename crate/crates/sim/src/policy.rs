//! Fault-injection policy: how many restart events a run or an
//! exploration may contain, and which processes may be restarted.
//!
//! Restarts are scheduler-level transitions, so the exhaustive explorer
//! covers every placement of up to `max_restarts` of them as a
//! byproduct of state enumeration, and the random scheduler draws them
//! like any other step.

use std::collections::BTreeSet;
use troupe_kernel::ProcName;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultPolicy {
    /// Upper bound on restart events per execution.
    pub max_restarts: u32,
    /// Processes eligible for restart; `None` means all of them.
    pub eligible: Option<BTreeSet<ProcName>>,
}

impl FaultPolicy {
    pub fn no_faults() -> FaultPolicy {
        FaultPolicy {
            max_restarts: 0,
            eligible: None,
        }
    }

    pub fn restarts(k: u32) -> FaultPolicy {
        FaultPolicy {
            max_restarts: k,
            eligible: None,
        }
    }

    pub fn may_restart(&self, p: &ProcName) -> bool {
        self.eligible.as_ref().map_or(true, |set| set.contains(p))
    }
}
