//! Endpoint projection: compiling a choreography into one endpoint
//! program per process.
//!
//! A value send projects to a send at the sender and a receive at the
//! receiver; an in-flight residual projects to just the receive, since
//! the message is already queued. Selections project to a label send at
//! the sender and a branch at the receiver, with the receiver's whole
//! continuation captured inside the branch arm. A conditional projects
//! to a local conditional at the deciding process and to the *merge* of
//! the two branch projections everywhere else, which is defined only
//! when the branches are identical or distinguished by branch labels
//! (knowledge of choice).
//!
//! Merging is full merging: branches on the same source merge pointwise
//! and their label sets union.

use crate::chor::{ChorInstr, Choreography};
use crate::net::{ProcInstr, ProcProgram};
use crate::state::ProcName;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MergeError {
    #[error("cannot merge `{0}` with `{1}`")]
    Divergent(String, String),
    #[error("cannot merge unfinished program `{0}` with finished one")]
    LengthMismatch(String),
}

/// Full merge of two endpoint programs. Defined when the programs are
/// identical, or when they begin with branches on the same source whose
/// arm maps merge pointwise (disjoint labels union). The error carries
/// the first divergent instruction pair.
pub fn merge(a: &ProcProgram, b: &ProcProgram) -> Result<ProcProgram, MergeError> {
    match (a, b) {
        (ProcProgram::Nil, ProcProgram::Nil) => Ok(ProcProgram::Nil),
        (ProcProgram::Seq(i, itail), ProcProgram::Seq(j, jtail)) => {
            if let (ProcInstr::Branch(src_a, arms_a), ProcInstr::Branch(src_b, arms_b)) =
                (i.as_ref(), j.as_ref())
            {
                if src_a == src_b {
                    let mut arms = BTreeMap::new();
                    let labels: BTreeSet<_> =
                        arms_a.keys().chain(arms_b.keys()).cloned().collect();
                    for l in labels {
                        let arm = match (arms_a.get(&l), arms_b.get(&l)) {
                            (Some(x), Some(y)) => merge(x, y)?,
                            (Some(x), None) => x.clone(),
                            (None, Some(y)) => y.clone(),
                            (None, None) => unreachable!(),
                        };
                        arms.insert(l, arm);
                    }
                    let tail = merge(itail, jtail)?;
                    return Ok(ProcProgram::seq(
                        ProcInstr::Branch(src_a.clone(), arms),
                        tail,
                    ));
                }
            }
            if i == j {
                Ok(ProcProgram::Seq(i.clone(), std::sync::Arc::new(merge(itail, jtail)?)))
            } else {
                Err(MergeError::Divergent(i.to_string(), j.to_string()))
            }
        }
        (ProcProgram::Nil, ProcProgram::Seq(j, _)) => {
            Err(MergeError::LengthMismatch(j.to_string()))
        }
        (ProcProgram::Seq(i, _), ProcProgram::Nil) => {
            Err(MergeError::LengthMismatch(i.to_string()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProjectError {
    #[error("process {process} cannot follow the conditional at `{at}`: {reason}")]
    Unprojectable {
        process: ProcName,
        at: String,
        reason: String,
    },
}

/// The projection of `c` onto process `r`.
pub fn project(c: &Choreography, r: &ProcName) -> Result<ProcProgram, ProjectError> {
    match c {
        Choreography::Nil => Ok(ProcProgram::Nil),
        Choreography::Seq(instr, tail) => match instr {
            ChorInstr::Send(p, e, q, x) => {
                let rest = project(tail, r)?;
                Ok(if r == p {
                    ProcProgram::seq(ProcInstr::SendTo(q.clone(), e.clone()), rest)
                } else if r == q {
                    ProcProgram::seq(ProcInstr::RecvFrom(p.clone(), x.clone()), rest)
                } else {
                    rest
                })
            }
            ChorInstr::InFlight(p, q, x) => {
                let rest = project(tail, r)?;
                Ok(if r == q {
                    ProcProgram::seq(ProcInstr::RecvFrom(p.clone(), x.clone()), rest)
                } else {
                    rest
                })
            }
            ChorInstr::SelSend(p, q, l) | ChorInstr::SelInFlight(p, q, l) => {
                let is_pending_send = matches!(instr, ChorInstr::SelSend(..));
                let rest = project(tail, r)?;
                Ok(if r == p && is_pending_send {
                    ProcProgram::seq(ProcInstr::Select(q.clone(), l.clone()), rest)
                } else if r == q {
                    // The receiver's continuation lives inside the arm,
                    // so later merges can union distinct labels.
                    let mut arms = BTreeMap::new();
                    arms.insert(l.clone(), rest);
                    ProcProgram::seq(ProcInstr::Branch(p.clone(), arms), ProcProgram::Nil)
                } else {
                    rest
                })
            }
            ChorInstr::Assign(p, x, e) => {
                let rest = project(tail, r)?;
                Ok(if r == p {
                    ProcProgram::seq(ProcInstr::Assign(x.clone(), e.clone()), rest)
                } else {
                    rest
                })
            }
            ChorInstr::Trans(p, x, t, e) => {
                let rest = project(tail, r)?;
                Ok(if r == p {
                    ProcProgram::seq(
                        ProcInstr::Trans(x.clone(), t.clone(), e.clone()),
                        rest,
                    )
                } else {
                    rest
                })
            }
            ChorInstr::Cond(p, e, c1, c2) => {
                let b1 = project(c1, r)?;
                let b2 = project(c2, r)?;
                let rest = project(tail, r)?;
                if r == p {
                    Ok(ProcProgram::seq(
                        ProcInstr::Cond(
                            e.clone(),
                            std::sync::Arc::new(b1),
                            std::sync::Arc::new(b2),
                        ),
                        rest,
                    ))
                } else {
                    let merged =
                        merge(&b1, &b2).map_err(|err| ProjectError::Unprojectable {
                            process: r.clone(),
                            at: instr.to_string(),
                            reason: err.to_string(),
                        })?;
                    Ok(merged.concat(&rest))
                }
            }
        },
    }
}

/// Projection of a whole choreography over a declared process set.
/// Declared-but-unused processes project to `Nil`.
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub programs: BTreeMap<ProcName, ProcProgram>,
    pub diagnostics: Vec<ProjectError>,
}

impl ProjectionResult {
    pub fn is_ok(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

pub fn project_all(c: &Choreography, declared: &BTreeSet<ProcName>) -> ProjectionResult {
    let mut domain = c.procs();
    domain.extend(declared.iter().cloned());
    let mut programs = BTreeMap::new();
    let mut diagnostics = Vec::new();
    for r in domain {
        match project(c, &r) {
            Ok(p) => {
                programs.insert(r, p);
            }
            Err(e) => diagnostics.push(e),
        }
    }
    ProjectionResult {
        programs,
        diagnostics,
    }
}

/// Accepts iff every process's projection is defined; the returned
/// diagnostics name each process that behaves differently across a
/// conditional without a distinguishing selection.
pub fn check_projectability(c: &Choreography) -> Result<(), Vec<ProjectError>> {
    let result = project_all(c, &BTreeSet::new());
    if result.is_ok() {
        Ok(())
    } else {
        Err(result.diagnostics)
    }
}

/// Canonical form for program comparison: push everything following a
/// branch instruction into its arms (the branch rule runs an arm and
/// then the continuation, so the two shapes behave identically). A
/// network built from an earlier projection keeps continuations outside
/// its branches, while a projection of the residual choreography
/// captures them inside the arms; normalizing makes the two comparable.
pub fn normalize_branches(p: &ProcProgram) -> ProcProgram {
    match p {
        ProcProgram::Nil => ProcProgram::Nil,
        ProcProgram::Seq(i, tail) => match i.as_ref() {
            ProcInstr::Branch(src, arms) => {
                let arms = arms
                    .iter()
                    .map(|(l, arm)| (l.clone(), normalize_branches(&arm.concat(tail))))
                    .collect();
                ProcProgram::seq(ProcInstr::Branch(src.clone(), arms), ProcProgram::Nil)
            }
            ProcInstr::Cond(e, a, b) => ProcProgram::seq(
                ProcInstr::Cond(
                    e.clone(),
                    std::sync::Arc::new(normalize_branches(a)),
                    std::sync::Arc::new(normalize_branches(b)),
                ),
                normalize_branches(tail),
            ),
            other => ProcProgram::seq(other.clone(), normalize_branches(tail)),
        },
    }
}

/// The branch-pruning order on endpoint programs: `a` is above `b` when
/// they are equal except that branch instructions in `a` may carry
/// extra labels, with arms above their counterparts pointwise. A
/// network stays above the projection of the residual choreography
/// because conditionals discard the untaken branch globally but
/// unreached receivers keep both arms until their label arrives.
/// Programs are compared in branch-normal form.
pub fn program_geq(a: &ProcProgram, b: &ProcProgram) -> bool {
    program_geq_norm(&normalize_branches(a), &normalize_branches(b))
}

fn program_geq_norm(a: &ProcProgram, b: &ProcProgram) -> bool {
    match (a, b) {
        (ProcProgram::Nil, ProcProgram::Nil) => true,
        (ProcProgram::Seq(i, itail), ProcProgram::Seq(j, jtail)) => {
            let head_ok = match (i.as_ref(), j.as_ref()) {
                (ProcInstr::Branch(src_a, arms_a), ProcInstr::Branch(src_b, arms_b)) => {
                    src_a == src_b
                        && arms_b.iter().all(|(l, arm_b)| {
                            arms_a
                                .get(l)
                                .is_some_and(|arm_a| program_geq_norm(arm_a, arm_b))
                        })
                }
                (ProcInstr::Cond(ea, a1, a2), ProcInstr::Cond(eb, b1, b2)) => {
                    ea == eb && program_geq_norm(a1, b1) && program_geq_norm(a2, b2)
                }
                (x, y) => x == y,
            };
            head_ok && program_geq_norm(itail, jtail)
        }
        _ => false,
    }
}

/// Pointwise pruning order over whole networks (same process domain).
pub fn network_geq(
    a: &BTreeMap<ProcName, ProcProgram>,
    b: &BTreeMap<ProcName, ProcProgram>,
) -> bool {
    let keys: BTreeSet<_> = a.keys().chain(b.keys()).collect();
    keys.into_iter().all(|p| {
        let pa = a.get(p).unwrap_or(&ProcProgram::Nil);
        let pb = b.get(p).unwrap_or(&ProcProgram::Nil);
        program_geq(pa, pb)
    })
}

impl fmt::Display for ProjectionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (p, prog) in &self.programs {
            writeln!(f, "{p}: {prog}")?;
        }
        Ok(())
    }
}
