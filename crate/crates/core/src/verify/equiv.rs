use std::fmt;

use serde::Serialize;

use super::interp::{RefError, RefResult};
use crate::ir::MemOpId;
use crate::sim::{SimError, SimResult};

/// First point where a simulated run departs from the reference.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Divergence {
    Return {
        expected: Option<i32>,
        actual: Option<i32>,
    },
    Memory {
        array: usize,
        index: usize,
        expected: i32,
        actual: i32,
    },
    /// Event `index` of op `op`; `None` where one side ran out of events.
    Trace {
        op: MemOpId,
        index: usize,
        expected: Option<(u32, i32)>,
        actual: Option<(u32, i32)>,
    },
    Outcome {
        expected: String,
        actual: String,
    },
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pair = |p: &Option<(u32, i32)>| match p {
            Some((a, d)) => format!("[{a}]={d}"),
            None => "nothing".into(),
        };
        match self {
            Divergence::Return { expected, actual } => {
                write!(f, "return value {actual:?}, expected {expected:?}")
            }
            Divergence::Memory {
                array,
                index,
                expected,
                actual,
            } => write!(
                f,
                "array {array} word {index} is {actual}, expected {expected}"
            ),
            Divergence::Trace {
                op,
                index,
                expected,
                actual,
            } => write!(
                f,
                "{op} event {index} is {}, expected {}",
                pair(actual),
                pair(expected)
            ),
            Divergence::Outcome { expected, actual } => {
                write!(f, "run ended with {actual}, expected {expected}")
            }
        }
    }
}

/// PASS iff return values, final memories, and every op's ordered
/// (address, data) sequence agree. Cycle stamps and the interleaving of
/// different ops are ignored.
pub fn check_equivalence(reference: &RefResult, sim: &SimResult) -> Result<(), Divergence> {
    if reference.ret != sim.ret {
        return Err(Divergence::Return {
            expected: reference.ret,
            actual: sim.ret,
        });
    }
    let ops = reference.trace.ops.keys().chain(sim.trace.ops.keys());
    let mut ops: Vec<MemOpId> = ops.copied().collect();
    ops.sort();
    ops.dedup();
    for op in ops {
        let (a, b) = (reference.trace.events(op), sim.trace.events(op));
        for index in 0..a.len().max(b.len()) {
            let expected = a.get(index).map(|e| (e.addr, e.data));
            let actual = b.get(index).map(|e| (e.addr, e.data));
            if expected != actual {
                return Err(Divergence::Trace {
                    op,
                    index,
                    expected,
                    actual,
                });
            }
        }
    }
    for (array, (x, y)) in reference.memories.iter().zip(&sim.memories).enumerate() {
        if let Some(index) = (0..x.len().max(y.len())).find(|&i| x.get(i) != y.get(i)) {
            return Err(Divergence::Memory {
                array,
                index,
                expected: x.get(index).copied().unwrap_or_default(),
                actual: y.get(index).copied().unwrap_or_default(),
            });
        }
    }
    Ok(())
}

/// Compares two runs that may have trapped. Runs that trap with the same
/// kind of trap agree; everything else must complete and match.
pub fn compare_outcomes(
    reference: &Result<RefResult, RefError>,
    sim: &Result<SimResult, SimError>,
) -> Result<(), Divergence> {
    match (reference, sim) {
        (Ok(r), Ok(s)) => check_equivalence(r, s),
        (Err(RefError::Trap(a)), Err(SimError::Trap { trap: b, .. })) if a.same_kind(b) => Ok(()),
        (r, s) => Err(Divergence::Outcome {
            expected: match r {
                Ok(_) => "completion".into(),
                Err(e) => e.to_string(),
            },
            actual: match s {
                Ok(_) => "completion".into(),
                Err(e) => e.to_string(),
            },
        }),
    }
}
