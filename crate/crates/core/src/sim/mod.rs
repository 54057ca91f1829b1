//! Cycle-level simulation of elastic netlists.
//!
//! Every cycle has two phases. The combinational phase settles signals on all
//! channels: readies start high and only fall, valids start low and only
//! rise, and the two are alternated until stable. Memory grants and ADDR-Q
//! checks are decided on the settled signals. The
//! sequential phase then commits all transfers: registers latch, FIFOs push
//! and pop, memory ports read and write.

mod engine;
mod trace;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{ArrayId, MemOpId};

pub use engine::{simulate, ChannelSnapshot, Simulator, Snapshot, StalledNode, Status};
pub use trace::{AccessKind, MemEvent, MemTrace};

pub const DEFAULT_MAX_CYCLES: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub max_cycles: u64,
    /// Cycles from a read grant to its response.
    pub mem_latency: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            max_cycles: DEFAULT_MAX_CYCLES,
            mem_latency: 1,
        }
    }
}

/// Scalar arguments in parameter order and array contents in array order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelInputs {
    pub args: Vec<i32>,
    pub arrays: Vec<Vec<i32>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trap {
    DivisionByZero,
    OutOfBounds {
        op: MemOpId,
        array: ArrayId,
        addr: i64,
        len: u32,
    },
}

impl Trap {
    /// Traps match when they are of the same kind; which of several faulting
    /// operations is hit first depends on scheduling.
    pub fn same_kind(&self, other: &Trap) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

impl fmt::Display for Trap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trap::DivisionByZero => f.write_str("division by zero"),
            Trap::OutOfBounds {
                op,
                array,
                addr,
                len,
            } => write!(
                f,
                "{op}: address {addr} out of bounds for {array} (length {len})"
            ),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("trap at cycle {cycle}: {trap}")]
    Trap { trap: Trap, cycle: u64 },
    #[error("deadlock at cycle {cycle}: {} stalled nodes", .stalled.len())]
    Deadlock {
        cycle: u64,
        stalled: Vec<StalledNode>,
    },
    #[error("cycle budget of {limit} exceeded")]
    MaxCycles { limit: u64 },
    #[error("bad inputs: {0}")]
    Inputs(String),
    #[error("netlist cannot be simulated: {0}")]
    Netlist(String),
}

impl SimError {
    pub fn trap(&self) -> Option<&Trap> {
        match self {
            SimError::Trap { trap, .. } => Some(trap),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimStats {
    pub cycles: u64,
    pub census: BTreeMap<String, usize>,
    pub buffer_slots: u64,
    /// Largest number of tokens held by any one buffer, FIFO or ADDR-Q.
    pub peak_occupancy: usize,
    /// Channel transfers over the whole run.
    pub transfers: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimResult {
    pub cycles: u64,
    pub ret: Option<i32>,
    pub memories: Vec<Vec<i32>>,
    pub trace: MemTrace,
    pub stats: SimStats,
}

#[cfg(test)]
mod tests;
