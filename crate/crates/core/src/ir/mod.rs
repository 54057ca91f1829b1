//! Graph forms shared by every pass.
//!
//! Two representations live here:
//!
//! - [`RvsdgGraph`]: the region-nested graph produced by the frontend. The
//!   lowering passes rewrite it in place, so the same structure also holds the
//!   handshake node kinds (branches, muxes, HLS loops, memory ports) while the
//!   pipeline is running.
//! - [`ElasticNetlist`]: the flat, possibly cyclic netlist that the simulator
//!   executes. It is obtained from a fully lowered graph by [`flatten`].

pub mod dot;
pub mod json;
mod netlist;
mod rvsdg;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use netlist::{
    flatten, validate_netlist, Channel, ElasticNetlist, FlattenError, LoopCluster, NetNode,
    NetNodeKind, NetlistRule, NetlistViolation, PortRef,
};
pub use rvsdg::{
    load_req_output, load_resp_input, validate_rvsdg, BinOp, CmpOp, GateRole, MemPort, Node,
    NodeKind, Origin, Region, RvsdgGraph, RvsdgRule, RvsdgViolation, User,
};

/// Width of every frontend value. There is no width inference.
pub const VALUE_WIDTH: u32 = 32;

/// Control token that ends a loop (and starts the next invocation).
pub const LOOP_TERMINATE: u32 = 0;
/// Control token that requests another loop iteration.
pub const LOOP_CONTINUE: u32 = 1;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Stable node identity, preserved by passes for surviving nodes.
    NodeId,
    "n"
);
id_type!(RegionId, "r");
id_type!(
    /// Index of an array parameter of the kernel.
    ArrayId,
    "a"
);
id_type!(
    /// Static identity of a load or store in the source kernel, assigned in
    /// evaluation order. Traces are keyed by it.
    MemOpId,
    "m"
);

/// Payload type carried by an edge. The handshake signals are implicit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PortType {
    Value { width: u32 },
    Control { arity: u32 },
    MemState,
    MemRequest,
    MemResponse,
}

impl PortType {
    pub const VALUE: PortType = PortType::Value { width: VALUE_WIDTH };
    pub const PREDICATE: PortType = PortType::Control { arity: 2 };

    pub fn is_state(self) -> bool {
        matches!(self, PortType::MemState)
    }

    pub fn is_control(self) -> bool {
        matches!(self, PortType::Control { .. })
    }

    pub fn is_well_formed(self) -> bool {
        match self {
            PortType::Value { width } => width == VALUE_WIDTH,
            PortType::Control { arity } => arity >= 2,
            _ => true,
        }
    }
}

impl fmt::Display for PortType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortType::Value { width } => write!(f, "i{width}"),
            PortType::Control { arity } => write!(f, "ctl{arity}"),
            PortType::MemState => f.write_str("state"),
            PortType::MemRequest => f.write_str("memreq"),
            PortType::MemResponse => f.write_str("memresp"),
        }
    }
}

/// A declared array parameter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub id: ArrayId,
    pub name: String,
    pub len: u32,
}
