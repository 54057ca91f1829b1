//! Structural lowering of the RVSDG into the handshake dialect.

mod gamma;
mod memory;
mod p2p;
mod theta;

pub use gamma::{lower_gamma, GammaForm, GammaLowering};
pub use memory::lower_memory_ports;
pub use p2p::enforce_point_to_point;
pub use theta::{classify, lower_theta, LoopVarClass, LowerError, ThetaLowering};
