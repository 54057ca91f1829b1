//! Dynamic high-level synthesis for a small kernel language.
//!
//! Kernels are parsed into a region-nested dataflow graph, lowered step by
//! step into an elastic netlist of handshake components, and executed by a
//! cycle-level simulator. Loads and stores on the same array may run out of
//! order when a per-pair address queue proves them independent. The
//! [`verify`] module checks every simulated run against a sequential
//! interpreter, event for event.
//!
//! ```
//! use elastic_hls::pipeline::{compile_source, PipelineConfig};
//! use elastic_hls::sim::{simulate, KernelInputs, SimConfig};
//!
//! let c = compile_source(
//!     "kernel sum(n:i32) { s = 0; i = 1; do { s = s + i; i = i + 1; } while (i <= n); return s; }",
//!     &PipelineConfig::full(),
//! )
//! .unwrap();
//! let inputs = KernelInputs { args: vec![10], arrays: vec![] };
//! let run = simulate(c.netlist(), &inputs, SimConfig::default()).unwrap();
//! assert_eq!(run.ret, Some(55));
//! ```

pub mod bench;
pub mod buffers;
pub mod corpus;
pub mod disambig;
pub mod frontend;
pub mod ir;
pub mod lower;
pub mod pipeline;
pub mod sidecar;
pub mod sim;
pub mod verify;
