//! Reference interpretation, trace equivalence, and random kernels.

mod equiv;
pub mod fuzz;
mod interp;

use serde::Serialize;

use crate::frontend::KernelAst;
use crate::pipeline::{compile, PipelineConfig};
use crate::sim::{simulate, KernelInputs, SimConfig};

pub use equiv::{check_equivalence, compare_outcomes, Divergence};
pub use interp::{interpret, interpret_with_limit, RefError, RefResult, DEFAULT_STEP_LIMIT};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    /// Simulated cycles when the circuit ran to completion.
    pub cycles: Option<u64>,
    pub detail: Option<String>,
}

impl Verdict {
    fn fail(detail: String) -> Self {
        Verdict {
            pass: false,
            cycles: None,
            detail: Some(detail),
        }
    }
}

/// Compiles, simulates, and compares against the interpreter.
pub fn check_kernel(
    ast: &KernelAst,
    inputs: &KernelInputs,
    config: &PipelineConfig,
    sim: SimConfig,
) -> Verdict {
    let compiled = match compile(ast, config) {
        Ok(c) => c,
        Err(e) => return Verdict::fail(format!("compile: {e}")),
    };
    let reference = interpret(ast, inputs);
    let run = simulate(compiled.netlist(), inputs, sim);
    let cycles = run.as_ref().ok().map(|r| r.cycles);
    match compare_outcomes(&reference, &run) {
        Ok(()) => Verdict {
            pass: true,
            cycles,
            detail: None,
        },
        Err(d) => Verdict {
            pass: false,
            cycles,
            detail: Some(d.to_string()),
        },
    }
}
