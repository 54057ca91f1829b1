//! Kernel language: parsing, pretty-printing and RVSDG construction.

pub mod ast;
mod build;
mod parse;
mod print;
mod separate;

pub use ast::KernelAst;
pub use build::{build_rvsdg, BuildError};
pub use parse::{parse, ParseError};
pub use print::{expr as pretty_expr, pretty};
pub use separate::separate_state_edges;
