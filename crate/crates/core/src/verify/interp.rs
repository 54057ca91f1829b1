use std::collections::HashMap;

use thiserror::Error;

use crate::frontend::ast::{Expr, KernelAst, ParamKind, Stmt};
use crate::ir::{ArrayId, BinOp};
use crate::sim::{AccessKind, KernelInputs, MemEvent, MemTrace, Trap};

/// Upper bound on executed statements and loop iterations.
pub const DEFAULT_STEP_LIMIT: u64 = 10_000_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefResult {
    pub ret: Option<i32>,
    pub memories: Vec<Vec<i32>>,
    /// Events in program order; the cycle field is the event's position in
    /// the whole run.
    pub trace: MemTrace,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum RefError {
    #[error("{0}")]
    Trap(Trap),
    #[error("step limit of {0} exceeded")]
    StepLimit(u64),
    #[error("bad inputs: {0}")]
    Inputs(String),
}

struct Interp<'a> {
    env: HashMap<&'a str, i32>,
    arrays: HashMap<&'a str, usize>,
    memories: Vec<Vec<i32>>,
    trace: MemTrace,
    events: u64,
    steps: u64,
    limit: u64,
}

/// Runs a kernel sequentially with 32-bit wrapping arithmetic.
pub fn interpret(ast: &KernelAst, inputs: &KernelInputs) -> Result<RefResult, RefError> {
    interpret_with_limit(ast, inputs, DEFAULT_STEP_LIMIT)
}

pub fn interpret_with_limit(
    ast: &KernelAst,
    inputs: &KernelInputs,
    limit: u64,
) -> Result<RefResult, RefError> {
    let mut env = HashMap::new();
    let mut arrays = HashMap::new();
    let (mut n_args, mut n_arrays) = (0, 0);
    for p in &ast.params {
        match p.kind {
            ParamKind::Scalar => {
                let v = *inputs
                    .args
                    .get(n_args)
                    .ok_or_else(|| RefError::Inputs(format!("missing argument '{}'", p.name)))?;
                env.insert(p.name.as_str(), v);
                n_args += 1;
            }
            ParamKind::Array { len } => {
                let data = inputs
                    .arrays
                    .get(n_arrays)
                    .ok_or_else(|| RefError::Inputs(format!("missing array '{}'", p.name)))?;
                if data.len() != len as usize {
                    return Err(RefError::Inputs(format!(
                        "array '{}' has length {len}, got {} values",
                        p.name,
                        data.len()
                    )));
                }
                arrays.insert(p.name.as_str(), n_arrays);
                n_arrays += 1;
            }
        }
    }
    let mut it = Interp {
        env,
        arrays,
        memories: inputs.arrays[..n_arrays].to_vec(),
        trace: MemTrace::default(),
        events: 0,
        steps: 0,
        limit,
    };
    it.block(&ast.body)?;
    let ret = ast.result.as_ref().map(|e| it.expr(e)).transpose()?;
    Ok(RefResult {
        ret,
        memories: it.memories,
        trace: it.trace,
    })
}

impl<'a> Interp<'a> {
    fn tick(&mut self) -> Result<(), RefError> {
        self.steps += 1;
        if self.steps > self.limit {
            return Err(RefError::StepLimit(self.limit));
        }
        Ok(())
    }

    fn block(&mut self, stmts: &'a [Stmt]) -> Result<(), RefError> {
        for s in stmts {
            self.stmt(s)?;
        }
        Ok(())
    }

    fn stmt(&mut self, s: &'a Stmt) -> Result<(), RefError> {
        self.tick()?;
        match s {
            Stmt::Assign { name, value, .. } => {
                let v = self.expr(value)?;
                self.env.insert(name.as_str(), v);
            }
            Stmt::Store {
                array,
                index,
                value,
                mem,
                ..
            } => {
                let addr = self.expr(index)?;
                let v = self.expr(value)?;
                let a = self.arrays[array.as_str()];
                let slot = self.check(a, addr, *mem)?;
                self.memories[a][slot] = v;
                self.record(*mem, AccessKind::Write, slot, v);
            }
            Stmt::If {
                cond,
                then_body,
                else_body,
                ..
            } => {
                if self.expr(cond)? != 0 {
                    self.block(then_body)?;
                } else {
                    self.block(else_body)?;
                }
            }
            Stmt::DoWhile { body, cond, .. } => loop {
                self.block(body)?;
                if self.expr(cond)? == 0 {
                    break;
                }
                self.tick()?;
            },
        }
        Ok(())
    }

    fn expr(&mut self, e: &'a Expr) -> Result<i32, RefError> {
        Ok(match e {
            Expr::Lit { value, .. } => *value,
            Expr::Var { name, .. } => self.env.get(name.as_str()).copied().unwrap_or(0),
            Expr::Load {
                array, index, mem, ..
            } => {
                let addr = self.expr(index)?;
                let a = self.arrays[array.as_str()];
                let slot = self.check(a, addr, *mem)?;
                let v = self.memories[a][slot];
                self.record(*mem, AccessKind::Read, slot, v);
                v
            }
            Expr::Bin { op, lhs, rhs, .. } => {
                let (a, b) = (self.expr(lhs)?, self.expr(rhs)?);
                op.eval(a, b).ok_or_else(|| {
                    debug_assert!(matches!(op, BinOp::Div | BinOp::Rem));
                    RefError::Trap(Trap::DivisionByZero)
                })?
            }
            Expr::Cmp { op, lhs, rhs, .. } => {
                let (a, b) = (self.expr(lhs)?, self.expr(rhs)?);
                op.eval(a, b) as i32
            }
        })
    }

    fn check(&self, a: usize, addr: i32, op: crate::ir::MemOpId) -> Result<usize, RefError> {
        let len = self.memories[a].len();
        if addr < 0 || addr as usize >= len {
            return Err(RefError::Trap(Trap::OutOfBounds {
                op,
                array: ArrayId(a as u32),
                addr: addr as i64,
                len: len as u32,
            }));
        }
        Ok(addr as usize)
    }

    fn record(&mut self, op: crate::ir::MemOpId, kind: AccessKind, addr: usize, data: i32) {
        self.trace.push(MemEvent {
            op,
            kind,
            addr: addr as u32,
            data,
            cycle: self.events,
        });
        self.events += 1;
    }
}
