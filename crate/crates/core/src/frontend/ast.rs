use std::fmt;

use crate::ir::{BinOp, CmpOp, MemOpId};

/// Source position (1-based). Positions never take part in AST equality, so
/// a pretty-printed and re-parsed kernel compares equal to the original.
#[derive(Clone, Copy, Debug, Default, Eq)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Span {
    fn eq(&self, _: &Span) -> bool {
        true
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Scalar,
    Array { len: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Lit {
        value: i32,
        span: Span,
    },
    Var {
        name: String,
        span: Span,
    },
    Load {
        array: String,
        index: Box<Expr>,
        mem: MemOpId,
        span: Span,
    },
    Bin {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        span: Span,
    },
    Cmp {
        op: CmpOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        span: Span,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stmt {
    Assign {
        name: String,
        value: Expr,
        span: Span,
    },
    Store {
        array: String,
        index: Expr,
        value: Expr,
        mem: MemOpId,
        span: Span,
    },
    If {
        cond: Expr,
        then_body: Vec<Stmt>,
        else_body: Vec<Stmt>,
        span: Span,
    },
    /// The only loop form; `while` is rewritten into `if` + `do`.
    DoWhile {
        body: Vec<Stmt>,
        cond: Expr,
        span: Span,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelAst {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub result: Option<Expr>,
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Lit { span, .. }
            | Expr::Var { span, .. }
            | Expr::Load { span, .. }
            | Expr::Bin { span, .. }
            | Expr::Cmp { span, .. } => *span,
        }
    }

    /// Visits sub-expressions in evaluation order (operands left to right,
    /// then the expression itself).
    pub fn visit_post(&self, f: &mut dyn FnMut(&Expr)) {
        match self {
            Expr::Lit { .. } | Expr::Var { .. } => {}
            Expr::Load { index, .. } => index.visit_post(f),
            Expr::Bin { lhs, rhs, .. } | Expr::Cmp { lhs, rhs, .. } => {
                lhs.visit_post(f);
                rhs.visit_post(f);
            }
        }
        f(self);
    }

    fn visit_post_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        match self {
            Expr::Lit { .. } | Expr::Var { .. } => {}
            Expr::Load { index, .. } => index.visit_post_mut(f),
            Expr::Bin { lhs, rhs, .. } | Expr::Cmp { lhs, rhs, .. } => {
                lhs.visit_post_mut(f);
                rhs.visit_post_mut(f);
            }
        }
        f(self);
    }

    pub fn collect_reads(&self, out: &mut Vec<String>) {
        self.visit_post(&mut |e| {
            if let Expr::Var { name, .. } = e {
                out.push(name.clone());
            }
        });
    }

    pub fn has_mem(&self) -> bool {
        let mut found = false;
        self.visit_post(&mut |e| found |= matches!(e, Expr::Load { .. }));
        found
    }
}

impl Stmt {
    /// Scalars read anywhere inside, including nested statements.
    pub fn collect_reads(&self, out: &mut Vec<String>) {
        match self {
            Stmt::Assign { value, .. } => value.collect_reads(out),
            Stmt::Store { index, value, .. } => {
                index.collect_reads(out);
                value.collect_reads(out);
            }
            Stmt::If {
                cond,
                then_body,
                else_body,
                ..
            } => {
                cond.collect_reads(out);
                then_body.iter().for_each(|s| s.collect_reads(out));
                else_body.iter().for_each(|s| s.collect_reads(out));
            }
            Stmt::DoWhile { body, cond, .. } => {
                body.iter().for_each(|s| s.collect_reads(out));
                cond.collect_reads(out);
            }
        }
    }

    /// Scalars assigned anywhere inside.
    pub fn collect_writes(&self, out: &mut Vec<String>) {
        match self {
            Stmt::Assign { name, .. } => out.push(name.clone()),
            Stmt::Store { .. } => {}
            Stmt::If {
                then_body,
                else_body,
                ..
            } => {
                then_body.iter().for_each(|s| s.collect_writes(out));
                else_body.iter().for_each(|s| s.collect_writes(out));
            }
            Stmt::DoWhile { body, .. } => body.iter().for_each(|s| s.collect_writes(out)),
        }
    }

    /// Whether any load or store occurs inside.
    pub fn has_mem(&self) -> bool {
        match self {
            Stmt::Assign { value, .. } => value.has_mem(),
            Stmt::Store { .. } => true,
            Stmt::If {
                cond,
                then_body,
                else_body,
                ..
            } => cond.has_mem() || then_body.iter().chain(else_body).any(Stmt::has_mem),
            Stmt::DoWhile { body, cond, .. } => cond.has_mem() || body.iter().any(Stmt::has_mem),
        }
    }

    pub fn has_loop(&self) -> bool {
        match self {
            Stmt::DoWhile { .. } => true,
            Stmt::If {
                then_body,
                else_body,
                ..
            } => then_body.iter().chain(else_body).any(Stmt::has_loop),
            _ => false,
        }
    }
}

impl KernelAst {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn scalar_params(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| p.kind == ParamKind::Scalar)
    }

    pub fn array_params(&self) -> impl Iterator<Item = (&Param, u32)> {
        self.params.iter().filter_map(|p| match p.kind {
            ParamKind::Array { len } => Some((p, len)),
            ParamKind::Scalar => None,
        })
    }

    /// Renumbers every load and store in evaluation order: for a store the
    /// index, then the value, then the store itself.
    pub fn number_mem_ops(&mut self) {
        let mut next = 0u32;
        let mut fresh = || {
            let id = MemOpId(next);
            next += 1;
            id
        };
        fn expr(e: &mut Expr, fresh: &mut dyn FnMut() -> MemOpId) {
            e.visit_post_mut(&mut |e| {
                if let Expr::Load { mem, .. } = e {
                    *mem = fresh();
                }
            });
        }
        fn stmts(list: &mut [Stmt], fresh: &mut dyn FnMut() -> MemOpId) {
            for s in list {
                match s {
                    Stmt::Assign { value, .. } => expr(value, fresh),
                    Stmt::Store {
                        index, value, mem, ..
                    } => {
                        expr(index, fresh);
                        expr(value, fresh);
                        *mem = fresh();
                    }
                    Stmt::If {
                        cond,
                        then_body,
                        else_body,
                        ..
                    } => {
                        expr(cond, fresh);
                        stmts(then_body, fresh);
                        stmts(else_body, fresh);
                    }
                    Stmt::DoWhile { body, cond, .. } => {
                        stmts(body, fresh);
                        expr(cond, fresh);
                    }
                }
            }
        }
        stmts(&mut self.body, &mut fresh);
        if let Some(r) = &mut self.result {
            expr(r, &mut fresh);
        }
    }

    /// Number of loads and stores.
    pub fn mem_op_count(&self) -> usize {
        let mut n = 0;
        let mut count_expr = |e: &Expr| {
            e.visit_post(&mut |x| n += matches!(x, Expr::Load { .. }) as usize);
        };
        fn walk(list: &[Stmt], f: &mut dyn FnMut(&Expr), stores: &mut usize) {
            for s in list {
                match s {
                    Stmt::Assign { value, .. } => f(value),
                    Stmt::Store { index, value, .. } => {
                        f(index);
                        f(value);
                        *stores += 1;
                    }
                    Stmt::If {
                        cond,
                        then_body,
                        else_body,
                        ..
                    } => {
                        f(cond);
                        walk(then_body, f, stores);
                        walk(else_body, f, stores);
                    }
                    Stmt::DoWhile { body, cond, .. } => {
                        walk(body, f, stores);
                        f(cond);
                    }
                }
            }
        }
        let mut stores = 0;
        walk(&self.body, &mut count_expr, &mut stores);
        if let Some(r) = &self.result {
            count_expr(r);
        }
        n + stores
    }
}
