use std::fmt::Write;

use super::ast::{Expr, KernelAst, ParamKind, Stmt};

/// Renders a kernel in source syntax. Binary operations are fully
/// parenthesized, so parsing the output gives back the same AST.
pub fn pretty(k: &KernelAst) -> String {
    let mut s = String::new();
    let params: Vec<String> = k
        .params
        .iter()
        .map(|p| match p.kind {
            ParamKind::Scalar => format!("{}: i32", p.name),
            ParamKind::Array { len } => format!("{}: i32[{len}]", p.name),
        })
        .collect();
    let _ = writeln!(s, "kernel {}({}) {{", k.name, params.join(", "));
    for st in &k.body {
        stmt(st, 1, &mut s);
    }
    if let Some(r) = &k.result {
        let _ = writeln!(s, "    return {};", expr(r));
    }
    s.push_str("}\n");
    s
}

pub fn expr(e: &Expr) -> String {
    match e {
        Expr::Lit { value, .. } => value.to_string(),
        Expr::Var { name, .. } => name.clone(),
        Expr::Load { array, index, .. } => format!("{array}[{}]", expr(index)),
        Expr::Bin { op, lhs, rhs, .. } => {
            format!("({} {} {})", expr(lhs), op.symbol(), expr(rhs))
        }
        Expr::Cmp { op, lhs, rhs, .. } => {
            format!("({} {} {})", expr(lhs), op.symbol(), expr(rhs))
        }
    }
}

fn stmt(st: &Stmt, depth: usize, s: &mut String) {
    let pad = "    ".repeat(depth);
    match st {
        Stmt::Assign { name, value, .. } => {
            let _ = writeln!(s, "{pad}{name} = {};", expr(value));
        }
        Stmt::Store {
            array,
            index,
            value,
            ..
        } => {
            let _ = writeln!(s, "{pad}{array}[{}] = {};", expr(index), expr(value));
        }
        Stmt::If {
            cond,
            then_body,
            else_body,
            ..
        } => {
            let _ = writeln!(s, "{pad}if ({}) {{", expr(cond));
            for t in then_body {
                stmt(t, depth + 1, s);
            }
            if else_body.is_empty() {
                let _ = writeln!(s, "{pad}}}");
            } else {
                let _ = writeln!(s, "{pad}}} else {{");
                for t in else_body {
                    stmt(t, depth + 1, s);
                }
                let _ = writeln!(s, "{pad}}}");
            }
        }
        Stmt::DoWhile { body, cond, .. } => {
            let _ = writeln!(s, "{pad}do {{");
            for t in body {
                stmt(t, depth + 1, s);
            }
            let _ = writeln!(s, "{pad}}} while ({});", expr(cond));
        }
    }
}
