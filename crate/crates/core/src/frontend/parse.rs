use std::collections::HashSet;

use thiserror::Error;

use super::ast::{Expr, KernelAst, Param, ParamKind, Span, Stmt};
use crate::ir::{BinOp, CmpOp, MemOpId};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl ParseError {
    fn at(span: Span, message: impl Into<String>) -> Self {
        ParseError {
            line: span.line,
            col: span.col,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Kernel,
    If,
    Else,
    Do,
    While,
    Return,
    I32,
    Punct(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Int(v) => format!("integer {v}"),
            Tok::Kernel => "'kernel'".into(),
            Tok::If => "'if'".into(),
            Tok::Else => "'else'".into(),
            Tok::Do => "'do'".into(),
            Tok::While => "'while'".into(),
            Tok::Return => "'return'".into(),
            Tok::I32 => "'i32'".into(),
            Tok::Punct(p) => format!("'{p}'"),
            Tok::Eof => "end of input".into(),
        }
    }
}

const PUNCT: [&str; 27] = [
    "<<", ">>", "==", "!=", "<=", ">=", "(", ")", "{", "}", "[", "]", ",", ";", ":", "=", "+", "-",
    "*", "/", "%", "&", "|", "^", "<", ">", "!",
];

fn lex(src: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let advance = |i: &mut usize, line: &mut u32, col: &mut u32, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
        } else if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                advance(&mut i, &mut line, &mut col, 1);
            }
            let word: String = chars[start..i].iter().collect();
            let tok = match word.as_str() {
                "kernel" => Tok::Kernel,
                "if" => Tok::If,
                "else" => Tok::Else,
                "do" => Tok::Do,
                "while" => Tok::While,
                "return" => Tok::Return,
                "i32" => Tok::I32,
                _ => Tok::Ident(word),
            };
            out.push((tok, span));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                advance(&mut i, &mut line, &mut col, 1);
            }
            let text: String = chars[start..i].iter().collect();
            let v: i64 = text
                .parse()
                .ok()
                .filter(|&v: &i64| v <= 1 << 31)
                .ok_or_else(|| {
                    ParseError::at(span, format!("integer literal {text} out of range"))
                })?;
            out.push((Tok::Int(v), span));
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            let p = PUNCT
                .iter()
                .find(|p| rest.starts_with(**p))
                .ok_or_else(|| ParseError::at(span, format!("unexpected character '{c}'")))?;
            advance(&mut i, &mut line, &mut col, p.len());
            out.push((Tok::Punct(p), span));
        }
    }
    out.push((Tok::Eof, Span { line, col }));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    scalars: HashSet<String>,
    arrays: HashSet<String>,
}

/// Parses one kernel. Identifiers must be parameters or scalars assigned
/// earlier in the text.
pub fn parse(src: &str) -> Result<KernelAst, ParseError> {
    let mut p = Parser {
        toks: lex(src)?,
        pos: 0,
        scalars: HashSet::new(),
        arrays: HashSet::new(),
    };
    let mut ast = p.kernel()?;
    ast.number_mem_ops();
    Ok(ast)
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, want: &str) -> ParseError {
        ParseError::at(
            self.span(),
            format!("expected {want}, found {}", self.peek().describe()),
        )
    }

    fn eat(&mut self, p: &str) -> bool {
        if matches!(self.peek(), Tok::Punct(q) if *q == p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> Result<Span, ParseError> {
        let span = self.span();
        if self.eat(p) {
            Ok(span)
        } else {
            Err(self.unexpected(&format!("'{p}'")))
        }
    }

    fn expect_tok(&mut self, t: Tok) -> Result<Span, ParseError> {
        if *self.peek() == t {
            Ok(self.bump().1)
        } else {
            Err(self.unexpected(&t.describe()))
        }
    }

    fn ident(&mut self) -> Result<(String, Span), ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let span = self.bump().1;
                Ok((s, span))
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn kernel(&mut self) -> Result<KernelAst, ParseError> {
        self.expect_tok(Tok::Kernel)?;
        let (name, _) = self.ident()?;
        self.expect("(")?;
        let mut params = Vec::new();
        if !self.eat(")") {
            loop {
                params.push(self.param()?);
                if self.eat(")") {
                    break;
                }
                self.expect(",")?;
            }
        }
        self.expect("{")?;
        let mut body = Vec::new();
        let mut result = None;
        while !self.eat("}") {
            if *self.peek() == Tok::Return {
                self.bump();
                result = Some(self.expr()?);
                self.expect(";")?;
                if !self.eat("}") {
                    return Err(ParseError::at(
                        self.span(),
                        "return must be the last statement",
                    ));
                }
                break;
            }
            body.push(self.stmt()?);
        }
        if *self.peek() != Tok::Eof {
            return Err(self.unexpected("end of input"));
        }
        Ok(KernelAst {
            name,
            params,
            body,
            result,
        })
    }

    fn param(&mut self) -> Result<Param, ParseError> {
        let (name, span) = self.ident()?;
        if self.scalars.contains(&name) || self.arrays.contains(&name) {
            return Err(ParseError::at(
                span,
                format!("duplicate parameter '{name}'"),
            ));
        }
        self.expect(":")?;
        self.expect_tok(Tok::I32)?;
        let kind = if self.eat("[") {
            let len_span = self.span();
            let neg = self.eat("-");
            let len = match self.bump().0 {
                Tok::Int(v) => {
                    if neg {
                        -v
                    } else {
                        v
                    }
                }
                _ => return Err(ParseError::at(len_span, "expected array length")),
            };
            if len <= 0 || len > u32::MAX as i64 {
                return Err(ParseError::at(
                    len_span,
                    format!("array length must be positive, found {len}"),
                ));
            }
            self.expect("]")?;
            self.arrays.insert(name.clone());
            ParamKind::Array { len: len as u32 }
        } else {
            self.scalars.insert(name.clone());
            ParamKind::Scalar
        };
        Ok(Param { name, kind, span })
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect("{")?;
        let mut out = Vec::new();
        while !self.eat("}") {
            if *self.peek() == Tok::Return {
                return Err(ParseError::at(
                    self.span(),
                    "return is only allowed at the end of the kernel",
                ));
            }
            out.push(self.stmt()?);
        }
        Ok(out)
    }

    fn stmt(&mut self) -> Result<Stmt, ParseError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::If => {
                self.bump();
                self.expect("(")?;
                let cond = self.expr()?;
                self.expect(")")?;
                let then_body = self.block()?;
                let else_body = if *self.peek() == Tok::Else {
                    self.bump();
                    if *self.peek() == Tok::If {
                        vec![self.stmt()?]
                    } else {
                        self.block()?
                    }
                } else {
                    Vec::new()
                };
                Ok(Stmt::If {
                    cond,
                    then_body,
                    else_body,
                    span,
                })
            }
            Tok::Do => {
                self.bump();
                let body = self.block()?;
                self.expect_tok(Tok::While)?;
                self.expect("(")?;
                let cond = self.expr()?;
                self.expect(")")?;
                self.expect(";")?;
                Ok(Stmt::DoWhile { body, cond, span })
            }
            Tok::While => {
                self.bump();
                self.expect("(")?;
                let cond = self.expr()?;
                self.expect(")")?;
                let body = self.block()?;
                Ok(Stmt::If {
                    cond: cond.clone(),
                    then_body: vec![Stmt::DoWhile { body, cond, span }],
                    else_body: Vec::new(),
                    span,
                })
            }
            Tok::Ident(name) => {
                self.bump();
                if self.eat("[") {
                    if !self.arrays.contains(&name) {
                        return Err(self.undeclared_array(&name, span));
                    }
                    let index = self.expr()?;
                    self.expect("]")?;
                    self.expect("=")?;
                    let value = self.expr()?;
                    self.expect(";")?;
                    Ok(Stmt::Store {
                        array: name,
                        index,
                        value,
                        mem: MemOpId(0),
                        span,
                    })
                } else {
                    if self.arrays.contains(&name) {
                        return Err(ParseError::at(
                            span,
                            format!("array '{name}' cannot be assigned as a whole"),
                        ));
                    }
                    self.expect("=")?;
                    let value = self.expr()?;
                    self.expect(";")?;
                    self.scalars.insert(name.clone());
                    Ok(Stmt::Assign { name, value, span })
                }
            }
            _ => Err(self.unexpected("statement")),
        }
    }

    fn undeclared_array(&self, name: &str, span: Span) -> ParseError {
        if self.scalars.contains(name) {
            ParseError::at(span, format!("'{name}' is a scalar and cannot be indexed"))
        } else {
            ParseError::at(span, format!("use of undeclared array '{name}'"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> Result<Expr, ParseError> {
        const LEVELS: [&[&str]; 6] = [
            &["|"],
            &["^"],
            &["&"],
            &["==", "!="],
            &["<", ">", "<=", ">="],
            &["<<", ">>"],
        ];
        if level == LEVELS.len() {
            return self.additive();
        }
        let mut lhs = self.binary(level + 1)?;
        loop {
            let span = self.span();
            let op = match self.peek() {
                Tok::Punct(p) if LEVELS[level].contains(p) => *p,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.binary(level + 1)?;
            lhs = make_binary(op, lhs, rhs, span);
        }
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let span = self.span();
            let op = match self.peek() {
                Tok::Punct(p) if *p == "+" || *p == "-" => *p,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = make_binary(op, lhs, rhs, span);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let span = self.span();
            let op = match self.peek() {
                Tok::Punct(p) if *p == "*" || *p == "/" || *p == "%" => *p,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = make_binary(op, lhs, rhs, span);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        if self.eat("-") {
            if let Tok::Int(v) = *self.peek() {
                self.bump();
                return Ok(Expr::Lit {
                    value: (-v) as i32,
                    span,
                });
            }
            let e = self.unary()?;
            return Ok(Expr::Bin {
                op: BinOp::Sub,
                lhs: Box::new(Expr::Lit { value: 0, span }),
                rhs: Box::new(e),
                span,
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                if v > i32::MAX as i64 {
                    return Err(ParseError::at(
                        span,
                        format!("integer literal {v} out of range"),
                    ));
                }
                Ok(Expr::Lit {
                    value: v as i32,
                    span,
                })
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if self.eat("[") {
                    if !self.arrays.contains(&name) {
                        return Err(self.undeclared_array(&name, span));
                    }
                    let index = self.expr()?;
                    self.expect("]")?;
                    Ok(Expr::Load {
                        array: name,
                        index: Box::new(index),
                        mem: MemOpId(0),
                        span,
                    })
                } else if self.scalars.contains(&name) {
                    Ok(Expr::Var { name, span })
                } else if self.arrays.contains(&name) {
                    Err(ParseError::at(
                        span,
                        format!("array '{name}' must be indexed"),
                    ))
                } else {
                    Err(ParseError::at(
                        span,
                        format!("use of undeclared identifier '{name}'"),
                    ))
                }
            }
            _ => Err(self.unexpected("expression")),
        }
    }
}

fn make_binary(op: &str, lhs: Expr, rhs: Expr, span: Span) -> Expr {
    let (lhs, rhs) = (Box::new(lhs), Box::new(rhs));
    let cmp = match op {
        "==" => Some(CmpOp::Eq),
        "!=" => Some(CmpOp::Ne),
        "<" => Some(CmpOp::Lt),
        ">" => Some(CmpOp::Gt),
        "<=" => Some(CmpOp::Le),
        ">=" => Some(CmpOp::Ge),
        _ => None,
    };
    if let Some(op) = cmp {
        return Expr::Cmp { op, lhs, rhs, span };
    }
    let op = match op {
        "+" => BinOp::Add,
        "-" => BinOp::Sub,
        "*" => BinOp::Mul,
        "/" => BinOp::Div,
        "%" => BinOp::Rem,
        "&" => BinOp::And,
        "|" => BinOp::Or,
        "^" => BinOp::Xor,
        "<<" => BinOp::Shl,
        ">>" => BinOp::Shr,
        _ => unreachable!("operator table and parser disagree"),
    };
    Expr::Bin { op, lhs, rhs, span }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivial_kernel() {
        let k = parse("kernel k(a:i32){ return a; }").unwrap();
        assert_eq!(k.name, "k");
        assert_eq!(k.params.len(), 1);
        assert_eq!(k.params[0].kind, ParamKind::Scalar);
        assert!(k.body.is_empty());
        assert!(matches!(k.result, Some(Expr::Var { .. })));
    }

    #[test]
    fn syntax_error_points_at_equals_sign() {
        let e = parse("kernel k(){ x = ; }").unwrap_err();
        assert_eq!((e.line, e.col), (1, 17));
        assert!(e.message.contains("expected expression"), "{e}");
    }

    #[test]
    fn undeclared_identifier() {
        let e = parse("kernel k(){ x = y; }").unwrap_err();
        assert!(e.message.contains("undeclared identifier 'y'"), "{e}");
        assert_eq!((e.line, e.col), (1, 17));
    }

    #[test]
    fn array_length_must_be_positive() {
        assert!(parse("kernel k(a:i32[0]){ }").is_err());
        assert!(parse("kernel k(a:i32[-3]){ }").is_err());
        assert!(parse("kernel k(a:i32[4]){ }").is_ok());
    }

    #[test]
    fn histogram_shape() {
        let src = "kernel histogram(f:i32[8], w:i32[8], hist:i32[4]) {
            i = 0;
            do {
                x = f[i];
                hist[x] = hist[x] + w[i];
                i = i + 1;
            } while (i < 8);
        }";
        let k = parse(src).unwrap();
        assert_eq!(k.body.len(), 2);
        assert!(matches!(k.body[1], Stmt::DoWhile { .. }));
        assert_eq!(k.mem_op_count(), 4);
    }

    #[test]
    fn while_desugars_to_guarded_do_while() {
        let k = parse("kernel k(n:i32){ i = 0; while (i < n) { i = i + 1; } return i; }").unwrap();
        match &k.body[1] {
            Stmt::If {
                then_body,
                else_body,
                ..
            } => {
                assert!(else_body.is_empty());
                assert!(matches!(then_body[0], Stmt::DoWhile { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mem_ops_numbered_in_evaluation_order() {
        let k = parse("kernel k(a:i32[4]){ a[a[0]] = a[1]; x = a[2]; }").unwrap();
        let Stmt::Store {
            index, value, mem, ..
        } = &k.body[0]
        else {
            panic!()
        };
        assert!(matches!(
            index,
            Expr::Load {
                mem: MemOpId(0),
                ..
            }
        ));
        assert!(matches!(
            value,
            Expr::Load {
                mem: MemOpId(1),
                ..
            }
        ));
        assert_eq!(*mem, MemOpId(2));
        let Stmt::Assign { value, .. } = &k.body[1] else {
            panic!()
        };
        assert!(matches!(
            value,
            Expr::Load {
                mem: MemOpId(3),
                ..
            }
        ));
    }

    #[test]
    fn precedence_follows_c() {
        let k = parse("kernel k(a:i32){ return a + 2 * 3 << 1 & 7; }").unwrap();
        let Some(Expr::Bin { op, .. }) = &k.result else {
            panic!()
        };
        assert_eq!(*op, BinOp::And);
    }

    #[test]
    fn return_must_be_last() {
        assert!(parse("kernel k(a:i32){ return a; x = 1; }").is_err());
    }
}
