//! Expression trees with prefix and infix serialization and checked evaluation.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Abs,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 7] = [
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Tan,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Abs,
        UnaryOp::Sqrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Abs => "abs",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == s)
    }

    /// Apply with domain checking; `None` marks a domain violation.
    pub fn apply(self, x: f64) -> Option<f64> {
        let y = match self {
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Tan => x.tan(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => {
                if x <= 0.0 {
                    return None;
                }
                x.ln()
            }
            UnaryOp::Abs => x.abs(),
            UnaryOp::Sqrt => {
                if x < 0.0 {
                    return None;
                }
                x.sqrt()
            }
        };
        y.is_finite().then_some(y)
    }
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 5] = [
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Pow,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "pow",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "+" | "add" => BinaryOp::Add,
            "-" | "sub" | "−" => BinaryOp::Sub,
            "*" | "×" | "mul" => BinaryOp::Mul,
            "/" | "÷" | "div" => BinaryOp::Div,
            "pow" | "^" => BinaryOp::Pow,
            _ => return None,
        })
    }

    pub fn apply(self, a: f64, b: f64) -> Option<f64> {
        let y = match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => {
                if b == 0.0 {
                    return None;
                }
                a / b
            }
            BinaryOp::Pow => {
                if a < 0.0 && b.fract() != 0.0 {
                    return None;
                }
                if a == 0.0 && b < 0.0 {
                    return None;
                }
                if b.fract() == 0.0 && b.abs() <= 16.0 {
                    a.powi(b as i32)
                } else {
                    a.powf(b)
                }
            }
        };
        y.is_finite().then_some(y)
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
            BinaryOp::Pow => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Self {
        Expr::Var(name.to_string())
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Self {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        Self::binary(BinaryOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        Self::binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Self {
        Self::binary(BinaryOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Self {
        Self::binary(BinaryOp::Div, a, b)
    }

    /// Node count.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.size(),
            Expr::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Free variable names in first-occurrence order.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Var(v) = e {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        });
        out
    }

    pub fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Unary(_, a) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }

    /// Constant values in prefix order.
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Const(c) = e {
                out.push(*c);
            }
        });
        out
    }

    pub fn num_constants(&self) -> usize {
        let mut k = 0;
        self.visit(&mut |e| {
            if matches!(e, Expr::Const(_)) {
                k += 1;
            }
        });
        k
    }

    /// Overwrite constants in prefix order.
    pub fn with_constants(&self, values: &[f64]) -> Expr {
        let mut it = values.iter().copied();
        let out = self.map_constants(&mut |c| it.next().unwrap_or(c));
        out
    }

    fn map_constants(&self, f: &mut impl FnMut(f64) -> f64) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(f(*c)),
            Expr::Var(v) => Expr::Var(v.clone()),
            Expr::Unary(op, a) => Expr::unary(*op, a.map_constants(f)),
            Expr::Binary(op, a, b) => {
                let a = a.map_constants(f);
                let b = b.map_constants(f);
                Expr::binary(*op, a, b)
            }
        }
    }

    pub fn rename(&self, map: &HashMap<String, String>) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => Expr::Var(map.get(v).cloned().unwrap_or_else(|| v.clone())),
            Expr::Unary(op, a) => Expr::unary(*op, a.rename(map)),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.rename(map), b.rename(map)),
        }
    }

    /// Fold constant subtrees. Subtrees whose evaluation violates the domain
    /// are left unfolded.
    pub fn fold_constants(&self) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Unary(op, a) => {
                let a = a.fold_constants();
                if let Expr::Const(x) = a {
                    if let Some(y) = op.apply(x) {
                        return Expr::Const(y);
                    }
                }
                Expr::unary(*op, a)
            }
            Expr::Binary(op, a, b) => {
                let a = a.fold_constants();
                let b = b.fold_constants();
                if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
                    if let Some(z) = op.apply(*x, *y) {
                        return Expr::Const(z);
                    }
                }
                Expr::binary(*op, a, b)
            }
        }
    }

    /// Evaluate with named bindings.
    pub fn eval(&self, bindings: &HashMap<String, f64>) -> Result<f64> {
        self.eval_with(&|name| bindings.get(name).copied())
    }

    pub fn eval_with(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64> {
        self.eval_at(lookup, &mut String::from("/"))
    }

    fn eval_at(&self, lookup: &dyn Fn(&str) -> Option<f64>, path: &mut String) -> Result<f64> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(v) => lookup(v).ok_or_else(|| Error::UnboundVariable(v.clone())),
            Expr::Unary(op, a) => {
                let len = path.len();
                path.push_str("0/");
                let x = a.eval_at(lookup, path)?;
                path.truncate(len);
                op.apply(x).ok_or_else(|| Error::Domain {
                    path: format!("{path} ({self})"),
                    msg: format!("{}({x}) undefined", op.name()),
                })
            }
            Expr::Binary(op, a, b) => {
                let len = path.len();
                path.push_str("0/");
                let x = a.eval_at(lookup, path)?;
                path.truncate(len);
                path.push_str("1/");
                let y = b.eval_at(lookup, path)?;
                path.truncate(len);
                op.apply(x, y).ok_or_else(|| Error::Domain {
                    path: format!("{path} ({self})"),
                    msg: format!("{} applied to ({x}, {y}) undefined", op.symbol()),
                })
            }
        }
    }

    /// Compile against an ordered variable list for batch evaluation.
    pub fn compile(&self, vars: &[&str]) -> Result<Program> {
        let mut code = Vec::with_capacity(self.size());
        self.emit(vars, &mut code)?;
        Ok(Program {
            code,
            source: self.clone(),
            vars: vars.iter().map(|s| s.to_string()).collect(),
        })
    }

    fn emit(&self, vars: &[&str], code: &mut Vec<Instr>) -> Result<()> {
        match self {
            Expr::Const(c) => code.push(Instr::Const(*c)),
            Expr::Var(v) => {
                let idx = vars
                    .iter()
                    .position(|n| n == v)
                    .ok_or_else(|| Error::UnboundVariable(v.clone()))?;
                code.push(Instr::Var(idx));
            }
            Expr::Unary(op, a) => {
                a.emit(vars, code)?;
                code.push(Instr::Unary(*op));
            }
            Expr::Binary(op, a, b) => {
                a.emit(vars, code)?;
                b.emit(vars, code)?;
                code.push(Instr::Binary(*op));
            }
        }
        Ok(())
    }

    // --- prefix ---

    pub fn to_prefix(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.size());
        self.push_prefix(&mut out);
        out
    }

    fn push_prefix(&self, out: &mut Vec<String>) {
        match self {
            Expr::Const(c) => out.push(format_const(*c)),
            Expr::Var(v) => out.push(v.clone()),
            Expr::Unary(op, a) => {
                out.push(op.name().to_string());
                a.push_prefix(out);
            }
            Expr::Binary(op, a, b) => {
                out.push(op.symbol().to_string());
                a.push_prefix(out);
                b.push_prefix(out);
            }
        }
    }

    pub fn parse_prefix<S: AsRef<str>>(tokens: &[S]) -> Result<Expr> {
        let mut pos = 0;
        let e = parse_prefix_at(tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::Arity {
                index: pos,
                msg: format!(
                    "{} trailing token(s) after a complete expression",
                    tokens.len() - pos
                ),
            });
        }
        Ok(e)
    }

    // --- infix ---

    pub fn parse_infix(s: &str) -> Result<Expr> {
        infix::parse(s)
    }

    pub fn to_infix(&self) -> String {
        self.to_string()
    }
}

fn format_const(c: f64) -> String {
    format!("{c}")
}

fn is_variable_token(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' => chars.all(|c| c.is_alphanumeric() || c == '_'),
        _ => false,
    }
}

fn parse_prefix_at<S: AsRef<str>>(tokens: &[S], pos: &mut usize) -> Result<Expr> {
    let idx = *pos;
    let Some(tok) = tokens.get(idx) else {
        return Err(Error::Arity {
            index: idx,
            msg: "expected an operand but the token list ended".into(),
        });
    };
    let tok = tok.as_ref();
    *pos += 1;
    if let Some(op) = BinaryOp::from_symbol(tok) {
        let a = parse_prefix_at(tokens, pos)?;
        let b = parse_prefix_at(tokens, pos)?;
        return Ok(Expr::binary(op, a, b));
    }
    if let Some(op) = UnaryOp::from_name(tok) {
        let a = parse_prefix_at(tokens, pos)?;
        return Ok(Expr::unary(op, a));
    }
    if let Ok(c) = tok.parse::<f64>() {
        return Ok(Expr::Const(c));
    }
    if is_variable_token(tok) {
        return Ok(Expr::Var(tok.to_string()));
    }
    Err(Error::Token {
        index: idx,
        token: tok.to_string(),
    })
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_infix(self, f, 0, false)
    }
}

fn write_infix(e: &Expr, f: &mut fmt::Formatter<'_>, parent_prec: u8, right: bool) -> fmt::Result {
    match e {
        Expr::Const(c) => {
            if *c < 0.0 || (c.is_sign_negative() && *c == 0.0) {
                if parent_prec > 0 || right {
                    write!(f, "({})", format_const(*c))
                } else {
                    write!(f, "{}", format_const(*c))
                }
            } else {
                write!(f, "{}", format_const(*c))
            }
        }
        Expr::Var(v) => write!(f, "{v}"),
        Expr::Unary(op, a) => {
            write!(f, "{}(", op.name())?;
            write_infix(a, f, 0, false)?;
            write!(f, ")")
        }
        Expr::Binary(op, a, b) => {
            let p = op.precedence();
            // Left-associative ops need parens on an equal-precedence right
            // child; pow is right-associative.
            let need = p < parent_prec || (p == parent_prec && (right != (*op == BinaryOp::Pow)));
            if need {
                write!(f, "(")?;
            }
            let sym = match op {
                BinaryOp::Pow => "^",
                other => other.symbol(),
            };
            if *op == BinaryOp::Pow {
                write_infix(a, f, p + 1, false)?;
                write!(f, "^")?;
                write_infix(b, f, p, true)?;
            } else {
                write_infix(a, f, p, false)?;
                write!(f, " {sym} ")?;
                write_infix(b, f, p, true)?;
            }
            if need {
                write!(f, ")")?;
            }
            Ok(())
        }
    }
}

#[derive(Clone, Debug)]
enum Instr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

/// Postfix program over indexed variables.
#[derive(Clone, Debug)]
pub struct Program {
    code: Vec<Instr>,
    source: Expr,
    vars: Vec<String>,
}

impl Program {
    pub fn expr(&self) -> &Expr {
        &self.source
    }

    /// Evaluate one point; `None` on any domain violation.
    pub fn eval_point(&self, x: &[f64], stack: &mut Vec<f64>) -> Option<f64> {
        stack.clear();
        for ins in &self.code {
            match ins {
                Instr::Const(c) => stack.push(*c),
                Instr::Var(i) => stack.push(x[*i]),
                Instr::Unary(op) => {
                    let a = stack.pop()?;
                    stack.push(op.apply(a)?);
                }
                Instr::Binary(op) => {
                    let b = stack.pop()?;
                    let a = stack.pop()?;
                    stack.push(op.apply(a, b)?);
                }
            }
        }
        stack.pop()
    }

    /// Evaluate row-major points (`rows.len() == n * vars`). Errors carry the
    /// offending subexpression.
    pub fn eval_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let m = self.vars.len().max(1);
        let n = if self.vars.is_empty() {
            rows.len().max(1)
        } else {
            rows.len() / m
        };
        let mut out = Vec::with_capacity(n);
        let mut stack = Vec::with_capacity(16);
        for k in 0..n {
            let x = if self.vars.is_empty() {
                &[][..]
            } else {
                &rows[k * m..(k + 1) * m]
            };
            match self.eval_point(x, &mut stack) {
                Some(y) => out.push(y),
                None => {
                    let vals: HashMap<String, f64> =
                        self.vars.iter().cloned().zip(x.iter().copied()).collect();
                    return Err(match self.source.eval(&vals) {
                        Err(e) => e,
                        Ok(_) => Error::Domain {
                            path: "/".into(),
                            msg: "evaluation failed".into(),
                        },
                    });
                }
            }
        }
        Ok(out)
    }

    /// Fast path used in search: `None` if any point is outside the domain.
    pub fn try_eval_rows(&self, rows: &[f64], n: usize, out: &mut Vec<f64>) -> Option<()> {
        let m = self.vars.len();
        out.clear();
        let mut stack = Vec::with_capacity(16);
        for k in 0..n {
            let x = &rows[k * m..(k + 1) * m];
            out.push(self.eval_point(x, &mut stack)?);
        }
        Some(())
    }
}

mod infix {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    enum Tok {
        Num(f64),
        Ident(String),
        Op(char),
        LParen,
        RParen,
        Comma,
    }

    fn lex(s: &str) -> Result<Vec<(usize, Tok)>> {
        let chars: Vec<char> = s.chars().collect();
        let mut i = 0;
        let mut out = Vec::new();
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            if c.is_ascii_digit()
                || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
            {
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let save = i;
                    i += 1;
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        i += 1;
                    }
                    if i < chars.len() && chars[i].is_ascii_digit() {
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    } else {
                        i = save;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v = text.parse::<f64>().map_err(|_| Error::Token {
                    index: start,
                    token: text.clone(),
                })?;
                out.push((start, Tok::Num(v)));
                continue;
            }
            if c.is_alphabetic() || c == '_' {
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(chars[start..i].iter().collect())));
                continue;
            }
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '×' => Tok::Op('*'),
                '÷' => Tok::Op('/'),
                '−' => Tok::Op('-'),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                _ => {
                    return Err(Error::Token {
                        index: i,
                        token: c.to_string(),
                    })
                }
            };
            out.push((i, tok));
            i += 1;
        }
        Ok(out)
    }

    struct Parser {
        toks: Vec<(usize, Tok)>,
        pos: usize,
        len: usize,
    }

    impl Parser {
        fn peek(&self) -> Option<&Tok> {
            self.toks.get(self.pos).map(|(_, t)| t)
        }

        fn offset(&self) -> usize {
            self.toks.get(self.pos).map_or(self.len, |(o, _)| *o)
        }

        fn err(&self, msg: &str) -> Error {
            Error::Arity {
                index: self.offset(),
                msg: msg.to_string(),
            }
        }

        fn expect(&mut self, t: Tok, what: &str) -> Result<()> {
            if self.peek() == Some(&t) {
                self.pos += 1;
                Ok(())
            } else {
                Err(self.err(&format!("expected {what}")))
            }
        }

        fn expr(&mut self) -> Result<Expr> {
            let mut lhs = self.term()?;
            while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
                self.pos += 1;
                let rhs = self.term()?;
                let op = if c == '+' {
                    BinaryOp::Add
                } else {
                    BinaryOp::Sub
                };
                lhs = Expr::binary(op, lhs, rhs);
            }
            Ok(lhs)
        }

        fn term(&mut self) -> Result<Expr> {
            let mut lhs = self.factor()?;
            while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek().cloned() {
                self.pos += 1;
                let rhs = self.factor()?;
                let op = if c == '*' {
                    BinaryOp::Mul
                } else {
                    BinaryOp::Div
                };
                lhs = Expr::binary(op, lhs, rhs);
            }
            Ok(lhs)
        }

        fn factor(&mut self) -> Result<Expr> {
            let base = self.unary()?;
            if let Some(Tok::Op('^')) = self.peek() {
                self.pos += 1;
                let exp = self.factor()?;
                return Ok(Expr::binary(BinaryOp::Pow, base, exp));
            }
            Ok(base)
        }

        fn unary(&mut self) -> Result<Expr> {
            if let Some(Tok::Op('-')) = self.peek() {
                self.pos += 1;
                let inner = self.unary()?;
                return Ok(match inner {
                    Expr::Const(c) => Expr::Const(-c),
                    other => Expr::mul(Expr::Const(-1.0), other),
                });
            }
            if let Some(Tok::Op('+')) = self.peek() {
                self.pos += 1;
                return self.unary();
            }
            self.primary()
        }

        fn primary(&mut self) -> Result<Expr> {
            match self.peek().cloned() {
                Some(Tok::Num(v)) => {
                    self.pos += 1;
                    Ok(Expr::Const(v))
                }
                Some(Tok::Ident(name)) => {
                    self.pos += 1;
                    if self.peek() == Some(&Tok::LParen) {
                        self.pos += 1;
                        let a = self.expr()?;
                        if name == "pow" {
                            self.expect(Tok::Comma, "',' in pow(a, b)")?;
                            let b = self.expr()?;
                            self.expect(Tok::RParen, "')'")?;
                            return Ok(Expr::binary(BinaryOp::Pow, a, b));
                        }
                        self.expect(Tok::RParen, "')'")?;
                        let op = UnaryOp::from_name(&name).ok_or_else(|| Error::Token {
                            index: self.offset(),
                            token: name.clone(),
                        })?;
                        Ok(Expr::unary(op, a))
                    } else {
                        Ok(Expr::Var(name))
                    }
                }
                Some(Tok::LParen) => {
                    self.pos += 1;
                    let e = self.expr()?;
                    self.expect(Tok::RParen, "')'")?;
                    Ok(e)
                }
                _ => Err(self.err("expected an operand")),
            }
        }
    }

    pub fn parse(s: &str) -> Result<Expr> {
        let toks = lex(s)?;
        let mut p = Parser {
            toks,
            pos: 0,
            len: s.chars().count(),
        };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }
}
