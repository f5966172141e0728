//! Equation expressions: the tree, a recursive-descent parser for the XMILE
//! equation syntax, and a few tree utilities (reference collection, constant
//! folding, printing).
//!
//! Operator precedence, tightest first: `^`, unary `-`/`+`/`NOT`, `*` `/`,
//! `+` `-`, comparisons, `AND`, `OR`. `^` is right-associative and its
//! exponent may carry its own sign, so `-x^2` is `-(x^2)` and `x^-2` is
//! `x^(-2)`.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ident::{normalize, VariableId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Eq => "=",
            BinaryOp::Ne => "<>",
            BinaryOp::And => "AND",
            BinaryOp::Or => "OR",
        }
    }

    pub fn apply(self, l: f64, r: f64) -> f64 {
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        match self {
            BinaryOp::Add => l + r,
            BinaryOp::Sub => l - r,
            BinaryOp::Mul => l * r,
            BinaryOp::Div => l / r,
            BinaryOp::Pow => libm::pow(l, r),
            BinaryOp::Lt => b(l < r),
            BinaryOp::Le => b(l <= r),
            BinaryOp::Gt => b(l > r),
            BinaryOp::Ge => b(l >= r),
            BinaryOp::Eq => b(l == r),
            BinaryOp::Ne => b(l != r),
            BinaryOp::And => b(l != 0.0 && r != 0.0),
            BinaryOp::Or => b(l != 0.0 || r != 0.0),
        }
    }
}

/// Supported builtin functions. `TIME` is not here: it has its own node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Abs,
    Min,
    Max,
    Exp,
    Ln,
    Log10,
    Sqrt,
    Sin,
    Cos,
    Int,
    SafeDiv,
    Step,
    Pulse,
    Ramp,
    Random,
    Delay1,
    Delay3,
    Smth1,
    Smth3,
    Dt,
    StartTime,
    StopTime,
}

impl Builtin {
    pub const ALL: [Builtin; 22] = [
        Builtin::Abs,
        Builtin::Min,
        Builtin::Max,
        Builtin::Exp,
        Builtin::Ln,
        Builtin::Log10,
        Builtin::Sqrt,
        Builtin::Sin,
        Builtin::Cos,
        Builtin::Int,
        Builtin::SafeDiv,
        Builtin::Step,
        Builtin::Pulse,
        Builtin::Ramp,
        Builtin::Random,
        Builtin::Delay1,
        Builtin::Delay3,
        Builtin::Smth1,
        Builtin::Smth3,
        Builtin::Dt,
        Builtin::StartTime,
        Builtin::StopTime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Abs => "ABS",
            Builtin::Min => "MIN",
            Builtin::Max => "MAX",
            Builtin::Exp => "EXP",
            Builtin::Ln => "LN",
            Builtin::Log10 => "LOG10",
            Builtin::Sqrt => "SQRT",
            Builtin::Sin => "SIN",
            Builtin::Cos => "COS",
            Builtin::Int => "INT",
            Builtin::SafeDiv => "SAFEDIV",
            Builtin::Step => "STEP",
            Builtin::Pulse => "PULSE",
            Builtin::Ramp => "RAMP",
            Builtin::Random => "RANDOM",
            Builtin::Delay1 => "DELAY1",
            Builtin::Delay3 => "DELAY3",
            Builtin::Smth1 => "SMTH1",
            Builtin::Smth3 => "SMTH3",
            Builtin::Dt => "DT",
            Builtin::StartTime => "STARTTIME",
            Builtin::StopTime => "STOPTIME",
        }
    }

    pub fn from_name(name: &str) -> Option<Builtin> {
        Builtin::ALL
            .iter()
            .copied()
            .find(|b| b.name().eq_ignore_ascii_case(name))
    }

    /// Inclusive (min, max) argument count.
    pub fn arity(self) -> (usize, usize) {
        match self {
            Builtin::Abs
            | Builtin::Exp
            | Builtin::Ln
            | Builtin::Log10
            | Builtin::Sqrt
            | Builtin::Sin
            | Builtin::Cos
            | Builtin::Int => (1, 1),
            Builtin::Min | Builtin::Max | Builtin::Step | Builtin::Random => (2, 2),
            Builtin::SafeDiv | Builtin::Pulse | Builtin::Ramp => (2, 3),
            Builtin::Delay1 | Builtin::Delay3 | Builtin::Smth1 | Builtin::Smth3 => (2, 3),
            Builtin::Dt | Builtin::StartTime | Builtin::StopTime => (0, 0),
        }
    }

    /// First-order delay/smooth cascades. Their output is internal state, so
    /// arguments do not create instantaneous dependencies.
    pub fn is_delay(self) -> bool {
        matches!(
            self,
            Builtin::Delay1 | Builtin::Delay3 | Builtin::Smth1 | Builtin::Smth3
        )
    }

    /// Builtins whose value does not depend on time or on hidden state.
    pub fn is_pure(self) -> bool {
        !matches!(
            self,
            Builtin::Step
                | Builtin::Pulse
                | Builtin::Ramp
                | Builtin::Random
                | Builtin::Delay1
                | Builtin::Delay3
                | Builtin::Smth1
                | Builtin::Smth3
                | Builtin::Dt
                | Builtin::StartTime
                | Builtin::StopTime
        )
    }

    /// Applies a pure builtin to evaluated arguments.
    pub(crate) fn apply_pure(self, args: &[f64]) -> f64 {
        match self {
            Builtin::Abs => libm::fabs(args[0]),
            Builtin::Min => libm::fmin(args[0], args[1]),
            Builtin::Max => libm::fmax(args[0], args[1]),
            Builtin::Exp => libm::exp(args[0]),
            Builtin::Ln => libm::log(args[0]),
            Builtin::Log10 => libm::log10(args[0]),
            Builtin::Sqrt => libm::sqrt(args[0]),
            Builtin::Sin => libm::sin(args[0]),
            Builtin::Cos => libm::cos(args[0]),
            Builtin::Int => libm::trunc(args[0]),
            Builtin::SafeDiv => {
                if args[1] == 0.0 {
                    args.get(2).copied().unwrap_or(0.0)
                } else {
                    args[0] / args[1]
                }
            }
            _ => unreachable!("{} is not a pure builtin", self.name()),
        }
    }
}

/// Words that cannot name a model variable.
pub fn is_reserved(normalized: &str) -> bool {
    matches!(
        normalized,
        "time" | "if" | "then" | "else" | "and" | "or" | "not"
    ) || Builtin::from_name(normalized).is_some()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Num(f64),
    Var(VariableId),
    Time,
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(Builtin, Vec<Expr>),
    /// Graphical function applied to an argument.
    Lookup(VariableId, Box<Expr>),
}

impl Expr {
    /// Variables read by this expression. With `instantaneous_only`, the
    /// arguments of delay/smooth builtins are skipped.
    pub fn references(&self, instantaneous_only: bool) -> BTreeSet<VariableId> {
        let mut out = BTreeSet::new();
        self.collect_refs(instantaneous_only, &mut out);
        out
    }

    fn collect_refs(&self, instantaneous_only: bool, out: &mut BTreeSet<VariableId>) {
        match self {
            Expr::Num(_) | Expr::Time => {}
            Expr::Var(id) => {
                out.insert(id.clone());
            }
            Expr::Unary(_, e) | Expr::Lookup(_, e) => e.collect_refs(instantaneous_only, out),
            Expr::Binary(_, l, r) => {
                l.collect_refs(instantaneous_only, out);
                r.collect_refs(instantaneous_only, out);
            }
            Expr::If(c, a, b) => {
                c.collect_refs(instantaneous_only, out);
                a.collect_refs(instantaneous_only, out);
                b.collect_refs(instantaneous_only, out);
            }
            Expr::Call(b, args) => {
                if instantaneous_only && b.is_delay() {
                    return;
                }
                for a in args {
                    a.collect_refs(instantaneous_only, out);
                }
            }
        }
    }

    /// Calls `f` on every node, parents before children.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Num(_) | Expr::Time | Expr::Var(_) => {}
            Expr::Unary(_, e) | Expr::Lookup(_, e) => e.walk(f),
            Expr::Binary(_, l, r) => {
                l.walk(f);
                r.walk(f);
            }
            Expr::If(c, a, b) => {
                c.walk(f);
                a.walk(f);
                b.walk(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.walk(f)),
        }
    }

    pub fn mentions_time(&self) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if matches!(e, Expr::Time) || matches!(e, Expr::Call(b, _) if !b.is_pure()) {
                found = true;
            }
        });
        found
    }

    /// Evaluates the expression if it uses only literals, operators and pure
    /// builtins.
    pub fn fold_constant(&self) -> Option<f64> {
        match self {
            Expr::Num(v) => Some(*v),
            Expr::Var(_) | Expr::Time | Expr::Lookup(..) => None,
            Expr::Unary(UnaryOp::Neg, e) => e.fold_constant().map(|v| -v),
            Expr::Unary(UnaryOp::Not, e) => {
                e.fold_constant().map(|v| if v == 0.0 { 1.0 } else { 0.0 })
            }
            Expr::Binary(op, l, r) => Some(op.apply(l.fold_constant()?, r.fold_constant()?)),
            Expr::If(c, a, b) => {
                if c.fold_constant()? != 0.0 {
                    a.fold_constant()
                } else {
                    b.fold_constant()
                }
            }
            Expr::Call(b, args) if b.is_pure() => {
                let vals = args
                    .iter()
                    .map(Expr::fold_constant)
                    .collect::<Option<Vec<_>>>()?;
                Some(b.apply_pure(&vals))
            }
            Expr::Call(..) => None,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(id) => write!(f, "{id}"),
            Expr::Time => f.write_str("TIME"),
            Expr::Unary(UnaryOp::Neg, e) => write!(f, "-({e})"),
            Expr::Unary(UnaryOp::Not, e) => write!(f, "NOT ({e})"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::If(c, a, b) => write!(f, "(IF {c} THEN {a} ELSE {b})"),
            Expr::Call(b, args) => {
                write!(f, "{}(", b.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Lookup(t, e) => write!(f, "{t}({e})"),
        }
    }
}

/// Error inside an equation string; `pos` is a character offset.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{message} (at offset {pos})")]
pub struct ExprError {
    pub pos: usize,
    pub code: &'static str,
    pub message: String,
}

impl ExprError {
    fn new(pos: usize, code: &'static str, message: impl Into<String>) -> Self {
        ExprError {
            pos,
            code,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Quoted(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
    End,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| ExprError::new(start, "syntax", alloc::format!("bad number `{s}`")))?;
            toks.push((Tok::Num(v), start));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            while i < chars.len()
                && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$')
            {
                i += 1;
            }
            toks.push((Tok::Ident(chars[start..i].iter().collect()), start));
            continue;
        }
        if c == '"' {
            i += 1;
            while i < chars.len() && chars[i] != '"' {
                i += 1;
            }
            if i >= chars.len() {
                return Err(ExprError::new(start, "syntax", "unterminated quoted name"));
            }
            toks.push((Tok::Quoted(chars[start + 1..i].iter().collect()), start));
            i += 1;
            continue;
        }
        let two: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let op2 = match two.as_str() {
            "<=" => Some("<="),
            ">=" => Some(">="),
            "<>" | "!=" => Some("<>"),
            "==" => Some("="),
            _ => None,
        };
        if let Some(op) = op2 {
            toks.push((Tok::Op(op), start));
            i += 2;
            continue;
        }
        let tok = match c {
            '+' => Tok::Op("+"),
            '-' => Tok::Op("-"),
            '*' => Tok::Op("*"),
            '/' => Tok::Op("/"),
            '^' => Tok::Op("^"),
            '<' => Tok::Op("<"),
            '>' => Tok::Op(">"),
            '=' => Tok::Op("="),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            '[' => {
                return Err(ExprError::new(
                    start,
                    "unsupported_arrays",
                    "array subscripts are not supported",
                ))
            }
            other => {
                return Err(ExprError::new(
                    start,
                    "syntax",
                    alloc::format!("unexpected character `{other}`"),
                ))
            }
        };
        toks.push((tok, start));
        i += 1;
    }
    toks.push((Tok::End, chars.len()));
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn op(&self, op: &str) -> bool {
        matches!(self.peek(), Tok::Op(o) if *o == op)
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ExprError> {
        if self.keyword(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&alloc::format!("`{kw}`")))
        }
    }

    fn unexpected(&self, wanted: &str) -> ExprError {
        let found = match self.peek() {
            Tok::End => "end of equation".to_string(),
            Tok::Num(v) => alloc::format!("number {v}"),
            Tok::Ident(s) | Tok::Quoted(s) => alloc::format!("`{s}`"),
            Tok::Op(o) => alloc::format!("`{o}`"),
            Tok::LParen => "`(`".to_string(),
            Tok::RParen => "`)`".to_string(),
            Tok::Comma => "`,`".to_string(),
        };
        ExprError::new(
            self.pos(),
            "syntax",
            alloc::format!("expected {wanted}, found {found}"),
        )
    }

    fn or(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.and()?;
        while self.keyword("or") {
            self.bump();
            let rhs = self.and()?;
            lhs = Expr::Binary(BinaryOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.cmp()?;
        while self.keyword("and") {
            self.bump();
            let rhs = self.cmp()?;
            lhs = Expr::Binary(BinaryOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.add()?;
        loop {
            let op = match self.peek() {
                Tok::Op("<") => BinaryOp::Lt,
                Tok::Op("<=") => BinaryOp::Le,
                Tok::Op(">") => BinaryOp::Gt,
                Tok::Op(">=") => BinaryOp::Ge,
                Tok::Op("=") => BinaryOp::Eq,
                Tok::Op("<>") => BinaryOp::Ne,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.add()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn add(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.mul()?;
        loop {
            let op = if self.op("+") {
                BinaryOp::Add
            } else if self.op("-") {
                BinaryOp::Sub
            } else {
                return Ok(lhs);
            };
            self.bump();
            let rhs = self.mul()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn mul(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.op("*") {
                BinaryOp::Mul
            } else if self.op("/") {
                BinaryOp::Div
            } else {
                return Ok(lhs);
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.op("-") {
            self.bump();
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.unary()?)));
        }
        if self.op("+") {
            self.bump();
            return self.unary();
        }
        if self.keyword("not") {
            self.bump();
            return Ok(Expr::Unary(UnaryOp::Not, Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.op("^") {
            self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.or()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.bump();
                Ok(e)
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("if") => {
                self.bump();
                let c = self.or()?;
                self.expect_keyword("then")?;
                let a = self.or()?;
                self.expect_keyword("else")?;
                let b = self.or()?;
                Ok(Expr::If(Box::new(c), Box::new(a), Box::new(b)))
            }
            Tok::Ident(s) if is_keyword(&s) => Err(self.unexpected("an operand")),
            Tok::Ident(name) | Tok::Quoted(name) => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let args = self.args()?;
                    self.call(&name, args, pos)
                } else {
                    self.bare_name(&name, pos)
                }
            }
            _ => Err(self.unexpected("an operand")),
        }
    }

    fn args(&mut self) -> Result<Vec<Expr>, ExprError> {
        let mut args = Vec::new();
        if *self.peek() == Tok::RParen {
            self.bump();
            return Ok(args);
        }
        loop {
            args.push(self.or()?);
            match self.bump() {
                Tok::Comma => continue,
                Tok::RParen => return Ok(args),
                _ => {
                    self.at -= 1;
                    return Err(self.unexpected("`,` or `)`"));
                }
            }
        }
    }

    fn bare_name(&self, name: &str, pos: usize) -> Result<Expr, ExprError> {
        let id = normalize(name);
        if id == "time" {
            return Ok(Expr::Time);
        }
        match Builtin::from_name(&id) {
            Some(b) if b.arity() == (0, 0) => Ok(Expr::Call(b, Vec::new())),
            Some(b) => Err(ExprError::new(
                pos,
                "syntax",
                alloc::format!("builtin {} needs arguments", b.name()),
            )),
            None => VariableId::new(&id)
                .map(Expr::Var)
                .ok_or_else(|| ExprError::new(pos, "syntax", "empty name")),
        }
    }

    fn call(&self, name: &str, args: Vec<Expr>, pos: usize) -> Result<Expr, ExprError> {
        let id = normalize(name);
        if id == "time" && args.is_empty() {
            return Ok(Expr::Time);
        }
        if let Some(b) = Builtin::from_name(&id) {
            let (lo, hi) = b.arity();
            if args.len() < lo || args.len() > hi {
                return Err(ExprError::new(
                    pos,
                    "arity",
                    alloc::format!(
                        "{} takes {} argument(s), got {}",
                        b.name(),
                        if lo == hi {
                            alloc::format!("{lo}")
                        } else {
                            alloc::format!("{lo} to {hi}")
                        },
                        args.len()
                    ),
                ));
            }
            return Ok(Expr::Call(b, args));
        }
        // Anything else called like a function must be a graphical function.
        if args.len() != 1 {
            return Err(ExprError::new(
                pos,
                "unknown_builtin",
                alloc::format!("unknown function `{name}`"),
            ));
        }
        let table = VariableId::new(&id)
            .ok_or_else(|| ExprError::new(pos, "syntax", "empty function name"))?;
        let arg = args.into_iter().next().expect("one argument");
        Ok(Expr::Lookup(table, Box::new(arg)))
    }
}

fn is_keyword(s: &str) -> bool {
    ["then", "else", "and", "or"]
        .iter()
        .any(|k| s.eq_ignore_ascii_case(k))
}

/// Parses one equation.
pub fn parse_expression(text: &str) -> Result<Expr, ExprError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0 };
    let e = p.or()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected("end of equation"));
    }
    Ok(e)
}
