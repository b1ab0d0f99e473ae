//! Arithmetic expression language for game definition files.
//!
//! Grammar (EBNF, whitespace insignificant):
//!
//! ```text
//! expr       = additive [ cmp_op additive ] ;
//! cmp_op     = "<" | "<=" | ">" | ">=" | "==" ;
//! additive   = term { ("+" | "-") term } ;
//! term       = unary { ("*" | "/") unary } ;
//! unary      = "-" unary | power ;
//! power      = primary [ "^" ( "-" unary | power ) ] ;
//! primary    = number | ident | call | "(" expr ")" ;
//! call       = func "(" expr { "," expr } ")" ;
//! func       = "min" | "max" | "abs" | "sqrt" | "pow" | "if" ;
//! number     = digits [ "." digits ] [ ("e" | "E") ["+" | "-"] digits ] ;
//! ident      = "a" | "a" digits | "b" digits | "bsum" | "bsum_others"
//!            | "b_self" | parameter-name ;
//! ```
//!
//! `^` binds tighter than unary minus, so `-a^2` is `-(a^2)`. Comparisons
//! evaluate to 1 or 0; `if(c, x, y)` evaluates only the selected branch.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl ParseError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        ParseError {
            offset,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
    Abs,
    Sqrt,
    Pow,
    If,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "min" => Func::Min,
            "max" => Func::Max,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "pow" => Func::Pow,
            "if" => Func::If,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Pow => "pow",
            Func::If => "if",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Abs | Func::Sqrt => 1,
            Func::Min | Func::Max | Func::Pow => 2,
            Func::If => 3,
        }
    }
}

/// Expression tree. Identifiers stay symbolic until [`Expr::compile`].
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// What identifiers a parse accepts.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    /// Named constants substituted as literals.
    pub params: BTreeMap<String, f64>,
    /// Principal count; `b<k>` must satisfy `1 <= k <= n` when set.
    pub n: Option<usize>,
    /// Action dimension; `a<k>` must satisfy `1 <= k <= dim` when set.
    pub action_dim: Option<usize>,
    /// Allows `bsum_others` and `b_self`.
    pub principal_template: bool,
}

impl Scope {
    /// Unrestricted scope: any member of the variable family is accepted.
    pub fn open() -> Self {
        Scope {
            principal_template: true,
            ..Scope::default()
        }
    }
}

fn indexed(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|c| c.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

fn check_ident(name: &str, scope: &Scope) -> Result<(), String> {
    match name {
        "a" | "bsum" => return Ok(()),
        "bsum_others" | "b_self" => {
            return if scope.principal_template {
                Ok(())
            } else {
                Err(format!("`{name}` is only valid in principal utilities"))
            }
        }
        _ => {}
    }
    if let Some(k) = indexed(name, 'a') {
        return match scope.action_dim {
            Some(d) if k == 0 || k > d => Err(format!("action component `{name}` out of range 1..={d}")),
            _ if k == 0 => Err(format!("action component `{name}` out of range")),
            _ => Ok(()),
        };
    }
    if let Some(k) = indexed(name, 'b') {
        return match scope.n {
            Some(n) if k == 0 || k > n => Err(format!("bid `{name}` out of range 1..={n}")),
            _ if k == 0 => Err(format!("bid `{name}` out of range")),
            _ => Ok(()),
        };
    }
    Err(format!("unknown identifier `{name}`"))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| ParseError::new(start, format!("bad number `{text}`")))?;
            out.push((Tok::Num(v), start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
            continue;
        }
        let two = if i + 1 < bytes.len() { &src[i..i + 2] } else { "" };
        let tok = match two {
            "<=" => Some(Tok::Op("<=")),
            ">=" => Some(Tok::Op(">=")),
            "==" => Some(Tok::Op("==")),
            _ => None,
        };
        if let Some(t) = tok {
            out.push((t, start));
            i += 2;
            continue;
        }
        let tok = match c {
            b'+' => Tok::Op("+"),
            b'-' => Tok::Op("-"),
            b'*' => Tok::Op("*"),
            b'/' => Tok::Op("/"),
            b'^' => Tok::Op("^"),
            b'<' => Tok::Op("<"),
            b'>' => Tok::Op(">"),
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError::new(start, format!("unexpected character `{ch}`")));
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser<'s> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    scope: &'s Scope,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_op(&self, op: &str) -> bool {
        matches!(self.peek(), Tok::Op(o) if *o == op)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            Tok::Op("<") => CmpOp::Lt,
            Tok::Op("<=") => CmpOp::Le,
            Tok::Op(">") => CmpOp::Gt,
            Tok::Op(">=") => CmpOp::Ge,
            Tok::Op("==") => CmpOp::Eq,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.additive()?;
        Ok(Expr::Cmp(op, Box::new(lhs), Box::new(rhs)))
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.is_op("+") {
                BinOp::Add
            } else if self.is_op("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.is_op("*") {
                BinOp::Mul
            } else if self.is_op("/") {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.is_op("-") {
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.is_op("^") {
            self.bump();
            let exp = if self.is_op("-") {
                self.unary()?
            } else {
                self.power()?
            };
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let (tok, off) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if matches!(self.peek(), Tok::LParen) {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| ParseError::new(off, format!("unknown function `{name}`")))?;
                    self.bump();
                    let mut args = vec![self.expr()?];
                    while matches!(self.peek(), Tok::Comma) {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    self.expect_rparen()?;
                    if args.len() != func.arity() {
                        return Err(ParseError::new(
                            off,
                            format!("`{name}` takes {} argument(s), got {}", func.arity(), args.len()),
                        ));
                    }
                    return Ok(Expr::Call(func, args));
                }
                if let Some(&v) = self.scope.params.get(&name) {
                    return Ok(Expr::Num(v));
                }
                check_ident(&name, self.scope).map_err(|m| ParseError::new(off, m))?;
                Ok(Expr::Var(name))
            }
            Tok::End => Err(ParseError::new(off, "unexpected end of input")),
            Tok::RParen => Err(ParseError::new(off, "unbalanced `)`")),
            Tok::Comma => Err(ParseError::new(off, "unexpected `,`")),
            Tok::Op(o) => Err(ParseError::new(off, format!("unexpected operator `{o}`"))),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Tok::RParen => {
                self.bump();
                Ok(())
            }
            _ => Err(ParseError::new(self.offset(), "expected `)`")),
        }
    }
}

/// Parses with the open scope (any variable-family identifier, no parameters).
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    parse_with(src, &Scope::open())
}

pub fn parse_with(src: &str, scope: &Scope) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, scope };
    let e = p.expr()?;
    match p.peek() {
        Tok::End => Ok(e),
        Tok::RParen => Err(ParseError::new(p.offset(), "unbalanced `)`")),
        _ => Err(ParseError::new(p.offset(), "unexpected trailing input")),
    }
}

pub type Bindings = HashMap<String, f64>;

fn apply_bin(op: BinOp, l: f64, r: f64) -> Result<f64, EvalError> {
    Ok(match op {
        BinOp::Add => l + r,
        BinOp::Sub => l - r,
        BinOp::Mul => l * r,
        BinOp::Div => {
            if r == 0.0 {
                return Err(EvalError::Domain(format!("division by zero ({l} / 0)")));
            }
            l / r
        }
        BinOp::Pow => pow_checked(l, r)?,
    })
}

fn pow_checked(l: f64, r: f64) -> Result<f64, EvalError> {
    let v = l.powf(r);
    if v.is_nan() && !l.is_nan() && !r.is_nan() {
        return Err(EvalError::Domain(format!("pow({l}, {r}) undefined")));
    }
    if l == 0.0 && r < 0.0 {
        return Err(EvalError::Domain(format!("pow(0, {r}) undefined")));
    }
    Ok(v)
}

fn apply_cmp(op: CmpOp, l: f64, r: f64) -> f64 {
    let t = match op {
        CmpOp::Lt => l < r,
        CmpOp::Le => l <= r,
        CmpOp::Gt => l > r,
        CmpOp::Ge => l >= r,
        CmpOp::Eq => l == r,
    };
    if t {
        1.0
    } else {
        0.0
    }
}

fn apply_unary(func: Func, x: f64) -> Result<f64, EvalError> {
    match func {
        Func::Abs => Ok(x.abs()),
        Func::Sqrt => {
            if x < 0.0 {
                Err(EvalError::Domain(format!("sqrt of negative value {x}")))
            } else {
                Ok(x.sqrt())
            }
        }
        _ => unreachable!("not a unary function"),
    }
}

impl Expr {
    /// Evaluates against named bindings. `bsum`, when not bound explicitly,
    /// is the sum of every bound `b<k>`.
    pub fn eval(&self, bindings: &Bindings) -> Result<f64, EvalError> {
        self.eval_generic(&mut |name: &str| {
            if let Some(v) = bindings.get(name) {
                return Ok(*v);
            }
            if name == "bsum" {
                let mut bids: Vec<(usize, f64)> = bindings
                    .iter()
                    .filter_map(|(k, v)| indexed(k, 'b').map(|i| (i, *v)))
                    .collect();
                bids.sort_by_key(|(i, _)| *i);
                return Ok(bids.iter().map(|(_, v)| v).sum());
            }
            if name == "a" {
                if let Some(v) = bindings.get("a1") {
                    return Ok(*v);
                }
            }
            Err(EvalError::Unbound(name.to_string()))
        })
    }

    fn eval_generic(&self, lookup: &mut dyn FnMut(&str) -> Result<f64, EvalError>) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(name) => lookup(name),
            Expr::Neg(e) => Ok(-e.eval_generic(lookup)?),
            Expr::Bin(op, l, r) => {
                let l = l.eval_generic(lookup)?;
                let r = r.eval_generic(lookup)?;
                apply_bin(*op, l, r)
            }
            Expr::Cmp(op, l, r) => {
                let l = l.eval_generic(lookup)?;
                let r = r.eval_generic(lookup)?;
                Ok(apply_cmp(*op, l, r))
            }
            Expr::Call(func, args) => match func {
                Func::If => {
                    if args[0].eval_generic(lookup)? != 0.0 {
                        args[1].eval_generic(lookup)
                    } else {
                        args[2].eval_generic(lookup)
                    }
                }
                Func::Min => Ok(args[0].eval_generic(lookup)?.min(args[1].eval_generic(lookup)?)),
                Func::Max => Ok(args[0].eval_generic(lookup)?.max(args[1].eval_generic(lookup)?)),
                Func::Pow => pow_checked(args[0].eval_generic(lookup)?, args[1].eval_generic(lookup)?),
                Func::Abs | Func::Sqrt => apply_unary(*func, args[0].eval_generic(lookup)?),
            },
        }
    }

    /// Number of leaf nodes (literals and variables).
    pub fn leaf_count(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(_) => 1,
            Expr::Neg(e) => e.leaf_count(),
            Expr::Bin(_, l, r) | Expr::Cmp(_, l, r) => l.leaf_count() + r.leaf_count(),
            Expr::Call(_, args) => args.iter().map(Expr::leaf_count).sum(),
        }
    }

    /// Resolves identifiers to argument slots for fast repeated evaluation.
    pub fn compile(&self, layout: &Layout) -> Result<Compiled, ParseError> {
        Ok(Compiled {
            root: self.lower(layout)?,
        })
    }

    fn lower(&self, layout: &Layout) -> Result<Node, ParseError> {
        Ok(match self {
            Expr::Num(v) => Node::Num(*v),
            Expr::Var(name) => Node::Slot(layout.resolve(name).map_err(|m| ParseError::new(0, m))?),
            Expr::Neg(e) => Node::Neg(Box::new(e.lower(layout)?)),
            Expr::Bin(op, l, r) => Node::Bin(*op, Box::new(l.lower(layout)?), Box::new(r.lower(layout)?)),
            Expr::Cmp(op, l, r) => Node::Cmp(*op, Box::new(l.lower(layout)?), Box::new(r.lower(layout)?)),
            Expr::Call(f, args) => Node::Call(
                *f,
                args.iter().map(|a| a.lower(layout)).collect::<Result<Vec<_>, _>>()?,
            ),
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Var(name) => f.write_str(name),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, l, r) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({l} {s} {r})")
            }
            Expr::Cmp(op, l, r) => {
                let s = match op {
                    CmpOp::Lt => "<",
                    CmpOp::Le => "<=",
                    CmpOp::Gt => ">",
                    CmpOp::Ge => ">=",
                    CmpOp::Eq => "==",
                };
                write!(f, "({l} {s} {r})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Argument layout for compiled evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub action_dim: usize,
    pub n: usize,
    /// Principal whose template this is (0-based), if any.
    pub principal: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Action(usize),
    Bid(usize),
    BidSum,
    BidSumOthers(usize),
    BidSelf(usize),
}

impl Layout {
    fn resolve(&self, name: &str) -> Result<Slot, String> {
        match name {
            "a" => return Ok(Slot::Action(0)),
            "bsum" => return Ok(Slot::BidSum),
            "bsum_others" => {
                return self
                    .principal
                    .map(Slot::BidSumOthers)
                    .ok_or_else(|| "`bsum_others` outside a principal utility".into())
            }
            "b_self" => {
                return self
                    .principal
                    .map(Slot::BidSelf)
                    .ok_or_else(|| "`b_self` outside a principal utility".into())
            }
            _ => {}
        }
        if let Some(k) = indexed(name, 'a') {
            if k >= 1 && k <= self.action_dim {
                return Ok(Slot::Action(k - 1));
            }
            return Err(format!("action component `{name}` out of range 1..={}", self.action_dim));
        }
        if let Some(k) = indexed(name, 'b') {
            if k >= 1 && k <= self.n {
                return Ok(Slot::Bid(k - 1));
            }
            return Err(format!("bid `{name}` out of range 1..={}", self.n));
        }
        Err(format!("unknown identifier `{name}`"))
    }
}

#[derive(Debug, Clone)]
enum Node {
    Num(f64),
    Slot(Slot),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Cmp(CmpOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// An expression with identifiers resolved against a [`Layout`].
#[derive(Debug, Clone)]
pub struct Compiled {
    root: Node,
}

impl Compiled {
    pub fn eval(&self, action: &[f64], bids: &[f64]) -> Result<f64, EvalError> {
        eval_node(&self.root, action, bids)
    }
}

fn eval_node(node: &Node, action: &[f64], bids: &[f64]) -> Result<f64, EvalError> {
    match node {
        Node::Num(v) => Ok(*v),
        Node::Slot(s) => Ok(match *s {
            Slot::Action(k) => action[k],
            Slot::Bid(k) => bids[k],
            Slot::BidSum => bids.iter().sum(),
            Slot::BidSumOthers(i) => bids.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| b).sum(),
            Slot::BidSelf(i) => bids[i],
        }),
        Node::Neg(e) => Ok(-eval_node(e, action, bids)?),
        Node::Bin(op, l, r) => apply_bin(*op, eval_node(l, action, bids)?, eval_node(r, action, bids)?),
        Node::Cmp(op, l, r) => Ok(apply_cmp(*op, eval_node(l, action, bids)?, eval_node(r, action, bids)?)),
        Node::Call(func, args) => match func {
            Func::If => {
                if eval_node(&args[0], action, bids)? != 0.0 {
                    eval_node(&args[1], action, bids)
                } else {
                    eval_node(&args[2], action, bids)
                }
            }
            Func::Min => Ok(eval_node(&args[0], action, bids)?.min(eval_node(&args[1], action, bids)?)),
            Func::Max => Ok(eval_node(&args[0], action, bids)?.max(eval_node(&args[1], action, bids)?)),
            Func::Pow => pow_checked(eval_node(&args[0], action, bids)?, eval_node(&args[1], action, bids)?),
            Func::Abs | Func::Sqrt => apply_unary(*func, eval_node(&args[0], action, bids)?),
        },
    }
}
