//! A restricted per-row transformation language.
//!
//! Programs are single expressions over the declared numeric and boolean
//! variables of a dataset:
//!
//! ```text
//! program = expr ;
//! expr    = "let" ident "=" expr "in" expr | or ;
//! or      = and { "or" and } ;
//! and     = not { "and" not } ;
//! not     = "not" not | cmp ;
//! cmp     = sum [ ( "<" | "<=" | "==" | ">" | ">=" ) sum ] ;
//! sum     = term { ( "+" | "-" ) term } ;
//! term    = unary { "*" unary } ;
//! unary   = "-" unary | atom ;
//! atom    = number | ident | ( "min" | "max" ) "(" expr "," expr ")"
//!         | "(" expr ")" ;
//! number  = digit { digit } [ "." { digit } ] [ ( "e" | "E" ) [ "+" | "-" ] digit { digit } ] ;
//! ident   = letter { letter | digit | "_" } ;   (* not a keyword *)
//! ```
//!
//! Comparisons yield 1 or 0. `and`, `or` and `not` are `min`, `max` and
//! `1 − x`, which agree with the logical operators on 0/1 indicators. There
//! is no division, no function call besides `min`/`max`, no loop and no
//! assignment other than a local `let`, so a program can neither keep state
//! across rows nor take a data-dependent amount of work.
//!
//! [`infer_range`] bounds a program's output by interval arithmetic; the
//! [`Program`] evaluator runs it row by row and clamps into a declared range.

mod eval;
mod interval;
mod parser;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{evaluate_rows, Program};
pub use interval::{infer_range, range_warning, Interval, RangeWarning};
pub use parser::parse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    /// A non-negative literal; `-2` parses as `Neg(Num(2))`.
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Let {
        name: String,
        value: Box<Expr>,
        body: Box<Expr>,
    },
}

impl Expr {
    /// Dataset variables referenced outside any binding of the same name.
    pub fn free_variables(&self) -> Vec<String> {
        fn walk(e: &Expr, bound: &mut Vec<String>, out: &mut Vec<String>) {
            match e {
                Expr::Num(_) => {}
                Expr::Var(v) => {
                    if !bound.contains(v) && !out.contains(v) {
                        out.push(v.clone());
                    }
                }
                Expr::Neg(a) | Expr::Not(a) => walk(a, bound, out),
                Expr::Bin(_, a, b)
                | Expr::Cmp(_, a, b)
                | Expr::And(a, b)
                | Expr::Or(a, b)
                | Expr::Min(a, b)
                | Expr::Max(a, b) => {
                    walk(a, bound, out);
                    walk(b, bound, out);
                }
                Expr::Let { name, value, body } => {
                    walk(value, bound, out);
                    bound.push(name.clone());
                    walk(body, bound, out);
                    bound.pop();
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut Vec::new(), &mut out);
        out
    }
}

/// Fully parenthesized source text that parses back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Var(v) => f.write_str(v),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Cmp(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::And(a, b) => write!(f, "({a} and {b})"),
            Expr::Or(a, b) => write!(f, "({a} or {b})"),
            Expr::Not(a) => write!(f, "(not {a})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Let { name, value, body } => write!(f, "(let {name} = {value} in {body})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DslErrorKind {
    Syntax(String),
    Undeclared(String),
    NonLocalAssignment(String),
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {}", describe(.kind))]
pub struct DslError {
    pub line: usize,
    pub column: usize,
    pub kind: DslErrorKind,
}

fn describe(kind: &DslErrorKind) -> String {
    match kind {
        DslErrorKind::Syntax(msg) => msg.clone(),
        DslErrorKind::Undeclared(name) => format!("`{name}` is not a declared variable"),
        DslErrorKind::NonLocalAssignment(name) => format!(
            "cannot assign to `{name}`; only `let {name} = ... in ...` bindings are allowed"
        ),
        DslErrorKind::Unsupported(what) => format!("{what} is not part of the language"),
    }
}
