use rayon::prelude::*;

use super::{BinOp, CmpOp, DslError, DslErrorKind, Expr, Interval};
use crate::mechanisms::clamp_value;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Input(usize),
    Load(usize),
    Store(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Cmp(CmpOp),
    Min,
    Max,
    Not,
}

/// A program compiled to straight-line stack code.
///
/// There are no jumps, so every row executes exactly the same instructions.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    inputs: Vec<String>,
    slots: usize,
    stack_depth: usize,
}

impl Program {
    /// Compiles `expr`, reading dataset variables in the order of `inputs`.
    pub fn compile(expr: &Expr, inputs: &[String]) -> Result<Self, DslError> {
        let mut c = Compiler {
            ops: Vec::new(),
            inputs,
            scope: Vec::new(),
            slots: 0,
        };
        c.emit(expr)?;
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &c.ops {
            match op {
                Op::Const(_) | Op::Input(_) | Op::Load(_) => depth += 1,
                Op::Store(_) | Op::Add | Op::Sub | Op::Mul | Op::Cmp(_) | Op::Min | Op::Max => {
                    depth -= 1
                }
                Op::Neg | Op::Not => {}
            }
            max_depth = max_depth.max(depth);
        }
        Ok(Program {
            ops: c.ops,
            inputs: inputs.to_vec(),
            slots: c.slots,
            stack_depth: max_depth,
        })
    }

    /// Dataset variables the program reads, in row order.
    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    /// Instructions executed per row.
    pub fn step_count(&self) -> usize {
        self.ops.len()
    }

    /// Evaluates one row; `row[i]` is the value of `inputs()[i]`.
    pub fn eval(&self, row: &[f64]) -> f64 {
        self.eval_counted(row).0
    }

    /// Evaluates one row and reports how many instructions ran.
    pub fn eval_counted(&self, row: &[f64]) -> (f64, usize) {
        let mut stack = Vec::with_capacity(self.stack_depth);
        let mut locals = vec![0.0; self.slots];
        let mut steps = 0usize;
        for op in &self.ops {
            steps += 1;
            match *op {
                Op::Const(x) => stack.push(x),
                Op::Input(i) => stack.push(row[i]),
                Op::Load(s) => stack.push(locals[s]),
                Op::Store(s) => locals[s] = stack.pop().unwrap(),
                Op::Neg => {
                    let a = stack.pop().unwrap();
                    stack.push(-a);
                }
                Op::Not => {
                    let a = stack.pop().unwrap();
                    stack.push(1.0 - a);
                }
                _ => {
                    let b = stack.pop().unwrap();
                    let a = stack.pop().unwrap();
                    stack.push(match *op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Min => a.min(b),
                        Op::Max => a.max(b),
                        Op::Cmp(c) => {
                            let holds = match c {
                                CmpOp::Lt => a < b,
                                CmpOp::Le => a <= b,
                                CmpOp::Eq => a == b,
                                CmpOp::Gt => a > b,
                                CmpOp::Ge => a >= b,
                            };
                            f64::from(u8::from(holds))
                        }
                        _ => unreachable!(),
                    });
                }
            }
        }
        (stack.pop().unwrap_or(0.0), steps)
    }
}

struct Compiler<'a> {
    ops: Vec<Op>,
    inputs: &'a [String],
    scope: Vec<(String, usize)>,
    slots: usize,
}

impl Compiler<'_> {
    fn emit(&mut self, e: &Expr) -> Result<(), DslError> {
        match e {
            Expr::Num(x) => self.ops.push(Op::Const(*x)),
            Expr::Var(v) => {
                if let Some(&(_, slot)) = self.scope.iter().rev().find(|(n, _)| n == v) {
                    self.ops.push(Op::Load(slot));
                } else if let Some(i) = self.inputs.iter().position(|n| n == v) {
                    self.ops.push(Op::Input(i));
                } else {
                    return Err(DslError {
                        line: 0,
                        column: 0,
                        kind: DslErrorKind::Undeclared(v.clone()),
                    });
                }
            }
            Expr::Neg(a) => {
                self.emit(a)?;
                self.ops.push(Op::Neg);
            }
            Expr::Not(a) => {
                self.emit(a)?;
                self.ops.push(Op::Not);
            }
            Expr::Bin(op, a, b) => {
                self.emit(a)?;
                self.emit(b)?;
                self.ops.push(match op {
                    BinOp::Add => Op::Add,
                    BinOp::Sub => Op::Sub,
                    BinOp::Mul => Op::Mul,
                });
            }
            Expr::Cmp(op, a, b) => {
                self.emit(a)?;
                self.emit(b)?;
                self.ops.push(Op::Cmp(*op));
            }
            Expr::And(a, b) | Expr::Min(a, b) => {
                self.emit(a)?;
                self.emit(b)?;
                self.ops.push(Op::Min);
            }
            Expr::Or(a, b) | Expr::Max(a, b) => {
                self.emit(a)?;
                self.emit(b)?;
                self.ops.push(Op::Max);
            }
            Expr::Let { name, value, body } => {
                self.emit(value)?;
                let slot = self.slots;
                self.slots += 1;
                self.ops.push(Op::Store(slot));
                self.scope.push((name.clone(), slot));
                self.emit(body)?;
                self.scope.pop();
            }
        }
        Ok(())
    }
}

/// Evaluates `program` on every row and clamps each result into `declared`.
///
/// `columns[i]` holds the values of `program.inputs()[i]`; all columns must
/// have the same length.
pub fn evaluate_rows(program: &Program, columns: &[&[f64]], declared: Interval) -> Vec<f64> {
    assert_eq!(
        columns.len(),
        program.inputs().len(),
        "one column per input"
    );
    let n = columns.first().map_or(0, |c| c.len());
    assert!(
        columns.iter().all(|c| c.len() == n),
        "columns differ in length"
    );
    (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0; columns.len()],
            |row, r| {
                for (slot, col) in row.iter_mut().zip(columns) {
                    *slot = col[r];
                }
                clamp_value(program.eval(row), declared.lo, declared.hi)
            },
        )
        .collect()
}
