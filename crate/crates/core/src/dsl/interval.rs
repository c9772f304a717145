use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{BinOp, Expr};

/// A closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "[{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub const INDICATOR: Interval = Interval { lo: 0.0, hi: 1.0 };

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    fn add(self, o: Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }

    fn sub(self, o: Interval) -> Interval {
        Interval::new(self.lo - o.hi, self.hi - o.lo)
    }

    fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }

    /// Corner rule: the product ranges over the four endpoint products.
    fn mul(self, o: Interval) -> Interval {
        let corners = [
            self.lo * o.lo,
            self.lo * o.hi,
            self.hi * o.lo,
            self.hi * o.hi,
        ];
        Interval::new(
            corners.iter().copied().fold(f64::INFINITY, f64::min),
            corners.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    fn min(self, o: Interval) -> Interval {
        Interval::new(self.lo.min(o.lo), self.hi.min(o.hi))
    }

    fn max(self, o: Interval) -> Interval {
        Interval::new(self.lo.max(o.lo), self.hi.max(o.hi))
    }

    fn complement(self) -> Interval {
        Interval::new(1.0 - self.hi, 1.0 - self.lo)
    }
}

/// Sound range of `expr` when each free variable lies in its `env` interval.
///
/// Let-bound names take the range of their value, so analysis threads the
/// environment through bindings. Panics if a free variable is missing from
/// `env`; [`super::parse`] guarantees none is when given the same names.
pub fn infer_range(expr: &Expr, env: &HashMap<String, Interval>) -> Interval {
    fn go(
        e: &Expr,
        env: &mut Vec<(String, Interval)>,
        base: &HashMap<String, Interval>,
    ) -> Interval {
        match e {
            Expr::Num(x) => Interval::point(*x),
            Expr::Var(v) => env
                .iter()
                .rev()
                .find(|(name, _)| name == v)
                .map(|(_, i)| *i)
                .or_else(|| base.get(v).copied())
                .unwrap_or_else(|| panic!("no range for variable `{v}`")),
            Expr::Neg(a) => go(a, env, base).neg(),
            Expr::Bin(op, a, b) => {
                let (x, y) = (go(a, env, base), go(b, env, base));
                match op {
                    BinOp::Add => x.add(y),
                    BinOp::Sub => x.sub(y),
                    BinOp::Mul => x.mul(y),
                }
            }
            Expr::Cmp(_, a, b) => {
                go(a, env, base);
                go(b, env, base);
                Interval::INDICATOR
            }
            Expr::And(a, b) | Expr::Min(a, b) => go(a, env, base).min(go(b, env, base)),
            Expr::Or(a, b) | Expr::Max(a, b) => go(a, env, base).max(go(b, env, base)),
            Expr::Not(a) => go(a, env, base).complement(),
            Expr::Let { name, value, body } => {
                let v = go(value, env, base);
                env.push((name.clone(), v));
                let r = go(body, env, base);
                env.pop();
                r
            }
        }
    }
    go(expr, &mut Vec::new(), env)
}

/// Advisory comparison of a user-declared output range with the inferred one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RangeWarning {
    /// The declared range cuts off values the program can produce; those are
    /// clamped.
    Narrower {
        declared: Interval,
        inferred: Interval,
    },
    /// The declared range is wider than necessary, adding noise for nothing.
    Wider {
        declared: Interval,
        inferred: Interval,
    },
}

pub fn range_warning(declared: Interval, inferred: Interval) -> Option<RangeWarning> {
    if declared.lo > inferred.lo || declared.hi < inferred.hi {
        Some(RangeWarning::Narrower { declared, inferred })
    } else if declared.lo < inferred.lo || declared.hi > inferred.hi {
        Some(RangeWarning::Wider { declared, inferred })
    } else {
        None
    }
}
