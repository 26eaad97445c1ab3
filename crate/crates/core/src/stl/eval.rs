use thiserror::Error;

use super::formula::{Cmp, Formula, Window};
use super::trace::{Schema, Trace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("variable `{0}` is not in the trace schema")]
    UnknownVariable(String),
    #[error("formula at step {t} reads up to step {needed}, trace has {len} steps")]
    WindowOutOfRange { t: usize, needed: usize, len: usize },
    #[error("temporal window [{lo},{hi}] has lo > hi")]
    InvertedWindow { lo: usize, hi: usize },
}

/// Predicate with variables resolved to column indices.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BoundPredicate {
    pub terms: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub threshold: f64,
    /// Single variable with unit coefficient (a plain atom).
    pub simple: bool,
}

impl BoundPredicate {
    /// Signed slack at one row of values. Plain atoms use `value - threshold`
    /// directly so the boolean and quantitative views share one computation.
    #[inline]
    pub fn slack(&self, row: &[f64]) -> f64 {
        let lhs = if self.simple {
            row[self.terms[0].0]
        } else {
            self.terms.iter().map(|&(v, c)| c * row[v]).sum()
        };
        self.cmp.slack(lhs, self.threshold)
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Bound {
    True,
    Pred(BoundPredicate),
    Not(Box<Bound>),
    And(Box<Bound>, Box<Bound>),
    Or(Box<Bound>, Box<Bound>),
    Implies(Box<Bound>, Box<Bound>),
    Always(Window, Box<Bound>),
    Eventually(Window, Box<Bound>),
    Until(Window, Box<Bound>, Box<Bound>),
}

pub(crate) fn bind_predicate(
    schema: &Schema,
    terms: impl Iterator<Item = (String, f64)>,
    cmp: Cmp,
    threshold: f64,
    simple: bool,
) -> Result<BoundPredicate, EvalError> {
    let terms = terms
        .map(|(v, c)| {
            schema
                .index_of(&v)
                .map(|i| (i, c))
                .ok_or(EvalError::UnknownVariable(v))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BoundPredicate {
        terms,
        cmp,
        threshold,
        simple,
    })
}

fn check_window(w: &Window) -> Result<(), EvalError> {
    if w.lo > w.hi {
        return Err(EvalError::InvertedWindow { lo: w.lo, hi: w.hi });
    }
    Ok(())
}

impl Bound {
    pub fn new(f: &Formula, schema: &Schema) -> Result<Self, EvalError> {
        let b = |x: &Formula| Bound::new(x, schema).map(Box::new);
        Ok(match f {
            Formula::True => Bound::True,
            Formula::Atom(a) => Bound::Pred(bind_predicate(
                schema,
                std::iter::once((a.var.clone(), 1.0)),
                a.cmp,
                a.threshold,
                true,
            )?),
            Formula::LinAtom(l) => Bound::Pred(bind_predicate(
                schema,
                l.coeffs.iter().map(|(v, c)| (v.clone(), *c)),
                l.cmp,
                l.threshold,
                false,
            )?),
            Formula::Not(p) => Bound::Not(b(p)?),
            Formula::And(x, y) => Bound::And(b(x)?, b(y)?),
            Formula::Or(x, y) => Bound::Or(b(x)?, b(y)?),
            Formula::Implies(x, y) => Bound::Implies(b(x)?, b(y)?),
            Formula::Always(w, p) => {
                check_window(w)?;
                Bound::Always(*w, b(p)?)
            }
            Formula::Eventually(w, p) => {
                check_window(w)?;
                Bound::Eventually(*w, b(p)?)
            }
            Formula::Until(w, p, q) => {
                check_window(w)?;
                Bound::Until(*w, b(p)?, b(q)?)
            }
        })
    }

    pub fn holds(&self, tr: &Trace, t: usize) -> bool {
        match self {
            Bound::True => true,
            Bound::Pred(p) => p.cmp.holds(p.slack(tr.row(t))),
            Bound::Not(p) => !p.holds(tr, t),
            Bound::And(a, b) => a.holds(tr, t) && b.holds(tr, t),
            Bound::Or(a, b) => a.holds(tr, t) || b.holds(tr, t),
            Bound::Implies(a, b) => !a.holds(tr, t) || b.holds(tr, t),
            Bound::Always(w, p) => w.steps(t).all(|s| p.holds(tr, s)),
            Bound::Eventually(w, p) => w.steps(t).any(|s| p.holds(tr, s)),
            Bound::Until(w, p, q) => w
                .steps(t)
                .any(|s| q.holds(tr, s) && (t..=s).all(|r| p.holds(tr, r))),
        }
    }

    pub fn robustness(&self, tr: &Trace, t: usize) -> f64 {
        match self {
            Bound::True => f64::INFINITY,
            Bound::Pred(p) => p.slack(tr.row(t)),
            Bound::Not(p) => -p.robustness(tr, t),
            Bound::And(a, b) => a.robustness(tr, t).min(b.robustness(tr, t)),
            Bound::Or(a, b) => a.robustness(tr, t).max(b.robustness(tr, t)),
            Bound::Implies(a, b) => (-a.robustness(tr, t)).max(b.robustness(tr, t)),
            Bound::Always(w, p) => w
                .steps(t)
                .map(|s| p.robustness(tr, s))
                .fold(f64::INFINITY, f64::min),
            Bound::Eventually(w, p) => w
                .steps(t)
                .map(|s| p.robustness(tr, s))
                .fold(f64::NEG_INFINITY, f64::max),
            Bound::Until(w, p, q) => {
                // running min of the left operand over [t, s]
                let mut left = f64::INFINITY;
                for r in t..t + w.lo {
                    left = left.min(p.robustness(tr, r));
                }
                let mut best = f64::NEG_INFINITY;
                for s in w.steps(t) {
                    left = left.min(p.robustness(tr, s));
                    best = best.max(q.robustness(tr, s).min(left));
                }
                best
            }
        }
    }
}

/// A formula resolved against a schema, reusable across many traces that
/// share it.
#[derive(Debug, Clone)]
pub struct Monitor {
    bound: Bound,
    horizon: usize,
    schema: Schema,
}

impl Monitor {
    pub fn new(f: &Formula, schema: &Schema) -> Result<Self, EvalError> {
        Ok(Monitor {
            bound: Bound::new(f, schema)?,
            horizon: f.horizon(),
            schema: schema.clone(),
        })
    }

    /// Number of steps after `t` that evaluation reads.
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn check(&self, tr: &Trace, t: usize) -> Result<(), EvalError> {
        if tr.schema() != &self.schema {
            // different column layout; names must still resolve identically
            for (i, n) in self.schema.names().iter().enumerate() {
                if tr.schema().index_of(n) != Some(i) {
                    return Err(EvalError::UnknownVariable(n.clone()));
                }
            }
        }
        let needed = t + self.horizon;
        if needed >= tr.len() {
            return Err(EvalError::WindowOutOfRange {
                t,
                needed,
                len: tr.len(),
            });
        }
        Ok(())
    }

    pub fn eval_bool(&self, tr: &Trace, t: usize) -> Result<bool, EvalError> {
        self.check(tr, t)?;
        Ok(self.bound.holds(tr, t))
    }

    pub fn robustness(&self, tr: &Trace, t: usize) -> Result<f64, EvalError> {
        self.check(tr, t)?;
        Ok(self.bound.robustness(tr, t))
    }
}

/// Qualitative satisfaction of `f` by `tr` at step `t`.
pub fn eval_bool(f: &Formula, tr: &Trace, t: usize) -> Result<bool, EvalError> {
    Monitor::new(f, tr.schema())?.eval_bool(tr, t)
}

/// Quantitative robustness of `f` on `tr` at step `t`. `True` has robustness
/// `+inf`.
pub fn robustness(f: &Formula, tr: &Trace, t: usize) -> Result<f64, EvalError> {
    Monitor::new(f, tr.schema())?.robustness(tr, t)
}
