use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Comparison operator of an atomic predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cmp {
    Ge,
    Gt,
    Le,
    Lt,
}

impl Cmp {
    pub fn is_strict(self) -> bool {
        matches!(self, Cmp::Gt | Cmp::Lt)
    }

    /// True for `>=` and `>`: robustness is `value - threshold`.
    pub fn is_lower_bound(self) -> bool {
        matches!(self, Cmp::Ge | Cmp::Gt)
    }

    /// The comparison satisfied exactly when `self` is violated.
    pub fn negate(self) -> Cmp {
        match self {
            Cmp::Ge => Cmp::Lt,
            Cmp::Gt => Cmp::Le,
            Cmp::Le => Cmp::Gt,
            Cmp::Lt => Cmp::Ge,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Ge => ">=",
            Cmp::Gt => ">",
            Cmp::Le => "<=",
            Cmp::Lt => "<",
        }
    }

    /// Signed slack of `lhs CMP rhs`; positive means satisfied with margin.
    #[inline]
    pub fn slack(self, lhs: f64, rhs: f64) -> f64 {
        if self.is_lower_bound() {
            lhs - rhs
        } else {
            rhs - lhs
        }
    }

    /// Boolean truth given the slack computed by [`Cmp::slack`].
    #[inline]
    pub fn holds(self, slack: f64) -> bool {
        if self.is_strict() {
            slack > 0.0
        } else {
            slack >= 0.0
        }
    }
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Inclusive discrete window `[lo, hi]` relative to the evaluation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub lo: usize,
    pub hi: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("window [{lo},{hi}] has lo > hi")]
pub struct InvertedWindow {
    pub lo: usize,
    pub hi: usize,
}

impl Window {
    pub fn new(lo: usize, hi: usize) -> Result<Self, InvertedWindow> {
        if lo > hi {
            return Err(InvertedWindow { lo, hi });
        }
        Ok(Window { lo, hi })
    }

    pub fn steps(self, t: usize) -> std::ops::RangeInclusive<usize> {
        t + self.lo..=t + self.hi
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.lo, self.hi)
    }
}

/// Single-variable predicate `var CMP threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub var: String,
    pub cmp: Cmp,
    pub threshold: f64,
}

/// Linear predicate `sum(coeff * var) CMP threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinAtom {
    pub coeffs: BTreeMap<String, f64>,
    pub cmp: Cmp,
    pub threshold: f64,
}

/// An STL formula over named signal variables with discrete step windows.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    Atom(Atom),
    LinAtom(LinAtom),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Always(Window, Box<Formula>),
    Eventually(Window, Box<Formula>),
    Until(Window, Box<Formula>, Box<Formula>),
}

/// Borrowed view of a predicate leaf.
#[derive(Debug, Clone, Copy)]
pub enum Predicate<'a> {
    Atom(&'a Atom),
    Lin(&'a LinAtom),
}

impl Predicate<'_> {
    pub fn cmp(&self) -> Cmp {
        match self {
            Predicate::Atom(a) => a.cmp,
            Predicate::Lin(l) => l.cmp,
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            Predicate::Atom(a) => a.threshold,
            Predicate::Lin(l) => l.threshold,
        }
    }
}

impl Formula {
    pub fn atom(var: impl Into<String>, cmp: Cmp, threshold: f64) -> Self {
        Formula::Atom(Atom {
            var: var.into(),
            cmp,
            threshold,
        })
    }

    pub fn lin<I, S>(coeffs: I, cmp: Cmp, threshold: f64) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (v, c) in coeffs {
            *map.entry(v.into()).or_insert(0.0) += c;
        }
        Formula::LinAtom(LinAtom {
            coeffs: map,
            cmp,
            threshold,
        })
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn always(lo: usize, hi: usize, f: Formula) -> Self {
        Formula::Always(Window { lo, hi }, Box::new(f))
    }

    pub fn eventually(lo: usize, hi: usize, f: Formula) -> Self {
        Formula::Eventually(Window { lo, hi }, Box::new(f))
    }

    pub fn until(lo: usize, hi: usize, p: Formula, q: Formula) -> Self {
        Formula::Until(Window { lo, hi }, Box::new(p), Box::new(q))
    }

    /// Left-nested conjunction; `None` for an empty iterator.
    pub fn conjunction<I: IntoIterator<Item = Formula>>(parts: I) -> Option<Formula> {
        parts.into_iter().reduce(Formula::and)
    }

    /// Flattens nested top-level `And` nodes into their operands, in order.
    pub fn conjuncts(&self) -> Vec<&Formula> {
        let mut out = Vec::new();
        fn walk<'a>(f: &'a Formula, out: &mut Vec<&'a Formula>) {
            match f {
                Formula::And(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                other => out.push(other),
            }
        }
        walk(self, &mut out);
        out
    }

    /// Number of future steps beyond `t` that evaluation at `t` reads.
    pub fn horizon(&self) -> usize {
        match self {
            Formula::True | Formula::Atom(_) | Formula::LinAtom(_) => 0,
            Formula::Not(p) => p.horizon(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.horizon().max(b.horizon())
            }
            Formula::Always(w, p) | Formula::Eventually(w, p) => w.hi + p.horizon(),
            Formula::Until(w, p, q) => w.hi + p.horizon().max(q.horizon()),
        }
    }

    /// Every temporal window has `lo <= hi`.
    pub fn windows_valid(&self) -> bool {
        match self {
            Formula::True | Formula::Atom(_) | Formula::LinAtom(_) => true,
            Formula::Not(p) => p.windows_valid(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.windows_valid() && b.windows_valid()
            }
            Formula::Always(w, p) | Formula::Eventually(w, p) => w.lo <= w.hi && p.windows_valid(),
            Formula::Until(w, p, q) => w.lo <= w.hi && p.windows_valid() && q.windows_valid(),
        }
    }

    /// Variable names referenced anywhere in the formula, sorted and deduplicated.
    pub fn variables(&self) -> Vec<String> {
        let mut vars: Vec<String> = Vec::new();
        self.for_each_predicate(&mut |_, p, _| match p {
            Predicate::Atom(a) => vars.push(a.var.clone()),
            Predicate::Lin(l) => vars.extend(l.coeffs.keys().cloned()),
        });
        vars.sort();
        vars.dedup();
        vars
    }

    /// Visits predicate leaves in pre-order with their index and polarity
    /// (`true` when under an even number of negations; the antecedent of an
    /// implication counts as negated).
    pub fn for_each_predicate<'a>(&'a self, f: &mut impl FnMut(usize, Predicate<'a>, bool)) {
        fn walk<'a>(
            node: &'a Formula,
            positive: bool,
            idx: &mut usize,
            f: &mut impl FnMut(usize, Predicate<'a>, bool),
        ) {
            match node {
                Formula::True => {}
                Formula::Atom(a) => {
                    f(*idx, Predicate::Atom(a), positive);
                    *idx += 1;
                }
                Formula::LinAtom(l) => {
                    f(*idx, Predicate::Lin(l), positive);
                    *idx += 1;
                }
                Formula::Not(p) => walk(p, !positive, idx, f),
                Formula::And(a, b) | Formula::Or(a, b) => {
                    walk(a, positive, idx, f);
                    walk(b, positive, idx, f);
                }
                Formula::Implies(a, b) => {
                    walk(a, !positive, idx, f);
                    walk(b, positive, idx, f);
                }
                Formula::Always(_, p) | Formula::Eventually(_, p) => walk(p, positive, idx, f),
                Formula::Until(_, p, q) => {
                    walk(p, positive, idx, f);
                    walk(q, positive, idx, f);
                }
            }
        }
        let mut idx = 0;
        walk(self, true, &mut idx, f);
    }

    pub fn predicate_count(&self) -> usize {
        let mut n = 0;
        self.for_each_predicate(&mut |_, _, _| n += 1);
        n
    }

    /// Mutable pre-order access to predicate thresholds, same indexing as
    /// [`Formula::for_each_predicate`].
    pub fn for_each_threshold_mut(&mut self, f: &mut impl FnMut(usize, &mut f64)) {
        fn walk(node: &mut Formula, idx: &mut usize, f: &mut impl FnMut(usize, &mut f64)) {
            match node {
                Formula::True => {}
                Formula::Atom(a) => {
                    f(*idx, &mut a.threshold);
                    *idx += 1;
                }
                Formula::LinAtom(l) => {
                    f(*idx, &mut l.threshold);
                    *idx += 1;
                }
                Formula::Not(p) | Formula::Always(_, p) | Formula::Eventually(_, p) => {
                    walk(p, idx, f)
                }
                Formula::And(a, b)
                | Formula::Or(a, b)
                | Formula::Implies(a, b)
                | Formula::Until(_, a, b) => {
                    walk(a, idx, f);
                    walk(b, idx, f);
                }
            }
        }
        let mut idx = 0;
        walk(self, &mut idx, f);
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Implies(..) => 1,
            Formula::Or(..) => 2,
            Formula::And(..) => 3,
            Formula::Until(..) => 4,
            Formula::Not(_) | Formula::Always(..) | Formula::Eventually(..) => 5,
            Formula::True | Formula::Atom(_) | Formula::LinAtom(_) => 6,
        }
    }

    fn fmt_at(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            f.write_str("(")?;
            self.fmt_at(f, 0)?;
            return f.write_str(")");
        }
        match self {
            Formula::True => f.write_str("true"),
            Formula::Atom(a) => write!(f, "{} {} {}", a.var, a.cmp, a.threshold),
            Formula::LinAtom(l) => {
                for (i, (var, c)) in l.coeffs.iter().enumerate() {
                    if i == 0 {
                        write!(f, "{c}*{var}")?;
                    } else if c.is_sign_negative() {
                        write!(f, " - {}*{var}", -c)?;
                    } else {
                        write!(f, " + {c}*{var}")?;
                    }
                }
                write!(f, " {} {}", l.cmp, l.threshold)
            }
            Formula::Not(p) => {
                f.write_str("!")?;
                p.fmt_at(f, 5)
            }
            Formula::And(a, b) => {
                a.fmt_at(f, 3)?;
                f.write_str(" & ")?;
                b.fmt_at(f, 4)
            }
            Formula::Or(a, b) => {
                a.fmt_at(f, 2)?;
                f.write_str(" | ")?;
                b.fmt_at(f, 3)
            }
            Formula::Implies(a, b) => {
                a.fmt_at(f, 2)?;
                f.write_str(" -> ")?;
                b.fmt_at(f, 1)
            }
            Formula::Always(w, p) => {
                write!(f, "G{w}(")?;
                p.fmt_at(f, 0)?;
                f.write_str(")")
            }
            Formula::Eventually(w, p) => {
                write!(f, "F{w}(")?;
                p.fmt_at(f, 0)?;
                f.write_str(")")
            }
            Formula::Until(w, p, q) => {
                f.write_str("(")?;
                p.fmt_at(f, 0)?;
                write!(f, ") U{w} (")?;
                q.fmt_at(f, 0)?;
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_at(f, 0)
    }
}
