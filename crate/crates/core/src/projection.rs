//! DNF expansion over a finite horizon, L1 projection of a trace onto a
//! clause, the property loss and the teacher correction.
//!
//! The DNF of a formula evaluated at step 0 is a disjunction of clauses, each
//! a conjunction of predicates pinned to absolute steps. Negations are pushed
//! to the predicates first; negating a predicate flips its comparison, so
//! robustness through the DNF (max over clauses of min over slacks) agrees
//! exactly with direct evaluation.
//!
//! Strict comparisons are closed off with a margin `delta` before projecting,
//! so projected traces satisfy strict atoms under boolean evaluation.

use std::fmt;

use thiserror::Error;

use crate::stl::{
    bind_predicate, value_scale, BoundPredicate, Cmp, EvalError, Formula, Monitor, Schema, Trace,
};

pub const DEFAULT_CLAUSE_CAP: usize = 4096;

/// Halfspace-heavy steps with at most this many involved variables are
/// solved exactly by vertex enumeration; larger ones use cyclic projection.
const EXACT_VARS: usize = 4;
const CYCLIC_ITERS: usize = 1000;
const NUDGE_ITERS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("DNF expansion exceeds {cap} clauses")]
    ClauseCap { cap: usize },
    #[error("unsupported in DNF: {0}")]
    Unsupported(&'static str),
    #[error("formula is unsatisfiable (empty DNF)")]
    Unsatisfiable,
    #[error("formula reads up to step {needed}, horizon is {horizon}")]
    Horizon { needed: usize, horizon: usize },
    #[error("trace has {len} steps, property needs {needed}")]
    ShortTrace { len: usize, needed: usize },
    #[error("clause is infeasible at step {step}")]
    Infeasible { step: usize },
    #[error("cyclic projection did not converge at step {step}")]
    NoConvergence { step: usize },
    #[error("every clause is infeasible")]
    AllInfeasible,
}

/// One predicate pinned to an absolute step.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub step: usize,
    pub terms: Vec<(String, f64)>,
    pub cmp: Cmp,
    pub threshold: f64,
    /// Plain single-variable atom (as opposed to a linear predicate).
    pub simple: bool,
}

impl Constraint {
    fn negated(&self) -> Self {
        Constraint {
            cmp: self.cmp.negate(),
            ..self.clone()
        }
    }

    /// True when `other` is redundant next to `self` (same step, variable
    /// and bound side, and `self` is at least as tight).
    fn dominates(&self, other: &Constraint) -> bool {
        if !(self.simple && other.simple)
            || self.step != other.step
            || self.terms[0].0 != other.terms[0].0
            || self.cmp.is_lower_bound() != other.cmp.is_lower_bound()
        {
            return false;
        }
        let tighter = if self.cmp.is_lower_bound() {
            self.threshold > other.threshold
        } else {
            self.threshold < other.threshold
        };
        tighter
            || (self.threshold == other.threshold
                && (self.cmp.is_strict() || !other.cmp.is_strict()))
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={}  ", self.step)?;
        if self.simple {
            write!(f, "{}", self.terms[0].0)?;
        } else {
            for (i, (v, c)) in self.terms.iter().enumerate() {
                match (i, *c < 0.0) {
                    (0, false) => write!(f, "{c}*{v}")?,
                    (0, true) => write!(f, "-{}*{v}", -c)?,
                    (_, false) => write!(f, " + {c}*{v}")?,
                    (_, true) => write!(f, " - {}*{v}", -c)?,
                }
            }
        }
        write!(f, " {} {}", self.cmp, self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Clause {
    pub constraints: Vec<Constraint>,
}

impl Clause {
    fn conjoin(&self, other: &Clause) -> Clause {
        let mut out: Vec<Constraint> =
            Vec::with_capacity(self.constraints.len() + other.constraints.len());
        for c in self.constraints.iter().chain(&other.constraints) {
            if out.iter().any(|k| k.dominates(c) || k == c) {
                continue;
            }
            out.retain(|k| !c.dominates(k));
            out.push(c.clone());
        }
        out.sort_by_key(|c| c.step);
        Clause { constraints: out }
    }

    /// Highest step referenced, if any.
    pub fn max_step(&self) -> Option<usize> {
        self.constraints.iter().map(|c| c.step).max()
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.constraints {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnfFormula {
    pub clauses: Vec<Clause>,
    pub source: Formula,
}

impl DnfFormula {
    /// Debug dump: a `# clause K` header then one constraint per line.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, c) in self.clauses.iter().enumerate() {
            s.push_str(&format!("# clause {i}\n{c}"));
        }
        s
    }

    /// Robustness through the clauses: max over clauses of min slack.
    pub fn robustness(&self, tr: &Trace) -> Result<f64, ProjectionError> {
        let bound = bind_clauses(&self.clauses, tr.schema())?;
        check_len(&self.clauses, tr)?;
        Ok(bound
            .iter()
            .map(|c| c.robustness(tr))
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// True iff some clause has every constraint satisfied.
    pub fn eval_bool(&self, tr: &Trace) -> Result<bool, ProjectionError> {
        let bound = bind_clauses(&self.clauses, tr.schema())?;
        check_len(&self.clauses, tr)?;
        Ok(bound.iter().any(|c| c.holds(tr)))
    }
}

fn check_len(clauses: &[Clause], tr: &Trace) -> Result<(), ProjectionError> {
    let needed = clauses
        .iter()
        .filter_map(Clause::max_step)
        .max()
        .map_or(0, |s| s + 1);
    if tr.len() < needed {
        return Err(ProjectionError::ShortTrace {
            len: tr.len(),
            needed,
        });
    }
    Ok(())
}

type Dnf = Vec<Clause>;

fn product(a: &Dnf, b: &Dnf, cap: usize) -> Result<Dnf, ProjectionError> {
    if a.len().saturating_mul(b.len()) > cap {
        return Err(ProjectionError::ClauseCap { cap });
    }
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x.conjoin(y));
        }
    }
    Ok(out)
}

fn union(mut a: Dnf, b: Dnf, cap: usize) -> Result<Dnf, ProjectionError> {
    if a.len() + b.len() > cap {
        return Err(ProjectionError::ClauseCap { cap });
    }
    a.extend(b);
    Ok(a)
}

fn all_of(
    parts: impl Iterator<Item = Result<Dnf, ProjectionError>>,
    cap: usize,
) -> Result<Dnf, ProjectionError> {
    let mut acc = vec![Clause::default()];
    for p in parts {
        acc = product(&acc, &p?, cap)?;
    }
    Ok(acc)
}

fn any_of(
    parts: impl Iterator<Item = Result<Dnf, ProjectionError>>,
    cap: usize,
) -> Result<Dnf, ProjectionError> {
    let mut acc = Vec::new();
    for p in parts {
        acc = union(acc, p?, cap)?;
    }
    Ok(acc)
}

fn expand(f: &Formula, t: usize, neg: bool, cap: usize) -> Result<Dnf, ProjectionError> {
    let leaf = |c: Constraint| {
        Ok(vec![Clause {
            constraints: vec![if neg { c.negated() } else { c }],
        }])
    };
    match f {
        Formula::True => Ok(if neg { vec![] } else { vec![Clause::default()] }),
        Formula::Atom(a) => leaf(Constraint {
            step: t,
            terms: vec![(a.var.clone(), 1.0)],
            cmp: a.cmp,
            threshold: a.threshold,
            simple: true,
        }),
        Formula::LinAtom(l) => leaf(Constraint {
            step: t,
            terms: l.coeffs.iter().map(|(v, c)| (v.clone(), *c)).collect(),
            cmp: l.cmp,
            threshold: l.threshold,
            simple: false,
        }),
        Formula::Not(p) => expand(p, t, !neg, cap),
        Formula::And(a, b) | Formula::Or(a, b) => {
            let (x, y) = (expand(a, t, neg, cap)?, expand(b, t, neg, cap)?);
            // De Morgan swaps the connective under negation
            if matches!(f, Formula::And(..)) != neg {
                product(&x, &y, cap)
            } else {
                union(x, y, cap)
            }
        }
        Formula::Implies(a, b) => {
            let (x, y) = (expand(a, t, !neg, cap)?, expand(b, t, neg, cap)?);
            if neg {
                product(&x, &y, cap)
            } else {
                union(x, y, cap)
            }
        }
        Formula::Always(w, p) | Formula::Eventually(w, p) => {
            let parts = w.steps(t).map(|s| expand(p, s, neg, cap));
            if matches!(f, Formula::Always(..)) != neg {
                all_of(parts, cap)
            } else {
                any_of(parts, cap)
            }
        }
        Formula::Until(w, p, q) => {
            if neg {
                return Err(ProjectionError::Unsupported("negated until"));
            }
            any_of(
                w.steps(t).map(|s| {
                    let mut acc = expand(q, s, false, cap)?;
                    for r in t..=s {
                        acc = product(&acc, &expand(p, r, false, cap)?, cap)?;
                    }
                    Ok(acc)
                }),
                cap,
            )
        }
    }
}

/// DNF of `f` evaluated at step 0 over `horizon` steps, with the default cap.
pub fn to_dnf(f: &Formula, horizon: usize) -> Result<DnfFormula, ProjectionError> {
    to_dnf_capped(f, horizon, DEFAULT_CLAUSE_CAP)
}

pub fn to_dnf_capped(
    f: &Formula,
    horizon: usize,
    cap: usize,
) -> Result<DnfFormula, ProjectionError> {
    if !f.windows_valid() {
        return Err(ProjectionError::Unsupported("inverted window"));
    }
    if f.horizon() >= horizon {
        return Err(ProjectionError::Horizon {
            needed: f.horizon(),
            horizon,
        });
    }
    let clauses = expand(f, 0, false, cap)?;
    if clauses.is_empty() {
        return Err(ProjectionError::Unsatisfiable);
    }
    Ok(DnfFormula {
        clauses,
        source: f.clone(),
    })
}

#[derive(Debug, Clone)]
struct BoundConstraint {
    step: usize,
    pred: BoundPredicate,
}

/// A clause with variables resolved and constraints grouped by step.
#[derive(Debug, Clone)]
struct BoundClause {
    /// (step, constraints at that step), ascending by step.
    steps: Vec<(usize, Vec<BoundPredicate>)>,
}

impl BoundClause {
    fn new(cons: Vec<BoundConstraint>) -> Self {
        let mut steps: Vec<(usize, Vec<BoundPredicate>)> = Vec::new();
        for c in cons {
            match steps.last_mut() {
                Some((s, v)) if *s == c.step => v.push(c.pred),
                _ => steps.push((c.step, vec![c.pred])),
            }
        }
        BoundClause { steps }
    }

    fn holds(&self, tr: &Trace) -> bool {
        self.steps
            .iter()
            .all(|(s, ps)| ps.iter().all(|p| p.cmp.holds(p.slack(tr.row(*s)))))
    }

    fn robustness(&self, tr: &Trace) -> f64 {
        self.steps
            .iter()
            .flat_map(|(s, ps)| ps.iter().map(move |p| p.slack(tr.row(*s))))
            .fold(f64::INFINITY, f64::min)
    }
}

fn bind_clauses(clauses: &[Clause], schema: &Schema) -> Result<Vec<BoundClause>, ProjectionError> {
    clauses
        .iter()
        .map(|c| {
            let cons = c
                .constraints
                .iter()
                .map(|k| {
                    Ok(BoundConstraint {
                        step: k.step,
                        pred: bind_predicate(
                            schema,
                            k.terms.iter().cloned(),
                            k.cmp,
                            k.threshold,
                            k.simple,
                        )?,
                    })
                })
                .collect::<Result<Vec<_>, EvalError>>()?;
            Ok(BoundClause::new(cons))
        })
        .collect()
}

/// `a . v >= b` over schema columns.
#[derive(Debug, Clone)]
struct Half {
    a: Vec<(usize, f64)>,
    b: f64,
}

impl Half {
    fn value(&self, v: &[f64]) -> f64 {
        self.a.iter().map(|&(i, c)| c * v[i]).sum()
    }
}

/// Projects one step's row onto the constraints at that step.
fn project_step(
    step: usize,
    row: &[f64],
    preds: &[BoundPredicate],
    delta: f64,
) -> Result<Vec<f64>, ProjectionError> {
    let n = row.len();
    let mut lo = vec![f64::NEG_INFINITY; n];
    let mut hi = vec![f64::INFINITY; n];
    let mut halves = Vec::new();
    for p in preds {
        let margin = if p.cmp.is_strict() { delta } else { 0.0 };
        if p.simple {
            let i = p.terms[0].0;
            if p.cmp.is_lower_bound() {
                lo[i] = lo[i].max(p.threshold + margin);
            } else {
                hi[i] = hi[i].min(p.threshold - margin);
            }
        } else {
            let s = if p.cmp.is_lower_bound() { 1.0 } else { -1.0 };
            let mut a: Vec<(usize, f64)> = Vec::new();
            for &(i, c) in &p.terms {
                if c != 0.0 {
                    a.push((i, s * c));
                }
            }
            let b = s * p.threshold + margin;
            if a.is_empty() {
                if b > 0.0 {
                    return Err(ProjectionError::Infeasible { step });
                }
                continue;
            }
            halves.push(Half { a, b });
        }
    }
    if (0..n).any(|i| lo[i] > hi[i]) {
        return Err(ProjectionError::Infeasible { step });
    }
    let mut v: Vec<f64> = (0..n).map(|i| row[i].clamp(lo[i], hi[i])).collect();

    match halves.len() {
        0 => {}
        1 => {
            if !greedy(&mut v, &halves[0], &lo, &hi) {
                return Err(ProjectionError::Infeasible { step });
            }
        }
        _ => {
            let mut involved: Vec<usize> = halves
                .iter()
                .flat_map(|h| h.a.iter().map(|t| t.0))
                .collect();
            involved.sort_unstable();
            involved.dedup();
            if involved.len() <= EXACT_VARS {
                match vertex_search(row, &v, &involved, &halves, &lo, &hi) {
                    Some(best) => v = best,
                    None => return Err(ProjectionError::Infeasible { step }),
                }
            } else {
                let mut done = false;
                for _ in 0..CYCLIC_ITERS {
                    let mut all = true;
                    for h in &halves {
                        if h.value(&v) < h.b {
                            all = false;
                            if !greedy(&mut v, h, &lo, &hi) {
                                return Err(ProjectionError::Infeasible { step });
                            }
                        }
                    }
                    if all {
                        done = true;
                        break;
                    }
                }
                if !done {
                    return Err(ProjectionError::NoConvergence { step });
                }
            }
        }
    }
    nudge(step, &mut v, preds)?;
    Ok(v)
}

/// Exact L1 projection onto one halfspace within the box, starting from a
/// point already inside the box: move coordinates in order of decreasing
/// |coefficient| (ties to the lower index) until the deficit is covered.
fn greedy(v: &mut [f64], h: &Half, lo: &[f64], hi: &[f64]) -> bool {
    let mut deficit = h.b - h.value(v);
    if deficit <= 0.0 {
        return true;
    }
    let mut order = h.a.clone();
    order.sort_by(|x, y| y.1.abs().total_cmp(&x.1.abs()).then(x.0.cmp(&y.0)));
    for (i, c) in order {
        let room = if c > 0.0 { hi[i] - v[i] } else { v[i] - lo[i] };
        let need = deficit / c.abs();
        if need <= room {
            v[i] += need * c.signum();
            return true;
        }
        if room > 0.0 {
            v[i] += room * c.signum();
            deficit -= room * c.abs();
        }
    }
    false
}

/// Minimum-L1 point over the involved coordinates by enumerating vertices of
/// the arrangement {halfspace boundaries, box faces, v_i = y_i}. The L1
/// objective is linear on each cell of that arrangement, so the optimum sits
/// on one of these vertices.
fn vertex_search(
    y: &[f64],
    start: &[f64],
    idx: &[usize],
    halves: &[Half],
    lo: &[f64],
    hi: &[f64],
) -> Option<Vec<f64>> {
    let k = idx.len();
    let pos = |col: usize| idx.iter().position(|&i| i == col).unwrap();
    // hyperplanes as (row over involved coords, rhs)
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for h in halves {
        let mut r = vec![0.0; k];
        for &(i, c) in &h.a {
            r[pos(i)] += c;
        }
        planes.push((r, h.b));
    }
    for (j, &i) in idx.iter().enumerate() {
        let unit = |_| {
            let mut r = vec![0.0; k];
            r[j] = 1.0;
            r
        };
        for val in [lo[i], hi[i], y[i]] {
            if val.is_finite() {
                planes.push((unit(()), val));
            }
        }
    }
    let scale = 1.0
        + halves.iter().map(|h| h.b.abs()).fold(0.0, f64::max)
        + idx.iter().map(|&i| y[i].abs()).fold(0.0, f64::max);
    let tol = 1e-9 * scale;

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut pick = vec![0usize; k];
    let mut consider = |sel: &[usize]| {
        let a: Vec<Vec<f64>> = sel.iter().map(|&p| planes[p].0.clone()).collect();
        let b: Vec<f64> = sel.iter().map(|&p| planes[p].1).collect();
        let Some(x) = solve(a, b) else { return };
        let mut v = start.to_vec();
        for (j, &i) in idx.iter().enumerate() {
            if x[j] < lo[i] - tol || x[j] > hi[i] + tol {
                return;
            }
            v[i] = x[j].clamp(lo[i], hi[i]);
        }
        if halves.iter().any(|h| h.value(&v) < h.b - tol) {
            return;
        }
        let cost: f64 = idx.iter().map(|&i| (v[i] - y[i]).abs()).sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, v));
        }
    };
    combinations(planes.len(), k, &mut pick, 0, 0, &mut consider);
    best.map(|b| b.1)
}

fn combinations(
    n: usize,
    k: usize,
    pick: &mut [usize],
    depth: usize,
    from: usize,
    f: &mut impl FnMut(&[usize]),
) {
    if depth == k {
        f(pick);
        return;
    }
    for i in from..n {
        pick[depth] = i;
        combinations(n, k, pick, depth + 1, i + 1, f);
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Repairs rounding so every predicate holds under the exact slack used by
/// boolean evaluation.
fn nudge(step: usize, v: &mut [f64], preds: &[BoundPredicate]) -> Result<(), ProjectionError> {
    for k in 0..NUDGE_ITERS {
        let mut ok = true;
        for p in preds {
            let s = p.slack(v);
            if p.cmp.holds(s) {
                continue;
            }
            ok = false;
            let &(i, c) = p
                .terms
                .iter()
                .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
                .expect("predicate has terms");
            if c == 0.0 {
                return Err(ProjectionError::Infeasible { step });
            }
            let d = if p.cmp.is_lower_bound() { c } else { -c };
            let extra = f64::EPSILON
                * p.threshold.abs().max(v[i].abs()).max(1.0)
                * (1u64 << k.min(52)) as f64;
            v[i] += (-s + extra) / d;
        }
        if ok {
            return Ok(());
        }
    }
    Err(ProjectionError::NoConvergence { step })
}

/// A projected trace with its L1 distance from the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub trace: Trace,
    pub cost: f64,
}

fn project_bound(c: &BoundClause, y: &Trace, delta: f64) -> Result<Projection, ProjectionError> {
    if c.holds(y) {
        return Ok(Projection {
            trace: y.clone(),
            cost: 0.0,
        });
    }
    let w = y.n_vars();
    let mut data = y.values().to_vec();
    let mut cost = 0.0;
    for (s, preds) in &c.steps {
        let row = y.row(*s);
        let v = project_step(*s, row, preds, delta)?;
        for (j, x) in v.iter().enumerate() {
            cost += (x - row[j]).abs();
        }
        data[s * w..(s + 1) * w].copy_from_slice(&v);
    }
    let trace = y
        .with_values(data)
        .map_err(|_| ProjectionError::Infeasible { step: 0 })?;
    Ok(Projection { trace, cost })
}

/// Strictness margin used by the free functions: `1e-6` times the value
/// range of `y`.
pub fn default_delta(y: &Trace) -> f64 {
    1e-6 * value_scale(std::slice::from_ref(y))
}

/// L1-closest trace to `y` satisfying every constraint of `c`.
pub fn project_clause(c: &Clause, y: &Trace) -> Result<Trace, ProjectionError> {
    Ok(project_clause_with(c, y, default_delta(y))?.trace)
}

pub fn project_clause_with(
    c: &Clause,
    y: &Trace,
    delta: f64,
) -> Result<Projection, ProjectionError> {
    check_len(std::slice::from_ref(c), y)?;
    let b = bind_clauses(std::slice::from_ref(c), y.schema())?;
    project_bound(&b[0], y, delta)
}

/// A formula compiled for repeated loss and teacher queries on traces of
/// one schema and horizon.
#[derive(Debug, Clone)]
pub struct Property {
    dnf: DnfFormula,
    clauses: Vec<BoundClause>,
    monitor: Monitor,
    horizon: usize,
    delta: f64,
}

impl Property {
    pub fn compile(
        f: &Formula,
        schema: &Schema,
        horizon: usize,
        delta: f64,
    ) -> Result<Self, ProjectionError> {
        Self::compile_capped(f, schema, horizon, delta, DEFAULT_CLAUSE_CAP)
    }

    pub fn compile_capped(
        f: &Formula,
        schema: &Schema,
        horizon: usize,
        delta: f64,
        cap: usize,
    ) -> Result<Self, ProjectionError> {
        let dnf = to_dnf_capped(f, horizon, cap)?;
        let clauses = bind_clauses(&dnf.clauses, schema)?;
        Ok(Property {
            monitor: Monitor::new(f, schema)?,
            dnf,
            clauses,
            horizon,
            delta,
        })
    }

    pub fn formula(&self) -> &Formula {
        &self.dnf.source
    }

    pub fn dnf(&self) -> &DnfFormula {
        &self.dnf
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn check(&self, y: &Trace) -> Result<(), ProjectionError> {
        if y.len() < self.horizon {
            return Err(ProjectionError::ShortTrace {
                len: y.len(),
                needed: self.horizon,
            });
        }
        Ok(())
    }

    pub fn satisfied(&self, y: &Trace) -> Result<bool, ProjectionError> {
        self.check(y)?;
        Ok(self.monitor.eval_bool(y, 0)?)
    }

    /// Feasible clause projections sorted by (cost, clause index).
    fn ranked(&self, y: &Trace) -> Result<Vec<(usize, Projection)>, ProjectionError> {
        let mut out: Vec<(usize, Projection)> = self
            .clauses
            .iter()
            .enumerate()
            .filter_map(|(i, c)| project_bound(c, y, self.delta).ok().map(|p| (i, p)))
            .collect();
        if out.is_empty() {
            return Err(ProjectionError::AllInfeasible);
        }
        out.sort_by(|a, b| a.1.cost.total_cmp(&b.1.cost).then(a.0.cmp(&b.0)));
        Ok(out)
    }

    /// L1 distance to the nearest clause region; zero when `y` satisfies.
    pub fn loss(&self, y: &Trace) -> Result<f64, ProjectionError> {
        if self.satisfied(y)? {
            return Ok(0.0);
        }
        Ok(self.ranked(y)?[0].1.cost)
    }

    /// Cheapest clause projection that satisfies the formula, ties to the
    /// lowest clause index.
    pub fn teacher(&self, y: &Trace) -> Result<Projection, ProjectionError> {
        if self.satisfied(y)? {
            return Ok(Projection {
                trace: y.clone(),
                cost: 0.0,
            });
        }
        for (_, p) in self.ranked(y)? {
            if self.monitor.eval_bool(&p.trace, 0)? {
                return Ok(p);
            }
        }
        Err(ProjectionError::AllInfeasible)
    }
}

/// L1 distance from `y` to the satisfaction region of `f` over `horizon`.
pub fn property_loss(f: &Formula, y: &Trace, horizon: usize) -> Result<f64, ProjectionError> {
    Property::compile(f, y.schema(), horizon, default_delta(y))?.loss(y)
}

/// L1-closest trace to `y` satisfying `f`.
pub fn teacher_correct(f: &Formula, y: &Trace, horizon: usize) -> Result<Trace, ProjectionError> {
    Ok(Property::compile(f, y.schema(), horizon, default_delta(y))?
        .teacher(y)?
        .trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stl::{eval_bool, parse};

    fn x(v: &[f64]) -> Trace {
        Trace::univariate("x", v).unwrap()
    }

    fn lines(d: &DnfFormula) -> Vec<Vec<String>> {
        d.clauses
            .iter()
            .map(|c| c.constraints.iter().map(|k| k.to_string()).collect())
            .collect()
    }

    #[test]
    fn dnf_examples() {
        let d = to_dnf(&parse("G[0,1](x >= 2)").unwrap(), 2).unwrap();
        assert_eq!(lines(&d), vec![vec!["t=0  x >= 2", "t=1  x >= 2"]]);
        let d = to_dnf(&parse("F[0,1](x >= 2)").unwrap(), 2).unwrap();
        assert_eq!(lines(&d), vec![vec!["t=0  x >= 2"], vec!["t=1  x >= 2"]]);
        let d = to_dnf(&parse("(x >= 0) U[0,2] (x >= 5)").unwrap(), 3).unwrap();
        assert_eq!(
            lines(&d),
            vec![
                vec!["t=0  x >= 5"],
                vec!["t=0  x >= 0", "t=1  x >= 5"],
                vec!["t=0  x >= 0", "t=1  x >= 0", "t=2  x >= 5"],
            ]
        );
    }

    #[test]
    fn dnf_errors() {
        assert!(matches!(
            to_dnf(&parse("G[0,3](x >= 2)").unwrap(), 3),
            Err(ProjectionError::Horizon { .. })
        ));
        assert!(matches!(
            to_dnf(&parse("!((x >= 0) U[0,1] (x >= 5))").unwrap(), 3),
            Err(ProjectionError::Unsupported(_))
        ));
        assert!(matches!(
            to_dnf_capped(&parse("G[0,3](F[0,3](x >= 2))").unwrap(), 8, 100),
            Err(ProjectionError::ClauseCap { cap: 100 })
        ));
    }

    #[test]
    fn clause_projection_examples() {
        let c = Clause {
            constraints: vec![
                Constraint {
                    step: 0,
                    terms: vec![("x".into(), 1.0)],
                    cmp: Cmp::Ge,
                    threshold: 2.0,
                    simple: true,
                },
                Constraint {
                    step: 0,
                    terms: vec![("x".into(), 1.0)],
                    cmp: Cmp::Le,
                    threshold: 5.0,
                    simple: true,
                },
            ],
        };
        let p = project_clause_with(&c, &x(&[7.0]), 1e-6).unwrap();
        assert_eq!((p.trace.values(), p.cost), (&[5.0][..], 2.0));

        let d = to_dnf(&parse("x >= 5").unwrap(), 1).unwrap();
        assert_eq!(
            project_clause(&d.clauses[0], &x(&[5.0])).unwrap().values(),
            &[5.0]
        );

        let d = to_dnf(&parse("x1 - x2 >= 3").unwrap(), 1).unwrap();
        let s = Schema::new(["x1", "x2"]).unwrap();
        let y = Trace::new(s, vec![4.0, 2.0]).unwrap();
        let p = project_clause_with(&d.clauses[0], &y, 1e-6).unwrap();
        assert_eq!((p.trace.values(), p.cost), (&[5.0, 2.0][..], 1.0));
    }

    #[test]
    fn loss_and_teacher_examples() {
        let g = parse("G[0,2](x <= 3)").unwrap();
        assert_eq!(property_loss(&g, &x(&[1.0, 2.0, 5.0]), 3).unwrap(), 2.0);
        assert_eq!(
            teacher_correct(&g, &x(&[1.0, 2.0, 5.0]), 3)
                .unwrap()
                .values(),
            &[1.0, 2.0, 3.0]
        );
        assert_eq!(property_loss(&g, &x(&[1.0, 2.0, 3.0]), 3).unwrap(), 0.0);

        let f = parse("F[0,1](x >= 4)").unwrap();
        assert_eq!(property_loss(&f, &x(&[1.0, 3.0]), 2).unwrap(), 1.0);

        let f = parse("F[0,1](x > 4)").unwrap();
        let y = x(&[1.0, 3.0]);
        let delta = default_delta(&y);
        let t = teacher_correct(&f, &y, 2).unwrap();
        assert_eq!(t.values(), &[1.0, 4.0 + delta]);
        assert!(eval_bool(&f, &t, 0).unwrap());
        let sat = x(&[5.0, 0.0]);
        assert_eq!(teacher_correct(&f, &sat, 2).unwrap(), sat);
    }

    #[test]
    fn interacting_halfspaces_exact() {
        // x1 + x2 >= 4 and x1 - x2 >= 0 from the origin: optimum cost 4
        let f = parse("x1 + x2 >= 4 & x1 - x2 >= 0").unwrap();
        let s = Schema::new(["x1", "x2"]).unwrap();
        let y = Trace::new(s.clone(), vec![0.0, 0.0]).unwrap();
        let p = Property::compile(&f, &s, 1, 1e-6).unwrap();
        let t = p.teacher(&y).unwrap();
        assert!((t.cost - 4.0).abs() < 1e-9, "{}", t.cost);
        assert!(p.satisfied(&t.trace).unwrap());
    }

    #[test]
    fn infeasible_clauses_are_skipped() {
        let f = parse("F[0,1](x >= 3 & x <= 1)").unwrap();
        let p = Property::compile(&f, &Schema::new(["x"]).unwrap(), 2, 1e-6).unwrap();
        assert_eq!(
            p.teacher(&x(&[0.0, 0.0])),
            Err(ProjectionError::AllInfeasible)
        );
        let f = parse("(x >= 3 & x <= 1) | x >= 5").unwrap();
        let p = Property::compile(&f, &Schema::new(["x"]).unwrap(), 1, 1e-6).unwrap();
        assert_eq!(p.teacher(&x(&[0.0])).unwrap().trace.values(), &[5.0]);
    }

    #[test]
    fn dump_format() {
        let d = to_dnf(&parse("G[0,1](x1 - x2 > 0.5)").unwrap(), 2).unwrap();
        assert_eq!(
            d.dump(),
            "# clause 0\nt=0  1*x1 - 1*x2 > 0.5\nt=1  1*x1 - 1*x2 > 0.5\n"
        );
    }
}
