//! Templated property mining.
//!
//! A [`Template`] is a formula whose selected predicate thresholds are free
//! parameters ("holes"). Robustness is monotone in each threshold, so each
//! hole is tightened by bisection on the boolean "every trace satisfies"
//! predicate, starting from its loose endpoint. Holes are tightened one at a
//! time in declaration order; the remaining holes stay at their current
//! (initially loose) values.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::stl::{value_scale, Cmp, EvalError, Formula, Monitor, Predicate, Schema, Trace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MiningError {
    #[error("no training traces")]
    NoTraces,
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("template row {0} is not a built-in row (1-7)")]
    UnknownRow(u8),
    #[error("template row {row} needs at least two variables, schema has {have}")]
    NeedsTwoVariables { row: u8, have: usize },
    #[error("horizon must be at least {needed} for row {row}, got {horizon}")]
    HorizonTooShort {
        row: u8,
        horizon: usize,
        needed: usize,
    },
    #[error("hole `{hole}` refers to predicate {index}, skeleton has {count}")]
    NoSuchPredicate {
        hole: String,
        index: usize,
        count: usize,
    },
    #[error("predicate {0} is claimed by more than one hole")]
    SharedPredicate(usize),
    #[error("hole `{hole}` declared {declared:?} but robustness is {actual:?} in it")]
    DirectionMismatch {
        hole: String,
        declared: Direction,
        actual: Direction,
    },
    #[error("hole `{hole}` has empty search interval [{lo}, {hi}]")]
    EmptyBounds { hole: String, lo: f64, hi: f64 },
    #[error("template row {row} is unsatisfiable on the data: hole `{hole}` fails at its loose endpoint {value}")]
    Unsatisfiable { row: u8, hole: String, value: f64 },
    #[error("every template failed; no property could be mined")]
    NoProperty,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// How robustness of the filled formula responds to raising a hole's value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Raising the value never lowers robustness (upper bounds such as `x <= a`).
    Increasing,
    /// Raising the value never raises robustness (lower bounds such as `x >= b`).
    Decreasing,
}

impl Direction {
    /// Direction of a predicate threshold with comparison `cmp`, occurring
    /// under positive (`true`) or negative polarity.
    pub fn of(cmp: Cmp, positive: bool) -> Self {
        let d = if cmp.is_lower_bound() {
            Direction::Decreasing
        } else {
            Direction::Increasing
        };
        match (d, positive) {
            (d, true) => d,
            (Direction::Increasing, false) => Direction::Decreasing,
            (Direction::Decreasing, false) => Direction::Increasing,
        }
    }
}

/// A free threshold in a template skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct Hole {
    pub name: String,
    /// Pre-order index of the predicate whose threshold this hole replaces.
    pub predicate: usize,
    pub direction: Direction,
    /// Fixed search bounds; `None` means derived from the data as
    /// `[min - range, max + range]` of the predicate's left-hand side.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Hole {
    pub fn new(name: impl Into<String>, predicate: usize, direction: Direction) -> Self {
        Hole {
            name: name.into(),
            predicate,
            direction,
            lower: None,
            upper: None,
        }
    }

    pub fn with_bounds(mut self, lower: Option<f64>, upper: Option<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    row: u8,
    skeleton: Formula,
    holes: Vec<Hole>,
}

impl Template {
    /// Validates that every hole names a distinct predicate and that its
    /// declared direction matches the predicate's comparison and polarity.
    pub fn new(row: u8, skeleton: Formula, holes: Vec<Hole>) -> Result<Self, MiningError> {
        let mut info = Vec::new();
        skeleton.for_each_predicate(&mut |_, p, positive| info.push((p.cmp(), positive)));
        let mut claimed = vec![false; info.len()];
        for h in &holes {
            let Some(&(cmp, positive)) = info.get(h.predicate) else {
                return Err(MiningError::NoSuchPredicate {
                    hole: h.name.clone(),
                    index: h.predicate,
                    count: info.len(),
                });
            };
            if std::mem::replace(&mut claimed[h.predicate], true) {
                return Err(MiningError::SharedPredicate(h.predicate));
            }
            let actual = Direction::of(cmp, positive);
            if actual != h.direction {
                return Err(MiningError::DirectionMismatch {
                    hole: h.name.clone(),
                    declared: h.direction,
                    actual,
                });
            }
            if let (Some(lo), Some(hi)) = (h.lower, h.upper) {
                if !(lo <= hi) {
                    return Err(MiningError::EmptyBounds {
                        hole: h.name.clone(),
                        lo,
                        hi,
                    });
                }
            }
        }
        Ok(Template {
            row,
            skeleton,
            holes,
        })
    }

    pub fn row(&self) -> u8 {
        self.row
    }

    pub fn skeleton(&self) -> &Formula {
        &self.skeleton
    }

    pub fn holes(&self) -> &[Hole] {
        &self.holes
    }

    /// The skeleton with hole thresholds replaced by `values` (hole order).
    pub fn fill(&self, values: &[f64]) -> Formula {
        let mut f = self.skeleton.clone();
        f.for_each_threshold_mut(&mut |i, th| {
            if let Some(k) = self.holes.iter().position(|h| h.predicate == i) {
                *th = values[k];
            }
        });
        f
    }
}

/// Result of tight inference for one template.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedProperty {
    pub formula: Formula,
    /// Minimum robustness over the training traces at step 0.
    pub tightness: f64,
    pub template_row: u8,
    /// Hole names with their inferred values.
    pub values: Vec<(String, f64)>,
}

impl MinedProperty {
    /// Text form: a header naming the template row and tightness, then one
    /// conjunct per line in the formula grammar.
    pub fn to_text(&self) -> String {
        let mut s = format!("# template={} eps={}\n", self.template_row, self.tightness);
        for c in self.formula.conjuncts() {
            s.push_str(&c.to_string());
            s.push('\n');
        }
        s
    }
}

/// Parses text produced by [`MinedProperty::to_text`] (or any file with one
/// formula per line and `#` comments) into the conjunction of its lines.
pub fn parse_property_text(text: &str) -> Result<Formula, crate::stl::ParseError> {
    let mut parts = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        parts.push(crate::stl::parse(line)?);
    }
    Ok(Formula::conjunction(parts).unwrap_or(Formula::True))
}

/// Conjunction of every successfully mined template instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientProperty {
    pub formula: Formula,
    pub mined: Vec<MinedProperty>,
    /// Templates that failed, with the reason.
    pub skipped: Vec<(u8, String)>,
}

impl ClientProperty {
    pub fn to_text(&self) -> String {
        self.mined.iter().map(MinedProperty::to_text).collect()
    }
}

/// Options for the built-in templates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateOptions {
    /// Length of the non-overlapping windows used by rows 1-4.
    pub window_len: usize,
    /// Number of eventualities for row 7; defaults to one per window.
    pub eventualities: Option<usize>,
}

impl Default for TemplateOptions {
    fn default() -> Self {
        TemplateOptions {
            window_len: 2,
            eventualities: None,
        }
    }
}

fn windows(horizon: usize, len: usize) -> Vec<(usize, usize)> {
    let len = len.max(1);
    (0..horizon)
        .step_by(len)
        .map(|lo| (lo, (lo + len - 1).min(horizon - 1)))
        .collect()
}

/// Builds the template(s) for one row. Single-variable rows produce one
/// template per schema variable; rows 4 and 6 relate the first two variables.
pub fn builtin_template(
    row: u8,
    schema: &Schema,
    horizon: usize,
    opts: TemplateOptions,
) -> Result<Vec<Template>, MiningError> {
    use Direction::{Decreasing as Dec, Increasing as Inc};
    if horizon == 0 {
        return Err(MiningError::HorizonTooShort {
            row,
            horizon,
            needed: 1,
        });
    }
    let names = schema.names();
    let pair = || {
        if names.len() < 2 {
            Err(MiningError::NeedsTwoVariables {
                row,
                have: names.len(),
            })
        } else {
            Ok((names[0].as_str(), names[1].as_str()))
        }
    };
    let wins = windows(horizon, opts.window_len);
    // inner eventuality reach for rows 5 and 6
    let reach = opts.window_len.min(horizon - 1);

    let per_var = |build: &dyn Fn(&str) -> Result<Template, MiningError>| {
        names
            .iter()
            .map(|v| build(v))
            .collect::<Result<Vec<_>, _>>()
    };

    match row {
        1 | 2 => per_var(&|x| {
            let mut parts = Vec::new();
            let mut holes = Vec::new();
            for (k, &(lo, hi)) in wins.iter().enumerate() {
                let body = Formula::and(
                    Formula::atom(x, Cmp::Le, 0.0),
                    Formula::atom(x, Cmp::Ge, 0.0),
                );
                parts.push(if row == 1 {
                    Formula::always(lo, hi, body)
                } else {
                    Formula::eventually(lo, hi, body)
                });
                holes.push(Hole::new(format!("a{k}_{x}"), 2 * k, Inc));
                holes.push(Hole::new(format!("b{k}_{x}"), 2 * k + 1, Dec));
            }
            Template::new(row, Formula::conjunction(parts).unwrap(), holes)
        }),
        3 => {
            if horizon < 2 {
                return Err(MiningError::HorizonTooShort {
                    row,
                    horizon,
                    needed: 2,
                });
            }
            per_var(&|x| {
                let mut parts = Vec::new();
                let mut holes = Vec::new();
                for (k, i) in (0..horizon - 1).step_by(opts.window_len.max(1)).enumerate() {
                    parts.push(Formula::until(
                        i,
                        i + 1,
                        Formula::atom(x, Cmp::Lt, 0.0),
                        Formula::atom(x, Cmp::Lt, 0.0),
                    ));
                    holes.push(Hole::new(format!("a{k}_{x}"), 2 * k, Inc));
                    holes.push(Hole::new(format!("b{k}_{x}"), 2 * k + 1, Inc));
                }
                Template::new(row, Formula::conjunction(parts).unwrap(), holes)
            })
        }
        4 => {
            let (x1, x2) = pair()?;
            let mut parts = Vec::new();
            let mut holes = Vec::new();
            for (k, &(lo, hi)) in wins.iter().enumerate() {
                parts.push(Formula::always(
                    lo,
                    hi,
                    Formula::lin([(x1, 1.0), (x2, -1.0)], Cmp::Gt, 0.0),
                ));
                // the gap is a positive quantity
                holes.push(Hole::new(format!("a{k}"), k, Dec).with_bounds(Some(0.0), None));
            }
            Ok(vec![Template::new(
                row,
                Formula::conjunction(parts).unwrap(),
                holes,
            )?])
        }
        5 | 6 => {
            if horizon < 2 {
                return Err(MiningError::HorizonTooShort {
                    row,
                    horizon,
                    needed: 2,
                });
            }
            let build = |x1: &str, x2: &str| {
                let f = Formula::always(
                    0,
                    horizon - 1 - reach,
                    Formula::implies(
                        Formula::atom(x1, Cmp::Ge, 0.0),
                        Formula::eventually(0, reach, Formula::atom(x2, Cmp::Ge, 0.0)),
                    ),
                );
                let (n1, n2) = if row == 5 {
                    (format!("a1_{x1}"), format!("a2_{x1}"))
                } else {
                    ("a".to_string(), "b".to_string())
                };
                Template::new(row, f, vec![Hole::new(n1, 0, Inc), Hole::new(n2, 1, Dec)])
            };
            if row == 5 {
                per_var(&|x| build(x, x))
            } else {
                let (x1, x2) = pair()?;
                Ok(vec![build(x1, x2)?])
            }
        }
        7 => {
            let n = opts.eventualities.unwrap_or(wins.len()).max(1);
            if n > horizon {
                return Err(MiningError::HorizonTooShort {
                    row,
                    horizon,
                    needed: n,
                });
            }
            per_var(&|x| {
                let mut parts = Vec::new();
                let mut holes = Vec::new();
                for k in 0..n {
                    let lo = k * horizon / n;
                    let hi = (k + 1) * horizon / n - 1;
                    parts.push(Formula::eventually(lo, hi, Formula::atom(x, Cmp::Ge, 0.0)));
                    holes.push(Hole::new(format!("a{}_{x}", k + 1), k, Dec));
                }
                Template::new(row, Formula::conjunction(parts).unwrap(), holes)
            })
        }
        other => Err(MiningError::UnknownRow(other)),
    }
}

/// All built-in rows 1-7 for `schema` over `horizon` steps.
pub fn builtin_templates(
    schema: &Schema,
    horizon: usize,
    opts: TemplateOptions,
) -> Result<Vec<Template>, MiningError> {
    templates_for_rows(&[1, 2, 3, 4, 5, 6, 7], schema, horizon, opts)
}

pub fn templates_for_rows(
    rows: &[u8],
    schema: &Schema,
    horizon: usize,
    opts: TemplateOptions,
) -> Result<Vec<Template>, MiningError> {
    let mut out = Vec::new();
    for &r in rows {
        out.extend(builtin_template(r, schema, horizon, opts)?);
    }
    Ok(out)
}

/// Default mining tolerance: `1e-6` times the value range of the traces.
pub fn default_tolerance(traces: &[Trace]) -> f64 {
    1e-6 * value_scale(traces)
}

struct Problem<'a> {
    tmpl: &'a Template,
    traces: &'a [Trace],
    schema: &'a Schema,
}

impl Problem<'_> {
    fn monitor(&self, values: &[f64]) -> Result<Monitor, MiningError> {
        Ok(Monitor::new(&self.tmpl.fill(values), self.schema)?)
    }

    fn satisfied(&self, values: &[f64]) -> Result<bool, MiningError> {
        let m = self.monitor(values)?;
        for tr in self.traces {
            if !m.eval_bool(tr, 0)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn min_robustness(&self, values: &[f64]) -> Result<f64, MiningError> {
        let m = self.monitor(values)?;
        let mut r = f64::INFINITY;
        for tr in self.traces {
            r = r.min(m.robustness(tr, 0)?);
        }
        Ok(r)
    }

    /// `[min - range, max + range]` of the hole predicate's left-hand side
    /// over every step of every trace, overridden by fixed bounds.
    fn bounds(&self, hole: &Hole) -> Result<(f64, f64), MiningError> {
        let mut pred = None;
        self.tmpl.skeleton.for_each_predicate(&mut |i, p, _| {
            if i == hole.predicate {
                pred = Some(match p {
                    Predicate::Atom(a) => vec![(a.var.clone(), 1.0)],
                    Predicate::Lin(l) => l.coeffs.iter().map(|(v, c)| (v.clone(), *c)).collect(),
                });
            }
        });
        let terms = crate::stl::bind_predicate(
            self.schema,
            pred.expect("validated at construction").into_iter(),
            Cmp::Ge,
            0.0,
            false,
        )?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for tr in self.traces {
            for t in 0..tr.len() {
                let v = terms.slack(tr.row(t));
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let range = hi - lo;
        let pad = if range > 0.0 {
            range
        } else {
            lo.abs().max(1.0)
        };
        let lo = hole.lower.unwrap_or(lo - pad);
        let hi = hole.upper.unwrap_or(hi + pad);
        if !(lo <= hi) {
            return Err(MiningError::EmptyBounds {
                hole: hole.name.clone(),
                lo,
                hi,
            });
        }
        Ok((lo, hi))
    }
}

/// Infers tight values for every hole of `tmpl` on `traces` (evaluated at
/// step 0). The returned tightness is the minimum robustness over traces,
/// which lies in `[0, tol]` whenever at least one hole had an infeasible
/// tight endpoint.
pub fn infer_tight(
    tmpl: &Template,
    traces: &[Trace],
    tol: f64,
) -> Result<MinedProperty, MiningError> {
    if traces.is_empty() {
        return Err(MiningError::NoTraces);
    }
    if !(tol > 0.0) {
        return Err(MiningError::BadTolerance(tol));
    }
    let problem = Problem {
        tmpl,
        traces,
        schema: traces[0].schema(),
    };
    let mut ends = Vec::with_capacity(tmpl.holes.len());
    for h in &tmpl.holes {
        let (lo, hi) = problem.bounds(h)?;
        // (loose, tight)
        ends.push(match h.direction {
            Direction::Increasing => (hi, lo),
            Direction::Decreasing => (lo, hi),
        });
    }
    let mut values: Vec<f64> = ends.iter().map(|e| e.0).collect();
    if !problem.satisfied(&values)? {
        let h = tmpl.holes.first();
        return Err(MiningError::Unsatisfiable {
            row: tmpl.row,
            hole: h.map(|h| h.name.clone()).unwrap_or_default(),
            value: values.first().copied().unwrap_or(f64::NAN),
        });
    }

    for (k, &(loose, tight)) in ends.iter().enumerate() {
        values[k] = tight;
        if problem.satisfied(&values)? {
            continue;
        }
        let (mut sat, mut unsat) = (loose, tight);
        while (sat - unsat).abs() > tol {
            let mid = 0.5 * (sat + unsat);
            if mid == sat || mid == unsat {
                break;
            }
            values[k] = mid;
            if problem.satisfied(&values)? {
                sat = mid;
            } else {
                unsat = mid;
            }
        }
        values[k] = sat;
        // Robustness is 1-Lipschitz in a threshold: shifting by the residual
        // lands on the boundary when this hole is the binding one, so the
        // other holes are loosened while measuring it.
        let mut probe: Vec<f64> = ends.iter().map(|e| e.0).collect();
        probe[k] = sat;
        let slack = problem.min_robustness(&probe)?;
        if slack > 0.0 && slack.is_finite() {
            let snapped = match tmpl.holes[k].direction {
                Direction::Increasing => sat - slack,
                Direction::Decreasing => sat + slack,
            };
            let tighter = (snapped - tight).abs() < (sat - tight).abs();
            values[k] = snapped;
            if !(tighter && problem.satisfied(&values)?) {
                values[k] = sat;
            }
        }
    }

    let formula = tmpl.fill(&values);
    let tightness = problem.min_robustness(&values)?;
    Ok(MinedProperty {
        formula,
        tightness,
        template_row: tmpl.row,
        values: tmpl
            .holes
            .iter()
            .zip(&values)
            .map(|(h, v)| (h.name.clone(), *v))
            .collect(),
    })
}

/// Mines every template on `dataset` and conjoins the successes. Templates
/// that fail are skipped and logged; `tol = None` uses [`default_tolerance`].
pub fn mine_client_property(
    dataset: &[Trace],
    templates: &[Template],
    tol: Option<f64>,
) -> Result<ClientProperty, MiningError> {
    if dataset.is_empty() {
        return Err(MiningError::NoTraces);
    }
    let tol = tol.unwrap_or_else(|| default_tolerance(dataset));
    let results: Vec<_> = templates
        .par_iter()
        .map(|t| (t.row, infer_tight(t, dataset, tol)))
        .collect();
    let mut mined = Vec::new();
    let mut skipped = Vec::new();
    for (row, r) in results {
        match r {
            Ok(m) => mined.push(m),
            Err(e) => {
                log::info!("template row {row} skipped: {e}");
                skipped.push((row, e.to_string()));
            }
        }
    }
    let formula = Formula::conjunction(mined.iter().map(|m| m.formula.clone()))
        .ok_or(MiningError::NoProperty)?;
    Ok(ClientProperty {
        formula,
        mined,
        skipped,
    })
}

impl fmt::Display for MinedProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, eps={}", self.formula, self.tightness)
    }
}
