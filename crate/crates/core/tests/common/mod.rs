// Shared generators and a naive reference evaluator for integration tests.
#![allow(dead_code)]

use fedstl::mining::{Direction, Hole, Template};
use fedstl::stl::{Cmp, Formula, Predicate, Schema, Trace, Window};
use rand::Rng;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Fragment {
    /// Every operator, including negation over until.
    Full,
    /// No until under negative polarity (DNF-expandable).
    Dnf,
    /// Atoms, conjunction and always only.
    Convex,
}

#[derive(Clone, Debug)]
pub struct GenOpts {
    pub vars: Vec<String>,
    pub depth: usize,
    /// Largest step offset the formula may read.
    pub horizon: usize,
    pub fragment: Fragment,
    pub linear: bool,
    pub integer_thresholds: bool,
}

impl GenOpts {
    pub fn new(vars: &[&str], depth: usize, horizon: usize, fragment: Fragment) -> Self {
        GenOpts {
            vars: vars.iter().map(|s| s.to_string()).collect(),
            depth,
            horizon,
            fragment,
            linear: vars.len() > 1,
            integer_thresholds: false,
        }
    }
}

const CMPS: [Cmp; 4] = [Cmp::Ge, Cmp::Gt, Cmp::Le, Cmp::Lt];

fn threshold(rng: &mut impl Rng, o: &GenOpts) -> f64 {
    if o.integer_thresholds {
        rng.random_range(-3..=3) as f64
    } else {
        (rng.random_range(-2.0..2.0f64) * 8.0).round() / 8.0
    }
}

pub fn gen_leaf(rng: &mut impl Rng, o: &GenOpts) -> Formula {
    let cmp = CMPS[rng.random_range(0..4)];
    let th = threshold(rng, o);
    if o.linear && rng.random_bool(0.3) {
        let a = &o.vars[rng.random_range(0..o.vars.len())];
        let b = &o.vars[rng.random_range(0..o.vars.len())];
        let ca = rng.random_range(1..=3) as f64;
        let cb = -(rng.random_range(1..=3) as f64);
        Formula::lin([(a.as_str(), ca), (b.as_str(), cb)], cmp, th)
    } else {
        Formula::atom(o.vars[rng.random_range(0..o.vars.len())].clone(), cmp, th)
    }
}

fn window(rng: &mut impl Rng, budget: usize) -> Window {
    let hi = rng.random_range(0..=budget.min(3));
    let lo = rng.random_range(0..=hi);
    Window::new(lo, hi).unwrap()
}

fn gen(rng: &mut impl Rng, o: &GenOpts, depth: usize, budget: usize, neg: bool) -> Formula {
    if depth == 0 || rng.random_bool(0.25) {
        return gen_leaf(rng, o);
    }
    let choices: &[u8] = match o.fragment {
        Fragment::Convex => &[1, 4],
        Fragment::Dnf if neg => &[0, 1, 2, 3, 4, 5],
        _ => &[0, 1, 2, 3, 4, 5, 6],
    };
    let temporal_ok = budget > 0;
    let mut pick = choices[rng.random_range(0..choices.len())];
    if !temporal_ok && pick >= 4 {
        pick = 1;
    }
    let d = depth - 1;
    match pick {
        0 => Formula::not(gen(rng, o, d, budget, !neg)),
        1 => Formula::and(gen(rng, o, d, budget, neg), gen(rng, o, d, budget, neg)),
        2 => Formula::or(gen(rng, o, d, budget, neg), gen(rng, o, d, budget, neg)),
        3 => Formula::implies(gen(rng, o, d, budget, !neg), gen(rng, o, d, budget, neg)),
        4 | 5 => {
            let w = window(rng, budget);
            let body = gen(rng, o, d, budget - w.hi, neg);
            if pick == 4 {
                Formula::Always(w, Box::new(body))
            } else {
                Formula::Eventually(w, Box::new(body))
            }
        }
        _ => {
            let w = window(rng, budget);
            Formula::Until(
                w,
                Box::new(gen(rng, o, d, budget - w.hi, neg)),
                Box::new(gen(rng, o, d, budget - w.hi, neg)),
            )
        }
    }
}

pub fn gen_formula(rng: &mut impl Rng, o: &GenOpts) -> Formula {
    gen(rng, o, o.depth, o.horizon, false)
}

/// Values on a 1/4 grid in [-3, 3], so ties with thresholds happen often.
pub fn gen_trace(rng: &mut impl Rng, vars: &[&str], len: usize) -> Trace {
    let schema = Schema::new(vars.iter().copied()).unwrap();
    let data = (0..len * vars.len())
        .map(|_| rng.random_range(-12..=12) as f64 / 4.0)
        .collect();
    Trace::new(schema, data).unwrap()
}

/// Continuous values in [-3, 3].
pub fn gen_trace_continuous(rng: &mut impl Rng, vars: &[&str], len: usize) -> Trace {
    let schema = Schema::new(vars.iter().copied()).unwrap();
    let data = (0..len * vars.len())
        .map(|_| rng.random_range(-3.0..3.0))
        .collect();
    Trace::new(schema, data).unwrap()
}

fn lhs(f: &Formula, tr: &Trace, t: usize) -> Option<(f64, Cmp, f64)> {
    let col = |v: &str| tr.schema().index_of(v).unwrap();
    match f {
        Formula::Atom(a) => Some((tr.get(t, col(&a.var)), a.cmp, a.threshold)),
        Formula::LinAtom(l) => Some((
            l.coeffs.iter().map(|(v, c)| c * tr.get(t, col(v))).sum(),
            l.cmp,
            l.threshold,
        )),
        _ => None,
    }
}

fn pred_slack(v: f64, cmp: Cmp, th: f64) -> f64 {
    match cmp {
        Cmp::Ge | Cmp::Gt => v - th,
        Cmp::Le | Cmp::Lt => th - v,
    }
}

/// Reference boolean semantics written directly from the definitions.
pub fn naive_bool(f: &Formula, tr: &Trace, t: usize) -> bool {
    if let Some((v, cmp, th)) = lhs(f, tr, t) {
        return match cmp {
            Cmp::Ge => v >= th,
            Cmp::Gt => v > th,
            Cmp::Le => v <= th,
            Cmp::Lt => v < th,
        };
    }
    match f {
        Formula::True => true,
        Formula::Not(p) => !naive_bool(p, tr, t),
        Formula::And(a, b) => naive_bool(a, tr, t) && naive_bool(b, tr, t),
        Formula::Or(a, b) => naive_bool(a, tr, t) || naive_bool(b, tr, t),
        Formula::Implies(a, b) => !naive_bool(a, tr, t) || naive_bool(b, tr, t),
        Formula::Always(w, p) => (t + w.lo..=t + w.hi).all(|s| naive_bool(p, tr, s)),
        Formula::Eventually(w, p) => (t + w.lo..=t + w.hi).any(|s| naive_bool(p, tr, s)),
        Formula::Until(w, p, q) => (t + w.lo..=t + w.hi)
            .any(|s| naive_bool(q, tr, s) && (t..=s).all(|r| naive_bool(p, tr, r))),
        _ => unreachable!(),
    }
}

/// Reference robustness written directly from the definitions.
pub fn naive_rob(f: &Formula, tr: &Trace, t: usize) -> f64 {
    if let Some((v, cmp, th)) = lhs(f, tr, t) {
        return pred_slack(v, cmp, th);
    }
    let min = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::INFINITY, f64::min);
    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NEG_INFINITY, f64::max);
    match f {
        Formula::True => f64::INFINITY,
        Formula::Not(p) => -naive_rob(p, tr, t),
        Formula::And(a, b) => naive_rob(a, tr, t).min(naive_rob(b, tr, t)),
        Formula::Or(a, b) => naive_rob(a, tr, t).max(naive_rob(b, tr, t)),
        Formula::Implies(a, b) => (-naive_rob(a, tr, t)).max(naive_rob(b, tr, t)),
        Formula::Always(w, p) => min(&mut (t + w.lo..=t + w.hi).map(|s| naive_rob(p, tr, s))),
        Formula::Eventually(w, p) => max(&mut (t + w.lo..=t + w.hi).map(|s| naive_rob(p, tr, s))),
        Formula::Until(w, p, q) => max(&mut (t + w.lo..=t + w.hi).map(|s| {
            let hold = min(&mut (t..=s).map(|r| naive_rob(p, tr, r)));
            naive_rob(q, tr, s).min(hold)
        })),
        _ => unreachable!(),
    }
}

/// Random formula over `x` with one predicate turned into a hole, plus
/// three training traces long enough to evaluate it.
pub fn single_hole_case(rng: &mut impl Rng) -> (Template, Vec<Trace>) {
    let mut o = GenOpts::new(&["x"], 3, 4, Fragment::Full);
    o.linear = false;
    let f = gen_formula(rng, &o);
    let n = f.predicate_count();
    let k = rng.random_range(0..n);
    let mut dir = None;
    f.for_each_predicate(&mut |i, p, positive| {
        if i == k {
            dir = Some(Direction::of(p.cmp(), positive));
        }
    });
    let t = Template::new(0, f.clone(), vec![Hole::new("p", k, dir.unwrap())]).unwrap();
    let len = f.horizon() + 1 + rng.random_range(0..3);
    let traces = (0..3)
        .map(|_| gen_trace_continuous(rng, &["x"], len))
        .collect();
    (t, traces)
}

fn all_hold(f: &Formula, traces: &[Trace]) -> bool {
    traces.iter().all(|tr| naive_bool(f, tr, 0))
}

/// Tightest satisfying hole value found by scanning a uniform grid from the
/// tight end of the default search interval toward the loose end.
pub fn grid_oracle(t: &Template, traces: &[Trace], step: f64) -> Option<f64> {
    let h = &t.holes()[0];
    let mut var = None;
    t.skeleton().for_each_predicate(&mut |i, p, _| {
        if i == h.predicate {
            if let Predicate::Atom(a) = p {
                var = Some(a.var.clone());
            }
        }
    });
    let col = traces[0].schema().index_of(&var.unwrap()).unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for tr in traces {
        let (a, b) = tr.range_of(col);
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let r = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
    let (lo, hi) = (lo - r, hi + r);
    let n = ((hi - lo) / step).ceil() as usize;
    for k in 0..=n {
        let p = match h.direction {
            Direction::Increasing => (lo + k as f64 * step).min(hi),
            Direction::Decreasing => (hi - k as f64 * step).max(lo),
        };
        if all_hold(&t.fill(&[p]), traces) {
            return Some(p);
        }
    }
    None
}

/// Cheapest satisfying trace on a grid of edits: every coordinate ranges
/// over multiples of `res` in `[lo, hi]`. Returns the L1 cost.
pub fn grid_projection(f: &Formula, y: &Trace, res: f64, lo: f64, hi: f64) -> Option<f64> {
    let n = ((hi - lo) / res).round() as usize + 1;
    let dims = y.values().len();
    let mut idx = vec![0usize; dims];
    let mut best: Option<f64> = None;
    loop {
        let vals: Vec<f64> = idx.iter().map(|&i| lo + i as f64 * res).collect();
        let cost: f64 = vals
            .iter()
            .zip(y.values())
            .map(|(a, b)| (a - b).abs())
            .sum();
        if best.is_none_or(|b| cost < b) {
            let cand = y.with_values(vals).unwrap();
            if naive_bool(f, &cand, 0) {
                best = Some(cost);
            }
        }
        let mut d = 0;
        loop {
            if d == dims {
                return best;
            }
            idx[d] += 1;
            if idx[d] < n {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

use fedstl::models::{local_loss, loss_and_gradient, Arch, Batch, ModelState};
use fedstl::projection::Property;

pub fn random_batch(rng: &mut impl Rng, arch: Arch, n: usize) -> Batch {
    let vars: Vec<String> = (0..arch.n_vars()).map(|i| format!("x{i}")).collect();
    let names: Vec<&str> = vars.iter().map(|s| s.as_str()).collect();
    let inputs = (0..n)
        .map(|_| gen_trace_continuous(rng, &names, arch.input_len()))
        .collect();
    let targets = (0..n)
        .map(|_| gen_trace_continuous(rng, &names, arch.output_len()))
        .collect();
    Batch::new(inputs, targets).unwrap()
}

/// Box property `G[0,m-1](x_i <= hi_i & x_i >= lo_i)` over every variable.
pub fn random_box_property(rng: &mut impl Rng, arch: Arch) -> (Formula, Vec<(f64, f64)>) {
    let m = arch.output_len();
    let mut parts = Vec::new();
    let mut bounds = Vec::new();
    for i in 0..arch.n_vars() {
        let lo: f64 = rng.random_range(-1.0..0.5);
        let hi = lo + rng.random_range(0.1..1.0);
        let v = format!("x{i}");
        parts.push(Formula::always(
            0,
            m - 1,
            Formula::and(
                Formula::atom(v.clone(), Cmp::Le, hi),
                Formula::atom(v, Cmp::Ge, lo),
            ),
        ));
        bounds.push((lo, hi));
    }
    (Formula::conjunction(parts).unwrap(), bounds)
}

/// Largest relative error between the analytic gradient and central
/// differences (step 1e-5) at one random point, or `None` when a prediction
/// sits within 1e-3 of a penalty kink.
pub fn gradient_check_point(rng: &mut impl Rng, arch: Arch) -> Option<f64> {
    let mut model = ModelState::init(arch, rng);
    for p in model.shared.iter_mut().chain(model.private.iter_mut()) {
        *p *= 2.0;
    }
    let batch = random_batch(rng, arch, 3);
    let (f, bounds) = random_box_property(rng, arch);
    let schema = batch.inputs[0].schema().clone();
    let prop = Property::compile(&f, &schema, arch.output_len(), 1e-9).unwrap();
    let lambda: f64 = rng.random_range(0.5..2.0);
    for x in &batch.inputs {
        let y = model.forward(x).unwrap();
        for t in 0..y.len() {
            for (v, &(lo, hi)) in bounds.iter().enumerate() {
                let p = y.get(t, v);
                if (p - lo).abs() < 1e-3 || (p - hi).abs() < 1e-3 {
                    return None;
                }
            }
        }
    }
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (_, grad) = loss_and_gradient(&model, &batch, &idx, Some(&prop), lambda).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..model.n_params() {
        let orig = model.param(i);
        *model.param_mut(i) = orig + h;
        let up = local_loss(&model, &batch, Some(&prop), lambda).unwrap();
        *model.param_mut(i) = orig - h;
        let down = local_loss(&model, &batch, Some(&prop), lambda).unwrap();
        *model.param_mut(i) = orig;
        let num = (up - down) / (2.0 * h);
        let err = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    Some(worst)
}
