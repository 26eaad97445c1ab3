//! Sequence predictors with a shared/private parameter split.
//!
//! Parameters live in two flat vectors. `shared` holds the body that clusters
//! aggregate (the AR weight matrix, or the GRU cell); `private` holds the
//! output bias or head, which never leaves the client.
//!
//! The training objective per sample is `MSE(target, pred) + lambda * L_p`,
//! where `L_p` is the L1 distance from the prediction to the property's
//! satisfaction region. Its gradient treats the teacher projection as a
//! constant target: `lambda * sign(pred - teacher(pred))`, with `sign(0) = 0`.

use std::fmt;
use std::io::{Read, Write};

use rand::Rng;
use thiserror::Error;

use crate::projection::{ProjectionError, Property};
use crate::stl::{Schema, Trace};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {got_steps} steps x {got_vars} vars, model expects {steps} x {vars}")]
    InputShape {
        got_steps: usize,
        got_vars: usize,
        steps: usize,
        vars: usize,
    },
    #[error("target has {got_steps} steps x {got_vars} vars, model predicts {steps} x {vars}")]
    TargetShape {
        got_steps: usize,
        got_vars: usize,
        steps: usize,
        vars: usize,
    },
    #[error("batch has {inputs} inputs and {targets} targets")]
    Unaligned { inputs: usize, targets: usize },
    #[error("parameter vector lengths {shared}+{private} do not match the architecture ({want_shared}+{want_private})")]
    ParamLength {
        shared: usize,
        private: usize,
        want_shared: usize,
        want_private: usize,
    },
    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("non-finite prediction at output {index}")]
    NonFiniteOutput { index: usize },
    #[error("penalty weight must be >= 0, got {0}")]
    NegativeLambda(f64),
    #[error("a property is required when lambda > 0")]
    MissingProperty,
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    LinearAr {
        input_len: usize,
        output_len: usize,
        n_vars: usize,
    },
    MiniGru {
        hidden: usize,
        input_len: usize,
        output_len: usize,
        n_vars: usize,
    },
}

impl Arch {
    pub fn input_len(&self) -> usize {
        match *self {
            Arch::LinearAr { input_len, .. } | Arch::MiniGru { input_len, .. } => input_len,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            Arch::LinearAr { output_len, .. } | Arch::MiniGru { output_len, .. } => output_len,
        }
    }

    pub fn n_vars(&self) -> usize {
        match *self {
            Arch::LinearAr { n_vars, .. } | Arch::MiniGru { n_vars, .. } => n_vars,
        }
    }

    fn outputs(&self) -> usize {
        self.output_len() * self.n_vars()
    }

    pub fn shared_len(&self) -> usize {
        match *self {
            Arch::LinearAr {
                input_len, n_vars, ..
            } => self.outputs() * input_len * n_vars,
            Arch::MiniGru { hidden, n_vars, .. } => 3 * gate_len(hidden, n_vars),
        }
    }

    pub fn private_len(&self) -> usize {
        match *self {
            Arch::LinearAr { .. } => self.outputs(),
            Arch::MiniGru { hidden, .. } => self.outputs() * (hidden + 1),
        }
    }

    fn descriptor(&self) -> String {
        match *self {
            Arch::LinearAr {
                input_len,
                output_len,
                n_vars,
            } => format!("linear_ar input_len={input_len} output_len={output_len} n_vars={n_vars}"),
            Arch::MiniGru {
                hidden,
                input_len,
                output_len,
                n_vars,
            } => format!(
                "mini_gru hidden={hidden} input_len={input_len} output_len={output_len} n_vars={n_vars}"
            ),
        }
    }

    fn parse_descriptor(line: &str) -> Result<Arch, ModelError> {
        let bad = || ModelError::Checkpoint(format!("bad descriptor `{line}`"));
        let mut parts = line.split_whitespace();
        let kind = parts.next().ok_or_else(bad)?;
        let mut get = |key: &str| -> Result<usize, ModelError> {
            let kv = parts.next().ok_or_else(bad)?;
            kv.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .and_then(|v| v.parse().ok())
                .ok_or_else(bad)
        };
        match kind {
            "linear_ar" => Ok(Arch::LinearAr {
                input_len: get("input_len")?,
                output_len: get("output_len")?,
                n_vars: get("n_vars")?,
            }),
            "mini_gru" => Ok(Arch::MiniGru {
                hidden: get("hidden")?,
                input_len: get("input_len")?,
                output_len: get("output_len")?,
                n_vars: get("n_vars")?,
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptor())
    }
}

/// W (h x v), U (h x h), b (h) for one GRU gate.
fn gate_len(h: usize, v: usize) -> usize {
    h * v + h * h + h
}

/// Which parameters an update touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    SharedOnly,
    PrivateOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub arch: Arch,
    pub shared: Vec<f64>,
    pub private: Vec<f64>,
}

/// Aligned input and target windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Trace>,
    pub targets: Vec<Trace>,
}

impl Batch {
    pub fn new(inputs: Vec<Trace>, targets: Vec<Trace>) -> Result<Self, ModelError> {
        if inputs.len() != targets.len() {
            return Err(ModelError::Unaligned {
                inputs: inputs.len(),
                targets: targets.len(),
            });
        }
        Ok(Batch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Appends every pair of `other`.
    pub fn extend(&mut self, other: &Batch) {
        self.inputs.extend(other.inputs.iter().cloned());
        self.targets.extend(other.targets.iter().cloned());
    }

    pub fn subset(&self, idx: &[usize]) -> Batch {
        Batch {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-step GRU activations kept for backprop.
struct GruStep {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
}

impl ModelState {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(arch: Arch, rng: &mut impl Rng) -> Self {
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let r = 1.0 / (fan_in.max(1) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-r..=r)).collect()
        };
        match arch {
            Arch::LinearAr {
                input_len, n_vars, ..
            } => {
                let fan = input_len * n_vars;
                ModelState {
                    arch,
                    shared: draw(arch.shared_len(), fan),
                    private: draw(arch.private_len(), fan),
                }
            }
            Arch::MiniGru { hidden, n_vars, .. } => ModelState {
                arch,
                shared: draw(arch.shared_len(), hidden + n_vars),
                private: draw(arch.private_len(), hidden),
            },
        }
    }

    pub fn zeros(arch: Arch) -> Self {
        ModelState {
            arch,
            shared: vec![0.0; arch.shared_len()],
            private: vec![0.0; arch.private_len()],
        }
    }

    pub fn from_parts(arch: Arch, shared: Vec<f64>, private: Vec<f64>) -> Result<Self, ModelError> {
        if shared.len() != arch.shared_len() || private.len() != arch.private_len() {
            return Err(ModelError::ParamLength {
                shared: shared.len(),
                private: private.len(),
                want_shared: arch.shared_len(),
                want_private: arch.private_len(),
            });
        }
        Ok(ModelState {
            arch,
            shared,
            private,
        })
    }

    pub fn n_params(&self) -> usize {
        self.shared.len() + self.private.len()
    }

    /// Parameter `i` of the concatenation `shared ++ private`.
    pub fn param(&self, i: usize) -> f64 {
        if i < self.shared.len() {
            self.shared[i]
        } else {
            self.private[i - self.shared.len()]
        }
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let n = self.shared.len();
        if i < n {
            &mut self.shared[i]
        } else {
            &mut self.private[i - n]
        }
    }

    fn check_input(&self, x: &Trace) -> Result<(), ModelError> {
        let a = self.arch;
        if x.len() != a.input_len() || x.n_vars() != a.n_vars() {
            return Err(ModelError::InputShape {
                got_steps: x.len(),
                got_vars: x.n_vars(),
                steps: a.input_len(),
                vars: a.n_vars(),
            });
        }
        Ok(())
    }

    fn check_target(&self, y: &Trace) -> Result<(), ModelError> {
        let a = self.arch;
        if y.len() != a.output_len() || y.n_vars() != a.n_vars() {
            return Err(ModelError::TargetShape {
                got_steps: y.len(),
                got_vars: y.n_vars(),
                steps: a.output_len(),
                vars: a.n_vars(),
            });
        }
        Ok(())
    }

    /// Flat prediction (row-major, `output_len x n_vars`) plus the GRU
    /// activations when needed for backprop.
    fn run(&self, x: &Trace, keep: bool) -> (Vec<f64>, Vec<GruStep>, Vec<f64>) {
        let out = self.arch.outputs();
        match self.arch {
            Arch::LinearAr { .. } => {
                let xv = x.values();
                let k = xv.len();
                let y = (0..out)
                    .map(|o| {
                        let w = &self.shared[o * k..(o + 1) * k];
                        w.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>() + self.private[o]
                    })
                    .collect();
                (y, Vec::new(), Vec::new())
            }
            Arch::MiniGru {
                hidden: h,
                n_vars: v,
                ..
            } => {
                let g = gate_len(h, v);
                let mut state = vec![0.0; h];
                let mut steps = Vec::with_capacity(if keep { x.len() } else { 0 });
                for t in 0..x.len() {
                    let xt = x.row(t);
                    let pre = |gate: usize, hv: &[f64], i: usize| {
                        let base = gate * g;
                        let w = &self.shared[base + i * v..base + (i + 1) * v];
                        let u = &self.shared[base + h * v + i * h..base + h * v + (i + 1) * h];
                        let b = self.shared[base + h * v + h * h + i];
                        w.iter().zip(xt).map(|(a, b)| a * b).sum::<f64>()
                            + u.iter().zip(hv).map(|(a, b)| a * b).sum::<f64>()
                            + b
                    };
                    let z: Vec<f64> = (0..h).map(|i| sigmoid(pre(0, &state, i))).collect();
                    let r: Vec<f64> = (0..h).map(|i| sigmoid(pre(1, &state, i))).collect();
                    let rh: Vec<f64> = (0..h).map(|i| r[i] * state[i]).collect();
                    let cand: Vec<f64> = (0..h).map(|i| pre(2, &rh, i).tanh()).collect();
                    let next: Vec<f64> = (0..h)
                        .map(|i| (1.0 - z[i]) * state[i] + z[i] * cand[i])
                        .collect();
                    if keep {
                        steps.push(GruStep {
                            h_prev: std::mem::replace(&mut state, next),
                            z,
                            r,
                            cand,
                        });
                    } else {
                        state = next;
                    }
                }
                let y = (0..out)
                    .map(|o| {
                        let w = &self.private[o * h..(o + 1) * h];
                        w.iter().zip(&state).map(|(a, b)| a * b).sum::<f64>()
                            + self.private[out * h + o]
                    })
                    .collect();
                (y, steps, state)
            }
        }
    }

    /// Prediction with `output_len` steps, in the input's schema.
    pub fn forward(&self, x: &Trace) -> Result<Trace, ModelError> {
        self.check_input(x)?;
        let (y, _, _) = self.run(x, false);
        trace_of(x.schema(), y)
    }

    /// Accumulates `d loss / d params` for one sample given `d loss / d y`.
    fn backward(&self, x: &Trace, dy: &[f64], steps: &[GruStep], last: &[f64], grad: &mut [f64]) {
        let out = self.arch.outputs();
        let ns = self.shared.len();
        match self.arch {
            Arch::LinearAr { .. } => {
                let xv = x.values();
                let k = xv.len();
                for (o, &d) in dy.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (gw, &xi) in grad[o * k..(o + 1) * k].iter_mut().zip(xv) {
                        *gw += d * xi;
                    }
                    grad[ns + o] += d;
                }
            }
            Arch::MiniGru {
                hidden: h,
                n_vars: v,
                ..
            } => {
                let g = gate_len(h, v);
                let mut dh = vec![0.0; h];
                for (o, &d) in dy.iter().enumerate() {
                    for i in 0..h {
                        grad[ns + o * h + i] += d * last[i];
                        dh[i] += d * self.private[o * h + i];
                    }
                    grad[ns + out * h + o] += d;
                }
                let (w_off, u_off, b_off) = (0, h * v, h * v + h * h);
                for t in (0..steps.len()).rev() {
                    let s = &steps[t];
                    let xt = x.row(t);
                    let mut dprev: Vec<f64> = (0..h).map(|i| dh[i] * (1.0 - s.z[i])).collect();
                    let rh: Vec<f64> = (0..h).map(|i| s.r[i] * s.h_prev[i]).collect();
                    // candidate gate
                    let dc: Vec<f64> = (0..h)
                        .map(|i| dh[i] * s.z[i] * (1.0 - s.cand[i] * s.cand[i]))
                        .collect();
                    let mut drh = vec![0.0; h];
                    let base = 2 * g;
                    for i in 0..h {
                        let d = dc[i];
                        for j in 0..v {
                            grad[base + w_off + i * v + j] += d * xt[j];
                        }
                        for j in 0..h {
                            grad[base + u_off + i * h + j] += d * rh[j];
                            drh[j] += d * self.shared[base + u_off + i * h + j];
                        }
                        grad[base + b_off + i] += d;
                    }
                    let dz: Vec<f64> = (0..h)
                        .map(|i| dh[i] * (s.cand[i] - s.h_prev[i]) * s.z[i] * (1.0 - s.z[i]))
                        .collect();
                    let dr: Vec<f64> = (0..h)
                        .map(|i| drh[i] * s.h_prev[i] * s.r[i] * (1.0 - s.r[i]))
                        .collect();
                    for i in 0..h {
                        dprev[i] += drh[i] * s.r[i];
                    }
                    for (gate, dpre) in [(0usize, &dz), (1, &dr)] {
                        let base = gate * g;
                        for i in 0..h {
                            let d = dpre[i];
                            if d == 0.0 {
                                continue;
                            }
                            for j in 0..v {
                                grad[base + w_off + i * v + j] += d * xt[j];
                            }
                            for j in 0..h {
                                grad[base + u_off + i * h + j] += d * s.h_prev[j];
                                dprev[j] += d * self.shared[base + u_off + i * h + j];
                            }
                            grad[base + b_off + i] += d;
                        }
                    }
                    dh = dprev;
                }
            }
        }
    }

    /// Serializes as an architecture line followed by little-endian f64s
    /// (shared then private).
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<(), ModelError> {
        writeln!(w, "{}", self.arch.descriptor())?;
        for v in self.shared.iter().chain(&self.private) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| ModelError::Checkpoint("missing descriptor line".into()))?;
        let line = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| ModelError::Checkpoint("descriptor is not utf-8".into()))?;
        let arch = Arch::parse_descriptor(line)?;
        let body = &bytes[nl + 1..];
        let n = arch.shared_len() + arch.private_len();
        if body.len() != 8 * n {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameter bytes for {arch}, found {}",
                8 * n,
                body.len()
            )));
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let private = vals[arch.shared_len()..].to_vec();
        let mut shared = vals;
        shared.truncate(arch.shared_len());
        ModelState::from_parts(arch, shared, private)
    }
}

fn trace_of(schema: &Schema, y: Vec<f64>) -> Result<Trace, ModelError> {
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteOutput { index: i });
    }
    Ok(Trace::new(schema.clone(), y).expect("checked finite"))
}

fn check_lambda(lambda: f64, prop: Option<&Property>) -> Result<(), ModelError> {
    if !(lambda >= 0.0) {
        return Err(ModelError::NegativeLambda(lambda));
    }
    if lambda > 0.0 && prop.is_none() {
        return Err(ModelError::MissingProperty);
    }
    Ok(())
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64
}

/// Mean over the batch of `MSE + lambda * L_p`.
pub fn local_loss(
    model: &ModelState,
    batch: &Batch,
    prop: Option<&Property>,
    lambda: f64,
) -> Result<f64, ModelError> {
    check_lambda(lambda, prop)?;
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (x, y) in batch.inputs.iter().zip(&batch.targets) {
        model.check_input(x)?;
        model.check_target(y)?;
        let pred = model.forward(x)?;
        total += mse(pred.values(), y.values());
        if lambda > 0.0 {
            total += lambda * prop.unwrap().loss(&pred)?;
        }
    }
    Ok(total / batch.len() as f64)
}

/// Loss and gradient over `shared ++ private` for the samples `idx`.
pub fn loss_and_gradient(
    model: &ModelState,
    batch: &Batch,
    idx: &[usize],
    prop: Option<&Property>,
    lambda: f64,
) -> Result<(f64, Vec<f64>), ModelError> {
    check_lambda(lambda, prop)?;
    let mut grad = vec![0.0; model.n_params()];
    if idx.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / idx.len() as f64;
    let out = model.arch.outputs() as f64;
    let mut total = 0.0;
    for &i in idx {
        let (x, y) = (&batch.inputs[i], &batch.targets[i]);
        model.check_input(x)?;
        model.check_target(y)?;
        let (pred, steps, last) = model.run(x, true);
        let mut dy: Vec<f64> = pred
            .iter()
            .zip(y.values())
            .map(|(p, t)| 2.0 * (p - t) / out)
            .collect();
        total += mse(&pred, y.values());
        if lambda > 0.0 {
            let tr = trace_of(x.schema(), pred.clone())?;
            let teacher = prop.unwrap().teacher(&tr)?;
            total += lambda * teacher.cost;
            if teacher.cost > 0.0 {
                for ((d, p), q) in dy.iter_mut().zip(&pred).zip(teacher.trace.values()) {
                    let s = p - q;
                    if s != 0.0 {
                        *d += lambda * s.signum();
                    }
                }
            }
        }
        for d in dy.iter_mut() {
            *d *= scale;
        }
        model.backward(x, &dy, &steps, &last, &mut grad);
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(ModelError::NonFiniteGradient { index });
    }
    Ok((total * scale, grad))
}

/// One SGD step over the whole batch, restricted to `scope`.
pub fn sgd_step(
    model: &ModelState,
    batch: &Batch,
    prop: Option<&Property>,
    lambda: f64,
    eta: f64,
    scope: Scope,
) -> Result<ModelState, ModelError> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut m = model.clone();
    sgd_step_on(&mut m, batch, &idx, prop, lambda, eta, scope)?;
    Ok(m)
}

/// In-place SGD step on the samples `idx`; returns the pre-step loss.
pub fn sgd_step_on(
    model: &mut ModelState,
    batch: &Batch,
    idx: &[usize],
    prop: Option<&Property>,
    lambda: f64,
    eta: f64,
    scope: Scope,
) -> Result<f64, ModelError> {
    let (loss, grad) = loss_and_gradient(model, batch, idx, prop, lambda)?;
    let ns = model.shared.len();
    if scope != Scope::PrivateOnly {
        for (p, g) in model.shared.iter_mut().zip(&grad[..ns]) {
            *p -= eta * g;
        }
    }
    if scope != Scope::SharedOnly {
        for (p, g) in model.private.iter_mut().zip(&grad[ns..]) {
            *p -= eta * g;
        }
    }
    Ok(loss)
}

/// `epochs` passes of shuffled minibatch SGD over `batch`.
#[allow(clippy::too_many_arguments)]
pub fn train_epochs(
    model: &mut ModelState,
    batch: &Batch,
    prop: Option<&Property>,
    lambda: f64,
    eta: f64,
    batch_size: usize,
    epochs: usize,
    scope: Scope,
    rng: &mut impl Rng,
) -> Result<(), ModelError> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size.max(1)) {
            sgd_step_on(model, batch, chunk, prop, lambda, eta, scope)?;
        }
    }
    Ok(())
}
