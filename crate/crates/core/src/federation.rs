//! Property-clustered federated training and a FedAvg baseline.
//!
//! Each client mines a property from its training targets and trains with
//! the property-penalized objective. Clusters hold a shared body plus a
//! cluster-local head. Clients are assigned to the cluster whose model's
//! predictions on the client's desensitized sample have the lowest property
//! loss under the property mined from that sample.
//!
//! All randomness is derived from the configured seed through per-purpose
//! ChaCha streams, and every reduction runs in client or cluster id order,
//! so runs are reproducible regardless of thread count.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::datagen::ClientData;
use crate::mining::{mine_client_property, MiningError, Template};
use crate::models::{train_epochs, Arch, Batch, ModelError, ModelState, Scope};
use crate::projection::{ProjectionError, Property};
use crate::stl::{value_scale, Formula, Schema, Trace};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("invalid federation config: {0}")]
    Config(String),
    #[error("aggregation: {0}")]
    Aggregate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Mining(#[from] MiningError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterInit {
    /// Every cluster starts from the same initial model.
    Common,
    /// Cluster heads are fitted to the samples of farthest-first seed
    /// clients (only when there is more than one cluster).
    Seeded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub rounds: usize,
    pub participation: f64,
    pub local_epochs: usize,
    pub cluster_epochs: usize,
    /// Clustering runs every this many rounds.
    pub cluster_period: usize,
    pub n_clusters: usize,
    pub lambda: f64,
    pub eta: f64,
    pub eta_cluster: f64,
    pub batch_size: usize,
    /// Aggregate and broadcast the private part too (full sharing).
    pub share_private: bool,
    pub cluster_init: ClusterInit,
    /// Relative strictness margin (times the value range of the data).
    pub delta_rel: f64,
    pub mining_tol: Option<f64>,
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            rounds: 50,
            participation: 0.1,
            local_epochs: 6,
            cluster_epochs: 4,
            cluster_period: 5,
            n_clusters: 5,
            lambda: 1.0,
            eta: 0.01,
            eta_cluster: 0.01,
            batch_size: 64,
            share_private: false,
            cluster_init: ClusterInit::Seeded,
            delta_rel: 1e-6,
            mining_tol: None,
            seed: 0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self, n_clients: usize) -> Result<(), FedError> {
        let bad = |m: &str| Err(FedError::Config(m.to_string()));
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return bad("participation must be in (0, 1]");
        }
        if n_clients == 0 {
            return bad("no clients");
        }
        if self.selection_size(n_clients) == 0 {
            return bad("participation selects no clients");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        if !(self.eta > 0.0) || !(self.eta_cluster > 0.0) {
            return bad("learning rates must be > 0");
        }
        if self.local_epochs + self.cluster_epochs == 0 {
            return bad("local_epochs + cluster_epochs must be >= 1");
        }
        if self.cluster_period == 0 {
            return bad("cluster_period must be >= 1");
        }
        if self.n_clusters == 0 || self.n_clusters > n_clients {
            return bad("n_clusters must be in 1..=n_clients");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.delta_rel > 0.0) {
            return bad("delta_rel must be > 0");
        }
        Ok(())
    }

    pub fn selection_size(&self, n_clients: usize) -> usize {
        ((self.participation * n_clients as f64).ceil() as usize).min(n_clients)
    }
}

const INIT: u64 = 1;
const SELECT: u64 = 2;
const CLIENT: u64 = 3;
const CLUSTER: u64 = 4;

fn stream(seed: u64, purpose: u64, round: usize, id: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(purpose << 56 | (round as u64) << 28 | id as u64);
    r
}

/// Sorted ids of the clients taking part in `round`.
pub fn select_clients(cfg: &FedConfig, n_clients: usize, round: usize) -> Vec<usize> {
    let mut rng = stream(cfg.seed, SELECT, round, 0);
    let mut v =
        rand::seq::index::sample(&mut rng, n_clients, cfg.selection_size(n_clients)).into_vec();
    v.sort_unstable();
    v
}

/// `sum(n_i * v_i) / sum(n_i)`, accumulated in input order.
pub fn aggregate(parts: &[(&[f64], usize)]) -> Result<Vec<f64>, FedError> {
    let Some(first) = parts.first() else {
        return Err(FedError::Aggregate("no members".into()));
    };
    let len = first.0.len();
    let mut total = 0usize;
    let mut acc = vec![0.0; len];
    for (v, n) in parts {
        if v.len() != len {
            return Err(FedError::Aggregate(format!("length {} vs {len}", v.len())));
        }
        if *n == 0 {
            return Err(FedError::Aggregate("zero sample count".into()));
        }
        total += n;
        let w = *n as f64;
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += w * x;
        }
    }
    let t = total as f64;
    for a in acc.iter_mut() {
        *a /= t;
    }
    Ok(acc)
}

/// Immutable per-client setup: data and mined properties.
#[derive(Debug)]
pub struct ClientInfo {
    pub id: usize,
    pub data: ClientData,
    /// Property mined from the training targets.
    pub property: Formula,
    prop: Property,
    /// Property mined from the desensitized sample; `None` when mining failed.
    sample_prop: Option<Property>,
}

impl ClientInfo {
    /// Client with given (not mined) properties.
    pub fn new(
        data: ClientData,
        property: Formula,
        sample_property: Option<Formula>,
        cfg: &FedConfig,
    ) -> Result<Self, FedError> {
        let prop = compile(&property, &data.train.targets, cfg)?;
        let sample_prop = match sample_property {
            Some(f) => Some(compile(&f, &data.sample.targets, cfg)?),
            None => None,
        };
        Ok(ClientInfo {
            id: data.id,
            data,
            property,
            prop,
            sample_prop,
        })
    }

    pub fn n_train(&self) -> usize {
        self.data.train.len()
    }

    pub fn compiled(&self) -> &Property {
        &self.prop
    }

    pub fn sample_property(&self) -> Option<&Formula> {
        self.sample_prop.as_ref().map(Property::formula)
    }
}

fn compile(f: &Formula, targets: &[Trace], cfg: &FedConfig) -> Result<Property, FedError> {
    let schema: &Schema = targets[0].schema();
    let delta = cfg.delta_rel * value_scale(targets);
    Ok(Property::compile(f, schema, targets[0].len(), delta)?)
}

fn mine(targets: &[Trace], templates: &[Template], cfg: &FedConfig) -> Result<Formula, FedError> {
    Ok(mine_client_property(targets, templates, cfg.mining_tol)?.formula)
}

/// Mines and compiles every client's properties.
pub fn prepare_clients(
    data: Vec<ClientData>,
    templates: &[Template],
    cfg: &FedConfig,
) -> Result<Arc<[ClientInfo]>, FedError> {
    let infos = data
        .into_par_iter()
        .map(|d| {
            let property = match mine(&d.train.targets, templates, cfg) {
                Ok(f) => f,
                Err(e) => {
                    log::warn!(
                        "client {}: no property mined ({e}); training without penalty",
                        d.id
                    );
                    Formula::True
                }
            };
            let prop = compile(&property, &d.train.targets, cfg)?;
            let sample_prop = match mine(&d.sample.targets, templates, cfg) {
                Ok(f) => Some(compile(&f, &d.sample.targets, cfg)?),
                Err(e) => {
                    log::warn!("client {}: sample property mining failed ({e})", d.id);
                    None
                }
            };
            Ok(ClientInfo {
                id: d.id,
                data: d,
                property,
                prop,
                sample_prop,
            })
        })
        .collect::<Result<Vec<_>, FedError>>()?;
    Ok(infos.into())
}

#[derive(Debug, Clone)]
pub struct ClusterState {
    pub id: usize,
    /// Shared body plus a cluster-local head.
    pub model: ModelState,
    pub property: Option<Formula>,
    prop: Option<Property>,
    /// Members in the most recent round.
    pub members: Vec<usize>,
    mined_for: Vec<usize>,
}

/// Mean property loss of each cluster's predictions on one client's sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssignmentLosses {
    pub client: usize,
    pub losses: Vec<f64>,
    pub chosen: usize,
}

/// Assigns each client to the cluster with the lowest mean sample property
/// loss (ties to the lowest id). Clients without a sample property keep
/// their previous cluster, or cluster 0; they are returned as flagged.
pub fn cluster_id(
    clusters: &[ClusterState],
    clients: &[ClientInfo],
    selected: &[usize],
    previous: &[Option<usize>],
) -> Result<(Vec<AssignmentLosses>, Vec<usize>), FedError> {
    let rows = selected
        .par_iter()
        .map(|&i| {
            let c = &clients[i];
            let Some(p) = &c.sample_prop else {
                return Ok(Err(i));
            };
            let losses = clusters
                .iter()
                .map(|k| mean_loss(&k.model, &c.data.sample, p))
                .collect::<Result<Vec<_>, FedError>>()?;
            let chosen = argmin(&losses);
            Ok(Ok(AssignmentLosses {
                client: i,
                losses,
                chosen,
            }))
        })
        .collect::<Result<Vec<_>, FedError>>()?;
    let mut out = Vec::new();
    let mut flagged = Vec::new();
    for r in rows {
        match r {
            Ok(a) => out.push(a),
            Err(i) => {
                flagged.push(i);
                out.push(AssignmentLosses {
                    client: i,
                    losses: Vec::new(),
                    chosen: previous.get(i).copied().flatten().unwrap_or(0),
                });
            }
        }
    }
    Ok((out, flagged))
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = j;
        }
    }
    best
}

fn mean_loss(model: &ModelState, batch: &Batch, p: &Property) -> Result<f64, FedError> {
    let mut s = 0.0;
    for x in &batch.inputs {
        let y = model.forward(x)?;
        // a prediction outside every clause region is as bad as it gets
        s += match p.loss(&y) {
            Ok(l) => l,
            Err(ProjectionError::AllInfeasible) => f64::INFINITY,
            Err(e) => return Err(e.into()),
        };
    }
    Ok(s / batch.len().max(1) as f64)
}

/// Sets the output bias so the mean residual on `batch` is zero.
fn fit_bias(model: &mut ModelState, batch: &Batch) -> Result<(), FedError> {
    let outs = model.arch.output_len() * model.arch.n_vars();
    let mut resid = vec![0.0; outs];
    for (x, y) in batch.inputs.iter().zip(&batch.targets) {
        let p = model.forward(x)?;
        for ((r, a), b) in resid.iter_mut().zip(y.values()).zip(p.values()) {
            *r += a - b;
        }
    }
    let n = batch.len().max(1) as f64;
    let start = model.private.len() - outs;
    for (b, r) in model.private[start..].iter_mut().zip(resid) {
        *b += r / n;
    }
    Ok(())
}

/// Farthest-first choice of `k` clients under the symmetric sample
/// property loss distance.
fn farthest_first(clients: &[ClientInfo], k: usize) -> Result<Vec<usize>, FedError> {
    let n = clients.len();
    let cross = |i: usize, j: usize| -> Result<f64, FedError> {
        let Some(p) = &clients[i].sample_prop else {
            return Ok(0.0);
        };
        let ys = &clients[j].data.sample.targets;
        let mut s = 0.0;
        for y in ys {
            s += p.loss(y).unwrap_or(f64::MAX / (4.0 * ys.len() as f64));
        }
        Ok(s / ys.len().max(1) as f64)
    };
    let d: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| cross(i, j)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    let mut chosen = vec![0usize];
    let mut near: Vec<f64> = (0..n).map(|j| d[0][j] + d[j][0]).collect();
    while chosen.len() < k {
        let mut best = None;
        for j in 0..n {
            if chosen.contains(&j) {
                continue;
            }
            if best.is_none_or(|b: usize| near[j] > near[b]) {
                best = Some(j);
            }
        }
        let b = best.expect("k <= n");
        chosen.push(b);
        for j in 0..n {
            near[j] = near[j].min(d[b][j] + d[j][b]);
        }
    }
    Ok(chosen)
}

/// Per-round record of what happened.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundInfo {
    pub round: usize,
    pub selected: Vec<usize>,
    pub reclustered: bool,
    pub assignments: Vec<AssignmentLosses>,
    pub flagged: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
}

/// The clustered, property-penalized federation.
#[derive(Debug, Clone)]
pub struct Federation {
    pub clients: Arc<[ClientInfo]>,
    pub models: Vec<ModelState>,
    pub clusters: Vec<ClusterState>,
    pub identity: Vec<Option<usize>>,
    pub round: usize,
    pub config: FedConfig,
    templates: Vec<Template>,
}

impl Federation {
    pub fn new(
        clients: Arc<[ClientInfo]>,
        arch: Arch,
        templates: Vec<Template>,
        config: FedConfig,
    ) -> Result<Self, FedError> {
        config.validate(clients.len())?;
        let init = ModelState::init(arch, &mut stream(config.seed, INIT, 0, 0));
        let mut clusters: Vec<ClusterState> = (0..config.n_clusters)
            .map(|id| ClusterState {
                id,
                model: init.clone(),
                property: None,
                prop: None,
                members: Vec::new(),
                mined_for: Vec::new(),
            })
            .collect();
        if config.cluster_init == ClusterInit::Seeded && config.n_clusters > 1 {
            let seeds = farthest_first(&clients, config.n_clusters)?;
            log::info!("cluster seed clients: {seeds:?}");
            for (c, &s) in clusters.iter_mut().zip(&seeds) {
                fit_bias(&mut c.model, &clients[s].data.sample)?;
            }
        }
        Ok(Federation {
            models: vec![init; clients.len()],
            identity: vec![None; clients.len()],
            clients,
            clusters,
            round: 0,
            config,
            templates,
        })
    }

    /// One communication round.
    pub fn run_round(&mut self) -> Result<RoundInfo, FedError> {
        let cfg = self.config.clone();
        let t = self.round;
        let selected = select_clients(&cfg, self.clients.len(), t);

        let reclustered = t.is_multiple_of(cfg.cluster_period);
        let need: Vec<usize> = if reclustered {
            selected.clone()
        } else {
            selected
                .iter()
                .copied()
                .filter(|&i| self.identity[i].is_none())
                .collect()
        };
        let (assignments, flagged) =
            cluster_id(&self.clusters, &self.clients, &need, &self.identity)?;
        for a in &assignments {
            self.identity[a.client] = Some(a.chosen);
        }

        let mut members = vec![Vec::new(); self.clusters.len()];
        for &i in &selected {
            members[self.identity[i].expect("assigned above")].push(i);
        }

        // broadcast
        for &i in &selected {
            let c = &self.clusters[self.identity[i].unwrap()];
            self.models[i].shared.clone_from(&c.model.shared);
            if cfg.share_private {
                self.models[i].private.clone_from(&c.model.private);
            }
        }

        // local training
        let clients = &self.clients;
        let mut work: Vec<(usize, ModelState)> = selected
            .iter()
            .map(|&i| {
                let arch = self.models[i].arch;
                (
                    i,
                    std::mem::replace(&mut self.models[i], ModelState::zeros(arch)),
                )
            })
            .collect();
        work.par_iter_mut()
            .try_for_each(|(i, m)| -> Result<(), FedError> {
                let c = &clients[*i];
                let mut rng = stream(cfg.seed, CLIENT, t, *i);
                let prop = (cfg.lambda > 0.0).then_some(&c.prop);
                train_epochs(
                    m,
                    &c.data.train,
                    prop,
                    cfg.lambda,
                    cfg.eta,
                    cfg.batch_size,
                    cfg.local_epochs,
                    Scope::All,
                    &mut rng,
                )?;
                Ok(())
            })?;
        for (i, m) in work {
            self.models[i] = m;
        }

        // aggregation and cluster update
        let models = &self.models;
        let templates = &self.templates;
        self.clusters
            .par_iter_mut()
            .zip(members.par_iter())
            .try_for_each(|(k, mem)| -> Result<(), FedError> {
                k.members.clone_from(mem);
                if mem.is_empty() {
                    return Ok(());
                }
                let parts: Vec<(&[f64], usize)> = mem
                    .iter()
                    .map(|&i| (&models[i].shared[..], clients[i].n_train()))
                    .collect();
                k.model.shared = aggregate(&parts)?;
                if cfg.share_private {
                    let parts: Vec<(&[f64], usize)> = mem
                        .iter()
                        .map(|&i| (&models[i].private[..], clients[i].n_train()))
                        .collect();
                    k.model.private = aggregate(&parts)?;
                }
                let mut pooled = Batch::new(Vec::new(), Vec::new()).expect("empty");
                for &i in mem {
                    pooled.extend(&clients[i].data.sample);
                }
                if !cfg.share_private {
                    // the head was fitted against an older body
                    fit_bias(&mut k.model, &pooled)?;
                }
                if cfg.cluster_epochs == 0 {
                    return Ok(());
                }
                if k.mined_for != *mem {
                    k.mined_for.clone_from(mem);
                    match mine(&pooled.targets, templates, &cfg) {
                        Ok(f) => {
                            k.prop = Some(compile(&f, &pooled.targets, &cfg)?);
                            k.property = Some(f);
                        }
                        Err(e) => {
                            log::info!("cluster {}: no property ({e})", k.id);
                            k.prop = None;
                            k.property = None;
                        }
                    }
                }
                let lambda = if k.prop.is_some() { cfg.lambda } else { 0.0 };
                let mut rng = stream(cfg.seed, CLUSTER, t, k.id);
                train_epochs(
                    &mut k.model,
                    &pooled,
                    k.prop.as_ref().filter(|_| lambda > 0.0),
                    lambda,
                    cfg.eta_cluster,
                    cfg.batch_size,
                    cfg.cluster_epochs,
                    Scope::All,
                    &mut rng,
                )?;
                Ok(())
            })?;

        self.round += 1;
        Ok(RoundInfo {
            round: t,
            selected,
            reclustered,
            assignments,
            flagged,
            cluster_sizes: members.iter().map(Vec::len).collect(),
        })
    }

    /// Cluster for every client, assigning unmapped ones on the fly.
    pub fn full_identity(&self) -> Result<Vec<usize>, FedError> {
        let missing: Vec<usize> = (0..self.clients.len())
            .filter(|&i| self.identity[i].is_none())
            .collect();
        let (a, _) = cluster_id(&self.clusters, &self.clients, &missing, &self.identity)?;
        let mut out: Vec<usize> = self.identity.iter().map(|c| c.unwrap_or(0)).collect();
        for x in a {
            out[x.client] = x.chosen;
        }
        Ok(out)
    }
}

/// The FedAvg baseline: one global model, full aggregation, no properties.
#[derive(Debug, Clone)]
pub struct FedAvg {
    pub clients: Arc<[ClientInfo]>,
    pub global: ModelState,
    pub round: usize,
    pub config: FedConfig,
}

impl FedAvg {
    pub fn new(
        clients: Arc<[ClientInfo]>,
        arch: Arch,
        config: FedConfig,
    ) -> Result<Self, FedError> {
        config.validate(clients.len())?;
        Ok(FedAvg {
            global: ModelState::init(arch, &mut stream(config.seed, INIT, 0, 0)),
            clients,
            round: 0,
            config,
        })
    }

    pub fn run_round(&mut self) -> Result<Vec<usize>, FedError> {
        let cfg = &self.config;
        let t = self.round;
        let selected = select_clients(cfg, self.clients.len(), t);
        let clients = &self.clients;
        let global = &self.global;
        let trained = selected
            .par_iter()
            .map(|&i| {
                let mut m = global.clone();
                let mut rng = stream(cfg.seed, CLIENT, t, i);
                train_epochs(
                    &mut m,
                    &clients[i].data.train,
                    None,
                    0.0,
                    cfg.eta,
                    cfg.batch_size,
                    cfg.local_epochs,
                    Scope::All,
                    &mut rng,
                )?;
                Ok(m)
            })
            .collect::<Result<Vec<_>, FedError>>()?;
        let shared: Vec<(&[f64], usize)> = trained
            .iter()
            .zip(&selected)
            .map(|(m, &i)| (&m.shared[..], clients[i].n_train()))
            .collect();
        let private: Vec<(&[f64], usize)> = trained
            .iter()
            .zip(&selected)
            .map(|(m, &i)| (&m.private[..], clients[i].n_train()))
            .collect();
        self.global.shared = aggregate(&shared)?;
        self.global.private = aggregate(&private)?;
        self.round += 1;
        Ok(selected)
    }
}

/// Test-time metrics of one client.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientEval {
    pub id: usize,
    pub cluster: Option<usize>,
    pub mse: f64,
    pub rho_pct: f64,
    pub rho_pct_teacher: f64,
    pub mse_teacher: f64,
}

/// Raw and teacher-corrected metrics of `model` on `batch` under `prop`.
pub fn evaluate_model(
    id: usize,
    cluster: Option<usize>,
    model: &ModelState,
    batch: &Batch,
    prop: &Property,
) -> Result<ClientEval, FedError> {
    let n = batch.len().max(1) as f64;
    let (mut mse, mut mse_t, mut sat, mut sat_t) = (0.0, 0.0, 0usize, 0usize);
    let sq = |a: &Trace, b: &Trace| {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / a.values().len() as f64
    };
    for (x, y) in batch.inputs.iter().zip(&batch.targets) {
        let pred = model.forward(x)?;
        mse += sq(&pred, y);
        if prop.satisfied(&pred)? {
            sat += 1;
        }
        match prop.teacher(&pred) {
            Ok(t) => {
                mse_t += sq(&t.trace, y);
                if prop.satisfied(&t.trace)? {
                    sat_t += 1;
                }
            }
            Err(ProjectionError::AllInfeasible) => mse_t += sq(&pred, y),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(ClientEval {
        id,
        cluster,
        mse: mse / n,
        rho_pct: 100.0 * sat as f64 / n,
        rho_pct_teacher: 100.0 * sat_t as f64 / n,
        mse_teacher: mse_t / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Val,
    Test,
}

fn split_of(c: &ClientInfo, s: Split) -> &Batch {
    match s {
        Split::Val => &c.data.val,
        Split::Test => &c.data.test,
    }
}

impl Federation {
    /// Per-client metrics of each client's own model.
    pub fn evaluate(&self, split: Split) -> Result<Vec<ClientEval>, FedError> {
        (0..self.clients.len())
            .into_par_iter()
            .map(|i| {
                let c = &self.clients[i];
                evaluate_model(
                    i,
                    self.identity[i],
                    &self.models[i],
                    split_of(c, split),
                    &c.prop,
                )
            })
            .collect()
    }

    /// Per-client metrics of the client's cluster model.
    pub fn evaluate_clusters(&self, split: Split) -> Result<Vec<ClientEval>, FedError> {
        let ident = self.full_identity()?;
        (0..self.clients.len())
            .into_par_iter()
            .map(|i| {
                let c = &self.clients[i];
                let k = ident[i];
                evaluate_model(
                    i,
                    Some(k),
                    &self.clusters[k].model,
                    split_of(c, split),
                    &c.prop,
                )
            })
            .collect()
    }
}

impl FedAvg {
    pub fn evaluate(&self, split: Split) -> Result<Vec<ClientEval>, FedError> {
        (0..self.clients.len())
            .into_par_iter()
            .map(|i| {
                let c = &self.clients[i];
                evaluate_model(i, None, &self.global, split_of(c, split), &c.prop)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_examples() {
        assert_eq!(
            aggregate(&[(&[1.0, 1.0], 1), (&[3.0, 3.0], 1)]).unwrap(),
            vec![2.0, 2.0]
        );
        assert_eq!(
            aggregate(&[(&[0.0, 0.0], 1), (&[3.0, 3.0], 2)]).unwrap(),
            vec![2.0, 2.0]
        );
        assert_eq!(aggregate(&[(&[0.5, -7.0], 9)]).unwrap(), vec![0.5, -7.0]);
        assert!(aggregate(&[(&[0.0], 1), (&[3.0, 3.0], 2)]).is_err());
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn selection_is_seeded_and_sized() {
        let cfg = FedConfig {
            participation: 0.25,
            seed: 9,
            ..FedConfig::default()
        };
        let a = select_clients(&cfg, 20, 3);
        assert_eq!(a.len(), 5);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, select_clients(&cfg, 20, 3));
        assert_ne!(a, select_clients(&cfg, 20, 4));
    }

    #[test]
    fn config_validation() {
        let ok = FedConfig::default();
        assert!(ok.validate(20).is_ok());
        for bad in [
            FedConfig {
                participation: 0.0,
                ..ok.clone()
            },
            FedConfig {
                participation: 1.5,
                ..ok.clone()
            },
            FedConfig {
                lambda: -1.0,
                ..ok.clone()
            },
            FedConfig {
                local_epochs: 0,
                cluster_epochs: 0,
                ..ok.clone()
            },
            FedConfig {
                n_clusters: 30,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate(20).is_err(), "{bad:?}");
        }
    }
}
