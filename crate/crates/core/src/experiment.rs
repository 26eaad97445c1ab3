//! End-to-end runs: generate data, mine properties, train, evaluate.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::datagen::{generate, ClientData, DataError};
use crate::federation::{prepare_clients, ClientEval, FedAvg, FedError, Federation, Split};
use crate::mining::{templates_for_rows, MiningError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error(transparent)]
    Fed(#[from] FedError),
}

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub mse_mean: f64,
    pub mse_std: f64,
    pub rho_pct_mean: f64,
    pub rho_pct_std: f64,
    pub rho_pct_min: f64,
}

impl MethodSummary {
    /// Mean and population std over clients.
    pub fn of(rows: &[ClientEval], teacher: bool) -> Self {
        let pick = |r: &ClientEval| {
            if teacher {
                (r.mse_teacher, r.rho_pct_teacher)
            } else {
                (r.mse, r.rho_pct)
            }
        };
        let mse: Vec<f64> = rows.iter().map(|r| pick(r).0).collect();
        let rho: Vec<f64> = rows.iter().map(|r| pick(r).1).collect();
        let (mm, ms) = mean_std(&mse);
        let (rm, rs) = mean_std(&rho);
        MethodSummary {
            mse_mean: mm,
            mse_std: ms,
            rho_pct_mean: rm,
            rho_pct_std: rs,
            rho_pct_min: rho.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    pub round: usize,
    pub selected: Vec<usize>,
    /// Members per cluster (empty for FedAvg).
    pub cluster_sizes: Vec<usize>,
    /// Validation metrics per client, when recorded this round.
    pub val: Option<Vec<ClientEval>>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Summary {
    /// Client models.
    pub fedstl: Option<MethodSummary>,
    /// Cluster models.
    pub fedstl_s: Option<MethodSummary>,
    /// Client models with teacher correction.
    pub fedstl_t: Option<MethodSummary>,
    pub fedavg: Option<MethodSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    /// Final cluster of every client.
    pub identity: Vec<usize>,
    /// Planted group of every client.
    pub groups: Vec<usize>,
    /// Pairwise agreement between `identity` and `groups`.
    pub rand_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema: u32,
    pub seed: u64,
    pub config: String,
    pub fedstl_rounds: Vec<RoundReport>,
    pub fedavg_rounds: Vec<RoundReport>,
    pub test: TestMetrics,
    pub summary: Summary,
    pub clusters: Option<ClusterReport>,
    pub setup_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TestMetrics {
    pub fedstl: Option<Vec<ClientEval>>,
    pub fedstl_s: Option<Vec<ClientEval>>,
    pub fedavg: Option<Vec<ClientEval>>,
}

impl Report {
    /// Zeroes every wall-clock field.
    pub fn clear_timings(&mut self) {
        self.setup_ms = 0;
        for r in self
            .fedstl_rounds
            .iter_mut()
            .chain(self.fedavg_rounds.iter_mut())
        {
            r.wall_ms = 0;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Fraction of client pairs on which two labelings agree.
pub fn rand_index(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len().min(b.len());
    let (mut agree, mut total) = (0usize, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        agree as f64 / total as f64
    }
}

pub struct RunOutput {
    pub report: Report,
    pub federation: Option<Federation>,
    pub fedavg: Option<FedAvg>,
}

/// Runs on synthetic data generated from the config.
pub fn run(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    let (clients, groups) = generate(&cfg.gen_spec())?;
    run_on(cfg, clients, groups)
}

/// Runs on given client data; `groups` are the planted labels, if known.
pub fn run_on(
    cfg: &RunConfig,
    clients: Vec<ClientData>,
    groups: Vec<usize>,
) -> Result<RunOutput, RunError> {
    let t0 = Instant::now();
    let schema = clients
        .first()
        .map(|c| c.series.schema().clone())
        .ok_or_else(|| ConfigError::Invalid("no clients".into()))?;
    let templates = templates_for_rows(
        &cfg.templates,
        &schema,
        cfg.output_len,
        cfg.template_options(),
    )?;
    let infos = prepare_clients(clients, &templates, &cfg.fed)?;
    let setup_ms = t0.elapsed().as_millis() as u64;
    log::info!("mined client properties in {setup_ms} ms");
    let arch = cfg.model_arch();
    let record = |t: usize| {
        cfg.eval_every > 0 && ((t + 1).is_multiple_of(cfg.eval_every) || t + 1 == cfg.fed.rounds)
    };

    let mut report = Report {
        schema: REPORT_SCHEMA,
        seed: cfg.seed(),
        config: cfg.to_string(),
        fedstl_rounds: Vec::new(),
        fedavg_rounds: Vec::new(),
        test: TestMetrics::default(),
        summary: Summary::default(),
        clusters: None,
        setup_ms,
    };

    let mut federation = None;
    if cfg.method.runs_fedstl() {
        let mut fed = Federation::new(infos.clone(), arch, templates.clone(), cfg.fed.clone())?;
        for t in 0..cfg.fed.rounds {
            let start = Instant::now();
            let info = fed.run_round()?;
            if !info.flagged.is_empty() {
                log::warn!("round {t}: clients {:?} kept their cluster", info.flagged);
            }
            let val = if record(t) {
                Some(fed.evaluate(Split::Val)?)
            } else {
                None
            };
            report.fedstl_rounds.push(RoundReport {
                round: t,
                selected: info.selected,
                cluster_sizes: info.cluster_sizes,
                val,
                wall_ms: start.elapsed().as_millis() as u64,
            });
            log::debug!("fedstl round {t} done");
        }
        let own = fed.evaluate(Split::Test)?;
        let clus = fed.evaluate_clusters(Split::Test)?;
        report.summary.fedstl = Some(MethodSummary::of(&own, false));
        report.summary.fedstl_t = Some(MethodSummary::of(&own, true));
        report.summary.fedstl_s = Some(MethodSummary::of(&clus, false));
        let identity = fed.full_identity()?;
        if groups.len() == identity.len() {
            report.clusters = Some(ClusterReport {
                rand_index: rand_index(&identity, &groups),
                identity,
                groups: groups.clone(),
            });
        }
        report.test.fedstl = Some(own);
        report.test.fedstl_s = Some(clus);
        federation = Some(fed);
    }

    let mut fedavg = None;
    if cfg.method.runs_fedavg() {
        let mut avg = FedAvg::new(infos.clone(), arch, cfg.fed.clone())?;
        for t in 0..cfg.fed.rounds {
            let start = Instant::now();
            let selected = avg.run_round()?;
            let val = if record(t) {
                Some(avg.evaluate(Split::Val)?)
            } else {
                None
            };
            report.fedavg_rounds.push(RoundReport {
                round: t,
                selected,
                cluster_sizes: Vec::new(),
                val,
                wall_ms: start.elapsed().as_millis() as u64,
            });
        }
        let rows = avg.evaluate(Split::Test)?;
        report.summary.fedavg = Some(MethodSummary::of(&rows, false));
        report.test.fedavg = Some(rows);
        fedavg = Some(avg);
    }

    Ok(RunOutput {
        report,
        federation,
        fedavg,
    })
}
