//! Run configuration: flat `key = value` files with `#` comments.

use std::fmt;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::datagen::GenSpec;
use crate::federation::{ClusterInit, FedConfig};
use crate::mining::TemplateOptions;
use crate::models::Arch;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    LinearAr,
    MiniGru,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fedstl,
    Fedavg,
    Both,
}

impl Method {
    pub fn runs_fedstl(self) -> bool {
        matches!(self, Method::Fedstl | Method::Both)
    }

    pub fn runs_fedavg(self) -> bool {
        matches!(self, Method::Fedavg | Method::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub n_clients: usize,
    pub n_groups: usize,
    pub n_vars: usize,
    pub series_len: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub gap: Option<f64>,
    pub noise: Option<f64>,
    pub sample_size: usize,
    pub arch: ArchKind,
    pub hidden: usize,
    pub templates: Vec<u8>,
    pub window_len: usize,
    pub eventualities: Option<usize>,
    /// Validation metrics are recorded every this many rounds (0 = never).
    pub eval_every: usize,
    pub fed: FedConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Both,
            n_clients: 20,
            n_groups: 5,
            n_vars: 2,
            series_len: 720,
            input_len: 120,
            output_len: 24,
            gap: Some(0.1),
            noise: None,
            sample_size: 32,
            arch: ArchKind::LinearAr,
            hidden: 16,
            templates: vec![1, 4],
            window_len: 2,
            eventualities: None,
            eval_every: 1,
            fed: FedConfig {
                // the L1 penalty is summed over every output step
                lambda: 0.01,
                ..FedConfig::default()
            },
        }
    }
}

pub const PRESETS: &[&str] = &["desk20"];
pub const EPOCH_PRESETS: &[&str] = &["main", "appendix"];

impl RunConfig {
    /// Named preset.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk20" => Some(RunConfig::default()),
            _ => None,
        }
    }

    /// Sets local and cluster epochs from a named split.
    pub fn apply_epochs(&mut self, name: &str) -> bool {
        let (tau, kappa) = match name {
            "main" => (6, 4),
            "appendix" => (8, 2),
            _ => return false,
        };
        self.fed.local_epochs = tau;
        self.fed.cluster_epochs = kappa;
        true
    }

    pub fn seed(&self) -> u64 {
        self.fed.seed
    }

    pub fn model_arch(&self) -> Arch {
        match self.arch {
            ArchKind::LinearAr => Arch::LinearAr {
                input_len: self.input_len,
                output_len: self.output_len,
                n_vars: self.n_vars,
            },
            ArchKind::MiniGru => Arch::MiniGru {
                hidden: self.hidden,
                input_len: self.input_len,
                output_len: self.output_len,
                n_vars: self.n_vars,
            },
        }
    }

    pub fn template_options(&self) -> TemplateOptions {
        TemplateOptions {
            window_len: self.window_len,
            eventualities: self.eventualities,
        }
    }

    pub fn gen_spec(&self) -> GenSpec {
        let mut g = GenSpec::new(self.n_clients, self.n_groups, self.n_vars, self.fed.seed);
        g.series_len = self.series_len;
        g.input_len = self.input_len;
        g.output_len = self.output_len;
        g.gap = self.gap;
        g.sample_size = self.sample_size;
        if let Some(n) = self.noise {
            for f in &mut g.groups {
                f.noise = n;
            }
        }
        g
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.gen_spec()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.fed
            .validate(self.n_clients)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.templates.is_empty() {
            return bad("at least one template row is required".into());
        }
        for &r in &self.templates {
            if !(1..=7).contains(&r) {
                return bad(format!("template row {r} is not in 1..=7"));
            }
            if matches!(r, 4 | 6) && self.n_vars < 2 {
                return bad(format!("template row {r} needs at least two variables"));
            }
        }
        if self.window_len == 0 {
            return bad("window_len must be >= 1".into());
        }
        if self.arch == ArchKind::MiniGru && self.hidden == 0 {
            return bad("hidden must be >= 1".into());
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses a config. `preset` and `epochs` apply first, wherever they
    /// appear; every other key then overrides in file order.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1 });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            pairs.push((i + 1, k.to_string(), v.to_string()));
        }
        let mut cfg = RunConfig::default();
        for (line, k, v) in pairs.iter().filter(|p| p.1 == "preset") {
            cfg = RunConfig::preset(v).ok_or_else(|| bad_value(*line, k, v, "unknown preset"))?;
        }
        for (line, k, v) in pairs.iter().filter(|p| p.1 == "epochs") {
            if !cfg.apply_epochs(v) {
                return Err(bad_value(*line, k, v, "expected main or appendix"));
            }
        }
        for (line, k, v) in pairs.iter().filter(|p| p.1 != "preset" && p.1 != "epochs") {
            cfg.set(*line, k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key (the same names the file format uses).
    pub fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value;
        let f = &mut self.fed;
        match key {
            "method" => {
                self.method = match v {
                    "fedstl" => Method::Fedstl,
                    "fedavg" => Method::Fedavg,
                    "both" => Method::Both,
                    _ => return Err(bad_value(line, key, v, "expected fedstl, fedavg or both")),
                }
            }
            "seed" => f.seed = num(line, key, v)?,
            "n_clients" => self.n_clients = num(line, key, v)?,
            "n_groups" => self.n_groups = num(line, key, v)?,
            "n_vars" => self.n_vars = num(line, key, v)?,
            "series_len" => self.series_len = num(line, key, v)?,
            "input_len" => self.input_len = num(line, key, v)?,
            "output_len" => self.output_len = num(line, key, v)?,
            "gap" => self.gap = opt(line, key, v)?,
            "noise" => self.noise = opt(line, key, v)?,
            "sample_size" => self.sample_size = num(line, key, v)?,
            "arch" => {
                self.arch = match v {
                    "linear_ar" => ArchKind::LinearAr,
                    "mini_gru" => ArchKind::MiniGru,
                    _ => return Err(bad_value(line, key, v, "expected linear_ar or mini_gru")),
                }
            }
            "hidden" => self.hidden = num(line, key, v)?,
            "templates" => {
                self.templates = v
                    .split(',')
                    .map(|s| num::<u8>(line, key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "window_len" => self.window_len = num(line, key, v)?,
            "eventualities" => self.eventualities = opt(line, key, v)?,
            "eval_every" => self.eval_every = num(line, key, v)?,
            "rounds" => f.rounds = num(line, key, v)?,
            "participation" => f.participation = num(line, key, v)?,
            "local_epochs" => f.local_epochs = num(line, key, v)?,
            "cluster_epochs" => f.cluster_epochs = num(line, key, v)?,
            "cluster_period" => f.cluster_period = num(line, key, v)?,
            "n_clusters" => f.n_clusters = num(line, key, v)?,
            "lambda" => f.lambda = num(line, key, v)?,
            "eta" => f.eta = num(line, key, v)?,
            "eta_cluster" => f.eta_cluster = num(line, key, v)?,
            "batch_size" => f.batch_size = num(line, key, v)?,
            "share_private" => f.share_private = num(line, key, v)?,
            "cluster_init" => {
                f.cluster_init = match v {
                    "seeded" => ClusterInit::Seeded,
                    "common" => ClusterInit::Common,
                    _ => return Err(bad_value(line, key, v, "expected seeded or common")),
                }
            }
            "delta_rel" => f.delta_rel = num(line, key, v)?,
            "mining_tol" => f.mining_tol = opt(line, key, v)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }
}

fn bad_value(line: usize, key: &str, value: &str, reason: impl fmt::Display) -> ConfigError {
    ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e| bad_value(line, key, v, e))
}

/// `none` or a number.
fn opt<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    if v == "none" {
        Ok(None)
    } else {
        num(line, key, v).map(Some)
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let f = &self.fed;
        let o = |x: Option<f64>| x.map_or("none".to_string(), |v| v.to_string());
        let method = match self.method {
            Method::Fedstl => "fedstl",
            Method::Fedavg => "fedavg",
            Method::Both => "both",
        };
        let arch = match self.arch {
            ArchKind::LinearAr => "linear_ar",
            ArchKind::MiniGru => "mini_gru",
        };
        let rows: Vec<String> = self.templates.iter().map(u8::to_string).collect();
        writeln!(out, "method = {method}")?;
        writeln!(out, "seed = {}", f.seed)?;
        writeln!(out, "n_clients = {}", self.n_clients)?;
        writeln!(out, "n_groups = {}", self.n_groups)?;
        writeln!(out, "n_vars = {}", self.n_vars)?;
        writeln!(out, "series_len = {}", self.series_len)?;
        writeln!(out, "input_len = {}", self.input_len)?;
        writeln!(out, "output_len = {}", self.output_len)?;
        writeln!(out, "gap = {}", o(self.gap))?;
        writeln!(out, "noise = {}", o(self.noise))?;
        writeln!(out, "sample_size = {}", self.sample_size)?;
        writeln!(out, "arch = {arch}")?;
        writeln!(out, "hidden = {}", self.hidden)?;
        writeln!(out, "templates = {}", rows.join(","))?;
        writeln!(out, "window_len = {}", self.window_len)?;
        writeln!(
            out,
            "eventualities = {}",
            self.eventualities.map_or("none".into(), |v| v.to_string())
        )?;
        writeln!(out, "eval_every = {}", self.eval_every)?;
        writeln!(out, "rounds = {}", f.rounds)?;
        writeln!(out, "participation = {}", f.participation)?;
        writeln!(out, "local_epochs = {}", f.local_epochs)?;
        writeln!(out, "cluster_epochs = {}", f.cluster_epochs)?;
        writeln!(out, "cluster_period = {}", f.cluster_period)?;
        writeln!(out, "n_clusters = {}", f.n_clusters)?;
        writeln!(out, "lambda = {}", f.lambda)?;
        writeln!(out, "eta = {}", f.eta)?;
        writeln!(out, "eta_cluster = {}", f.eta_cluster)?;
        writeln!(out, "batch_size = {}", f.batch_size)?;
        writeln!(out, "share_private = {}", f.share_private)?;
        let init = match f.cluster_init {
            ClusterInit::Seeded => "seeded",
            ClusterInit::Common => "common",
        };
        writeln!(out, "cluster_init = {init}")?;
        writeln!(out, "delta_rel = {}", f.delta_rel)?;
        writeln!(out, "mining_tol = {}", o(f.mining_tol))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_desk20() {
        let c = RunConfig::parse("preset = desk20\n").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.fed.n_clusters, 5);
        assert_eq!(c.fed.batch_size, 64);
    }

    #[test]
    fn presets_apply_before_overrides() {
        let c =
            RunConfig::parse("rounds = 3 # short\nepochs = appendix\npreset = desk20\n").unwrap();
        assert_eq!(c.fed.rounds, 3);
        assert_eq!((c.fed.local_epochs, c.fed.cluster_epochs), (8, 2));
        let c = RunConfig::parse("epochs = appendix\nlocal_epochs = 1\n").unwrap();
        assert_eq!((c.fed.local_epochs, c.fed.cluster_epochs), (1, 2));
    }

    #[test]
    fn errors_are_reported() {
        assert!(matches!(
            RunConfig::parse("bogus = 1"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(
            RunConfig::parse("\nrounds"),
            Err(ConfigError::Syntax { line: 2 })
        ));
        assert!(matches!(
            RunConfig::parse("rounds = x"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            RunConfig::parse("participation = 0"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::parse("lambda = -1"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::parse("local_epochs = 0\ncluster_epochs = 0"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::parse("n_vars = 1\ngap = none\ntemplates = 1,4"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn display_roundtrips() {
        let mut c = RunConfig::default();
        c.fed.lambda = 0.25;
        c.gap = None;
        c.templates = vec![1, 2, 4];
        c.eventualities = Some(3);
        assert_eq!(RunConfig::parse(&c.to_string()).unwrap(), c);
    }
}
