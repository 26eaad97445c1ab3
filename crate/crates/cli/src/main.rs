use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use fedstl::config::RunConfig;
use fedstl::datagen::{generate, load_csv};
use fedstl::experiment::run;
use fedstl::federation::{prepare_clients, Federation};
use fedstl::mining::{mine_client_property, templates_for_rows, Template, TemplateOptions};
use fedstl::stl::{parse, Monitor, Trace};

#[derive(Parser)]
#[command(
    name = "fedstl",
    version,
    about = "Federated forecasting with mined STL properties"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a formula against a CSV trace. Exits 0 iff it holds.
    Monitor {
        /// Formula text, or `@file` to read it from a file.
        #[arg(long)]
        formula: String,
        #[arg(long)]
        trace: PathBuf,
        /// Evaluation step.
        #[arg(long, default_value_t = 0)]
        time: usize,
    },
    /// Mine the tightest property over CSV traces.
    Mine {
        /// CSV files; each is cut into all windows of `--horizon` steps.
        #[arg(long, required = true, num_args = 1..)]
        trace: Vec<PathBuf>,
        /// Template rows, comma separated.
        #[arg(long, default_value = "1,4")]
        templates: String,
        /// Window length in steps (default: the shortest trace).
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 2)]
        window_len: usize,
        #[arg(long)]
        tol: Option<f64>,
        /// Write the property here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a federated experiment and write a JSON report.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Time mining and training rounds.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Template rows to time (default: the config's; empty for none).
        #[arg(long)]
        templates: Option<String>,
        /// Rounds to time.
        #[arg(long, default_value_t = 3)]
        rounds: usize,
    },
}

/// A failure with its exit code (1 runtime, 2 usage or config).
struct Fail(u8, String);

fn usage(e: impl std::fmt::Display) -> Fail {
    Fail(2, e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Fail {
    Fail(1, e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match cli.cmd {
        Cmd::Monitor {
            formula,
            trace,
            time,
        } => monitor(&formula, &trace, time),
        Cmd::Mine {
            trace,
            templates,
            horizon,
            window_len,
            tol,
            out,
        } => mine(&trace, &templates, horizon, window_len, tol, out.as_deref()).map(|_| 0),
        Cmd::Train { config, seed, out } => train(config.as_deref(), seed, &out).map(|_| 0),
        Cmd::Bench {
            config,
            seed,
            templates,
            rounds,
        } => bench(config.as_deref(), seed, templates.as_deref(), rounds).map(|_| 0),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn read_arg(text: &str) -> Result<String, Fail> {
    match text.strip_prefix('@') {
        Some(p) => fs::read_to_string(p).map_err(|e| usage(format!("{p}: {e}"))),
        None => Ok(text.to_string()),
    }
}

fn monitor(formula: &str, trace: &Path, time: usize) -> Result<u8, Fail> {
    let f = parse(&read_arg(formula)?).map_err(usage)?;
    let tr = load_csv(trace).map_err(usage)?;
    let m = Monitor::new(&f, tr.schema()).map_err(usage)?;
    let ok = m.eval_bool(&tr, time).map_err(usage)?;
    let rho = m.robustness(&tr, time).map_err(usage)?;
    println!("sat={ok} rho={}", fmt_real(rho));
    Ok(if ok { 0 } else { 1 })
}

/// Infinities print as `+inf` / `-inf`, finite values with a decimal point.
fn fmt_real(x: f64) -> String {
    if x == f64::INFINITY {
        "+inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:?}")
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig, Fail> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.fed.seed = s;
    }
    Ok(cfg)
}

fn mine(
    paths: &[PathBuf],
    rows: &str,
    horizon: Option<usize>,
    window_len: usize,
    tol: Option<f64>,
    out: Option<&Path>,
) -> Result<(), Fail> {
    let rows = parse_rows(rows)?;
    let series: Vec<Trace> = paths
        .iter()
        .map(|p| load_csv(p).map_err(usage))
        .collect::<Result<_, _>>()?;
    let schema = series[0].schema().clone();
    if series.iter().any(|s| s.schema() != &schema) {
        return Err(usage("all traces must have the same columns"));
    }
    let shortest = series.iter().map(Trace::len).min().unwrap_or(0);
    let h = horizon.unwrap_or(shortest);
    if h == 0 || h > shortest {
        return Err(usage(format!("horizon must be in 1..={shortest}")));
    }
    let windows: Vec<Trace> = series
        .iter()
        .flat_map(|s| (0..=s.len() - h).map(move |i| s.slice(i, h)))
        .collect();
    let opts = TemplateOptions {
        window_len,
        eventualities: None,
    };
    let templates = templates_for_rows(&rows, &schema, h, opts).map_err(usage)?;
    let p = mine_client_property(&windows, &templates, tol).map_err(runtime)?;
    for (row, why) in &p.skipped {
        log::warn!("template row {row} skipped: {why}");
    }
    match out {
        Some(o) => fs::write(o, p.to_text()).map_err(runtime)?,
        None => print!("{}", p.to_text()),
    }
    Ok(())
}

fn train(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), Fail> {
    let cfg = load_config(config, seed)?;
    let res = run(&cfg).map_err(runtime)?;
    let ck = out.join("checkpoints");
    let props = out.join("properties");
    fs::create_dir_all(&ck).map_err(runtime)?;
    fs::create_dir_all(&props).map_err(runtime)?;
    let save = |name: String, m: &fedstl::models::ModelState| -> Result<(), Fail> {
        let f = fs::File::create(ck.join(name)).map_err(runtime)?;
        m.write_checkpoint(BufWriter::new(f)).map_err(runtime)
    };
    if let Some(fed) = &res.federation {
        for (i, m) in fed.models.iter().enumerate() {
            save(format!("client_{i}.ckpt"), m)?;
        }
        for c in &fed.clusters {
            save(format!("cluster_{}.ckpt", c.id), &c.model)?;
        }
        for c in fed.clients.iter() {
            fs::write(
                props.join(format!("client_{}.stl", c.id)),
                format!("{}\n", c.property),
            )
            .map_err(runtime)?;
        }
    }
    if let Some(avg) = &res.fedavg {
        save("fedavg.ckpt".into(), &avg.global)?;
    }
    fs::write(out.join("report.json"), res.report.to_json()).map_err(runtime)?;
    fs::write(out.join("config.txt"), cfg.to_string()).map_err(runtime)?;
    let s = &res.report.summary;
    for (name, m) in [
        ("FedSTL", &s.fedstl),
        ("FedSTL-S", &s.fedstl_s),
        ("FedSTL-T", &s.fedstl_t),
        ("FedAvg", &s.fedavg),
    ] {
        if let Some(m) = m {
            println!(
                "{name:<9} mse {:.5} +- {:.5}  rho% {:.2} +- {:.2}",
                m.mse_mean, m.mse_std, m.rho_pct_mean, m.rho_pct_std
            );
        }
    }
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}

fn bench(
    config: Option<&Path>,
    seed: Option<u64>,
    rows: Option<&str>,
    rounds: usize,
) -> Result<(), Fail> {
    let cfg = load_config(config, seed)?;
    let rows: Vec<u8> = match rows {
        Some(r) => parse_rows(r)?,
        None => cfg.templates.clone(),
    };
    let (clients, _) = generate(&cfg.gen_spec()).map_err(runtime)?;
    let schema = clients[0].series.schema().clone();
    let targets = clients[0].train.targets.clone();
    let h = cfg.output_len;
    // fastest of three runs
    let time = |ts: &[Template]| {
        (0..3)
            .map(|_| {
                let t = Instant::now();
                let _ = mine_client_property(&targets, ts, cfg.fed.mining_tol);
                t.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    println!("mining on {} windows of client 0", targets.len());
    println!("{:<10} {:>10} {:>12}", "row", "templates", "seconds");
    for &r in &rows {
        let ts = templates_for_rows(&[r], &schema, h, cfg.template_options()).map_err(usage)?;
        println!("{r:<10} {:>10} {:>12.4}", ts.len(), time(&ts));
    }
    // distinct formulas: the selected rows at growing window lengths
    let mut pool: Vec<Template> = Vec::new();
    for w in cfg.window_len..cfg.window_len + 16 {
        if rows.is_empty() || pool.len() >= 15 {
            break;
        }
        let opts = TemplateOptions {
            window_len: w,
            eventualities: cfg.eventualities,
        };
        pool.extend(templates_for_rows(&rows, &schema, h, opts).map_err(usage)?);
    }
    if pool.len() >= 15 {
        println!("{:<10} {:>10} {:>12}", "formulas", "", "seconds");
        for k in [5, 10, 15] {
            println!("{k:<10} {:>10} {:>12.4}", "", time(&pool[..k]));
        }
    }
    if rows.is_empty() {
        return Ok(());
    }
    let templates = templates_for_rows(&rows, &schema, h, cfg.template_options()).map_err(usage)?;
    let t = Instant::now();
    let infos = prepare_clients(clients, &templates, &cfg.fed).map_err(runtime)?;
    println!("client property mining: {:.4} s", t.elapsed().as_secs_f64());
    let mut fed =
        Federation::new(infos, cfg.model_arch(), templates, cfg.fed.clone()).map_err(runtime)?;
    println!(
        "{:<10} {:>10} {:>12}  cluster sizes",
        "round", "selected", "seconds"
    );
    for _ in 0..rounds {
        let t = Instant::now();
        let info = fed.run_round().map_err(runtime)?;
        println!(
            "{:<10} {:>10} {:>12.4}  {:?}",
            info.round,
            info.selected.len(),
            t.elapsed().as_secs_f64(),
            info.cluster_sizes
        );
    }
    Ok(())
}

fn parse_rows(text: &str) -> Result<Vec<u8>, Fail> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| usage(format!("bad template row `{s}`")))
        })
        .collect()
}
