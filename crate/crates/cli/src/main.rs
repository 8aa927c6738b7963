//! `hurstsense` experiment runner.

mod config;
mod error;
mod experiments;
mod model;
mod output;
mod validate;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{error, warn};

use config::{Experiment, ExperimentConfig, Origin, RawConfig};
use error::CliError;
use validate::{has_errors, validate, Level};

#[derive(Parser, Debug)]
#[command(
    name = "hurstsense",
    version,
    about = "Simulation and Hurst-sensitivity experiments for SDEs driven by fractional Brownian motion"
)]
struct Cli {
    /// `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Worker threads; falls back to HURSTSENSE_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample solution paths.
    Simulate(Knobs),
    /// First-passage Laplace transforms.
    Fpt(Knobs),
    /// Marginal-law gaps against H = 1/2 and their rate.
    SensitivityMarginal(Knobs),
    /// First-passage Laplace gaps on a (lambda, H) grid.
    SensitivityLaplace(Knobs),
    /// Histogram densities against the Gaussian upper bound.
    DensityBound(Knobs),
    /// Tails of the Hölder norm of fBm.
    HolderTail(Knobs),
    /// Split of the marginal gap into its two correction terms.
    Decomposition(Knobs),
    /// Check a config without running it.
    Validate {
        /// Experiment to validate for; defaults to the config's `experiment` key, then fpt.
        #[arg(long)]
        experiment: Option<Experiment>,
        #[command(flatten)]
        knobs: Knobs,
    },
}

/// Flags mirroring config keys. Values are validated with the config.
#[derive(Args, Debug, Default)]
struct Knobs {
    /// pure-fbm, ou, cos-drift or custom.
    #[arg(long, visible_alias = "preset")]
    model: Option<String>,
    /// Drift expression in x (custom model).
    #[arg(long, allow_hyphen_values = true)]
    drift: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    drift_prime: Option<String>,
    /// Diffusion expression in x (custom model); omit for sigma = 1.
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    sigma_prime: Option<String>,
    #[arg(long)]
    sigma0: Option<String>,
    #[arg(long)]
    sigma_sup: Option<String>,
    /// Mean-reversion rate of the ou preset.
    #[arg(long, allow_hyphen_values = true)]
    kappa: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<String>,
    /// Comma-separated Hurst values.
    #[arg(long = "H")]
    hurst: Option<String>,
    /// Comma-separated lambda values.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    t: Option<String>,
    /// Comma-separated observation times (density-bound).
    #[arg(long)]
    times: Option<String>,
    #[arg(long)]
    n_paths: Option<String>,
    #[arg(long)]
    n_steps: Option<String>,
    #[arg(long)]
    t_max: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    /// circulant, cholesky or volterra.
    #[arg(long)]
    sampler: Option<String>,
    /// volterra or independent.
    #[arg(long)]
    coupling: Option<String>,
    /// Test function in x.
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<String>,
    #[arg(long)]
    bridge: Option<String>,
    #[arg(long)]
    time_power: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    a: Option<String>,
    #[arg(long)]
    b: Option<String>,
    /// Comma-separated tail levels (holder-tail).
    #[arg(long)]
    x: Option<String>,
    #[arg(long)]
    pde_nx: Option<String>,
    #[arg(long)]
    min_fit_points: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    /// Also write plot.svg.
    #[arg(long)]
    plot: bool,
}

impl Knobs {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("model", self.model.clone()),
            ("drift", self.drift.clone()),
            ("drift_prime", self.drift_prime.clone()),
            ("sigma", self.sigma.clone()),
            ("sigma_prime", self.sigma_prime.clone()),
            ("sigma0", self.sigma0.clone()),
            ("sigma_sup", self.sigma_sup.clone()),
            ("kappa", self.kappa.clone()),
            ("x0", self.x0.clone()),
            ("threshold", self.threshold.clone()),
            ("H", self.hurst.clone()),
            ("lambda", self.lambda.clone()),
            ("t", self.t.clone()),
            ("times", self.times.clone()),
            ("n_paths", self.n_paths.clone()),
            ("n_steps", self.n_steps.clone()),
            ("t_max", self.t_max.clone()),
            ("eta", self.eta.clone()),
            ("eps", self.eps.clone()),
            ("sampler", self.sampler.clone()),
            ("coupling", self.coupling.clone()),
            ("phi", self.phi.clone()),
            ("bridge", self.bridge.clone()),
            ("time_power", self.time_power.clone()),
            ("gamma", self.gamma.clone()),
            ("a", self.a.clone()),
            ("b", self.b.clone()),
            ("x", self.x.clone()),
            ("pde_nx", self.pde_nx.clone()),
            ("min_fit_points", self.min_fit_points.clone()),
            ("batch", self.batch.clone()),
            ("plot", self.plot.then(|| "true".to_string())),
        ]
    }
}

fn raw_config(cli: &Cli, knobs: &Knobs) -> Result<RawConfig, CliError> {
    let mut raw = RawConfig::default();
    if let Some(p) = &cli.config {
        raw.load_file(p)?;
    }
    if let Some(s) = &cli.seed {
        raw.set("seed", s.clone(), Origin::Flag)?;
    }
    for (k, v) in knobs.pairs() {
        if let Some(v) = v {
            raw.set(k, v, Origin::Flag)?;
        }
    }
    Ok(raw)
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("HURSTSENSE_THREADS") {
            Ok(v) if !v.trim().is_empty() => Some(v.trim().parse::<usize>().map_err(|e| CliError::Invalid(format!("HURSTSENSE_THREADS = '{v}': {e}")))?),
            _ => None,
        },
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::write(dir.join(name), text).map_err(|e| CliError::Io(format!("{}: {e}", dir.join(name).display())))
}

/// Run and write outputs; returns whether the statistical checks were inconclusive.
fn run(cli: &Cli, kind: Experiment, knobs: &Knobs) -> Result<bool, CliError> {
    let cfg = ExperimentConfig::resolve(kind, &raw_config(cli, knobs)?)?;
    let diags = validate(&cfg);
    for d in &diags {
        match d.level {
            Level::Error => error!("{}", d.message),
            Level::Warning => warn!("{}", d.message),
            Level::Info => log::info!("{}", d.message),
        }
    }
    if has_errors(&diags) {
        return Err(CliError::Invalid(format!("config for {kind} failed validation")));
    }
    init_threads(cli.threads)?;
    let start = Instant::now();
    let outcome = experiments::run_experiment(&cfg)?;
    let wall = start.elapsed().as_secs_f64();

    fs::create_dir_all(&cli.out).map_err(|e| CliError::Io(format!("{}: {e}", cli.out.display())))?;
    let results = outcome.results.to_csv();
    let echo = cfg.echo();
    write(&cli.out, "results.csv", &results)?;
    write(&cli.out, "config.txt", &echo)?;
    let summary = outcome.summary.as_ref().map(|s| s.to_csv());
    if let Some(s) = &summary {
        write(&cli.out, "summary.csv", s)?;
    }
    if let Some(svg) = &outcome.plot {
        write(&cli.out, "plot.svg", svg)?;
    }
    let mut manifest = format!(
        "version = {}\nexperiment = {kind}\nseed = {}\nthreads = {}\nwall_time_s = {wall:.3}\nconfig_sha256 = {}\nresults_sha256 = {}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.seed,
        rayon::current_num_threads(),
        output::sha256_hex(echo.as_bytes()),
        output::sha256_hex(results.as_bytes()),
    );
    if let Some(s) = &summary {
        manifest.push_str(&format!("summary_sha256 = {}\n", output::sha256_hex(s.as_bytes())));
    }
    manifest.push_str(&format!("inconclusive = {}\n", outcome.inconclusive));
    write(&cli.out, "manifest.txt", &manifest)?;
    Ok(outcome.inconclusive)
}

fn run_validate(cli: &Cli, experiment: Option<Experiment>, knobs: &Knobs) -> Result<bool, CliError> {
    let raw = raw_config(cli, knobs)?;
    let kind = match experiment {
        Some(k) => k,
        None => match raw.get("experiment") {
            Some((v, origin)) => v.parse().map_err(|message| CliError::Config {
                key: "experiment".into(),
                origin: origin.clone(),
                message,
            })?,
            None => Experiment::Fpt,
        },
    };
    let cfg = ExperimentConfig::resolve(kind, &raw)?;
    let diags = validate(&cfg);
    println!("validating {kind}");
    for d in &diags {
        println!("{d}");
    }
    Ok(!has_errors(&diags))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { experiment, knobs } => run_validate(&cli, *experiment, knobs).map(|ok| if ok { 0 } else { 1 }),
        other => {
            let (kind, knobs) = match other {
                Command::Simulate(k) => (Experiment::Simulate, k),
                Command::Fpt(k) => (Experiment::Fpt, k),
                Command::SensitivityMarginal(k) => (Experiment::SensitivityMarginal, k),
                Command::SensitivityLaplace(k) => (Experiment::SensitivityLaplace, k),
                Command::DensityBound(k) => (Experiment::DensityBound, k),
                Command::HolderTail(k) => (Experiment::HolderTail, k),
                Command::Decomposition(k) => (Experiment::Decomposition, k),
                Command::Validate { .. } => unreachable!(),
            };
            run(&cli, kind, knobs).map(|inconclusive| if inconclusive { 2 } else { 0 })
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
