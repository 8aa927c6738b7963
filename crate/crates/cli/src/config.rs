//! `key = value` experiment configuration with per-experiment defaults.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use hurstsense::{Coupling, SamplerKind};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Simulate,
    Fpt,
    SensitivityMarginal,
    SensitivityLaplace,
    DensityBound,
    HolderTail,
    Decomposition,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Simulate,
        Experiment::Fpt,
        Experiment::SensitivityMarginal,
        Experiment::SensitivityLaplace,
        Experiment::DensityBound,
        Experiment::HolderTail,
        Experiment::Decomposition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Fpt => "fpt",
            Experiment::SensitivityMarginal => "sensitivity-marginal",
            Experiment::SensitivityLaplace => "sensitivity-laplace",
            Experiment::DensityBound => "density-bound",
            Experiment::HolderTail => "holder-tail",
            Experiment::Decomposition => "decomposition",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| format!("unknown experiment '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    PureFbm,
    Ou,
    CosDrift,
    Custom,
}

impl ModelChoice {
    fn name(self) -> &'static str {
        match self {
            ModelChoice::PureFbm => "pure-fbm",
            ModelChoice::Ou => "ou",
            ModelChoice::CosDrift => "cos-drift",
            ModelChoice::Custom => "custom",
        }
    }
}

impl FromStr for ModelChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pure-fbm" => Ok(ModelChoice::PureFbm),
            "ou" => Ok(ModelChoice::Ou),
            "cos-drift" => Ok(ModelChoice::CosDrift),
            "custom" => Ok(ModelChoice::Custom),
            _ => Err(format!("unknown model '{s}' (expected pure-fbm, ou, cos-drift or custom)")),
        }
    }
}

fn sampler_name(s: SamplerKind) -> &'static str {
    match s {
        SamplerKind::Circulant => "circulant",
        SamplerKind::Cholesky => "cholesky",
        SamplerKind::Volterra => "volterra",
    }
}

fn parse_sampler(s: &str) -> Result<SamplerKind, String> {
    match s {
        "circulant" => Ok(SamplerKind::Circulant),
        "cholesky" => Ok(SamplerKind::Cholesky),
        "volterra" => Ok(SamplerKind::Volterra),
        _ => Err(format!("unknown sampler '{s}' (expected circulant, cholesky or volterra)")),
    }
}

fn coupling_name(c: Coupling) -> &'static str {
    match c {
        Coupling::Volterra => "volterra",
        Coupling::Independent => "independent",
    }
}

fn parse_coupling(s: &str) -> Result<Coupling, String> {
    match s {
        "volterra" | "coupled" => Ok(Coupling::Volterra),
        "independent" => Ok(Coupling::Independent),
        _ => Err(format!("unknown coupling '{s}' (expected volterra or independent)")),
    }
}

/// Every recognised key, in echo order.
pub const KEYS: &[&str] = &[
    "experiment",
    "model",
    "drift",
    "drift_prime",
    "sigma",
    "sigma_prime",
    "sigma0",
    "sigma_sup",
    "kappa",
    "x0",
    "threshold",
    "H",
    "lambda",
    "t",
    "times",
    "n_paths",
    "n_steps",
    "t_max",
    "eta",
    "eps",
    "seed",
    "sampler",
    "coupling",
    "phi",
    "bridge",
    "time_power",
    "gamma",
    "a",
    "b",
    "x",
    "pde_nx",
    "min_fit_points",
    "batch",
    "plot",
];

/// Where a raw value came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Default,
    File { path: String, line: usize },
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => f.write_str("default"),
            Origin::File { path, line } => write!(f, "{path}:{line}"),
            Origin::Flag => f.write_str("command line"),
        }
    }
}

/// Layered raw values: defaults, then the config file, then flags.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<String, (String, Origin)>,
}

impl RawConfig {
    pub fn set(&mut self, key: &str, value: impl Into<String>, origin: Origin) -> Result<(), CliError> {
        if !KEYS.contains(&key) {
            return Err(CliError::Config {
                key: key.to_string(),
                origin,
                message: "unknown key".into(),
            });
        }
        self.values.insert(key.to_string(), (value.into(), origin));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&(String, Origin)> {
        self.values.get(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn parse_text(&mut self, text: &str, path: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let origin = Origin::File {
                path: path.to_string(),
                line: i + 1,
            };
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Config {
                key: line.to_string(),
                origin: origin.clone(),
                message: "expected key = value".into(),
            })?;
            self.set(k.trim(), v.trim(), origin)?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.parse_text(&text, &path.display().to_string())
    }
}

fn defaults(kind: Experiment) -> Vec<(&'static str, &'static str)> {
    let mut d = vec![
        ("model", "pure-fbm"),
        ("drift", ""),
        ("drift_prime", ""),
        ("sigma", ""),
        ("sigma_prime", ""),
        ("sigma0", ""),
        ("sigma_sup", ""),
        ("kappa", "1"),
        ("x0", "0"),
        ("threshold", "1"),
        ("H", "0.75"),
        ("lambda", "1"),
        ("t", "1"),
        ("times", "0.5,1,2"),
        ("n_paths", "10000"),
        ("n_steps", "1024"),
        ("t_max", "10"),
        ("eta", ""),
        ("eps", "0.05"),
        ("seed", "0"),
        ("sampler", "circulant"),
        ("coupling", "volterra"),
        ("phi", "cos(x)"),
        ("bridge", "true"),
        ("time_power", "1"),
        ("gamma", "0.25"),
        ("a", "0"),
        ("b", "1"),
        ("x", "2,4,6,8"),
        ("pde_nx", "800"),
        ("min_fit_points", "3"),
        ("batch", "128"),
        ("plot", "false"),
    ];
    let over: &[(&str, &str)] = match kind {
        Experiment::Simulate => &[("n_paths", "10"), ("n_steps", "1000")],
        Experiment::Fpt => &[("H", "0.5"), ("lambda", "0.5,1,2"), ("t_max", "50"), ("n_paths", "100000")],
        Experiment::SensitivityMarginal => &[("model", "cos-drift"), ("H", "0.51,0.53,0.56,0.6,0.65"), ("n_paths", "200000"), ("n_steps", "2048")],
        Experiment::SensitivityLaplace => &[("H", "0.5,0.55,0.6,0.7"), ("lambda", "1,2,4,8"), ("n_paths", "100000"), ("n_steps", "4096")],
        Experiment::DensityBound => &[("model", "cos-drift"), ("n_paths", "200000"), ("n_steps", "256")],
        Experiment::HolderTail => &[("eps", "0.25")],
        Experiment::Decomposition => &[("model", "cos-drift"), ("H", "0.6"), ("n_paths", "50000")],
    };
    for (k, v) in over {
        if let Some(e) = d.iter_mut().find(|(dk, _)| dk == k) {
            e.1 = v;
        }
    }
    d
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: ModelChoice,
    pub drift: String,
    pub drift_prime: String,
    pub sigma: String,
    pub sigma_prime: String,
    /// Required with a custom `sigma`.
    pub sigma0: Option<f64>,
    pub sigma_sup: Option<f64>,
    pub kappa: f64,
    pub x0: f64,
    pub threshold: f64,
    pub hurst: Vec<f64>,
    pub lambda: Vec<f64>,
    pub t: f64,
    pub times: Vec<f64>,
    pub n_paths: u64,
    pub n_steps: usize,
    pub t_max: f64,
    pub eta: Option<f64>,
    pub eps: f64,
    pub seed: u64,
    pub sampler: SamplerKind,
    pub coupling: Coupling,
    pub phi: String,
    pub bridge: bool,
    pub time_power: f64,
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
    pub x: Vec<f64>,
    pub pde_nx: usize,
    pub min_fit_points: usize,
    pub batch: usize,
    pub plot: bool,
}

struct Reader<'a> {
    raw: &'a RawConfig,
    defaults: BTreeMap<&'static str, &'static str>,
}

impl Reader<'_> {
    fn text(&self, key: &str) -> (String, Origin) {
        match self.raw.get(key) {
            Some((v, o)) => (v.clone(), o.clone()),
            None => (self.defaults.get(key).copied().unwrap_or("").to_string(), Origin::Default),
        }
    }

    fn parse<T>(&self, key: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<T, CliError> {
        let (v, origin) = self.text(key);
        f(&v).map_err(|message| CliError::Config {
            key: key.to_string(),
            origin,
            message,
        })
    }

    fn num<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        self.parse(key, |s| s.parse::<T>().map_err(|e| format!("'{s}': {e}")))
    }

    fn opt(&self, key: &str) -> Result<Option<f64>, CliError> {
        self.parse(key, |s| {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|e| format!("'{s}': {e}"))
            }
        })
    }

    fn list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        self.parse(key, |s| {
            let v: Result<Vec<f64>, String> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("'{x}': {e}"))).collect();
            let v = v?;
            if v.is_empty() {
                Err("empty list".into())
            } else {
                Ok(v)
            }
        })
    }

    fn boolean(&self, key: &str) -> Result<bool, CliError> {
        self.parse(key, |s| match s {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(format!("'{s}' is not a boolean")),
        })
    }
}

impl ExperimentConfig {
    pub fn resolve(kind: Experiment, raw: &RawConfig) -> Result<Self, CliError> {
        if let Some((v, origin)) = raw.get("experiment") {
            if v != kind.name() {
                return Err(CliError::Config {
                    key: "experiment".into(),
                    origin: origin.clone(),
                    message: format!("config is for '{v}' but the subcommand is '{kind}'"),
                });
            }
        }
        let r = Reader {
            raw,
            defaults: defaults(kind).into_iter().collect(),
        };
        let t_max: f64 = r.num("t_max")?;
        let n_steps = if kind == Experiment::Fpt && !raw.contains("n_steps") {
            ((t_max / 1e-3).round() as usize).max(1)
        } else {
            r.num("n_steps")?
        };
        Ok(Self {
            experiment: kind,
            model: r.parse("model", |s| s.parse())?,
            drift: r.text("drift").0,
            drift_prime: r.text("drift_prime").0,
            sigma: r.text("sigma").0,
            sigma_prime: r.text("sigma_prime").0,
            sigma0: r.opt("sigma0")?,
            sigma_sup: r.opt("sigma_sup")?,
            kappa: r.num("kappa")?,
            x0: r.num("x0")?,
            threshold: r.num("threshold")?,
            hurst: r.list("H")?,
            lambda: r.list("lambda")?,
            t: r.num("t")?,
            times: r.list("times")?,
            n_paths: r.num("n_paths")?,
            n_steps,
            t_max,
            eta: r.opt("eta")?,
            eps: r.num("eps")?,
            seed: r.num("seed")?,
            sampler: r.parse("sampler", parse_sampler)?,
            coupling: r.parse("coupling", parse_coupling)?,
            phi: r.text("phi").0,
            bridge: r.boolean("bridge")?,
            time_power: r.num("time_power")?,
            gamma: r.num("gamma")?,
            a: r.num("a")?,
            b: r.num("b")?,
            x: r.list("x")?,
            pde_nx: r.num("pde_nx")?,
            min_fit_points: r.num("min_fit_points")?,
            batch: r.num("batch")?,
            plot: r.boolean("plot")?,
        })
    }

    /// Canonical `key = value` text; loading it reproduces this config.
    pub fn echo(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("experiment", self.experiment.name().into());
        put("model", self.model.name().into());
        put("drift", self.drift.clone());
        put("drift_prime", self.drift_prime.clone());
        put("sigma", self.sigma.clone());
        put("sigma_prime", self.sigma_prime.clone());
        put("sigma0", opt(self.sigma0));
        put("sigma_sup", opt(self.sigma_sup));
        put("kappa", self.kappa.to_string());
        put("x0", self.x0.to_string());
        put("threshold", self.threshold.to_string());
        put("H", list(&self.hurst));
        put("lambda", list(&self.lambda));
        put("t", self.t.to_string());
        put("times", list(&self.times));
        put("n_paths", self.n_paths.to_string());
        put("n_steps", self.n_steps.to_string());
        put("t_max", self.t_max.to_string());
        put("eta", opt(self.eta));
        put("eps", self.eps.to_string());
        put("seed", self.seed.to_string());
        put("sampler", sampler_name(self.sampler).into());
        put("coupling", coupling_name(self.coupling).into());
        put("phi", self.phi.clone());
        put("bridge", self.bridge.to_string());
        put("time_power", self.time_power.to_string());
        put("gamma", self.gamma.to_string());
        put("a", self.a.to_string());
        put("b", self.b.to_string());
        put("x", list(&self.x));
        put("pde_nx", self.pde_nx.to_string());
        put("min_fit_points", self.min_fit_points.to_string());
        put("batch", self.batch.to_string());
        put("plot", self.plot.to_string());
        s
    }
}
