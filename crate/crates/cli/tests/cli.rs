use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hurstsense"));
    c.env_remove("HURSTSENSE_THREADS").env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn manifest_value(dir: &Path, key: &str) -> String {
    let m = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    m.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing from manifest"))
}

#[test]
fn fpt_brownian_matches_closed_form() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().to_str().unwrap();
    let o = run(&[
        "fpt",
        "--model",
        "pure-fbm",
        "--H",
        "0.5",
        "--lambda",
        "0.5",
        "--n-paths",
        "20000",
        "--t-max",
        "30",
        "--seed",
        "3",
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let csv = fs::read_to_string(d.path().join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "lambda,H,value,std_err,trunc_bound,n_paths,dt");
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let exact = (-1.0f64).exp();
    assert!((row[2] - exact).abs() <= 3.0 * row[3] + 0.005, "value {} vs {exact}", row[2]);
    assert_eq!(row[5], 20000.0);
    assert!((row[6] - 1e-3).abs() < 1e-15);
    for f in ["config.txt", "manifest.txt"] {
        assert!(d.path().join(f).exists(), "{f}");
    }
}

#[test]
fn same_seed_gives_identical_bytes_across_thread_counts() {
    let args = [
        "sensitivity-marginal",
        "--preset",
        "cos-drift",
        "--H",
        "0.5,0.6",
        "--n-paths",
        "512",
        "--n-steps",
        "64",
        "--seed",
        "42",
    ];
    let mut outputs = Vec::new();
    for threads in ["1", "3", "1"] {
        let d = tempfile::tempdir().unwrap();
        let mut a = args.to_vec();
        a.extend(["--threads", threads, "--out", d.path().to_str().unwrap()]);
        let o = run(&a);
        assert!(matches!(o.status.code(), Some(0) | Some(2)), "{}", text(&o));
        let results = fs::read(d.path().join("results.csv")).unwrap();
        let summary = fs::read(d.path().join("summary.csv")).unwrap();
        outputs.push((results, summary));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let csv = String::from_utf8(outputs[0].0.clone()).unwrap();
    let first = csv.lines().nth(1).unwrap();
    assert!(
        first.starts_with("5.0000000000000000e-1,0.0000000000000000e0,"),
        "H = 1/2 gap must be exactly zero: {first}"
    );
}

#[test]
fn thread_env_fallback_does_not_change_results() {
    let args = [
        "fpt",
        "--H",
        "0.75",
        "--lambda",
        "1,2",
        "--n-paths",
        "300",
        "--t-max",
        "4",
        "--n-steps",
        "512",
        "--seed",
        "9",
    ];
    let mut hashes = Vec::new();
    for threads in ["1", "2"] {
        let d = tempfile::tempdir().unwrap();
        let mut a = args.to_vec();
        a.extend(["--out", d.path().to_str().unwrap()]);
        let o = bin().args(&a).env("HURSTSENSE_THREADS", threads).output().unwrap();
        assert!(o.status.success(), "{}", text(&o));
        assert_eq!(manifest_value(d.path(), "threads"), threads);
        hashes.push(manifest_value(d.path(), "results_sha256"));
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn config_echo_reproduces_the_run() {
    let d1 = tempfile::tempdir().unwrap();
    let o = run(&[
        "holder-tail",
        "--H",
        "0.7",
        "--n-paths",
        "200",
        "--n-steps",
        "128",
        "--x",
        "1,2",
        "--seed",
        "5",
        "--out",
        d1.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let d2 = tempfile::tempdir().unwrap();
    let echo = d1.path().join("config.txt");
    let o = run(&["holder-tail", "--config", echo.to_str().unwrap(), "--out", d2.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    for key in ["config_sha256", "results_sha256", "seed"] {
        assert_eq!(manifest_value(d1.path(), key), manifest_value(d2.path(), key), "{key}");
    }
    let header = fs::read_to_string(d2.path().join("results.csv")).unwrap();
    assert!(header.starts_with("x,empirical_exceedance,bound,H\n"));
}

#[test]
fn config_errors_name_line_and_key() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.txt");
    fs::write(&cfg, "# density run\nn_paths = 100\nn_steps = many\n").unwrap();
    let o = run(&["density-bound", "--config", cfg.to_str().unwrap(), "--out", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let msg = text(&o);
    assert!(msg.contains("n_steps") && msg.contains("bad.txt:3"), "{msg}");
    fs::write(&cfg, "seed = 1\nhurst = 0.6\n").unwrap();
    let o = run(&["density-bound", "--config", cfg.to_str().unwrap(), "--out", d.path().to_str().unwrap()]);
    let msg = text(&o);
    assert_eq!(o.status.code(), Some(1));
    assert!(msg.contains("hurst") && msg.contains("bad.txt:2") && msg.contains("unknown key"), "{msg}");
}

#[test]
fn validate_rejects_subcritical_hurst() {
    let o = run(&["validate", "--H", "0.4"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("[0.5, 1)"), "{}", text(&o));
}

#[test]
fn validate_warns_on_degenerate_start() {
    let o = run(&["validate", "--experiment", "fpt", "--x0", "1.5", "--threshold", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let msg = text(&o);
    assert!(msg.contains("warning") && msg.contains("τ = 0"), "{msg}");
}

#[test]
fn validate_suggests_circulant_for_huge_cholesky() {
    let d = tempfile::tempdir().unwrap();
    let probe = d.path().join("untouched");
    let o = run(&[
        "validate",
        "--experiment",
        "simulate",
        "--sampler",
        "cholesky",
        "--n-steps",
        "1048576",
        "--out",
        probe.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let msg = text(&o);
    assert!(msg.contains("warning") && msg.contains("circulant"), "{msg}");
    assert!(!probe.exists(), "validate must not write outputs");
}

#[test]
fn custom_expressions_run() {
    let d = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--model",
        "custom",
        "--drift",
        "-0.5*x + sin(x)",
        "--sigma",
        "1 + 0.2*cos(x)",
        "--sigma0",
        "0.8",
        "--sigma-sup",
        "1.2",
        "--H",
        "0.7",
        "--n-paths",
        "2",
        "--n-steps",
        "16",
        "--plot",
        "--out",
        d.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let csv = fs::read_to_string(d.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 17);
    assert!(fs::read_to_string(d.path().join("plot.svg")).unwrap().starts_with("<svg"));
    let o = run(&["simulate", "--model", "custom", "--drift", "x*y", "--out", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("'y'"));
}
