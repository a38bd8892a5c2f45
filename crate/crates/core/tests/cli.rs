use std::fs;
use std::path::Path;
use std::process::Command as Process;

use pmmh::cli::{dispatch, replay, Command, DispatchOptions, RunMeta};
use pmmh::config::parse_config;
use pmmh::io::{load_observations, read_trace};

fn bin(dir: &Path, args: &[&str]) -> i32 {
    Process::new(env!("CARGO_BIN_EXE_pmmh"))
        .args(args)
        .current_dir(dir)
        .env_remove("PMMH_THREADS")
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

fn config(dir: &Path, text: &str) -> pmmh::config::RunConfig {
    let mut c = parse_config(text).unwrap();
    c.out_dir = dir.to_path_buf();
    c
}

fn files_except_meta(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run_meta.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

/// Every CSV has a header and rows of equal width; every JSON parses.
fn check_schema(dir: &Path) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                serde_json::from_str::<serde_json::Value>(&text).unwrap_or_else(|e| panic!("{path:?}: {e}"));
            }
            Some("csv") => {
                let mut lines = text.lines();
                let width = lines.next().expect("header").split(',').count();
                for (i, line) in lines.enumerate() {
                    assert_eq!(line.split(',').count(), width, "{path:?} line {}", i + 2);
                }
            }
            _ => panic!("unexpected output {path:?}"),
        }
    }
}

#[test]
fn simulate_is_reproducible_and_loadable() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "model = sv\nT = 50\nseed = 11\n";
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    dispatch(Command::Simulate, &config(&a, text), &DispatchOptions::default()).unwrap();
    dispatch(Command::Simulate, &config(&b, text), &DispatchOptions::default()).unwrap();
    assert_eq!(files_except_meta(&a), files_except_meta(&b));
    assert_eq!(load_observations(&a.join("obs.csv")).unwrap().len(), 50);
    // states.csv has an `x` header, which is not an observation file
    assert!(load_observations(&a.join("states.csv")).unwrap_err().to_string().contains("line 1"));
    check_schema(&a);
}

#[test]
fn pmmh_with_no_iterations_writes_initial_row() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config(tmp.path(), "model = lg\nT = 20\nN = 50\nM = 0\nseed = 3\n");
    dispatch(Command::Pmmh, &c, &DispatchOptions::default()).unwrap();
    let trace = fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "iter,phi,loglik,accept");
    assert!(lines[1].starts_with("0,") && lines[1].ends_with(",0"));
    check_schema(tmp.path());
}

#[test]
fn pmmh_trace_has_m_plus_one_rows_and_diag_agrees() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let c = config(&run, "model = lg\nT = 30\nN = 80\nM = 400\nthin = 50\nseed = 4\nproposal.phi.sd = 0.2\n");
    dispatch(Command::Pmmh, &c, &DispatchOptions::default()).unwrap();
    let trace = read_trace(&run.join("trace.csv")).unwrap();
    assert_eq!(trace.theta_trace.len(), 401);
    assert_eq!(trace.accept_flags.len(), 400);
    let traj = fs::read_to_string(run.join("trajectories.csv")).unwrap();
    // iterations 0, 50, ..., 400 at 30 time points each
    assert_eq!(traj.lines().count(), 1 + 9 * 30);
    check_schema(&run);

    let diag = tmp.path().join("diag");
    let mut d = c.clone();
    d.out_dir = diag.clone();
    let options = DispatchOptions {
        trace_path: Some(run.join("trace.csv")),
    };
    dispatch(Command::Diag, &d, &options).unwrap();
    for f in ["acf.csv", "hist.csv"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(diag.join(f)).unwrap(), "{f}");
    }
    let a: serde_json::Value = serde_json::from_slice(&fs::read(run.join("summary.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&fs::read(diag.join("summary.json")).unwrap()).unwrap();
    assert_eq!(a["summary"], b["summary"]);
    assert!(a["sampler"]["filter_runs"].as_u64().unwrap() <= 401);
}

#[test]
fn run_meta_alone_reconstructs_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    for (i, (cmd, text)) in [
        (Command::Pmmh, "model = sv\nT = 40\nN = 60\nM = 50\nthin = 10\n"),
        (Command::Filter, "model = lg\nT = 40\nN = 60\n"),
        (Command::Evidence, "model = lg\nT = 8\nN = 40\nM = 100\nthin = 5\nevidence.R = 4\nevidence.K = 16\n"),
    ]
    .into_iter()
    .enumerate()
    {
        // No seed in the text: one is generated and must be echoed.
        let first = tmp.path().join(format!("first{i}"));
        let meta = dispatch(cmd, &config(&first, text), &DispatchOptions::default()).unwrap();
        let stored: RunMeta = serde_json::from_slice(&fs::read(first.join("run_meta.json")).unwrap()).unwrap();
        assert_eq!(stored.config, meta.config);
        assert!(stored.config.contains(&format!("seed = {}", stored.seed)));
        let second = tmp.path().join(format!("second{i}"));
        replay(&first.join("run_meta.json"), Some(&second)).unwrap();
        assert_eq!(files_except_meta(&first), files_except_meta(&second));
        check_schema(&second);
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.txt"), "model = sv\nN = 0\n").unwrap();
    assert_eq!(bin(d, &["simulate", "-c", "bad.txt"]), 2);
    assert_eq!(bin(d, &["simulate", "-c", "missing.txt"]), 2);
    assert_eq!(bin(d, &["frobnicate"]), 2);

    fs::write(d.join("obs.csv"), "y\n0.5\nabc\n").unwrap();
    fs::write(d.join("data.txt"), "model = sv\ndata_path = obs.csv\n").unwrap();
    assert_eq!(bin(d, &["filter", "-c", "data.txt"]), 3);

    // exp(-x) overflows for every particle, so all weights vanish at step 1.
    fs::write(d.join("ones.csv"), "1\n1\n1\n").unwrap();
    fs::write(
        d.join("degenerate.txt"),
        "model = sv\ndata_path = ones.csv\nparam.mu = -2000\nparam.rho = 0\nparam.sigma = 0\n",
    )
    .unwrap();
    assert_eq!(bin(d, &["filter", "-c", "degenerate.txt"]), 4);

    fs::write(d.join("ok.txt"), "model = lg\nT = 10\nN = 20\nseed = 1\n").unwrap();
    assert_eq!(bin(d, &["filter", "-c", "ok.txt", "--out-dir", "ok"]), 0);
    assert!(d.join("ok/filter.json").exists() && d.join("ok/run_meta.json").exists());
    // diag on a run with no trace
    assert_eq!(bin(d, &["diag", "-c", "ok.txt", "--out-dir", "ok"]), 3);
}

#[test]
fn filter_json_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config(tmp.path(), "model = lg\nT = 25\nN = 100\nseed = 9\n");
    dispatch(Command::Filter, &c, &DispatchOptions::default()).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("filter.json")).unwrap()).unwrap();
    let steps = v["per_step_log_z"].as_array().unwrap();
    assert_eq!(steps.len(), 25);
    assert_eq!(v["ess"].as_array().unwrap().len(), 25);
    let sum: f64 = steps.iter().map(|s| s.as_f64().unwrap()).sum();
    assert!((sum - v["log_lik_hat"].as_f64().unwrap()).abs() < 1e-9);
    assert!((v["log_lik_hat"].as_f64().unwrap() - v["exact_log_lik"].as_f64().unwrap()).abs() < 5.0);
}
