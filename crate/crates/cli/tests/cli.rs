use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn mvsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvsde"))
        .args(args)
        .env_remove("MVSDE_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(task: &[&str], config: &Path) -> Output {
    let mut args: Vec<&str> = task.to_vec();
    args.extend(["--config", config.to_str().unwrap()]);
    mvsde(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// `(particle, t, values)` rows of a long-format paths CSV.
fn rows(path: PathBuf) -> Vec<(usize, f64, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            let vals = r.iter().skip(2).map(|f| f.parse().unwrap()).collect();
            (r[0].parse().unwrap(), r[1].parse().unwrap(), vals)
        })
        .collect()
}

const ZERO_DYNAMICS: &str = r#"
output = "out"

[problem.grid]
h = 0.01
r0 = 0.1
horizon = 0.5

[problem.operator]
kind = "zero"
dim = 1

[problem.coefficients]
f = {}
g = {}

[problem.initial]
kind = "constant"
value = [0.5]

[run]
particles = 3
epsilon = 0.1
seed = 4

[simulate]
system = "perturbed"
"#;

#[test]
fn zero_dynamics_give_a_constant_trajectory() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.toml", ZERO_DYNAMICS);
    let o = run(&["simulate"], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let r = rows(out.join("paths.csv"));
    assert_eq!(r.len(), 3 * 61);
    assert!(r.iter().all(|(_, _, v)| v == &[0.5]));
    let manifest = json(out.join("manifest.json"));
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["task"], "simulate");
    assert_eq!(manifest["files"].as_array().unwrap().len(), 3);
}

#[test]
fn reflected_bm_reproduces_the_half_normal_mean() {
    let dir = TempDir::new().unwrap();
    let body = r#"
output = "out"
[problem]
preset = "reflected_bm"
[problem.grid]
h = 0.001
r0 = 0.001
horizon = 0.25
[run]
particles = 4000
epsilon = 1.0
seed = 77
[simulate]
system = "perturbed"
"#;
    let cfg = write_config(dir.path(), "rbm.toml", body);
    let o = run(&["simulate"], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let last: Vec<f64> = rows(dir.path().join("out/paths.csv"))
        .into_iter()
        .filter(|(_, t, _)| (t - 0.25).abs() < 1e-9)
        .map(|(_, _, v)| v[0].abs())
        .collect();
    assert_eq!(last.len(), 4000);
    let n = last.len() as f64;
    let mean = last.iter().sum::<f64>() / n;
    let sd = (last.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let target = (2.0 * 0.25 / std::f64::consts::PI).sqrt();
    // projected Euler is biased low by about 0.58 √h at a reflecting boundary
    let allowance = 3.0 * sd / n.sqrt() + 0.6 * 0.001f64.sqrt();
    assert!((mean - target).abs() <= allowance, "{mean} vs {target}");
}

#[test]
fn missing_keys_are_named() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &ZERO_DYNAMICS.replace("output = \"out\"", ""));
    let o = run(&["simulate"], &cfg);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("output"), "{}", stderr(&o));

    let body = "output = \"o\"\n[problem.operator]\nkind = \"zero\"\ndim = 1\n[simulate]\nsystem = \"perturbed\"\n";
    let cfg = write_config(dir.path(), "nogrid.toml", body);
    let o = run(&["simulate"], &cfg);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("problem.grid"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected_with_a_line() {
    let dir = TempDir::new().unwrap();
    let body = ZERO_DYNAMICS.replace("particles = 3", "particels = 3");
    let line = body.lines().position(|l| l.starts_with("particels")).unwrap() + 1;
    let cfg = write_config(dir.path(), "typo.toml", &body);
    let o = run(&["simulate"], &cfg);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("particels"), "{err}");
    assert!(err.contains(&format!("typo.toml:{line}:")), "{err}");
}

#[test]
fn semantic_errors_point_at_their_key() {
    let dir = TempDir::new().unwrap();
    let body = ZERO_DYNAMICS.replace("particles = 3", "particles = 0");
    let line = body.lines().position(|l| l.starts_with("particles")).unwrap() + 1;
    let cfg = write_config(dir.path(), "zero.toml", &body);
    let o = run(&["simulate"], &cfg);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(&format!("zero.toml:{line}:")), "{}", stderr(&o));
}

const BROWNIAN: &str = r#"
output = "out"
[problem.grid]
h = 0.01
r0 = 0.1
horizon = 1.0
[problem.operator]
kind = "zero"
dim = 1
[problem.coefficients]
f = {}
g = { c0 = 1.0 }
[problem.initial]
kind = "constant"
value = [0.0]
"#;

#[test]
fn rate_of_the_reference_and_of_a_ramp() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "ref.toml",
        &format!("{BROWNIAN}[rate]\nkind = \"ldp\"\ntarget = {{ kind = \"reference\" }}\n"),
    );
    let o = run(&["rate"], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(dir.path().join("out/rate.json"));
    assert!(r["rate"].as_f64().unwrap() <= 1e-12);

    let cfg = write_config(
        dir.path(),
        "ramp.toml",
        &format!("{BROWNIAN}[rate]\nkind = \"ldp\"\ntarget = {{ kind = \"ramp\", slope = [1.0] }}\n"),
    );
    let o = run(&["rate", "--out", dir.path().join("ramp").to_str().unwrap()], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(dir.path().join("ramp/rate.json"));
    assert!((r["rate"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(r["method"], "inversion");
    let control = fs::read_to_string(dir.path().join("ramp/control.csv")).unwrap();
    assert_eq!(control.lines().count(), 101);

    let cfg = write_config(
        dir.path(),
        "penalty.toml",
        &format!(
            "{BROWNIAN}[rate]\nkind = \"ldp\"\nmethod = \"penalty\"\ntarget = {{ kind = \"ramp\", slope = [1.0] }}\n"
        ),
    );
    let o = run(&["rate", "--out", dir.path().join("pen").to_str().unwrap()], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(dir.path().join("pen/rate.json"));
    assert!((r["rate"].as_f64().unwrap() - 0.5).abs() < 0.025);
}

#[test]
fn unreachable_targets_fail_without_a_rate() {
    let dir = TempDir::new().unwrap();
    // no noise: every skeleton is the deterministic limit
    let body = BROWNIAN.replace("g = { c0 = 1.0 }", "g = {}");
    let cfg = write_config(
        dir.path(),
        "unreachable.toml",
        &format!(
            "{body}[rate]\nkind = \"ldp\"\ntarget = {{ kind = \"ramp\", slope = [1.0] }}\n\
             [rate.optimizer]\npenalties = [100.0]\nmax_iterations = 5\n"
        ),
    );
    let o = run(&["rate"], &cfg);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let r = json(dir.path().join("out/rate.json"));
    assert!(r["rate"].is_null());
    assert_eq!(r["converged"], false);
}

#[test]
fn degenerate_clt_is_an_exact_match() {
    let dir = TempDir::new().unwrap();
    let body = format!(
        "{BROWNIAN}[run]\nparticles = 4\nseed = 3\n[experiment]\nepsilon_grid = [0.1, 0.01, 0.001, 0.0001]\nper_batch = 2\n"
    );
    let cfg = write_config(dir.path(), "clt.toml", &body);
    let o = run(&["experiment", "clt"], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(dir.path().join("out/report.json"));
    assert_eq!(r["exact_match"], true);
    assert_eq!(r["passed"], true);
    assert!(r["fit"].is_null());
    let csv = fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    assert!(csv.starts_with("epsilon,batch,statistic,value\n"));
}

#[test]
fn increasing_epsilon_grid_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let body = format!("{BROWNIAN}[experiment]\nepsilon_grid = [0.001, 0.01, 0.1, 1.0]\nper_batch = 2\n");
    let line = body.lines().position(|l| l.starts_with("epsilon_grid")).unwrap() + 1;
    let cfg = write_config(dir.path(), "lln.toml", &body);
    let o = run(&["experiment", "lln"], &cfg);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(&format!("lln.toml:{line}:")), "{}", stderr(&o));
}

#[test]
fn skeleton_with_a_control_file_next_to_the_config() {
    let dir = TempDir::new().unwrap();
    let sub = dir.path().join("configs");
    fs::create_dir(&sub).unwrap();
    let mut u = String::from("t,u1\n");
    for k in 0..100 {
        u.push_str(&format!("{},2\n", k as f64 * 0.01));
    }
    fs::write(sub.join("u.csv"), u).unwrap();
    let body = format!("{BROWNIAN}[control]\nkind = \"csv\"\npath = \"u.csv\"\n[skeleton]\nkind = \"ldp\"\n");
    let cfg = write_config(&sub, "skel.toml", &body);
    let o = Command::new(env!("CARGO_BIN_EXE_mvsde"))
        .current_dir(dir.path())
        .args(["skeleton", "--config", "configs/skel.toml"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let path = fs::read_to_string(sub.join("out/path.csv")).unwrap();
    let last: f64 = path.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((last - 2.0).abs() < 1e-12, "{last}");
    assert!(cfg.exists());
}

#[test]
fn continuity_experiment_passes_on_the_tanh_preset() {
    let dir = TempDir::new().unwrap();
    let body = "output = \"out\"\n[problem]\npreset = \"example5_tanh_reflected\"\n\
                [control]\nkind = \"constant\"\nvalue = [1.0]\n[experiment]\n";
    let cfg = write_config(dir.path(), "cont.toml", body);
    let o = run(&["experiment", "skeleton"], &cfg);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = json(dir.path().join("out/continuity.json"));
    assert_eq!(r["amplitude"].as_array().unwrap().len(), 4);
}

#[test]
fn runs_replay_byte_identically_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let body = "output = \"out\"\n[problem]\npreset = \"example5_tanh_reflected\"\n\
                [run]\nparticles = 16\nepsilon = 0.05\nseed = 12\n[simulate]\nsystem = \"clt_pair\"\n";
    let cfg = write_config(dir.path(), "pair.toml", body);
    let a = dir.path().join("a");
    let o = mvsde(&[
        "simulate",
        "--threads",
        "1",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let b = dir.path().join("b");
    let o = mvsde(&[
        "replay",
        a.join("manifest.json").to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--threads",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["paths.csv", "k.csv", "limit_paths.csv", "limit_k.csv", "metadata.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let c = dir.path().join("c");
    let o = mvsde(&[
        "simulate",
        "--seed",
        "13",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_ne!(
        fs::read(a.join("paths.csv")).unwrap(),
        fs::read(c.join("paths.csv")).unwrap()
    );
    assert_eq!(json(c.join("manifest.json"))["seed"], 13);
}

#[test]
fn presets_are_listed() {
    let o = mvsde(&["presets"]);
    let s = String::from_utf8(o.stdout).unwrap();
    assert_eq!(
        s.lines().collect::<Vec<_>>(),
        ["reflected_bm", "delay_linear", "example5_tanh_reflected"]
    );
}
