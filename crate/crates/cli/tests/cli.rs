use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use panel_clusters::montecarlo::{generate, DgpConfig};

struct Scratch(PathBuf);

impl Scratch {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("panelclust-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        Scratch(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        fs::remove_dir_all(&self.0).ok();
    }
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panelclust"))
        .args(["--log-level", "warn"])
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Two clusters of ten units; written without the constant column.
fn write_panel(path: &Path, t: usize) {
    let (panel, _) = generate(&DgpConfig {
        q: 2,
        n_units: 20,
        n_periods: t,
        seed: 7,
        ..DgpConfig::default()
    })
    .unwrap();
    let mut text = String::from("unit,time,y\n");
    for i in 0..panel.n_units() {
        for s in 0..t {
            text.push_str(&format!("{},{},{}\n", panel.unit_ids()[i], s, panel.y(i, s)));
        }
    }
    fs::write(path, text).unwrap();
}

fn key(out: &str, name: &str) -> Option<String> {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{name}=")))
        .map(str::to_string)
}

#[test]
fn discover_writes_clusters() {
    let dir = Scratch::new("discover");
    let data = dir.path("panel.csv");
    write_panel(&data, 200);
    let clusters = dir.path("clusters.csv");
    let matrix = dir.path("corr.csv");
    let o = run(&[
        "discover",
        "--input",
        data.to_str().unwrap(),
        "--intercept",
        "--tuning",
        "cv",
        "--out",
        clusters.to_str().unwrap(),
        "--dump-matrix",
        matrix.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&clusters).unwrap();
    assert!(text.starts_with("unit,cluster\n"));
    assert_eq!(text.lines().count(), 21);
    assert_eq!(key(&stdout(&o), "q_hat").as_deref(), Some("2"));
    assert_eq!(key(&stdout(&o), "sizes").as_deref(), Some("10,10"));
    assert_eq!(fs::read_to_string(&matrix).unwrap().lines().count(), 20);
}

#[test]
fn unbalanced_panel_names_unit() {
    let dir = Scratch::new("unbalanced");
    let data = dir.path("panel.csv");
    fs::write(&data, "unit,time,y\na,1,0.5\na,2,0.1\nb,1,0.3\n").unwrap();
    let o = run(&["discover", "--input", data.to_str().unwrap(), "--intercept", "--out", dir.path("c.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains('b'), "{}", stderr(&o));
}

#[test]
fn threshold_out_of_range_is_usage_error() {
    let o = run(&["discover", "--input", "missing.csv", "--eta", "1.2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("outside [0, 1]"));
}

#[test]
fn fixed_tuning_requires_values() {
    let o = run(&["discover", "--input", "missing.csv", "--tuning", "fixed", "--eta", "0.3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infer_art_on_discovered_clusters() {
    let dir = Scratch::new("infer-art");
    let data = dir.path("panel.csv");
    write_panel(&data, 200);
    let o = run(&[
        "infer", "--input", data.to_str().unwrap(), "--intercept", "--method", "art", "--r", "1", "--lambda", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(key(&out, "method").as_deref(), Some("art"));
    assert_eq!(key(&out, "q_hat").as_deref(), Some("2"));
    assert_eq!(key(&out, "orbit_size").as_deref(), Some("4"));
    assert!(key(&out, "p_value").is_some() && key(&out, "phi").is_some());
}

#[test]
fn infer_cce_with_one_cluster_fails() {
    let dir = Scratch::new("infer-cce");
    let data = dir.path("panel.csv");
    write_panel(&data, 100);
    let o = run(&[
        "infer", "--input", data.to_str().unwrap(), "--intercept", "--method", "cce", "--r", "1", "--tuning", "fixed",
        "--bandwidth", "2", "--eta", "0",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("single cluster: test undefined"));
}

#[test]
fn infer_with_supplied_clusters_and_bcl() {
    let dir = Scratch::new("infer-bcl");
    let data = dir.path("panel.csv");
    write_panel(&data, 100);
    let clusters = dir.path("clusters.csv");
    let mut text = String::from("unit,cluster\n");
    for i in 1..=20 {
        text.push_str(&format!("{i},{}\n", if i <= 10 { "left" } else { "right" }));
    }
    fs::write(&clusters, text).unwrap();
    let o = run(&[
        "infer", "--input", data.to_str().unwrap(), "--intercept", "--method", "cce", "--r", "1", "--lambda", "1",
        "--clusters", clusters.to_str().unwrap(), "--variant", "meat",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(key(&stdout(&o), "method").as_deref(), Some("cce-meat"));

    let o = run(&["infer", "--input", data.to_str().unwrap(), "--intercept", "--method", "bcl", "--r", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(key(&stdout(&o), "method").as_deref(), Some("bcl"));
}

#[test]
fn restriction_dimension_is_checked() {
    let dir = Scratch::new("infer-dim");
    let data = dir.path("panel.csv");
    write_panel(&data, 100);
    let o = run(&["infer", "--input", data.to_str().unwrap(), "--intercept", "--r", "1,0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn tune_prints_choice_and_surface() {
    let dir = Scratch::new("tune");
    let data = dir.path("panel.csv");
    write_panel(&data, 100);
    let surface = dir.path("surface.csv");
    let o = run(&["tune", "--input", data.to_str().unwrap(), "--intercept", "--out", surface.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let l: usize = key(&out, "bandwidth").unwrap().parse().unwrap();
    let eta: f64 = key(&out, "eta_tilde").unwrap().parse().unwrap();
    assert!(l >= 1 && (0.0..=1.0).contains(&eta));
    let text = fs::read_to_string(&surface).unwrap();
    assert!(text.starts_with("bandwidth,eta_tilde,score\n"));
    assert!(text.lines().count() > 21);
}

#[test]
fn simulate_smoke_run() {
    let dir = Scratch::new("simulate");
    let table = dir.path("table.csv");
    let start = Instant::now();
    let o = run(&[
        "simulate", "--q", "5", "--n", "50", "--t", "100", "--reps", "10", "--methods", "art,cce,bcl", "--seed", "42",
        "--out", table.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(10));
    let text = fs::read_to_string(&table).unwrap();
    assert!(text.starts_with("q,n,t,reps,alpha,beta0,tuning,seed,quantity,estimate,mc_se,failures\n"));
    assert_eq!(text.lines().count(), 1 + 5 + 5);
}

#[test]
fn invalid_method_is_usage_error() {
    let o = run(&["simulate", "--methods", "art,wild"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["infer", "--input", "x.csv", "--r", "1", "--method", "wild"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn logs_resolved_configuration() {
    let o = Command::new(env!("CARGO_BIN_EXE_panelclust"))
        .args(["--log-level", "info", "simulate", "--q", "2", "--n", "4", "--t", "30", "--reps", "2", "--seed", "9"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let log = stderr(&o);
    assert!(log.contains("seed=9") && log.contains("tuning=cv") && log.contains("workers=1"), "{log}");
}
