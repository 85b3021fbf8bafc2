//! End-to-end runs of the `fadmm` binary on small configurations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fadmm");

/// Small sizes so every experiment finishes quickly.
const FAST: &str = "seed = 3\nn_paths = 40\nn_steps = 100\nn_grid = 201\nfd_n_t = 400\nfd_n_u = 81\n";

fn write_conf(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.conf");
    fs::write(&path, body).unwrap();
    path
}

fn run(conf: &Path, args: &[&str]) -> Output {
    Command::new(BIN).arg("run").arg(conf).args(args).output().unwrap()
}

/// File-name pattern to header, read from the formats document.
fn documented_headers() -> BTreeMap<String, String> {
    let doc = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../FORMATS.md")).unwrap();
    let mut out = BTreeMap::new();
    let mut lines = doc.lines();
    while let Some(line) = lines.next() {
        if let Some(name) = line.strip_prefix("### `").and_then(|l| l.strip_suffix('`')) {
            assert_eq!(lines.next(), Some("```"), "header block after {name}");
            out.insert(name.to_string(), lines.next().unwrap().to_string());
        }
    }
    out
}

fn matches(pattern: &str, name: &str) -> bool {
    match pattern.split_once('*') {
        Some((pre, post)) => name.starts_with(pre) && name.ends_with(post),
        None => pattern == name,
    }
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    v.sort();
    v
}

#[test]
fn every_experiment_writes_documented_reproducible_csvs() {
    let headers = documented_headers();
    let sweep = "sweep_axis = \"q_weight\"\nsweep_values = [0.0, 0.6]\n";
    for id in [
        "table1",
        "table2",
        "table3",
        "fig_quotes",
        "fig_filter",
        "fig_perf_sweep",
        "fig_spread",
        "table_norescale",
        "fd_validation",
        "ctmc_demo",
    ] {
        let tmp = tempfile::tempdir().unwrap();
        let extra = if id.starts_with("table") && id != "table3" || id == "fig_perf_sweep" { sweep } else { "" };
        let conf = write_conf(tmp.path(), &format!("experiment = \"{id}\"\n{FAST}{extra}"));
        let outs: Vec<PathBuf> = ["a", "b"].iter().map(|s| tmp.path().join(s)).collect();
        for out in &outs {
            let o = run(&conf, &["--out", out.to_str().unwrap()]);
            assert!(o.status.success(), "{id}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let files = csv_files(&outs[0]);
        assert!(!files.is_empty(), "{id} wrote no csv");
        assert!(outs[0].join("manifest.toml").exists());
        for f in &files {
            let name = f.file_name().unwrap().to_str().unwrap();
            let (_, header) = headers
                .iter()
                .find(|(pat, _)| matches(pat, name))
                .unwrap_or_else(|| panic!("{name} is not documented"));
            let body = fs::read_to_string(f).unwrap();
            assert_eq!(body.lines().next(), Some(header.as_str()), "{name}");
            assert!(body.lines().count() > 1, "{name} has no rows");
            let again = fs::read_to_string(outs[1].join(name)).unwrap();
            assert_eq!(body, again, "{name} differs between identical runs");
        }
    }
}

#[test]
fn single_path_run_leaves_deviations_blank() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_conf(
        tmp.path(),
        "experiment = \"table1\"\nn_steps = 100\nn_grid = 201\nsweep_axis = \"gamma\"\nsweep_values = [1.0]\n",
    );
    let out = tmp.path().join("o");
    let o = run(&conf, &["--out", out.to_str().unwrap(), "--n-paths", "1"]);
    assert!(o.status.success());
    let mut r = csv::Reader::from_path(out.join("table1.csv")).unwrap();
    let h = r.headers().unwrap().clone();
    for rec in r.records() {
        let rec = rec.unwrap();
        for col in ["fi_stdev", "fi_se", "cjp_se", "pi_se", "fi_minus_pi_se"] {
            let i = h.iter().position(|c| c == col).unwrap();
            assert_eq!(&rec[i], "", "{col}");
        }
        assert_eq!(&rec[h.iter().position(|c| c == "n_paths").unwrap()], "1");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_conf(tmp.path(), &format!("experiment = \"table1\"\n{FAST}sweep_axis = \"eta\"\nsweep_values = [5.0]\n"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run(&conf, &["--out", a.to_str().unwrap(), "--threads", "1"]).status.success());
    assert!(run(&conf, &["--out", b.to_str().unwrap(), "--threads", "3"]).status.success());
    assert_eq!(
        fs::read(a.join("table1.csv")).unwrap(),
        fs::read(b.join("table1.csv")).unwrap()
    );
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        "experiment = \"table9\"\n",
        "experiment = \"table1\"\nvolatility = 1.0\n",
        "experiment = \"table1\"\nsigma = -1.0\n",
        "experiment = \"table1\"\nn_paths = 0\n",
        "experiment = \"table1\"\nsweep_axis = \"eta\"\nsweep_values = [nan]\n",
        "this is not a config",
    ];
    for body in cases {
        let conf = write_conf(tmp.path(), body);
        let o = run(&conf, &["--out", tmp.path().join("o").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{body}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let missing = run(&tmp.path().join("missing.conf"), &[]);
    assert_eq!(missing.status.code(), Some(2));

    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let conf = write_conf(tmp.path(), "experiment = \"fig_spread\"\n");
    let o = run(&conf, &["--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = Command::new(BIN).args(["run"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numeric_failures_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    // ten steps of 0.1 make per-step arrival probabilities exceed one
    let conf = write_conf(tmp.path(), "experiment = \"ctmc_demo\"\nn_steps = 1\n");
    let o = run(&conf, &["--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn set_flag_overrides_file_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_conf(tmp.path(), "experiment = \"fig_spread\"\nk_decay = 1.0\n");
    let out = tmp.path().join("o");
    let o = run(&conf, &["--out", out.to_str().unwrap(), "--set", "k_decay=2.0"]);
    assert!(o.status.success());
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("k_decay = 2.0"), "{manifest}");
}
