use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use osnr_bench::{emit_plotdata, run_experiment, ConfigPatch, Experiment, ExperimentConfig, Quantity};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn track(out: &Path) -> ExperimentConfig {
    ExperimentConfig::from_patch(&ConfigPatch {
        experiment: Some(Experiment::Track),
        horizon: Some(100),
        runs: Some(3),
        rho: Some(vec![0.25, 1.0]),
        out: Some(out.to_path_buf()),
        ..Default::default()
    })
    .unwrap()
}

fn count(dir: &Path) -> usize {
    fs::read_dir(dir).unwrap().count()
}

fn csv_bodies(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["runs", "aggregate"] {
        let mut entries: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
        }
    }
    out
}

#[test]
fn track_bundle_has_one_file_per_run_and_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let report = run_experiment(&track(tmp.path())).unwrap();
    assert_eq!(report.failures(), 0);
    assert_eq!(count(&tmp.path().join("runs")), 9);
    assert_eq!(count(&tmp.path().join("aggregate")), 3);
    assert!(tmp.path().join("manifest.json").is_file());
}

#[test]
fn identical_configs_give_identical_csv_bodies() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&track(a.path())).unwrap();
    let mut cfg = track(b.path());
    cfg.jobs = 1;
    run_experiment(&cfg).unwrap();
    assert_eq!(csv_bodies(a.path()), csv_bodies(b.path()));
}

#[test]
fn opf_violation_matches_rhs_variation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_patch(&ConfigPatch {
        experiment: Some(Experiment::Opf),
        case: Some(fixture("case9.m")),
        horizon: Some(50),
        runs: Some(5),
        out: Some(tmp.path().to_path_buf()),
        ..Default::default()
    })
    .unwrap();
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.failures(), 0);
    for v in &report.manifest.variants {
        let mut rdr = csv::Reader::from_path(tmp.path().join("aggregate").join(format!("{}.csv", v.label))).unwrap();
        let h = rdr.headers().unwrap().clone();
        let col = |name: &str| h.iter().position(|c| c == name).unwrap();
        let (vio, rhs) = (col("violation_mean"), col("rhs_variation_mean"));
        let mut rows = 0;
        for r in rdr.records() {
            let r = r.unwrap();
            let (a, b): (f64, f64) = (r[vio].parse().unwrap(), r[rhs].parse().unwrap());
            assert!((a - b).abs() <= 1e-8 * (1.0 + b), "{}: {a} vs {b}", v.label);
            rows += 1;
        }
        assert_eq!(rows, 50);
    }
}

#[test]
fn plot_data_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = track(tmp.path());
    run_experiment(&cfg).unwrap();
    let emit = |q| {
        let mut buf = Vec::new();
        emit_plotdata(tmp.path(), q, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    };
    let regret = emit(Quantity::Regret);
    assert_eq!(regret.lines().count(), 1 + 100 * 3);
    assert!(regret.starts_with("round,algorithm,rho,mean,std\n"));
    let steps = emit(Quantity::StepTime);
    assert_eq!(steps.lines().count(), 1 + 100 * 3);
    let vio = emit(Quantity::Violation);
    let lines: Vec<&str> = vio.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("# warning"));
}

#[test]
fn steptime_is_the_mean_of_recorded_times() {
    let tmp = tempfile::tempdir().unwrap();
    run_experiment(&track(tmp.path())).unwrap();
    let mut rdr = csv::Reader::from_path(tmp.path().join("timings.csv")).unwrap();
    let round1: Vec<f64> = rdr
        .records()
        .map(|r| r.unwrap())
        .filter(|r| &r[0] == "ogd" && &r[4] == "1")
        .map(|r| r[5].parse().unwrap())
        .collect();
    assert_eq!(round1.len(), 3);
    let mean = round1.iter().sum::<f64>() / 3.0;
    let mut buf = Vec::new();
    emit_plotdata(tmp.path(), Quantity::StepTime, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let row = text.lines().find(|l| l.starts_with("1,ogd,")).unwrap();
    let got: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!((got - mean).abs() <= 1e-12 * (1.0 + mean));
}

fn bench(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_osnr-bench")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let ok = bench(&["run", "--experiment", "track", "--T", "5", "--runs", "2", "--rho", "0.5", "--out", out]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(bench(&["run", "--rho", "0"]).status.code(), Some(1));
    assert_eq!(bench(&["plot-data", out, "--quantity", "latency"]).status.code(), Some(1));
    let plot = bench(&["plot-data", out, "--quantity", "regret"]);
    assert_eq!(plot.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&plot.stdout).lines().count(), 1 + 5 * 2);

    let case = fixture("case9.m");
    let parsed = bench(&["parse-case", case.to_str().unwrap()]);
    assert_eq!(parsed.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&parsed.stdout).contains("buses       9"));
    let bad = tmp.path().join("bad.m");
    fs::write(&bad, "function mpc = bad\nmpc.baseMVA = 100;\n").unwrap();
    assert_eq!(bench(&["parse-case", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_with_partial_results() {
    let tmp = tempfile::tempdir().unwrap();
    // a huge rating makes the exponential line penalty overflow
    let text = fs::read_to_string(fixture("case9.m")).unwrap();
    let case = tmp.path().join("hot.m");
    let patched: String = text
        .lines()
        .map(|l| if l.contains("-360") { l.replacen("\t250\t", "\t1e9\t", 1) } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(&case, patched).unwrap();
    let out = tmp.path().join("bundle");
    let res = bench(&[
        "run", "--experiment", "opf", "--case", case.to_str().unwrap(), "--T", "5", "--runs", "2", "--rho", "1",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["failures"], 2);
    assert!(manifest["runs"][0]["round"].is_u64());
}
