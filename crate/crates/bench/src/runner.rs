//! Seeded multi-run execution and result persistence.
//!
//! Runs execute on a rayon pool and are collected in (variant, seed) order,
//! so every file in a bundle is written by one thread in a fixed order.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use osnr_core::algorithms::{feasible_start, run_unconstrained};
use osnr_core::metrics::{
    estimate_mu, metric_series, spectral_norm, theoretical_bound, theoretical_bound_hat, BoundParameters,
    MetricSelector, RegretReport,
};
use osnr_core::problems::{opf_build, spd_with_condition, DriftingQuadraticRoot, OpfOptions, TargetTrackingProblem};
use osnr_core::{rng, Algorithm, PowerCase, RunConfig, SketchSize, TrajectoryRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig, Variant};
use crate::error::{BenchError, Result};
use crate::probe::{cost_probe, CostProbe};

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.csv";
pub const RUNS_DIR: &str = "runs";
pub const AGGREGATE_DIR: &str = "aggregate";

/// Label of the stream that draws the root-demo matrix, shared by all seeds.
const ROOT_DEMO_MATRIX: &str = "root-demo-matrix";
const MU_ESTIMATE: &str = "mu-estimate";
const MU_POINTS: usize = 400;
const MU_SKETCH_DRAWS: usize = 1000;
/// Safety factor applied to the estimated contraction constant.
pub const MU_SAFETY: f64 = 0.9;

/// 17 significant digits, enough for an exact round trip.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub message: String,
    pub round: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub outcome: std::result::Result<TrajectoryRecord, RunFailure>,
    pub wall_seconds: f64,
}

/// Problem data shared by every run of an experiment.
enum Shared {
    Track,
    Opf(PowerCase),
    RootDemo { q: DMatrix<f64>, root: DVector<f64> },
}

impl Shared {
    fn build(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match cfg.experiment {
            Experiment::Track => Shared::Track,
            Experiment::Opf => Shared::Opf(load_case_file(cfg.case.as_deref().unwrap_or(Path::new("")))?),
            Experiment::RootDemo => {
                let (q, root) = root_demo_instance(cfg);
                Shared::RootDemo { q, root }
            }
        })
    }
}

pub fn load_case_file(path: &Path) -> Result<PowerCase> {
    let text = fs::read_to_string(path)
        .map_err(|e| BenchError::Config(format!("cannot read case file {}: {e}", path.display())))?;
    osnr_core::load_case(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))
}

/// The root-demo field `F(x) = Q(x − 1)`: `Q` is drawn once from the base
/// seed with the configured condition number, so every run sees the same matrix.
pub fn root_demo_instance(cfg: &ExperimentConfig) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = rng::stream(cfg.base_seed, ROOT_DEMO_MATRIX);
    (spd_with_condition(cfg.n, cfg.condition, &mut rng), DVector::from_element(cfg.n, 1.0))
}

pub fn run_config(cfg: &ExperimentConfig, variant: &Variant, seed: u64) -> RunConfig {
    let mut rc = RunConfig::new(variant.algorithm, cfg.horizon, seed);
    if let Some(rho) = variant.rho {
        rc = rc.with_sketch(SketchSize::Fraction(rho));
    }
    if let Some(eta) = cfg.eta {
        rc = rc.with_eta(eta);
    }
    if cfg.record_decisions {
        rc = rc.with_decisions();
    }
    if cfg.experiment == Experiment::Opf {
        rc = rc.with_oracle();
    }
    rc
}

fn execute(cfg: &ExperimentConfig, shared: &Shared, variant: &Variant, seed: u64) -> osnr_core::Result<TrajectoryRecord> {
    let rc = run_config(cfg, variant, seed);
    match shared {
        Shared::Track => {
            let mut p = TargetTrackingProblem::new(cfg.n, cfg.m, seed)?;
            run_unconstrained(&mut p, &rc, &DVector::zeros(cfg.n))
        }
        Shared::RootDemo { q, root } => {
            let mut p = DriftingQuadraticRoot::new(q.clone(), root.clone(), cfg.drift)?;
            run_unconstrained(&mut p, &rc, &DVector::zeros(cfg.n))
        }
        Shared::Opf(case) => {
            let opts = OpfOptions { alpha_rule: cfg.alpha_rule, ..OpfOptions::default() };
            let mut p = opf_build(case, &opts)?;
            let x0 = feasible_start(&p)?;
            osnr_core::osnr_ec_run(&mut p, &rc, &x0)
        }
    }
}

/// Runs every (variant, seed) pair; run `i` uses `base_seed + i`.
/// Failures are captured per run and never abort the others.
pub fn execute_all(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let shared = Shared::build(cfg)?;
    let tasks: Vec<(Variant, u64)> = cfg
        .variants()
        .into_iter()
        .flat_map(|v| (0..cfg.runs as u64).map(move |i| (v, cfg.base_seed.wrapping_add(i))))
        .collect();
    let work = || {
        tasks
            .par_iter()
            .map(|&(variant, seed)| {
                let start = Instant::now();
                let outcome = execute(cfg, &shared, &variant, seed).map_err(|e| RunFailure { round: e.round(), message: e.to_string() });
                RunResult { variant, seed, outcome, wall_seconds: start.elapsed().as_secs_f64() }
            })
            .collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| BenchError::Config(format!("cannot start {} workers: {e}", cfg.jobs)))?;
    Ok(pool.install(work))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub label: String,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Round at which a failed run stopped.
    pub round: Option<usize>,
    pub wall_seconds: f64,
    pub guarded: Option<usize>,
    pub rank_deficient_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEntry {
    pub label: String,
    pub algorithm: Algorithm,
    pub rho: Option<f64>,
    /// Resolved sketch size; absent when no run succeeded or for `ogd`.
    pub tau: Option<usize>,
    pub succeeded: usize,
}

/// Regret bound overlay for a static root-demo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    pub label: String,
    pub tau: usize,
    pub mu_hat: f64,
    /// `MU_SAFETY · μ̂`, the value the bound is evaluated at.
    pub mu: f64,
    pub lipschitz: f64,
    /// `‖x₁ − x₁*‖` (the start itself, since the first decision is the start).
    pub c_hat: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub config: ExperimentConfig,
    pub variants: Vec<VariantEntry>,
    pub runs: Vec<RunEntry>,
    pub failures: usize,
    pub wall_seconds: f64,
    pub bounds: Vec<BoundEntry>,
    pub cost_probe: Option<CostProbe>,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn load(bundle: &Path) -> Result<Self> {
        let path = bundle.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| BenchError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Where a finished bundle lives and what went wrong in it.
#[derive(Debug, Clone)]
pub struct BundleReport {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl BundleReport {
    pub fn failures(&self) -> usize {
        self.manifest.failures
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<BundleReport> {
    let start = Instant::now();
    let results = execute_all(cfg)?;
    let runs_dir = cfg.out.join(RUNS_DIR);
    let agg_dir = cfg.out.join(AGGREGATE_DIR);
    for dir in [&runs_dir, &agg_dir] {
        fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    }

    let mut warnings = Vec::new();
    let mut variants = Vec::new();
    for variant in cfg.variants() {
        let label = variant.label();
        let mine: Vec<&RunResult> = results.iter().filter(|r| r.variant == variant).collect();
        let ok: Vec<&TrajectoryRecord> = mine.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
        for r in &mine {
            if let Ok(rec) = &r.outcome {
                write_file(&runs_dir.join(format!("{label}_seed{}.csv", r.seed)), &run_csv(rec)?)?;
            }
        }
        write_file(&agg_dir.join(format!("{label}.csv")), &aggregate_csv(&ok, cfg.horizon)?)?;
        if ok.is_empty() {
            warnings.push(format!("{label}: every run failed, the aggregate has no rows"));
        }
        variants.push(VariantEntry {
            label,
            algorithm: variant.algorithm,
            rho: variant.rho,
            tau: ok.first().filter(|_| variant.algorithm.is_sketched()).map(|r| r.summary.tau),
            succeeded: ok.len(),
        });
    }
    write_file(&cfg.out.join(TIMINGS), &timings_csv(&results)?)?;

    let bounds = if cfg.experiment == Experiment::RootDemo && cfg.drift == 0.0 {
        let mut out = Vec::new();
        for v in cfg.variants().iter().filter(|v| v.algorithm.is_sketched()) {
            match root_demo_bound(cfg, v) {
                Ok(b) => out.push(b),
                Err(e) => warnings.push(format!("{}: no bound ({e})", v.label())),
            }
        }
        out
    } else {
        Vec::new()
    };
    let cost_probe = if cfg.cost_probe { Some(cost_probe(800, 50, cfg.base_seed)?) } else { None };

    let runs: Vec<RunEntry> = results
        .iter()
        .map(|r| {
            let (status, error, round, summary) = match &r.outcome {
                Ok(rec) => (RunStatus::Ok, None, None, Some(&rec.summary)),
                Err(f) => (RunStatus::Failed, Some(f.message.clone()), f.round, None),
            };
            RunEntry {
                label: r.variant.label(),
                seed: r.seed,
                status,
                error,
                round,
                wall_seconds: r.wall_seconds,
                guarded: summary.map(|s| s.guarded),
                rank_deficient_steps: summary.map(|s| s.rank_deficient_steps),
            }
        })
        .collect();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        core_version: osnr_core::VERSION.into(),
        config: cfg.clone(),
        failures: runs.iter().filter(|r| r.status == RunStatus::Failed).count(),
        variants,
        runs,
        wall_seconds: start.elapsed().as_secs_f64(),
        bounds,
        cost_probe,
        warnings,
    };
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    write_file(&cfg.out.join(MANIFEST), json.as_bytes())?;
    Ok(BundleReport { dir: cfg.out.clone(), manifest })
}

/// `L (V + Ĉ) / (1 − √(1 − μ))` with `V = 0`, `L = ‖Q‖₂`, and `μ` the
/// estimated contraction constant scaled by [`MU_SAFETY`].
pub fn root_demo_bound(cfg: &ExperimentConfig, variant: &Variant) -> Result<BoundEntry> {
    let (q, root) = root_demo_instance(cfg);
    let field = DriftingQuadraticRoot::new(q.clone(), root.clone(), 0.0)?;
    let tau = SketchSize::Fraction(variant.rho.unwrap_or(1.0)).resolve(cfg.n)?;
    let start_distance = root.norm();
    let mut rng = rng::stream(cfg.base_seed, MU_ESTIMATE);
    let est = estimate_mu(&field, &root, tau, start_distance, MU_POINTS, MU_SKETCH_DRAWS, &mut rng)?;
    let mu = MU_SAFETY * est.mu;
    let bp = BoundParameters::from_distances(mu, spectral_norm(&q), start_distance, start_distance)?;
    Ok(BoundEntry {
        label: variant.label(),
        tau,
        mu_hat: est.mu,
        mu,
        lipschitz: bp.lipschitz,
        c_hat: bp.c_hat,
        bound: theoretical_bound_hat(&bp, 0.0)?,
    })
}

/// Same as [`root_demo_bound`] but with `C = √(1−μ)‖x₀ − x₀*‖`, the constant
/// that applies when one step is taken before the first decision.
pub fn root_demo_bound_pre_play(cfg: &ExperimentConfig, variant: &Variant) -> Result<BoundEntry> {
    let mut entry = root_demo_bound(cfg, variant)?;
    let bp = BoundParameters::from_distances(entry.mu, entry.lipschitz, entry.c_hat, entry.c_hat)?;
    entry.bound = theoretical_bound(&bp, 0.0)?;
    Ok(entry)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| BenchError::io(path, e))
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| BenchError::Csv(e.into_error().into()))
}

fn cumulative(values: &Option<Vec<f64>>) -> Option<Vec<f64>> {
    values.as_deref().map(osnr_core::metrics::prefix_sums)
}

/// One row per round. Columns that do not apply to the run are left empty.
pub fn run_csv(rec: &TrajectoryRecord) -> Result<Vec<u8>> {
    let mut w = writer();
    let n_dec = rec.decisions.as_ref().and_then(|d| d.first()).map_or(0, Vec::len);
    let mut header: Vec<String> = [
        "round",
        "residual_norm",
        "root_regret",
        "loss",
        "oracle_loss",
        "dynamic_regret",
        "violation",
        "cumulative_violation",
        "rhs_change",
        "cumulative_rhs_change",
        "distance_to_root",
        "gram_rank",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..n_dec).map(|i| format!("x{i}")));
    w.write_record(&header)?;

    let root_regret = osnr_core::metrics::regret_zero(rec).series;
    let dynamic = osnr_core::metrics::regret_dynamic_recorded(rec).ok().map(|r| r.series);
    let cum_vio = cumulative(&rec.violation);
    let cum_rhs = cumulative(&rec.rhs_change);
    let at = |v: &Option<Vec<f64>>, t: usize| v.as_ref().and_then(|v| v.get(t).copied());
    for t in 0..rec.len() {
        let mut row = vec![
            (t + 1).to_string(),
            fmt_float(rec.residual_norm[t]),
            fmt_float(root_regret[t]),
            fmt_opt(rec.loss[t]),
            fmt_opt(at(&rec.oracle_loss, t)),
            fmt_opt(at(&dynamic, t)),
            fmt_opt(at(&rec.violation, t)),
            fmt_opt(at(&cum_vio, t)),
            fmt_opt(at(&rec.rhs_change, t)),
            fmt_opt(at(&cum_rhs, t)),
            fmt_opt(at(&rec.distance_to_root, t)),
            rec.gram_rank.get(t).map(usize::to_string).unwrap_or_default(),
        ];
        if let Some(dec) = &rec.decisions {
            row.extend(dec[t].iter().map(|&x| fmt_float(x)));
        }
        w.write_record(&row)?;
    }
    finish(w)
}

/// Aggregated quantities, each written as `{name}_mean` and `{name}_std`.
pub const AGGREGATE_METRICS: [&str; 5] = ["residual_norm", "root_regret", "dynamic_regret", "violation", "rhs_variation"];

fn aggregate_metric(runs: &[&TrajectoryRecord], name: &str) -> Option<RegretReport> {
    let series: Vec<Vec<f64>> = match name {
        "residual_norm" => runs.iter().map(|r| r.residual_norm.clone()).collect(),
        _ => {
            let selector = match name {
                "root_regret" => MetricSelector::RootRegret,
                "dynamic_regret" => MetricSelector::DynamicRegret,
                "violation" => MetricSelector::Violation,
                _ => MetricSelector::RhsVariation,
            };
            runs.iter().map(|r| metric_series(r, selector)).collect::<osnr_core::Result<_>>().ok()?
        }
    };
    osnr_core::metrics::aggregate_series(&series).ok()
}

/// Per-round mean and standard deviation over the successful runs.
pub fn aggregate_csv(runs: &[&TrajectoryRecord], horizon: usize) -> Result<Vec<u8>> {
    let mut w = writer();
    let mut header = vec!["round".to_string(), "runs".to_string()];
    for name in AGGREGATE_METRICS {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
    }
    w.write_record(&header)?;
    if runs.is_empty() {
        return finish(w);
    }
    let reports: Vec<Option<RegretReport>> = AGGREGATE_METRICS.iter().map(|m| aggregate_metric(runs, m)).collect();
    for t in 0..horizon.min(runs[0].len()) {
        let mut row = vec![(t + 1).to_string(), runs.len().to_string()];
        for rep in &reports {
            row.push(fmt_opt(rep.as_ref().map(|r| r.series[t])));
            row.push(fmt_opt(rep.as_ref().map(|r| r.std[t])));
        }
        w.write_record(&row)?;
    }
    finish(w)
}

/// Wall-clock step times, kept apart from the deterministic per-run files.
pub fn timings_csv(results: &[RunResult]) -> Result<Vec<u8>> {
    let mut w = writer();
    w.write_record(["label", "algorithm", "rho", "seed", "round", "step_seconds"])?;
    for r in results {
        let Ok(rec) = &r.outcome else { continue };
        let (label, rho) = (r.variant.label(), r.variant.rho_field());
        let seed = r.seed.to_string();
        for (t, s) in rec.step_seconds.iter().enumerate() {
            w.write_record([
                label.as_str(),
                r.variant.algorithm.as_str(),
                rho.as_str(),
                seed.as_str(),
                &(t + 1).to_string(),
                &fmt_float(*s),
            ])?;
        }
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ConfigPatch;

    fn small_track() -> ExperimentConfig {
        ExperimentConfig::from_patch(&ConfigPatch {
            n: Some(4),
            m: Some(5),
            horizon: Some(6),
            runs: Some(2),
            rho: Some(vec![0.4, 1.0]),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn results_come_back_in_variant_seed_order() {
        let mut cfg = small_track();
        cfg.base_seed = 40;
        let results = execute_all(&cfg).unwrap();
        let order: Vec<_> = results.iter().map(|r| (r.variant.label(), r.seed)).collect();
        let labels = ["osnr_rho0.4", "osnr_rho1", "ogd"];
        let expected: Vec<_> = labels.iter().flat_map(|l| [(l.to_string(), 40), (l.to_string(), 41)]).collect();
        assert_eq!(order, expected);
        assert!(results.iter().all(|r| r.outcome.is_ok()));
    }

    #[test]
    fn adding_an_algorithm_leaves_other_runs_unchanged() {
        let mut cfg = small_track();
        cfg.algorithms = vec![Algorithm::Osnr];
        let alone = execute_all(&cfg).unwrap();
        cfg.algorithms = vec![Algorithm::Ogd, Algorithm::Osnr];
        let both = execute_all(&cfg).unwrap();
        for r in &alone {
            let twin = both.iter().find(|b| b.variant == r.variant && b.seed == r.seed).unwrap();
            let (a, b) = (r.outcome.as_ref().unwrap(), twin.outcome.as_ref().unwrap());
            assert_eq!(a.residual_norm, b.residual_norm);
        }
    }

    #[test]
    fn run_csv_has_one_row_per_round_and_exact_floats() {
        let cfg = small_track();
        let rec = execute_all(&cfg).unwrap().remove(0).outcome.unwrap();
        let text = String::from_utf8(run_csv(&rec).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + cfg.horizon);
        assert!(!text.contains('\r'));
        let first: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(first[0], "1");
        assert_eq!(first[1].parse::<f64>().unwrap(), rec.residual_norm[0]);
        // unconstrained run: violation columns are empty
        assert_eq!(first[6], "");
    }

    #[test]
    fn failed_runs_are_reported_with_their_round() {
        let mut cfg = ExperimentConfig::defaults(Experiment::Opf);
        cfg.case = Some(PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/case9.m")));
        cfg.horizon = 3;
        cfg.runs = 1;
        cfg.rho = vec![1.0];
        // with alpha = rating², a huge rating makes the exponential penalty overflow
        let shared = Shared::build(&cfg).unwrap();
        let Shared::Opf(mut case) = shared else { unreachable!() };
        for br in &mut case.branches {
            br.rate_a = 1e9;
        }
        let outcome = execute(&cfg, &Shared::Opf(case), &cfg.variants()[0], 0);
        let err = outcome.unwrap_err();
        assert!(err.round().is_some(), "{err}");
    }

    #[test]
    fn root_demo_bound_is_finite_and_ordered() {
        let cfg = ExperimentConfig::defaults(Experiment::RootDemo);
        let bounds: Vec<f64> = cfg
            .variants()
            .iter()
            .map(|v| root_demo_bound(&cfg, v).unwrap().bound)
            .collect();
        assert!(bounds.iter().all(|b| b.is_finite() && *b > 0.0));
        // larger sketches contract faster and get smaller bounds
        assert!(bounds[0] > bounds[1] && bounds[1] > bounds[2], "{bounds:?}");
    }

    #[test]
    fn missing_case_file_is_a_config_error() {
        let mut cfg = ExperimentConfig::defaults(Experiment::Opf);
        cfg.case = Some(PathBuf::from("/nonexistent/case.m"));
        assert!(matches!(execute_all(&cfg), Err(BenchError::Config(_))));
    }
}
