//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use osnr_bench::runner::{execute_all, root_demo_bound, root_demo_bound_pre_play, root_demo_instance};
use osnr_bench::{run_experiment, ConfigPatch, Experiment, ExperimentConfig};
use osnr_core::algorithms::feasible_start;
use osnr_core::metrics::regret_zero;
use osnr_core::problems::{
    finite_difference_jacobian_t, opf_build, spd_with_condition, DriftingQuadraticRoot, OpfOptions,
    QuadraticObjective, ScheduledConstraints, TargetTrackingProblem,
};
use osnr_core::rng::{self, seeded, SimRng};
use osnr_core::{
    osnr_ec_run, osnr_run, parse_case, sample_sketch, snr_step, AffineConstraintSet, Algorithm, CaseError,
    EqualityConstrained, OnlineObjective, OnlineVectorField, RunConfig, SketchSize, StepOptions,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn gaussian_matrix(r: usize, c: usize, rng: &mut SimRng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vector(n: usize, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn gradient_identity() -> Verdict {
    let start = Instant::now();
    let mut rng = seeded(101);
    let opts = StepOptions::default();
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let n = rng.random_range(1..=30);
        let m = rng.random_range(1..=30);
        let tau = rng.random_range(1..=m);
        let mut jac_t = gaussian_matrix(n, m, &mut rng);
        if i % 2 == 1 {
            // badly scaled columns
            for mut col in jac_t.column_iter_mut() {
                col *= 10f64.powf(rng.random_range(-3.0..3.0));
            }
        }
        let f = gaussian_vector(m, &mut rng);
        let sel = sample_sketch(m, tau, &mut rng).unwrap();
        let step = snr_step(&f, &jac_t, &sel, &opts).unwrap();
        let err = (0.5 * step.direction.norm_squared() - step.f_value).abs() / (1.0 + step.f_value);
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-10 && secs < 5.0,
        format!("max |½‖d‖² − f|/(1+f) = {worst:.2e} over 1000 instances (limit 1e-10), {secs:.2} s (limit 5 s)"),
    )
}

fn full_sketch_equivalence() -> Verdict {
    let mut rng = seeded(202);
    let opts = StepOptions::default();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=30);
        let m = rng.random_range(1..=30);
        let jac_t = gaussian_matrix(n, m, &mut rng);
        let f = gaussian_vector(m, &mut rng);
        let full = osnr_core::SketchSelector::full(m).unwrap();
        let d = snr_step(&f, &jac_t, &full, &opts).unwrap().direction;
        // DF (DFᵀ DF)† F is the minimum-norm least-squares solution J† F
        let j = jac_t.transpose();
        let smax = j.clone().svd(false, false).singular_values.max();
        let reference = j.pseudo_inverse(1e-6 * smax).unwrap() * &f;
        worst = worst.max((&d - &reference).norm() / reference.norm().max(f64::MIN_POSITIVE));
    }

    let mut worst_residual: f64 = 0.0;
    for seed in 0..10 {
        let mut r = rng::stream(seed, "affine-instance");
        let q = spd_with_condition(10, 10.0, &mut r);
        let root = gaussian_vector(10, &mut r);
        let mut p = DriftingQuadraticRoot::new(q, root, 0.0).unwrap();
        let cfg = RunConfig::new(Algorithm::Osnr, 3, seed).with_sketch(SketchSize::full());
        let rec = osnr_run(&mut p, &cfg, &DVector::zeros(10)).unwrap();
        worst_residual = worst_residual.max(rec.residual_norm[1]);
    }
    verdict(
        worst <= 1e-10 && worst_residual <= 1e-12,
        format!(
            "max relative gap to DF(DFᵀDF)†F = {worst:.2e} (limit 1e-10); affine residual at round 2 = {worst_residual:.2e} (limit 1e-12)"
        ),
    )
}

fn contraction() -> Verdict {
    let start = Instant::now();
    let mut rng = rng::stream(0, "contraction");
    let q = spd_with_condition(12, 10.0, &mut rng);
    let x_star = DVector::from_element(12, 1.0);
    let x = gaussian_vector(12, &mut rng) * 3.0;
    let p = DriftingQuadraticRoot::new(q, x_star.clone(), 0.0).unwrap();
    let ev = p.eval(&x).unwrap();
    let dist = (&x - &x_star).norm();
    let opts = StepOptions::default();
    let mut means = Vec::new();
    for tau in [1usize, 6, 12] {
        let mut total = 0.0;
        for _ in 0..5000 {
            let sel = sample_sketch(12, tau, &mut rng).unwrap();
            let d = snr_step(&ev.value, &ev.jacobian_t, &sel, &opts).unwrap().direction;
            total += (&x - d - &x_star).norm() / dist;
        }
        means.push(total / 5000.0);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = means.iter().all(|&m| m < 1.0) && means[2] <= means[1] && means[1] <= means[0] + 0.02 && secs < 30.0;
    verdict(
        pass,
        format!(
            "mean ‖x₊ − x*‖/‖x − x*‖: τ=1 {:.4}, τ=6 {:.4}, τ=12 {:.2e}; {secs:.2} s (limit 30 s)",
            means[0], means[1], means[2]
        ),
    )
}

fn exact_violation() -> Verdict {
    let case = osnr_bench::runner::load_case_file(&fixture("case9.m")).unwrap();
    let opts = OpfOptions::default();
    let horizon = 200;
    let mut worst: f64 = 0.0;
    let mut worst_across: f64 = 0.0;
    let mut rounds = 0;
    for seed in 0..5u64 {
        let mut cumulative: Vec<Vec<f64>> = Vec::new();
        for rho in [0.05, 0.25, 1.0] {
            let mut p = opf_build(&case, &opts).unwrap();
            let x0 = feasible_start(&p).unwrap();
            let cfg = RunConfig::new(Algorithm::OsnrEc, horizon, seed)
                .with_sketch(SketchSize::Fraction(rho))
                .with_decisions();
            let rec = osnr_ec_run(&mut p, &cfg, &x0).unwrap();
            // replay the right-hand sides independently of the run
            let mut replay = opf_build(&case, &opts).unwrap();
            let mut dynamics = rng::stream(seed, rng::PROBLEM_DYNAMICS);
            let a = replay.constraints().matrix().clone();
            let mut b_prev = replay.rhs().clone();
            let mut cum = Vec::with_capacity(horizon);
            let mut total = 0.0;
            for (t, x) in rec.decisions.as_ref().unwrap().iter().enumerate() {
                let b = replay.rhs().clone();
                let x = DVector::from_column_slice(x);
                let violation = (&a * &x - &b).norm();
                let shift = (&b - &b_prev).norm();
                worst = worst.max((violation - shift).abs() / (1.0 + b.norm()));
                assert!((rec.violation.as_ref().unwrap()[t] - violation).abs() <= 1e-12 * (1.0 + violation));
                total += violation;
                cum.push(total / (1.0 + b.norm()));
                b_prev = b;
                replay.advance(&mut dynamics);
                rounds += 1;
            }
            cumulative.push(cum);
        }
        for other in &cumulative[1..] {
            for (u, v) in cumulative[0].iter().zip(other) {
                worst_across = worst_across.max((u - v).abs());
            }
        }
    }
    verdict(
        worst <= 1e-8 && worst_across <= 1e-8,
        format!(
            "9-bus, T=200, ρ∈{{0.05,0.25,1}}, 5 seeds ({rounds} rounds): max |‖Ax−b_t‖ − ‖Δb‖|/(1+‖b‖) = {worst:.2e}, max cumulative gap across ρ = {worst_across:.2e} (limit 1e-8)"
        ),
    )
}

fn kkt_step() -> Verdict {
    let mut rng = seeded(505);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let q = spd_with_condition(3, 20.0, &mut rng);
        let c = gaussian_vector(3, &mut rng);
        let a = gaussian_matrix(1, 3, &mut rng);
        let b = gaussian_vector(1, &mut rng);
        let mut kkt = DMatrix::zeros(4, 4);
        kkt.view_mut((0, 0), (3, 3)).copy_from(&q);
        kkt.view_mut((0, 3), (3, 1)).copy_from(&a.transpose());
        kkt.view_mut((3, 0), (1, 3)).copy_from(&a);
        let rhs = DVector::from_vec(vec![-c[0], -c[1], -c[2], b[0]]);
        let sol = kkt.lu().solve(&rhs).unwrap();
        let x_kkt = sol.rows(0, 3).into_owned();

        let cs = AffineConstraintSet::build(a).unwrap();
        let mut p =
            ScheduledConstraints::new(QuadraticObjective::new(q, c).unwrap(), cs, vec![b.clone(), b]).unwrap();
        let x0 = feasible_start(&p).unwrap();
        let cfg = RunConfig::new(Algorithm::OsnrEc, 2, 0).with_sketch(SketchSize::full()).with_decisions();
        let rec = osnr_ec_run(&mut p, &cfg, &x0).unwrap();
        let after_one_step = DVector::from_column_slice(&rec.decisions.unwrap()[1]);
        worst = worst.max((after_one_step - x_kkt).amax());
    }
    verdict(worst <= 1e-8, format!("3 variables, 1 constraint, 20 instances: max |x − x_KKT| after one full-sketch step = {worst:.2e} (limit 1e-8)"))
}

fn finite_differences() -> Verdict {
    let mut rng = seeded(606);
    let tracking = TargetTrackingProblem::new(20, 18, 3).unwrap();
    let mut worst_track: f64 = 0.0;
    for _ in 0..50 {
        let x = gaussian_vector(20, &mut rng) * 20.0;
        let analytic = tracking.eval(&x).unwrap().jacobian_t;
        let fd = finite_difference_jacobian_t(&tracking, &x, 1e-6).unwrap();
        worst_track = worst_track.max((&fd - &analytic).amax() / analytic.amax().max(1.0));
    }

    let case = osnr_bench::runner::load_case_file(&fixture("case9.m")).unwrap();
    let opf = opf_build(&case, &OpfOptions::default()).unwrap();
    let n = opf.dim();
    let (mut worst_grad, mut worst_hess): (f64, f64) = (0.0, 0.0);
    let h = 1e-6;
    for _ in 0..50 {
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let ev = opf.evaluate(&x).unwrap();
        let mut fd_grad = DVector::zeros(n);
        let mut fd_hess = DMatrix::zeros(n, n);
        for j in 0..n {
            let (mut plus, mut minus) = (x.clone(), x.clone());
            plus[j] += h;
            minus[j] -= h;
            let (ep, em) = (opf.evaluate(&plus).unwrap(), opf.evaluate(&minus).unwrap());
            fd_grad[j] = (ep.value - em.value) / (2.0 * h);
            fd_hess.set_column(j, &((ep.gradient - em.gradient) / (2.0 * h)));
        }
        worst_grad = worst_grad.max((&fd_grad - &ev.gradient).amax() / ev.gradient.amax().max(1.0));
        worst_hess = worst_hess.max((&fd_hess - &ev.hessian).amax() / ev.hessian.amax().max(1.0));
    }
    verdict(
        worst_track <= 1e-5 && worst_grad <= 1e-4 && worst_hess <= 1e-4,
        format!(
            "50 points each: tracking Jacobian {worst_track:.2e} (limit 1e-5), OPF gradient {worst_grad:.2e}, OPF Hessian {worst_hess:.2e} (limit 1e-4)"
        ),
    )
}

/// Final and round-100 root-finding regret per variant of the tracking experiment.
struct TrackingRegret {
    label: String,
    at_t: Vec<f64>,
    at_100: Vec<f64>,
}

fn tracking_regret() -> (Vec<TrackingRegret>, f64) {
    let start = Instant::now();
    let cfg = ExperimentConfig::defaults(Experiment::Track);
    assert_eq!((cfg.n, cfg.m, cfg.horizon, cfg.runs), (20, 18, 1000, 20));
    let results = execute_all(&cfg).unwrap();
    let out = cfg
        .variants()
        .iter()
        .map(|v| {
            let series: Vec<Vec<f64>> = results
                .iter()
                .filter(|r| r.variant == *v)
                .map(|r| regret_zero(r.outcome.as_ref().expect("tracking run failed")).series)
                .collect();
            TrackingRegret {
                label: v.label(),
                at_t: series.iter().map(|s| s[cfg.horizon - 1]).collect(),
                at_100: series.iter().map(|s| s[99]).collect(),
            }
        })
        .collect();
    (out, start.elapsed().as_secs_f64())
}

fn ordering(regret: &[TrackingRegret], secs: f64) -> Verdict {
    let stats: Vec<(f64, f64)> = regret
        .iter()
        .map(|r| {
            let (mean, std) = mean_std(&r.at_t);
            (mean, std / (r.at_t.len() as f64).sqrt())
        })
        .collect();
    let find = |label: &str| regret.iter().position(|r| r.label == label).unwrap();
    let (r005, r025, r1, ogd) = (find("osnr_rho0.05"), find("osnr_rho0.25"), find("osnr_rho1"), find("ogd"));
    let beats_ogd = stats[r1].0 < stats[ogd].0;
    let monotone = |lo: usize, hi: usize| stats[hi].0 <= stats[lo].0 + stats[lo].1.max(stats[hi].1);
    let ordered = monotone(r005, r025) && monotone(r025, r1);
    let summary: Vec<String> = regret
        .iter()
        .zip(&stats)
        .map(|(r, (m, se))| format!("{} {:.4e}±{:.1e}", r.label, m, se))
        .collect();
    verdict(
        beats_ogd && ordered && secs < 120.0,
        format!(
            "mean R₀(1000) ± SE over 20 seeds: {}; ρ=1 below OGD: {beats_ogd}; non-increasing in ρ up to one SE: {ordered}; {secs:.1} s (limit 120 s)",
            summary.join(", ")
        ),
    )
}

fn sublinearity(regret: &[TrackingRegret]) -> Verdict {
    let mut all = true;
    let mut parts = Vec::new();
    for r in regret {
        let (at_t, _) = mean_std(&r.at_t);
        let (at_100, _) = mean_std(&r.at_100);
        let ratio = (at_t / 1000.0) / (at_100 / 100.0);
        all &= ratio < 0.5;
        parts.push(format!("{} {ratio:.3}", r.label));
    }
    verdict(all, format!("[R₀(1000)/1000] / [R₀(100)/100] per variant (limit 0.5): {}", parts.join(", ")))
}

fn theorem_overlay() -> Verdict {
    let cfg = ExperimentConfig::defaults(Experiment::RootDemo);
    let (q, root) = root_demo_instance(&cfg);
    let horizon = 200;
    let mut pass = true;
    let mut parts = Vec::new();
    let mut hat_parts = Vec::new();
    for v in cfg.variants() {
        let rho = v.rho.unwrap();
        let regret = |pre_play: bool| -> f64 {
            let mut total = 0.0;
            for seed in 0..500u64 {
                let mut p = DriftingQuadraticRoot::new(q.clone(), root.clone(), 0.0).unwrap();
                let mut rc = RunConfig::new(Algorithm::Osnr, horizon, seed).with_sketch(SketchSize::Fraction(rho));
                if pre_play {
                    rc = rc.with_pre_play();
                }
                let rec = osnr_run(&mut p, &rc, &DVector::zeros(cfg.n)).unwrap();
                total += rec.residual_norm.iter().sum::<f64>();
            }
            total / 500.0
        };
        let bound = root_demo_bound_pre_play(&cfg, &v).unwrap();
        let mean = regret(true);
        pass &= mean <= bound.bound;
        parts.push(format!("τ={} μ̂={:.4} R₀={mean:.2} ≤ {:.2}", bound.tau, bound.mu_hat, bound.bound));
        let hat = root_demo_bound(&cfg, &v).unwrap();
        hat_parts.push(format!("τ={} R₀={:.2} vs {:.2}", hat.tau, regret(false), hat.bound));
    }
    verdict(
        pass,
        format!(
            "n=12, cond 10, 500 seeds, T=200, one step before round 1: {} | first decision x₀ against the Ĉ bound: {}",
            parts.join("; "),
            hat_parts.join("; ")
        ),
    )
}

fn parser() -> Verdict {
    let text = fs::read_to_string(fixture("case9.m")).unwrap();
    let case = parse_case(&text).unwrap();
    let counts = (case.buses.len(), case.branches.len(), case.gens.len(), case.base_mva);
    let mut checks: Vec<(String, bool)> = vec![("9/9/3/100".into(), counts == (9, 9, 3, 100.0))];

    let base = text.lines().find(|l| l.contains("mpc.baseMVA")).unwrap();
    let err = parse_case(&text.replace(base, "")).unwrap_err();
    checks.push(("missing baseMVA".into(), err == CaseError::MissingSection("baseMVA") && err.to_string().contains("baseMVA")));
    for key in ["bus", "gen", "branch", "gencost"] {
        let err = parse_case(&text.replace(&format!("mpc.{key} ="), "mpc.unused =")).unwrap_err();
        checks.push((format!("missing {key}"), err == CaseError::MissingSection(key) && err.to_string().contains(key)));
    }

    let lines: Vec<&str> = text.lines().collect();
    let bus_row = lines.iter().position(|l| l.trim_start().starts_with("5\t1\t90")).unwrap();
    let bad = text.replacen("5\t1\t90", "5\t1\t9x0", 1);
    let err = parse_case(&bad).unwrap_err();
    let line = bus_row + 1;
    checks.push((
        "malformed token".into(),
        err == CaseError::Malformed { line, token: "9x0".into() } && err.to_string().contains(&format!("line {line}")),
    ));

    let dup = text.replacen("5\t1\t90", "4\t1\t90", 1);
    checks.push(("duplicate bus".into(), parse_case(&dup).unwrap_err() == CaseError::DuplicateBus(4)));

    let cost_row = lines.iter().position(|l| l.trim_start().starts_with("2\t1500")).unwrap();
    let cubic = text.replacen("2\t1500\t0\t3\t0.11", "2\t1500\t0\t4\t1\t0.11", 1);
    let err = parse_case(&cubic).unwrap_err();
    checks.push((
        "cubic gencost".into(),
        matches!(err, CaseError::UnsupportedCost { line, .. } if line == cost_row + 1),
    ));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| n.as_str()).collect();
    verdict(
        failed.is_empty(),
        format!(
            "9-bus fixture: {} buses, {} branches, {} gens, base {}; {} error cases fire{}",
            counts.0,
            counts.1,
            counts.2,
            counts.3,
            checks.len() - 1,
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(", ")) }
        ),
    )
}

fn csv_bodies(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["runs", "aggregate"] {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        paths.sort();
        out.extend(paths.into_iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())));
    }
    out
}

fn determinism() -> Verdict {
    let mut parts = Vec::new();
    let mut pass = true;
    for experiment in [Experiment::Track, Experiment::Opf, Experiment::RootDemo] {
        let bodies: Vec<_> = (0..2)
            .map(|_| {
                let tmp = tempfile::tempdir().unwrap();
                let cfg = ExperimentConfig::from_patch(&ConfigPatch {
                    experiment: Some(experiment),
                    case: Some(fixture("case9.m")),
                    horizon: Some(100),
                    runs: Some(4),
                    out: Some(tmp.path().to_path_buf()),
                    ..Default::default()
                })
                .unwrap();
                run_experiment(&cfg).unwrap();
                csv_bodies(tmp.path())
            })
            .collect();
        let same = bodies[0] == bodies[1];
        pass &= same;
        parts.push(format!("{experiment}: {} files {}", bodies[0].len(), if same { "identical" } else { "DIFFER" }));
    }
    verdict(pass, format!("two invocations per experiment, per-run and aggregate CSVs: {}", parts.join(", ")))
}

fn cost_trend() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_patch(&ConfigPatch {
        horizon: Some(5),
        runs: Some(1),
        cost_probe: Some(true),
        out: Some(tmp.path().to_path_buf()),
        ..Default::default()
    })
    .unwrap();
    run_experiment(&cfg).unwrap();
    let manifest = osnr_bench::Manifest::load(tmp.path()).unwrap();
    let Some(p) = manifest.cost_probe else {
        return verdict(false, "manifest has no cost probe");
    };
    verdict(
        p.ratio < 0.9 && p.low_mean_seconds < p.high_mean_seconds,
        format!(
            "n=m=800, {} steps: {:.3e} s/step at ρ={} (τ={}) vs {:.3e} s/step at ρ={} (τ={}), ratio {:.4} (limit 0.9), read back from the manifest",
            p.steps, p.low_mean_seconds, p.low_rho, p.low_tau, p.high_mean_seconds, p.high_rho, p.high_tau, p.ratio
        ),
    )
}

fn main() {
    let mut failures = 0;
    let mut report = |id: u32, name: &str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failures += 1;
        }
        println!(
            "criterion {id:>2} {} {name}: {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    };

    report(1, "gradient identity", &mut gradient_identity);
    report(2, "full-sketch equivalence", &mut full_sketch_equivalence);
    report(3, "one-step contraction", &mut contraction);
    report(4, "constrained violation equals right-hand-side drift", &mut exact_violation);
    report(5, "constrained one-step exactness", &mut kkt_step);
    report(6, "finite-difference audits", &mut finite_differences);
    let mut tracking = None;
    report(7, "tracking regret ordering", &mut || {
        let (regret, secs) = tracking_regret();
        let v = ordering(&regret, secs);
        tracking = Some(regret);
        v
    });
    report(8, "sublinear regret", &mut || match &tracking {
        Some(regret) => sublinearity(regret),
        None => verdict(false, "tracking runs did not complete"),
    });
    report(9, "regret bound overlay", &mut theorem_overlay);
    report(10, "case parser", &mut parser);
    report(11, "determinism", &mut determinism);
    report(12, "cost trend", &mut cost_trend);

    println!("acceptance: {} of 12 criteria passed", 12 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
