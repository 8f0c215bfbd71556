//! Browser bindings for three small experiments. Each export returns a JSON
//! string; the page in `www/` draws it on a canvas.

use nalgebra::DVector;
use osnr_core::algorithms::{feasible_start, run_unconstrained};
use osnr_core::metrics::{prefix_sums, regret_zero};
use osnr_core::problems::{opf_build, spd_with_condition, DriftingQuadraticRoot, OpfOptions, TargetTrackingProblem};
use osnr_core::rng;
use osnr_core::{load_case, osnr_ec_run, sample_sketch, snr_step, Algorithm, OnlineVectorField, RunConfig, SketchSize, StepOptions};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const NINE_BUS: &str = include_str!("../../../fixtures/case9.m");

/// Keeps a page from freezing the tab.
const MAX_WORK: usize = 2_000_000;

#[derive(Serialize)]
struct Curve {
    label: String,
    rho: Option<f64>,
    tau: Option<usize>,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct TrackingReport {
    n: usize,
    m: usize,
    horizon: usize,
    curves: Vec<Curve>,
}

fn check(cond: bool, msg: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

/// Cumulative root-finding regret of OSNR at each `ρ`, and of OGD, on one
/// seeded tracking instance started at the origin.
pub fn tracking_regret_json(n: usize, m: usize, horizon: usize, seed: u64, rhos: &[f64]) -> Result<String, String> {
    check(n >= 1 && m >= 1 && horizon >= 1, "n, m and T must be at least 1")?;
    check(n * m * horizon * (rhos.len() + 1) <= 50 * MAX_WORK, "problem too large for the browser demo")?;
    let mut runs: Vec<(String, Option<f64>, RunConfig)> = rhos
        .iter()
        .map(|&rho| {
            let cfg = RunConfig::new(Algorithm::Osnr, horizon, seed).with_sketch(SketchSize::Fraction(rho));
            (format!("OSNR ρ={rho}"), Some(rho), cfg)
        })
        .collect();
    runs.push(("OGD".into(), None, RunConfig::new(Algorithm::Ogd, horizon, seed)));
    let mut curves = Vec::new();
    for (label, rho, cfg) in runs {
        let mut p = TargetTrackingProblem::new(n, m, seed).map_err(|e| e.to_string())?;
        let rec = run_unconstrained(&mut p, &cfg, &DVector::zeros(n)).map_err(|e| e.to_string())?;
        let tau = rho.map(|_| rec.summary.tau);
        curves.push(Curve { label, rho, tau, values: regret_zero(&rec).series });
    }
    serde_json::to_string(&TrackingReport { n, m, horizon, curves }).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct ContractionReport {
    n: usize,
    condition: f64,
    samples: usize,
    tau: Vec<usize>,
    /// Mean of `‖x₊ − x*‖ / ‖x − x*‖` over the sampled sketches.
    mean_ratio: Vec<f64>,
}

/// One sketched step on `F(x) = Q(x − x*)` from a fixed point, for every
/// sketch size `τ = 1..n`.
pub fn contraction_json(n: usize, condition: f64, samples: usize, seed: u64) -> Result<String, String> {
    check((1..=64).contains(&n), "n must lie in 1..=64")?;
    check(condition >= 1.0, "the condition number must be at least 1")?;
    check(samples >= 1 && samples * n <= MAX_WORK / 10, "too many samples")?;
    let mut rng = rng::stream(seed, "contraction-demo");
    let q = spd_with_condition(n, condition, &mut rng);
    let x_star = DVector::from_element(n, 1.0);
    let x = DVector::zeros(n);
    let field = DriftingQuadraticRoot::new(q, x_star.clone(), 0.0).map_err(|e| e.to_string())?;
    let ev = field.eval(&x).map_err(|e| e.to_string())?;
    let dist = (&x - &x_star).norm();
    let opts = StepOptions::default();
    let mut mean_ratio = Vec::with_capacity(n);
    for tau in 1..=n {
        let mut total = 0.0;
        for _ in 0..samples {
            let sel = sample_sketch(n, tau, &mut rng).map_err(|e| e.to_string())?;
            let d = snr_step(&ev.value, &ev.jacobian_t, &sel, &opts).map_err(|e| e.to_string())?.direction;
            total += (&x - d - &x_star).norm() / dist;
        }
        mean_ratio.push(total / samples as f64);
    }
    let report = ContractionReport { n, condition, samples, tau: (1..=n).collect(), mean_ratio };
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct OpfReport {
    buses: usize,
    free_dims: usize,
    tau: usize,
    horizon: usize,
    cumulative_violation: Vec<f64>,
    cumulative_rhs_change: Vec<f64>,
    dynamic_regret: Vec<f64>,
}

/// OSNR-EC on a MATPOWER case (the bundled 9-bus case when `case_text` is
/// empty) with random load steps.
pub fn opf_violation_json(case_text: &str, horizon: usize, seed: u64, rho: f64) -> Result<String, String> {
    check((1..=2000).contains(&horizon), "T must lie in 1..=2000")?;
    let text = if case_text.trim().is_empty() { NINE_BUS } else { case_text };
    let case = load_case(text).map_err(|e| e.to_string())?;
    check(case.buses.len() <= 60, "cases above 60 buses are too slow for the browser demo")?;
    let mut p = opf_build(&case, &OpfOptions::default()).map_err(|e| e.to_string())?;
    let x0 = feasible_start(&p).map_err(|e| e.to_string())?;
    let cfg = RunConfig::new(Algorithm::OsnrEc, horizon, seed).with_sketch(SketchSize::Fraction(rho)).with_oracle();
    let rec = osnr_ec_run(&mut p, &cfg, &x0).map_err(|e| e.to_string())?;
    let dynamic = osnr_core::metrics::regret_dynamic_recorded(&rec).map_err(|e| e.to_string())?;
    let report = OpfReport {
        buses: case.buses.len(),
        free_dims: osnr_core::EqualityConstrained::constraints(&p).reduced_dim(),
        tau: rec.summary.tau,
        horizon,
        cumulative_violation: prefix_sums(rec.violation.as_deref().unwrap_or_default()),
        cumulative_rhs_change: prefix_sums(rec.rhs_change.as_deref().unwrap_or_default()),
        dynamic_regret: dynamic.series,
    };
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn tracking_regret(n: usize, m: usize, horizon: usize, seed: u32, rhos: Vec<f64>) -> Result<String, JsError> {
    tracking_regret_json(n, m, horizon, seed.into(), &rhos).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn contraction(n: usize, condition: f64, samples: usize, seed: u32) -> Result<String, JsError> {
    contraction_json(n, condition, samples, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn opf_violation(case_text: &str, horizon: usize, seed: u32, rho: f64) -> Result<String, JsError> {
    opf_violation_json(case_text, horizon, seed.into(), rho).map_err(|e| JsError::new(&e))
}

/// The bundled 9-bus case, for the page's text area.
#[wasm_bindgen]
pub fn nine_bus_case() -> String {
    NINE_BUS.to_string()
}
