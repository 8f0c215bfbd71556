//! Regret, violation, and path-variation series; the regret bound; per-round
//! oracles; estimation of the quasar-convexity constant; aggregation across
//! seeds.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::affine::AffineConstraintSet;
use crate::algorithms::TrajectoryRecord;
use crate::error::{invalid, Error, Result};
use crate::problems::{OnlineObjective, OnlineVectorField};
use crate::sketch::{sample_sketch, snr_step, SketchSelector, StepOptions};

pub const ORACLE_TOL: f64 = 1e-10;
pub const ORACLE_MAX_ITER: usize = 100;

/// A cumulative series, optionally averaged over several runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    /// Cumulative value after each round (the mean when aggregated).
    pub series: Vec<f64>,
    /// Sample standard deviation per round; zeros for a single run.
    pub std: Vec<f64>,
    pub runs: usize,
    pub bound: Option<f64>,
}

impl RegretReport {
    pub fn single(series: Vec<f64>) -> Self {
        let std = vec![0.0; series.len()];
        RegretReport { series, std, runs: 1, bound: None }
    }

    pub fn final_value(&self) -> f64 {
        self.series.last().copied().unwrap_or(0.0)
    }

    pub fn final_std(&self) -> f64 {
        self.std.last().copied().unwrap_or(0.0)
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }
}

pub fn prefix_sums(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// `R₀(t) = Σ_{s≤t} ‖F_s(x_s)‖`.
pub fn regret_zero(traj: &TrajectoryRecord) -> RegretReport {
    RegretReport::single(prefix_sums(&traj.residual_norm))
}

/// `R(t) = Σ_{s≤t} g_s(x_s) − g_s(x_s*)`.
pub fn regret_dynamic(traj: &TrajectoryRecord, oracle_losses: &[f64]) -> Result<RegretReport> {
    if oracle_losses.len() != traj.len() {
        return Err(invalid(format!(
            "oracle series has {} rounds, trajectory has {}",
            oracle_losses.len(),
            traj.len()
        )));
    }
    let gaps = traj
        .loss
        .iter()
        .zip(oracle_losses)
        .enumerate()
        .map(|(t, (loss, best))| {
            loss.map(|l| l - best).ok_or_else(|| invalid(format!("no loss recorded in round {}", t + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegretReport::single(prefix_sums(&gaps)))
}

/// Dynamic regret against the oracle values recorded during the run.
pub fn regret_dynamic_recorded(traj: &TrajectoryRecord) -> Result<RegretReport> {
    let oracle = traj.oracle_loss.as_deref().ok_or_else(|| invalid("run did not record oracle losses"))?;
    regret_dynamic(traj, oracle)
}

/// `Vio(t) = Σ_{s≤t} ‖A x_s − b_s‖`.
pub fn violation(traj: &TrajectoryRecord) -> Result<RegretReport> {
    let v = traj.violation.as_deref().ok_or_else(|| invalid("run did not record constraint violations"))?;
    Ok(RegretReport::single(prefix_sums(v)))
}

/// `Σ_{s≤t} ‖b_s − b_{s−1}‖`.
pub fn rhs_variation(traj: &TrajectoryRecord) -> Result<RegretReport> {
    let v = traj.rhs_change.as_deref().ok_or_else(|| invalid("run did not record right-hand-side changes"))?;
    Ok(RegretReport::single(prefix_sums(v)))
}

/// `V = Σ ‖p_t − p_{t+1}‖` over consecutive points.
pub fn path_variation(points: &[DVector<f64>]) -> f64 {
    points.windows(2).map(|w| (&w[0] - &w[1]).norm()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParameters {
    pub mu: f64,
    /// Lipschitz modulus of the field (or of the loss).
    pub lipschitz: f64,
    /// `√(1−μ)·‖x₀ − x₀*‖`.
    pub c: f64,
    /// `‖x₁ − x₁*‖`.
    pub c_hat: f64,
}

impl BoundParameters {
    /// `C` from `‖x₀ − x₀*‖` and `Ĉ` from `‖x₁ − x₁*‖`.
    pub fn from_distances(mu: f64, lipschitz: f64, start: f64, first: f64) -> Result<Self> {
        let bp = BoundParameters { mu, lipschitz, c: (1.0 - mu).max(0.0).sqrt() * start, c_hat: first };
        bp.validate()?;
        Ok(bp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(invalid(format!("mu = {} must lie in (0, 1)", self.mu)));
        }
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(invalid(format!("Lipschitz modulus {} must be positive", self.lipschitz)));
        }
        if !(self.c >= 0.0 && self.c_hat >= 0.0) {
            return Err(invalid("bound constants must be non-negative"));
        }
        Ok(())
    }

    fn contraction_gap(&self) -> f64 {
        1.0 - (1.0 - self.mu).sqrt()
    }
}

/// `L (V + C) / (1 − √(1−μ))`.
pub fn theoretical_bound(bp: &BoundParameters, variation: f64) -> Result<f64> {
    bp.validate()?;
    Ok(bp.lipschitz * (variation + bp.c) / bp.contraction_gap())
}

/// The same bound with `Ĉ = ‖x₁ − x₁*‖` in place of `C`.
pub fn theoretical_bound_hat(bp: &BoundParameters, variation: f64) -> Result<f64> {
    bp.validate()?;
    Ok(bp.lipschitz * (variation + bp.c_hat) / bp.contraction_gap())
}

fn converged(residual: f64, merit: f64, tol: f64) -> bool {
    residual <= tol * (1.0 + merit.abs())
}

/// Shared damped Newton loop. `state(x)` returns the merit, the residual,
/// and the Newton direction at `x`; steps are halved until the merit does
/// not increase.
fn damped_newton<S>(mut x: DVector<f64>, tol: f64, state: S) -> Result<(DVector<f64>, f64)>
where
    S: Fn(&DVector<f64>, bool) -> Result<(f64, f64, Option<DVector<f64>>)>,
{
    let (mut merit, mut residual, mut direction) = state(&x, true)?;
    for _ in 0..ORACLE_MAX_ITER {
        if converged(residual, merit, tol) {
            return Ok((x, merit));
        }
        let d = direction.take().expect("direction requested");
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &x - &d * scale;
            if let Ok((m, r, _)) = state(&trial, false) {
                if m <= merit || r < residual * 1e-3 {
                    x = trial;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        (merit, residual, direction) = state(&x, true)?;
    }
    if converged(residual, merit, tol) {
        return Ok((x, merit));
    }
    Err(Error::OracleFailure { iterations: ORACLE_MAX_ITER, residual })
}

/// Solves the frozen current round by full Newton-Raphson steps with
/// backtracking, until `‖F(x)‖ ≤ tol·(1 + |g(x)|)`. The merit is the
/// problem's loss, or `½‖F‖²` when it has none. Returns `(x*, g(x*))`.
pub fn round_oracle(field: &dyn OnlineVectorField, start: &DVector<f64>, tol: f64) -> Result<(DVector<f64>, f64)> {
    let m = field.output_dim();
    let full = SketchSelector::full(m)?;
    let opts = StepOptions::default();
    damped_newton(start.clone(), tol, |x, want_direction| {
        let ev = field.eval(x)?;
        let merit = match field.loss(x)? {
            Some((v, _)) => v,
            None => 0.5 * ev.value.norm_squared(),
        };
        let direction = if want_direction {
            Some(snr_step(&ev.value, &ev.jacobian_t, &full, &opts)?.direction)
        } else {
            None
        };
        Ok((merit, ev.value.norm(), direction))
    })
}

/// Minimizes the frozen round objective over `{x : Ax = b}` in the null
/// space of `A`, starting from the projection of `start`.
pub fn round_oracle_constrained<O: OnlineObjective + ?Sized>(
    objective: &O,
    cs: &AffineConstraintSet,
    b: &DVector<f64>,
    start: &DVector<f64>,
    tol: f64,
) -> Result<(DVector<f64>, f64)> {
    let x = cs.project_onto(start, b)?;
    let r = cs.reduced_dim();
    if r == 0 {
        let value = objective.evaluate(&x)?.value;
        return Ok((x, value));
    }
    let full = SketchSelector::full(r)?;
    let opts = StepOptions::default();
    damped_newton(x, tol, |x, want_direction| {
        let ev = objective.evaluate(x)?;
        let field = cs.reduce_gradient(&ev.gradient);
        let direction = if want_direction {
            let jac_t = cs.reduce_hessian(&ev.hessian);
            Some(cs.null_basis() * snr_step(&field, &jac_t, &full, &opts)?.direction)
        } else {
            None
        };
        Ok((ev.value, field.norm(), direction))
    })
}

/// `count` points drawn uniformly from the ball of `radius` around `center`.
pub fn sample_ball<R: Rng + ?Sized>(center: &DVector<f64>, radius: f64, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let n = center.len();
    (0..count)
        .map(|_| {
            let z = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut *rng));
            let norm = z.norm();
            let u: f64 = rng.random();
            let r = radius * u.powf(1.0 / n.max(1) as f64);
            if norm > 0.0 {
                center + z * (r / norm)
            } else {
                center.clone()
            }
        })
        .collect()
}

/// A sample point and its quasar-convexity ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct MuWitness {
    pub point: DVector<f64>,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MuEstimate {
    /// Largest `μ` consistent with every sample, capped at 1; 0 when the
    /// inequality fails for every positive `μ`.
    pub mu: f64,
    /// True when some sample had a non-positive ratio.
    pub degenerate: bool,
    /// The sample attaining the minimum ratio.
    pub worst: Option<MuWitness>,
    /// Samples whose ratio is non-positive.
    pub violations: Vec<MuWitness>,
    /// Whether the expectation over sketches was exact.
    pub exhaustive: bool,
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

fn all_subsets(m: usize, tau: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..tau).collect();
    loop {
        out.push(idx.clone());
        let Some(i) = (0..tau).rev().find(|&i| idx[i] < m - tau + i) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..tau {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// The sketches over which the expectation is taken: all `C(m, τ)` subsets
/// when there are at most `draws` of them, otherwise `draws` random ones.
pub fn expectation_sketches<R: Rng + ?Sized>(
    m: usize,
    tau: usize,
    draws: usize,
    rng: &mut R,
) -> Result<(Vec<SketchSelector>, bool)> {
    if tau == 0 || tau > m {
        return Err(invalid(format!("sketch size tau = {tau} must satisfy 1 <= tau <= m = {m}")));
    }
    match binomial(m, tau) {
        Some(total) if total <= draws.max(1) => {
            let sels = all_subsets(m, tau).into_iter().map(|s| SketchSelector::new(s, m)).collect::<Result<_>>()?;
            Ok((sels, true))
        }
        _ => Ok(((0..draws.max(1)).map(|_| sample_sketch(m, tau, rng)).collect::<Result<_>>()?, false)),
    }
}

/// Estimates the quasar-convexity constant of the current round at the
/// given sample points. With `F(x*) = 0`, each point yields
/// `2 (E[∇f]ᵀ(x − x*) − E[f]) / ‖x − x*‖²` and the estimate is the smallest.
pub fn estimate_mu_at(
    field: &dyn OnlineVectorField,
    x_star: &DVector<f64>,
    points: &[DVector<f64>],
    sketches: &[SketchSelector],
    exhaustive: bool,
) -> Result<MuEstimate> {
    if sketches.is_empty() {
        return Err(invalid("no sketches to average over"));
    }
    let opts = StepOptions::default();
    let mut est = MuEstimate { mu: 1.0, degenerate: false, worst: None, violations: Vec::new(), exhaustive };
    for x in points {
        let delta = x - x_star;
        let dist2 = delta.norm_squared();
        if dist2 == 0.0 {
            continue;
        }
        let ev = field.eval(x)?;
        let mut inner = 0.0;
        let mut f = 0.0;
        for sel in sketches {
            let step = snr_step(&ev.value, &ev.jacobian_t, sel, &opts)?;
            inner += step.direction.dot(&delta);
            f += step.f_value;
        }
        let count = sketches.len() as f64;
        let ratio = 2.0 * (inner / count - f / count) / dist2;
        if ratio <= 0.0 {
            est.violations.push(MuWitness { point: x.clone(), ratio });
        }
        if est.worst.as_ref().is_none_or(|w| ratio < w.ratio) {
            est.worst = Some(MuWitness { point: x.clone(), ratio });
        }
    }
    if let Some(w) = &est.worst {
        est.degenerate = w.ratio <= 0.0;
        est.mu = w.ratio.clamp(0.0, 1.0);
    }
    Ok(est)
}

/// [`estimate_mu_at`] on `count` points sampled uniformly in the ball of
/// `radius` around `x_star`, with sketch size `tau`.
pub fn estimate_mu<R: Rng + ?Sized>(
    field: &dyn OnlineVectorField,
    x_star: &DVector<f64>,
    tau: usize,
    radius: f64,
    count: usize,
    sketch_draws: usize,
    rng: &mut R,
) -> Result<MuEstimate> {
    let (sketches, exhaustive) = expectation_sketches(field.output_dim(), tau, sketch_draws, rng)?;
    let points = sample_ball(x_star, radius, count, rng);
    estimate_mu_at(field, x_star, &points, &sketches, exhaustive)
}

/// Welford's streaming mean and unbiased variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningMoments {
    count: usize,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).sqrt()
        }
    }
}

/// Which per-round series of a run to aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSelector {
    /// Cumulative `Σ‖F_t(x_t)‖`.
    RootRegret,
    /// Cumulative `Σ g_t(x_t) − g_t(x_t*)` from recorded oracle values.
    DynamicRegret,
    /// Cumulative constraint violation.
    Violation,
    /// Cumulative `Σ‖b_t − b_{t−1}‖`.
    RhsVariation,
    /// Per-round step time.
    StepSeconds,
}

pub fn metric_series(traj: &TrajectoryRecord, selector: MetricSelector) -> Result<Vec<f64>> {
    Ok(match selector {
        MetricSelector::RootRegret => regret_zero(traj).series,
        MetricSelector::DynamicRegret => regret_dynamic_recorded(traj)?.series,
        MetricSelector::Violation => violation(traj)?.series,
        MetricSelector::RhsVariation => rhs_variation(traj)?.series,
        MetricSelector::StepSeconds => traj.step_seconds.clone(),
    })
}

/// Per-round mean and unbiased standard deviation of equal-length series.
pub fn aggregate_series(series: &[Vec<f64>]) -> Result<RegretReport> {
    let Some(first) = series.first() else {
        return Err(invalid("nothing to aggregate"));
    };
    let len = first.len();
    if series.iter().any(|s| s.len() != len) {
        return Err(invalid("runs have different horizons"));
    }
    let count = series.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for t in 0..len {
        let mu = series.iter().map(|s| s[t]).sum::<f64>() / count;
        mean[t] = mu;
        if series.len() > 1 {
            let ss = series.iter().map(|s| (s[t] - mu).powi(2)).sum::<f64>();
            std[t] = (ss / (count - 1.0)).sqrt();
        }
    }
    Ok(RegretReport { series: mean, std, runs: series.len(), bound: None })
}

pub fn aggregate(runs: &[TrajectoryRecord], selector: MetricSelector) -> Result<RegretReport> {
    let series = runs.iter().map(|r| metric_series(r, selector)).collect::<Result<Vec<_>>>()?;
    aggregate_series(&series)
}

/// Empirical Lipschitz modulus `‖Q‖₂` of an affine field `F(x) = Q(x − x*)`.
pub fn spectral_norm(q: &DMatrix<f64>) -> f64 {
    q.clone().svd(false, false).singular_values.max()
}
