//! The online loops.
//!
//! Every loop plays `x_1 = x0` in round 1, unless a pre-play step is
//! requested: then `x0` takes one update on the initial snapshot of the
//! problem and the result is played first. Round `t` observes the
//! revealed problem at `x_t`, records the round, takes the update, and
//! advances the problem. Randomness comes from two streams derived from the
//! run seed: one for the problem dynamics and one for the sketches, so
//! algorithms sharing a seed face the same problem path.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::error::{ensure_finite_vec, invalid, Error, Result};
use crate::metrics::{round_oracle, round_oracle_constrained, ORACLE_TOL};
use crate::problems::{EqualityConstrained, OnlineVectorField};
use crate::rng::{self, SimRng};
use crate::sketch::{sample_sketch, snr_step, SketchSize, StepOptions};

/// Feasibility tolerance for the starting point of a constrained run,
/// scaled by `1 + ‖b‖`.
pub const START_FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Osnr,
    OsnrEc,
    Ogd,
    /// Online Newton: OSNR with the full sketch.
    Onm,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Osnr => "osnr",
            Algorithm::OsnrEc => "osnr_ec",
            Algorithm::Ogd => "ogd",
            Algorithm::Onm => "onm",
        }
    }

    /// Whether the algorithm draws sketches.
    pub fn is_sketched(self) -> bool {
        !matches!(self, Algorithm::Ogd)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "osnr" => Ok(Algorithm::Osnr),
            "osnr_ec" | "osnr-ec" => Ok(Algorithm::OsnrEc),
            "ogd" => Ok(Algorithm::Ogd),
            "onm" => Ok(Algorithm::Onm),
            other => Err(invalid(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: usize,
    pub sketch: SketchSize,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// OGD step size; `1/(15√T)` when unset.
    pub eta: Option<f64>,
    pub record_decisions: bool,
    pub steps_per_round: usize,
    pub step: StepOptions,
    /// Solve every round to optimality and record `g_t(x_t*)`.
    pub oracle: bool,
    /// Update `x0` once on the initial problem snapshot before round 1.
    #[serde(default)]
    pub pre_play: bool,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, horizon: usize, seed: u64) -> Self {
        RunConfig {
            horizon,
            sketch: SketchSize::full(),
            seed,
            algorithm,
            eta: None,
            record_decisions: false,
            steps_per_round: 1,
            step: StepOptions::default(),
            oracle: false,
            pre_play: false,
        }
    }

    pub fn with_sketch(mut self, sketch: SketchSize) -> Self {
        self.sketch = sketch;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = Some(eta);
        self
    }

    pub fn with_decisions(mut self) -> Self {
        self.record_decisions = true;
        self
    }

    pub fn with_oracle(mut self) -> Self {
        self.oracle = true;
        self
    }

    pub fn with_pre_play(mut self) -> Self {
        self.pre_play = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let SketchSize::Fraction(rho) = self.sketch {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(invalid(format!("sketch fraction rho = {rho} must lie in (0, 1]")));
            }
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(invalid(format!("step size eta = {eta} must be positive")));
            }
        }
        if self.steps_per_round == 0 {
            return Err(invalid("steps_per_round must be at least 1"));
        }
        Ok(())
    }

    /// The OGD step size actually used.
    pub fn effective_eta(&self) -> f64 {
        self.eta.unwrap_or_else(|| default_eta(self.horizon))
    }
}

pub fn default_eta(horizon: usize) -> f64 {
    1.0 / (15.0 * (horizon.max(1) as f64).sqrt())
}

/// Rewrites `onm` as the full-sketch run of the matching sketched algorithm.
pub fn resolve_onm(cfg: &RunConfig, constrained: bool) -> RunConfig {
    let mut out = cfg.clone();
    if cfg.algorithm == Algorithm::Onm {
        out.algorithm = if constrained { Algorithm::OsnrEc } else { Algorithm::Osnr };
        out.sketch = SketchSize::full();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub sketch: SketchSize,
    /// Resolved sketch size (0 for OGD).
    pub tau: usize,
    pub horizon: usize,
    pub eta: Option<f64>,
    pub steps_per_round: usize,
    /// Jacobian columns zeroed by singularity guards over the run.
    pub guarded: usize,
    /// Steps whose sketched Gram matrix had rank below `τ`.
    pub rank_deficient_steps: usize,
    pub pre_play: bool,
    /// `‖x0 − x0*‖`, where `x0*` solves the initial snapshot.
    pub start_distance: Option<f64>,
    /// `‖x_1 − x_1*‖`; equal to `start_distance` without a pre-play step.
    pub initial_distance: Option<f64>,
}

/// Everything recorded about one run. Per-round vectors have length `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// `g_t(x_t)` when the problem has a scalar loss.
    pub loss: Vec<Option<f64>>,
    /// `‖F_t(x_t)‖`; for constrained runs the reduced residual at the
    /// projected point.
    pub residual_norm: Vec<f64>,
    /// `‖A x_t − b_t‖` (constrained runs).
    pub violation: Option<Vec<f64>>,
    /// `‖b_t − b_{t−1}‖` (constrained runs).
    pub rhs_change: Option<Vec<f64>>,
    /// `g_t(x_t*)` when the oracle was requested.
    pub oracle_loss: Option<Vec<f64>>,
    /// `‖x_t − x_t*‖` when the round solution is known in closed form.
    pub distance_to_root: Option<Vec<f64>>,
    /// `‖x_t* − x_{t+1}*‖` for `t < T`, when known.
    pub root_shift: Option<Vec<f64>>,
    pub step_seconds: Vec<f64>,
    pub gram_rank: Vec<usize>,
    pub decisions: Option<Vec<Vec<f64>>>,
    /// The iterate after the last update, `x_{T+1}`.
    pub final_iterate: Vec<f64>,
    pub summary: RunSummary,
}

impl TrajectoryRecord {
    fn with_capacity(cfg: &RunConfig, tau: usize, n: usize) -> Self {
        let t = cfg.horizon;
        TrajectoryRecord {
            loss: Vec::with_capacity(t),
            residual_norm: Vec::with_capacity(t),
            violation: None,
            rhs_change: None,
            oracle_loss: cfg.oracle.then(|| Vec::with_capacity(t)),
            distance_to_root: None,
            root_shift: None,
            step_seconds: Vec::with_capacity(t),
            gram_rank: Vec::with_capacity(t),
            decisions: cfg.record_decisions.then(|| Vec::with_capacity(t)),
            final_iterate: vec![0.0; n],
            summary: RunSummary {
                seed: cfg.seed,
                algorithm: cfg.algorithm,
                sketch: cfg.sketch,
                tau,
                horizon: t,
                eta: (cfg.algorithm == Algorithm::Ogd).then(|| cfg.effective_eta()),
                steps_per_round: cfg.steps_per_round,
                guarded: 0,
                rank_deficient_steps: 0,
                pre_play: cfg.pre_play,
                start_distance: None,
                initial_distance: None,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.residual_norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual_norm.is_empty()
    }

    /// Zeroes the wall-clock column, the only non-deterministic field.
    pub fn without_timings(mut self) -> Self {
        self.step_seconds.iter_mut().for_each(|s| *s = 0.0);
        self
    }

    /// `x_t*` bookkeeping shared by the unconstrained loops.
    fn track_root(&mut self, x: &DVector<f64>, root: Option<DVector<f64>>) {
        if let Some(root) = root {
            self.distance_to_root.get_or_insert_with(Vec::new).push((x - root).norm());
        }
    }
}

struct Streams {
    dynamics: SimRng,
    sketch: SimRng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams { dynamics: rng::stream(seed, rng::PROBLEM_DYNAMICS), sketch: rng::stream(seed, rng::SKETCH) }
    }
}

fn check_start(x0: &DVector<f64>, n: usize) -> Result<()> {
    if x0.len() != n {
        return Err(invalid(format!("x0 has {} entries, the problem has n = {n}", x0.len())));
    }
    ensure_finite_vec("x0", x0)
}

/// Online sketched Newton-Raphson on a root-finding or gradient field.
pub fn osnr_run(problem: &mut dyn OnlineVectorField, cfg: &RunConfig, x0: &DVector<f64>) -> Result<TrajectoryRecord> {
    let cfg = resolve_onm(cfg, false);
    if cfg.algorithm != Algorithm::Osnr {
        return Err(invalid(format!("osnr_run cannot execute {}", cfg.algorithm)));
    }
    cfg.validate()?;
    let (n, m) = (problem.dim(), problem.output_dim());
    check_start(x0, n)?;
    let tau = cfg.sketch.resolve(m)?;
    let mut rec = TrajectoryRecord::with_capacity(&cfg, tau, n);
    let mut streams = Streams::new(cfg.seed);
    let mut x = x0.clone();
    let mut warm: Option<DVector<f64>> = None;

    let root = problem.known_root();
    if cfg.pre_play && cfg.horizon > 0 {
        let ev = problem.eval(&x).map_err(|e| e.at_round(0))?;
        let sel = sample_sketch(m, tau, &mut streams.sketch)?;
        x -= &snr_step(&ev.value, &ev.jacobian_t, &sel, &cfg.step).map_err(|e| e.at_round(0))?.direction;
    }
    if let Some(root) = &root {
        rec.summary.start_distance = Some((x0 - root).norm());
        rec.summary.initial_distance = Some((&x - root).norm());
    }

    for t in 1..=cfg.horizon {
        let round = |e: Error| e.at_round(t);
        let root = problem.known_root();
        rec.track_root(&x, root.clone());
        if let Some(d) = rec.decisions.as_mut() {
            d.push(x.as_slice().to_vec());
        }
        rec.loss.push(problem.loss(&x).map_err(round)?.map(|(v, _)| v));
        if let Some(oracle) = rec.oracle_loss.as_mut() {
            let value = match &root {
                Some(r) => problem.loss(r).map_err(round)?.map(|(v, _)| v),
                None => {
                    let start = warm.take().unwrap_or_else(|| x.clone());
                    let (point, value) = round_oracle(&*problem, &start, ORACLE_TOL).map_err(round)?;
                    warm = Some(point);
                    Some(value)
                }
            };
            oracle.push(value.ok_or_else(|| invalid("oracle requested for a problem without a loss").at_round(t))?);
        }

        let mut seconds = 0.0;
        let mut rank = 0;
        for s in 0..cfg.steps_per_round {
            let ev = problem.eval(&x).map_err(round)?;
            rec.summary.guarded += ev.guarded;
            if s == 0 {
                rec.residual_norm.push(ev.value.norm());
            }
            let sel = sample_sketch(m, tau, &mut streams.sketch).map_err(round)?;
            let step = snr_step(&ev.value, &ev.jacobian_t, &sel, &cfg.step).map_err(round)?;
            if step.gram_rank < tau {
                rec.summary.rank_deficient_steps += 1;
            }
            seconds += step.elapsed;
            rank = step.gram_rank;
            x -= &step.direction;
        }
        rec.step_seconds.push(seconds);
        rec.gram_rank.push(rank);

        problem.advance(&mut streams.dynamics);
        if t < cfg.horizon {
            if let (Some(before), Some(after)) = (root, problem.known_root()) {
                rec.root_shift.get_or_insert_with(Vec::new).push((after - before).norm());
            }
        }
    }
    rec.final_iterate = x.as_slice().to_vec();
    Ok(rec)
}

/// Online gradient descent on the problem's scalar loss, without projection.
pub fn ogd_run(problem: &mut dyn OnlineVectorField, cfg: &RunConfig, x0: &DVector<f64>) -> Result<TrajectoryRecord> {
    if cfg.algorithm != Algorithm::Ogd {
        return Err(invalid(format!("ogd_run cannot execute {}", cfg.algorithm)));
    }
    cfg.validate()?;
    let n = problem.dim();
    check_start(x0, n)?;
    let eta = cfg.effective_eta();
    let mut rec = TrajectoryRecord::with_capacity(cfg, 0, n);
    let mut streams = Streams::new(cfg.seed);
    let mut x = x0.clone();
    let mut warm: Option<DVector<f64>> = None;

    let root = problem.known_root();
    if cfg.pre_play && cfg.horizon > 0 {
        let Some((_, grad)) = problem.loss(&x).map_err(|e| e.at_round(0))? else {
            return Err(invalid("online gradient descent needs a scalar loss"));
        };
        x.axpy(-eta, &grad, 1.0);
    }
    if let Some(root) = &root {
        rec.summary.start_distance = Some((x0 - root).norm());
        rec.summary.initial_distance = Some((&x - root).norm());
    }

    for t in 1..=cfg.horizon {
        let round = |e: Error| e.at_round(t);
        let root = problem.known_root();
        rec.track_root(&x, root.clone());
        if let Some(d) = rec.decisions.as_mut() {
            d.push(x.as_slice().to_vec());
        }
        let ev = problem.eval(&x).map_err(round)?;
        rec.summary.guarded += ev.guarded;
        rec.residual_norm.push(ev.value.norm());
        let Some((value, _)) = problem.loss(&x).map_err(round)? else {
            return Err(invalid("online gradient descent needs a scalar loss").at_round(t));
        };
        rec.loss.push(Some(value));
        if let Some(oracle) = rec.oracle_loss.as_mut() {
            let value = match &root {
                Some(r) => problem.loss(r).map_err(round)?.map(|(v, _)| v).unwrap_or(0.0),
                None => {
                    let start = warm.take().unwrap_or_else(|| x.clone());
                    let (point, value) = round_oracle(&*problem, &start, ORACLE_TOL).map_err(round)?;
                    warm = Some(point);
                    value
                }
            };
            oracle.push(value);
        }

        let clock = Stopwatch::start();
        for _ in 0..cfg.steps_per_round {
            let (_, grad) = problem.loss(&x).map_err(round)?.expect("loss checked above");
            ensure_finite_vec("gradient", &grad).map_err(round)?;
            x.axpy(-eta, &grad, 1.0);
        }
        rec.step_seconds.push(clock.seconds());
        rec.gram_rank.push(0);

        problem.advance(&mut streams.dynamics);
        if t < cfg.horizon {
            if let (Some(before), Some(after)) = (root, problem.known_root()) {
                rec.root_shift.get_or_insert_with(Vec::new).push((after - before).norm());
            }
        }
    }
    rec.final_iterate = x.as_slice().to_vec();
    Ok(rec)
}

/// Runs `osnr`, `onm`, or `ogd` on an unconstrained problem.
pub fn run_unconstrained(
    problem: &mut dyn OnlineVectorField,
    cfg: &RunConfig,
    x0: &DVector<f64>,
) -> Result<TrajectoryRecord> {
    match cfg.algorithm {
        Algorithm::Osnr | Algorithm::Onm => osnr_run(problem, cfg, x0),
        Algorithm::Ogd => ogd_run(problem, cfg, x0),
        Algorithm::OsnrEc => Err(invalid("osnr_ec needs an equality-constrained problem")),
    }
}

/// The projection of the origin onto the first round's constraint set.
pub fn feasible_start<P: EqualityConstrained + ?Sized>(problem: &P) -> Result<DVector<f64>> {
    problem.constraints().project_onto(&DVector::zeros(problem.dim()), problem.rhs())
}

/// OSNR with equality constraints: project onto the revealed constraint
/// set, then take a sketched step in the null space of `A`.
///
/// `x0` must satisfy the first round's constraints; the right-hand side
/// before round 1 is taken equal to `b_1`.
pub fn osnr_ec_run<P: EqualityConstrained + ?Sized>(
    problem: &mut P,
    cfg: &RunConfig,
    x0: &DVector<f64>,
) -> Result<TrajectoryRecord> {
    let cfg = resolve_onm(cfg, true);
    if cfg.algorithm != Algorithm::OsnrEc {
        return Err(invalid(format!("osnr_ec_run cannot execute {}", cfg.algorithm)));
    }
    cfg.validate()?;
    if cfg.pre_play {
        return Err(invalid("a pre-play step is not defined for constrained runs"));
    }
    let cs = problem.constraints().clone();
    let n = cs.n_vars();
    check_start(x0, n)?;
    cs.ensure_feasible(x0, problem.rhs(), START_FEASIBILITY_TOL)?;
    let r = cs.reduced_dim();
    let tau = cfg.sketch.resolve(r)?;
    let mut rec = TrajectoryRecord::with_capacity(&cfg, tau, n);
    rec.violation = Some(Vec::with_capacity(cfg.horizon));
    rec.rhs_change = Some(Vec::with_capacity(cfg.horizon));
    let mut streams = Streams::new(cfg.seed);
    let mut x = x0.clone();
    let mut b_prev = problem.rhs().clone();
    let mut warm: Option<DVector<f64>> = None;

    for t in 1..=cfg.horizon {
        let round = |e: Error| e.at_round(t);
        let b = problem.rhs().clone();
        if let Some(d) = rec.decisions.as_mut() {
            d.push(x.as_slice().to_vec());
        }
        rec.violation.as_mut().expect("set above").push(cs.violation(&x, &b));
        rec.rhs_change.as_mut().expect("set above").push((&b - &b_prev).norm());
        rec.loss.push(Some(problem.evaluate(&x).map_err(round)?.value));
        if let Some(oracle) = rec.oracle_loss.as_mut() {
            let start = warm.take().unwrap_or_else(|| x.clone());
            let (point, value) = round_oracle_constrained(&*problem, &cs, &b, &start, ORACLE_TOL).map_err(round)?;
            warm = Some(point);
            oracle.push(value);
        }

        let mut anchor = cs.project_onto(&x, &b).map_err(round)?;
        let mut seconds = 0.0;
        let mut rank = 0;
        for s in 0..cfg.steps_per_round {
            let ev = problem.evaluate(&anchor).map_err(round)?;
            let clock = Stopwatch::start();
            let field = cs.reduce_gradient(&ev.gradient);
            if s == 0 {
                rec.residual_norm.push(field.norm());
            }
            if r == 0 {
                continue;
            }
            let jac_t = cs.reduce_hessian(&ev.hessian);
            let sel = sample_sketch(r, tau, &mut streams.sketch).map_err(round)?;
            let step = snr_step(&field, &jac_t, &sel, &cfg.step).map_err(round)?;
            if step.gram_rank < tau {
                rec.summary.rank_deficient_steps += 1;
            }
            rank = step.gram_rank;
            anchor -= cs.null_basis() * &step.direction;
            seconds += clock.seconds();
        }
        rec.step_seconds.push(seconds);
        rec.gram_rank.push(rank);
        x = anchor;

        b_prev = b;
        problem.advance(&mut streams.dynamics);
    }
    rec.final_iterate = x.as_slice().to_vec();
    Ok(rec)
}
