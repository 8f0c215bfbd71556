//! Range-based tracking of a moving target.
//!
//! `m` fixed sensors `a_i ~ 20·N(0, I)` measure exact distances
//! `d_i = ‖y_t − a_i‖` to a target that moves as
//! `y_{t+1} = y_t + scale·z/√t`, `z ~ N(0, I)`. The tracked field is the
//! residual `F_i(x) = ‖x − a_i‖ − d_i`, which vanishes at the target.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{FieldEval, FieldMode, OnlineVectorField};
use crate::error::{invalid, Result};
use crate::rng::{self, SimRng};

pub const DEFAULT_SCALE: f64 = 20.0;
/// Below this distance a sensor's Jacobian column is zeroed.
pub const SINGULARITY_GUARD: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct TargetTrackingProblem {
    /// Column `i` is sensor `a_i`.
    sensors: DMatrix<f64>,
    target: DVector<f64>,
    distances: DVector<f64>,
    round: usize,
    scale: f64,
}

fn standard_normal(len: usize, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

impl TargetTrackingProblem {
    /// Sensors and the initial target are drawn from the `problem-init`
    /// stream of `seed`.
    pub fn new(n: usize, m: usize, seed: u64) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(invalid(format!("tracking needs n >= 1 and m >= 1, got n = {n}, m = {m}")));
        }
        let mut rng = rng::stream(seed, rng::PROBLEM_INIT);
        let sensors = DMatrix::from_fn(n, m, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            DEFAULT_SCALE * z
        });
        let target = standard_normal(n, &mut rng) * DEFAULT_SCALE;
        let mut problem = TargetTrackingProblem {
            distances: DVector::zeros(m),
            sensors,
            target,
            round: 1,
            scale: DEFAULT_SCALE,
        };
        problem.refresh();
        Ok(problem)
    }

    pub fn from_parts(sensors: DMatrix<f64>, target: DVector<f64>) -> Result<Self> {
        if sensors.nrows() != target.len() || sensors.ncols() == 0 || target.is_empty() {
            return Err(invalid("sensor matrix must be n x m with m >= 1 and match the target"));
        }
        let m = sensors.ncols();
        let mut problem =
            TargetTrackingProblem { sensors, target, distances: DVector::zeros(m), round: 1, scale: DEFAULT_SCALE };
        problem.refresh();
        Ok(problem)
    }

    /// Dynamics magnitude (20 by default).
    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    fn refresh(&mut self) {
        for i in 0..self.sensors.ncols() {
            self.distances[i] = (&self.target - self.sensors.column(i)).norm();
        }
    }

    pub fn sensors(&self) -> &DMatrix<f64> {
        &self.sensors
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn distances(&self) -> &DVector<f64> {
        &self.distances
    }
}

pub fn tracking_new(n: usize, m: usize, seed: u64) -> Result<TargetTrackingProblem> {
    TargetTrackingProblem::new(n, m, seed)
}

impl OnlineVectorField for TargetTrackingProblem {
    fn dim(&self) -> usize {
        self.sensors.nrows()
    }

    fn output_dim(&self) -> usize {
        self.sensors.ncols()
    }

    fn mode(&self) -> FieldMode {
        FieldMode::RootFinding
    }

    fn round(&self) -> usize {
        self.round
    }

    fn eval(&self, x: &DVector<f64>) -> Result<FieldEval> {
        let (n, m) = (self.dim(), self.output_dim());
        if x.len() != n {
            return Err(invalid(format!("expected x in R^{n}, got {}", x.len())));
        }
        let mut value = DVector::zeros(m);
        let mut jacobian_t = DMatrix::zeros(n, m);
        let mut guarded = 0;
        for i in 0..m {
            let offset = x - self.sensors.column(i);
            let dist = offset.norm();
            value[i] = dist - self.distances[i];
            if dist < SINGULARITY_GUARD {
                guarded += 1;
            } else {
                jacobian_t.set_column(i, &(offset / dist));
            }
        }
        Ok(FieldEval { value, jacobian_t, guarded })
    }

    /// `Σᵢ (‖x − aᵢ‖ − dᵢ)²` with gradient `2·DF·F`.
    fn loss(&self, x: &DVector<f64>) -> Result<Option<(f64, DVector<f64>)>> {
        let ev = self.eval(x)?;
        let grad = &ev.jacobian_t * &ev.value * 2.0;
        Ok(Some((ev.value.norm_squared(), grad)))
    }

    fn advance(&mut self, rng: &mut SimRng) {
        let step = standard_normal(self.dim(), rng) * (self.scale / (self.round as f64).sqrt());
        self.target += step;
        self.refresh();
        self.round += 1;
    }

    fn known_root(&self) -> Option<DVector<f64>> {
        Some(self.target.clone())
    }
}
