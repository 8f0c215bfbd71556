//! Quadratic problems with closed-form answers, used by the demo experiment
//! and as controlled instances in tests.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{EqualityConstrained, FieldEval, FieldMode, ObjectiveEval, OnlineObjective, OnlineVectorField};
use crate::affine::AffineConstraintSet;
use crate::error::{invalid, Result};
use crate::rng::SimRng;

/// Symmetric positive definite `U diag(λ) Uᵀ` with a random orthogonal `U`
/// and eigenvalues evenly spaced in `[1, cond]`.
pub fn spd_with_condition(n: usize, cond: f64, rng: &mut SimRng) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let u = g.qr().q();
    let eig = DVector::from_fn(n, |i, _| {
        if n == 1 {
            1.0
        } else {
            1.0 + (cond - 1.0) * i as f64 / (n - 1) as f64
        }
    });
    let mut q: DMatrix<f64> = &u * DMatrix::from_diagonal(&eig) * u.transpose();
    let sym = (&q + q.transpose()) * 0.5;
    q.copy_from(&sym);
    q
}

/// `F_t(x) = Q (x − x_t*)` with a root that drifts as
/// `x_{t+1}* = x_t* + drift·z/√t`. With `drift = 0` the problem is static.
#[derive(Debug, Clone)]
pub struct DriftingQuadraticRoot {
    q: DMatrix<f64>,
    root: DVector<f64>,
    drift: f64,
    round: usize,
}

impl DriftingQuadraticRoot {
    pub fn new(q: DMatrix<f64>, root: DVector<f64>, drift: f64) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() != root.len() {
            return Err(invalid("Q must be square and match the root dimension"));
        }
        Ok(DriftingQuadraticRoot { q, root, drift, round: 1 })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn root(&self) -> &DVector<f64> {
        &self.root
    }
}

impl OnlineVectorField for DriftingQuadraticRoot {
    fn dim(&self) -> usize {
        self.root.len()
    }

    fn output_dim(&self) -> usize {
        self.root.len()
    }

    fn mode(&self) -> FieldMode {
        FieldMode::RootFinding
    }

    fn round(&self) -> usize {
        self.round
    }

    fn eval(&self, x: &DVector<f64>) -> Result<FieldEval> {
        if x.len() != self.dim() {
            return Err(invalid(format!("expected x in R^{}, got {}", self.dim(), x.len())));
        }
        Ok(FieldEval { value: &self.q * (x - &self.root), jacobian_t: self.q.transpose(), guarded: 0 })
    }

    /// `‖F(x)‖²`.
    fn loss(&self, x: &DVector<f64>) -> Result<Option<(f64, DVector<f64>)>> {
        let ev = self.eval(x)?;
        let grad = &ev.jacobian_t * &ev.value * 2.0;
        Ok(Some((ev.value.norm_squared(), grad)))
    }

    fn advance(&mut self, rng: &mut SimRng) {
        if self.drift != 0.0 {
            let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
            self.root += z * (self.drift / (self.round as f64).sqrt());
        }
        self.round += 1;
    }

    fn known_root(&self) -> Option<DVector<f64>> {
        Some(self.root.clone())
    }
}

/// Static `g(x) = ½ xᵀQx + cᵀx`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    q: DMatrix<f64>,
    c: DVector<f64>,
    round: usize,
}

impl QuadraticObjective {
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() != c.len() {
            return Err(invalid("Q must be square and match c"));
        }
        Ok(QuadraticObjective { q, c, round: 1 })
    }
}

impl OnlineObjective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.c.len()
    }

    fn round(&self) -> usize {
        self.round
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<ObjectiveEval> {
        if x.len() != self.dim() {
            return Err(invalid(format!("expected x in R^{}, got {}", self.dim(), x.len())));
        }
        let qx = &self.q * x;
        Ok(ObjectiveEval {
            value: 0.5 * x.dot(&qx) + self.c.dot(x),
            gradient: qx + &self.c,
            hessian: self.q.clone(),
        })
    }

    fn advance(&mut self, _rng: &mut SimRng) {
        self.round += 1;
    }
}

/// An objective under fixed constraints whose right-hand side follows a
/// prescribed schedule; the last entry repeats once the schedule runs out.
#[derive(Debug, Clone)]
pub struct ScheduledConstraints<O> {
    objective: O,
    constraints: AffineConstraintSet,
    schedule: Vec<DVector<f64>>,
    position: usize,
}

impl<O: OnlineObjective> ScheduledConstraints<O> {
    pub fn new(objective: O, constraints: AffineConstraintSet, schedule: Vec<DVector<f64>>) -> Result<Self> {
        if schedule.is_empty() {
            return Err(invalid("right-hand-side schedule is empty"));
        }
        if objective.dim() != constraints.n_vars()
            || schedule.iter().any(|b| b.len() != constraints.n_constraints())
        {
            return Err(invalid("objective, constraints, and schedule dimensions disagree"));
        }
        Ok(ScheduledConstraints { objective, constraints, schedule, position: 0 })
    }

    pub fn objective(&self) -> &O {
        &self.objective
    }
}

impl<O: OnlineObjective> OnlineObjective for ScheduledConstraints<O> {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn round(&self) -> usize {
        self.objective.round()
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<ObjectiveEval> {
        self.objective.evaluate(x)
    }

    fn advance(&mut self, rng: &mut SimRng) {
        self.objective.advance(rng);
        self.position += 1;
    }
}

impl<O: OnlineObjective> EqualityConstrained for ScheduledConstraints<O> {
    fn constraints(&self) -> &AffineConstraintSet {
        &self.constraints
    }

    fn rhs(&self) -> &DVector<f64> {
        &self.schedule[self.position.min(self.schedule.len() - 1)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn condition_number_is_exact() {
        let q = spd_with_condition(12, 10.0, &mut seeded(3));
        let eig = q.clone().symmetric_eigen().eigenvalues;
        assert!((eig.max() / eig.min() - 10.0).abs() < 1e-10);
        assert!((&q - q.transpose()).amax() == 0.0);
    }

    #[test]
    fn root_is_zero_of_field() {
        let q = spd_with_condition(4, 5.0, &mut seeded(1));
        let p = DriftingQuadraticRoot::new(q, DVector::from_element(4, 2.0), 1.0).unwrap();
        assert!(p.eval(p.root()).unwrap().value.amax() < 1e-14);
    }
}
