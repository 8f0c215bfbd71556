//! Online problems: time-varying vector fields `F_t : Rⁿ → Rᵐ` and
//! time-varying objectives `g_t` whose gradient field is tracked instead.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::affine::AffineConstraintSet;
use crate::error::Result;
use crate::rng::SimRng;

pub mod opf;
pub mod quadratic;
pub mod tracking;

pub use opf::{opf_build, AlphaRule, OpfLayout, OpfOptions, PenalizedOpfProblem};
pub use quadratic::{spd_with_condition, DriftingQuadraticRoot, QuadraticObjective, ScheduledConstraints};
pub use tracking::TargetTrackingProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    RootFinding,
    /// `F = ∇g`, so `m = n` and the transposed Jacobian is the Hessian.
    GradientField,
}

/// `F_t(x)` together with its transposed Jacobian `DF_t(x)` (`n × m`).
#[derive(Debug, Clone)]
pub struct FieldEval {
    pub value: DVector<f64>,
    pub jacobian_t: DMatrix<f64>,
    /// Columns zeroed by a singularity guard during this evaluation.
    pub guarded: usize,
}

pub trait OnlineVectorField {
    /// Decision dimension `n`.
    fn dim(&self) -> usize;
    /// Output dimension `m`.
    fn output_dim(&self) -> usize;
    fn mode(&self) -> FieldMode;
    /// Current round, starting at 1.
    fn round(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> Result<FieldEval>;
    /// The scalar round loss `g_t(x)` and its gradient, if the problem has one.
    fn loss(&self, x: &DVector<f64>) -> Result<Option<(f64, DVector<f64>)>>;
    /// Reveals the next round.
    fn advance(&mut self, rng: &mut SimRng);
    /// A zero of the current round when it is known in closed form.
    fn known_root(&self) -> Option<DVector<f64>> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

pub trait OnlineObjective {
    fn dim(&self) -> usize;
    fn round(&self) -> usize;
    fn evaluate(&self, x: &DVector<f64>) -> Result<ObjectiveEval>;
    fn advance(&mut self, rng: &mut SimRng);
}

/// An objective paired with constraints `A x = b_t`, where `b_t` moves with
/// the rounds.
pub trait EqualityConstrained: OnlineObjective {
    fn constraints(&self) -> &AffineConstraintSet;
    /// `b_t` of the current round.
    fn rhs(&self) -> &DVector<f64>;
}

/// Adapts an objective to the root-finding interface via `F = ∇g`.
#[derive(Debug, Clone)]
pub struct GradientField<O>(pub O);

impl<O: OnlineObjective> OnlineVectorField for GradientField<O> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn output_dim(&self) -> usize {
        self.0.dim()
    }

    fn mode(&self) -> FieldMode {
        FieldMode::GradientField
    }

    fn round(&self) -> usize {
        self.0.round()
    }

    fn eval(&self, x: &DVector<f64>) -> Result<FieldEval> {
        let ev = self.0.evaluate(x)?;
        Ok(FieldEval { value: ev.gradient, jacobian_t: ev.hessian, guarded: 0 })
    }

    fn loss(&self, x: &DVector<f64>) -> Result<Option<(f64, DVector<f64>)>> {
        let ev = self.0.evaluate(x)?;
        Ok(Some((ev.value, ev.gradient)))
    }

    fn advance(&mut self, rng: &mut SimRng) {
        self.0.advance(rng);
    }
}

/// Central finite-difference transposed Jacobian of a field, for audits.
pub fn finite_difference_jacobian_t(
    field: &dyn OnlineVectorField,
    x: &DVector<f64>,
    step: f64,
) -> Result<DMatrix<f64>> {
    let (n, m) = (field.dim(), field.output_dim());
    let mut jac_t = DMatrix::zeros(n, m);
    for j in 0..n {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[j] += step;
        minus[j] -= step;
        let diff = (field.eval(&plus)?.value - field.eval(&minus)?.value) / (2.0 * step);
        jac_t.row_mut(j).copy_from(&diff.transpose());
    }
    Ok(jac_t)
}
