//! Constant linear equality constraints `A x = b_t` with a time-varying
//! right-hand side.
//!
//! Feasible points are parameterized as `x = M z + x̃` where the columns of
//! `M` are an orthonormal basis of `ker A` and `x̃` is any feasible anchor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, QR, SVD};

use crate::error::{ensure_finite_vec, invalid, Error, Result};

/// Rank test threshold on `σ_min / σ_max`.
pub const RANK_TOL: f64 = 1e-10;
/// Anchor feasibility tolerance, scaled by `1 + ‖b‖`.
pub const ANCHOR_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct AffineConstraintSet {
    a: DMatrix<f64>,
    aat: Option<Cholesky<f64, Dyn>>,
    null_basis: DMatrix<f64>,
}

impl AffineConstraintSet {
    /// Validates full row rank and caches the factorization of `AAᵀ` and
    /// the null-space basis.
    pub fn build(a: DMatrix<f64>) -> Result<Self> {
        let (k, n) = a.shape();
        if k > n {
            return Err(Error::DegenerateConstraints(format!(
                "{k} constraints on {n} variables cannot have full row rank"
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDomain("constraint matrix has non-finite entries".into()));
        }
        if k == 0 {
            return Ok(AffineConstraintSet { a, aat: None, null_basis: DMatrix::identity(n, n) });
        }

        let sigma = SVD::new(a.clone(), false, false).singular_values;
        let (smax, smin) = (sigma.max(), sigma.min());
        if !(smax > 0.0) || smin < RANK_TOL * smax {
            return Err(Error::DegenerateConstraints(format!(
                "constraint matrix is rank deficient (singular values in [{smin:.3e}, {smax:.3e}])"
            )));
        }
        let aat = Cholesky::new(&a * a.transpose()).ok_or_else(|| {
            Error::DegenerateConstraints("A·Aᵀ is not positive definite".into())
        })?;

        // Householder QR of Aᵀ; the trailing n−k columns of the full Q span ker A.
        let qr = QR::new(a.transpose());
        let mut q_t = DMatrix::identity(n, n);
        qr.q_tr_mul(&mut q_t);
        let null_basis = q_t.transpose().columns(k, n - k).into_owned();

        Ok(AffineConstraintSet { a, aat: Some(aat), null_basis })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn n_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.a.ncols()
    }

    /// Dimension `n − k` of the null space.
    pub fn reduced_dim(&self) -> usize {
        self.null_basis.ncols()
    }

    /// `M`, `n × (n−k)` with orthonormal columns.
    pub fn null_basis(&self) -> &DMatrix<f64> {
        &self.null_basis
    }

    pub fn residual(&self, x: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        &self.a * x - b
    }

    pub fn violation(&self, x: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.residual(x, b).norm()
    }

    fn check_dims(&self, x: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
        if x.len() != self.n_vars() || b.len() != self.n_constraints() {
            return Err(invalid(format!(
                "expected x in R^{} and b in R^{}, got {} and {}",
                self.n_vars(),
                self.n_constraints(),
                x.len(),
                b.len()
            )));
        }
        Ok(())
    }

    /// Euclidean projection `x + Aᵀ(AAᵀ)⁻¹(b − Ax)` onto `{x : Ax = b}`.
    pub fn project_onto(&self, x: &DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dims(x, b)?;
        ensure_finite_vec("x", x)?;
        ensure_finite_vec("b", b)?;
        let Some(aat) = &self.aat else {
            return Ok(x.clone());
        };
        let mut out = x.clone();
        // one round of iterative refinement
        for _ in 0..2 {
            let r = b - &self.a * &out;
            let y = aat.solve(&r);
            out += self.a.tr_mul(&y);
        }
        Ok(out)
    }

    /// `Mᵀ g`.
    pub fn reduce_gradient(&self, grad: &DVector<f64>) -> DVector<f64> {
        self.null_basis.tr_mul(grad)
    }

    /// `Mᵀ H M`, symmetrized.
    pub fn reduce_hessian(&self, hess: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = self.null_basis.tr_mul(&(hess * &self.null_basis));
        let sym = (&out + out.transpose()) * 0.5;
        out.copy_from(&sym);
        out
    }

    /// `M z + x̃`.
    pub fn lift(&self, z: &DVector<f64>, anchor: &DVector<f64>) -> DVector<f64> {
        &self.null_basis * z + anchor
    }

    pub fn ensure_feasible(&self, x: &DVector<f64>, b: &DVector<f64>, rel_tol: f64) -> Result<()> {
        self.check_dims(x, b)?;
        let viol = self.violation(x, b);
        let limit = rel_tol * (1.0 + b.norm());
        if viol > limit || !viol.is_finite() {
            return Err(Error::Precondition(format!(
                "point is infeasible: ‖Ax − b‖ = {viol:.3e} exceeds {limit:.3e}"
            )));
        }
        Ok(())
    }
}

pub fn build_constraints(a: DMatrix<f64>) -> Result<AffineConstraintSet> {
    AffineConstraintSet::build(a)
}

pub fn project_onto(cs: &AffineConstraintSet, x: &DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    cs.project_onto(x, b)
}

/// `F_red(z) = Mᵀ∇g(Mz + x̃)` with transposed Jacobian `Mᵀ∇²g(Mz + x̃)M`.
pub struct ReducedField<'a, G, H> {
    cs: &'a AffineConstraintSet,
    anchor: DVector<f64>,
    grad: G,
    hess: H,
}

impl<G, H> ReducedField<'_, G, H>
where
    G: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    H: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    pub fn dim(&self) -> usize {
        self.cs.reduced_dim()
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn value(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.cs.lift(z, &self.anchor);
        Ok(self.cs.reduce_gradient(&(self.grad)(&x)?))
    }

    pub fn jacobian_t(&self, z: &DVector<f64>) -> Result<DMatrix<f64>> {
        let x = self.cs.lift(z, &self.anchor);
        Ok(self.cs.reduce_hessian(&(self.hess)(&x)?))
    }
}

/// Builds the reduced field around a feasible `anchor` for right-hand side `b`.
pub fn reduce_field<'a, G, H>(
    grad: G,
    hess: H,
    cs: &'a AffineConstraintSet,
    anchor: DVector<f64>,
    b: &DVector<f64>,
) -> Result<ReducedField<'a, G, H>>
where
    G: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    H: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    cs.ensure_feasible(&anchor, b, ANCHOR_TOL)?;
    Ok(ReducedField { cs, anchor, grad, hess })
}
