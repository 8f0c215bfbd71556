//! Uniform sub-sampling sketches and the sketched Newton-Raphson step.
//!
//! A sketch `S` is an `m × τ` column-selection matrix. It is never
//! materialized: a [`SketchSelector`] stores the selected indices and every
//! product with `S` or `Sᵀ` is a gather or scatter. For a residual `F` with
//! transposed Jacobian `DF` (`n × m`), the step is
//!
//! ```text
//! d = DF·S (Sᵀ DFᵀ DF S)† Sᵀ F
//! ```
//!
//! and the sketched merit value is `f = ½ Fᵀ S (Sᵀ DFᵀ DF S)† Sᵀ F`, which
//! satisfies `½‖d‖² = f`.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clock::Stopwatch;
use crate::error::{ensure_finite_mat, ensure_finite_vec, invalid, Error, Result};

pub const DEFAULT_REL_TOL: f64 = 1e-12;

/// A size-`τ` subset of `{0, …, m−1}`, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchSelector {
    indices: Vec<usize>,
    dim: usize,
}

impl SketchSelector {
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        if indices.is_empty() || indices.len() > dim {
            return Err(invalid(format!(
                "sketch size tau = {} must satisfy 1 <= tau <= m = {dim}",
                indices.len()
            )));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("sketch indices must be distinct"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(invalid(format!("sketch index {bad} out of range for m = {dim}")));
        }
        Ok(SketchSelector { indices, dim })
    }

    /// The identity sketch (`τ = m`).
    pub fn full(dim: usize) -> Result<Self> {
        SketchSelector::new((0..dim).collect(), dim)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Ambient dimension `m`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> usize {
        self.indices.len()
    }

    /// `Sᵀ v`.
    pub fn select(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.tau(), self.indices.iter().map(|&i| v[i]))
    }

    /// `S u`.
    pub fn embed(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        for (k, &i) in self.indices.iter().enumerate() {
            out[i] = u[k];
        }
        out
    }

    /// `X S`: the selected columns of `X`.
    pub fn select_columns(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x.select_columns(self.indices.iter())
    }
}

/// Draws `τ` indices uniformly without replacement from `{0, …, m−1}`.
pub fn sample_sketch<R: Rng + ?Sized>(dim: usize, tau: usize, rng: &mut R) -> Result<SketchSelector> {
    if tau == 0 || tau > dim {
        return Err(invalid(format!(
            "sketch size tau = {tau} must satisfy 1 <= tau <= m = {dim}"
        )));
    }
    let indices = rand::seq::index::sample(rng, dim, tau).into_vec();
    SketchSelector::new(indices, dim)
}

/// Sketch size as an absolute count or as a fraction `ρ` of the dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchSize {
    Tau(usize),
    Fraction(f64),
}

impl SketchSize {
    pub fn full() -> Self {
        SketchSize::Fraction(1.0)
    }

    /// `τ` for a space of dimension `dim`; fractions map to `max(1, ⌊ρ·dim⌋)`.
    /// A zero-dimensional space resolves to zero.
    pub fn resolve(self, dim: usize) -> Result<usize> {
        if dim == 0 {
            return Ok(0);
        }
        match self {
            SketchSize::Tau(tau) if tau >= 1 && tau <= dim => Ok(tau),
            SketchSize::Tau(tau) => Err(invalid(format!(
                "sketch size tau = {tau} must satisfy 1 <= tau <= m = {dim}"
            ))),
            SketchSize::Fraction(rho) if rho > 0.0 && rho <= 1.0 => {
                // absorb representation error such as 0.29 * 100 = 28.999…
                let tau = (rho * dim as f64 + 1e-9).floor() as usize;
                Ok(tau.clamp(1, dim))
            }
            SketchSize::Fraction(rho) => {
                Err(invalid(format!("sketch fraction rho = {rho} must lie in (0, 1]")))
            }
        }
    }

    pub fn fraction(self) -> Option<f64> {
        match self {
            SketchSize::Fraction(rho) => Some(rho),
            SketchSize::Tau(_) => None,
        }
    }
}

/// `(DF·S)ᵀ(DF·S)`, formed from the selected columns only.
pub fn sketched_gram(jac_t: &DMatrix<f64>, sel: &SketchSelector) -> Result<DMatrix<f64>> {
    if jac_t.ncols() != sel.dim() {
        return Err(invalid(format!(
            "transposed Jacobian has {} columns but the sketch expects m = {}",
            jac_t.ncols(),
            sel.dim()
        )));
    }
    let cols = sel.select_columns(jac_t);
    let mut gram = cols.tr_mul(&cols);
    gram.fill_upper_triangle_with_lower_triangle();
    Ok(gram)
}

#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix by eigendecomposition.
///
/// Eigenvalues at or below `rel_tol · max|λ|` are treated as zero.
pub fn pinv_psd(gram: &DMatrix<f64>, rel_tol: f64) -> Result<PseudoInverse> {
    let n = gram.nrows();
    if gram.ncols() != n {
        return Err(invalid(format!("expected a square matrix, got {}x{}", n, gram.ncols())));
    }
    if !(rel_tol > 0.0) {
        return Err(invalid(format!("rel_tol = {rel_tol} must be positive")));
    }
    ensure_finite_mat("gram matrix", gram)?;
    let scale = gram.amax().max(1.0);
    let asym = (gram - gram.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(invalid(format!("matrix is not symmetric (max asymmetry {asym:.3e})")));
    }
    if n == 0 {
        return Ok(PseudoInverse { matrix: DMatrix::zeros(0, 0), rank: 0 });
    }

    let eig = SymmetricEigen::new(gram.clone());
    let largest = eig.eigenvalues.amax();
    let cutoff = rel_tol * largest;
    if let Some(neg) = eig.eigenvalues.iter().find(|&&l| l < -cutoff) {
        return Err(Error::NumericalDomain(format!(
            "matrix is not positive semidefinite (eigenvalue {neg:.3e})"
        )));
    }

    let mut matrix = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if largest > 0.0 && lambda > cutoff {
            let q = eig.eigenvectors.column(k);
            matrix.ger(1.0 / lambda, &q, &q, 1.0);
            rank += 1;
        }
    }
    matrix.fill_upper_triangle_with_lower_triangle();
    Ok(PseudoInverse { matrix, rank })
}

/// How the sketched system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKernel {
    /// Thin SVD of the sketched column block `DF·S`. Never squares the
    /// condition number, so `½‖d‖² = f` holds to working precision.
    #[default]
    Factored,
    /// Form the sketched Gram matrix and apply [`pinv_psd`].
    Gram,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepOptions {
    pub rel_tol: f64,
    pub kernel: StepKernel,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { rel_tol: DEFAULT_REL_TOL, kernel: StepKernel::Factored }
    }
}

#[derive(Debug, Clone)]
pub struct SketchedStepReport {
    /// The quantity subtracted from the current iterate.
    pub direction: DVector<f64>,
    /// `f^{S,x}(x) = ½ (SᵀF)ᵀ G† (SᵀF)`.
    pub f_value: f64,
    pub gram_rank: usize,
    pub elapsed: f64,
}

/// One sketched Newton-Raphson step for residual `f_val` and transposed
/// Jacobian `jac_t` (`n × m`). The caller updates `x ← x − direction`.
///
/// Both kernels cost `O(mτ + nτ² + τ³)`.
pub fn snr_step(
    f_val: &DVector<f64>,
    jac_t: &DMatrix<f64>,
    sel: &SketchSelector,
    opts: &StepOptions,
) -> Result<SketchedStepReport> {
    let clock = Stopwatch::start();
    let m = sel.dim();
    if f_val.len() != m || jac_t.ncols() != m {
        return Err(invalid(format!(
            "dimension mismatch: F has {} entries, DF is {}x{}, sketch expects m = {m}",
            f_val.len(),
            jac_t.nrows(),
            jac_t.ncols()
        )));
    }
    ensure_finite_vec("F", f_val)?;
    ensure_finite_mat("DF", jac_t)?;
    let n = jac_t.nrows();
    let rhs = sel.select(f_val);

    let (direction, f_value, gram_rank) = match opts.kernel {
        StepKernel::Gram => {
            let cols = sel.select_columns(jac_t);
            let gram = sketched_gram(jac_t, sel)?;
            let pinv = pinv_psd(&gram, opts.rel_tol)?;
            let weights = &pinv.matrix * &rhs;
            let direction = &cols * &weights;
            let f_value = (0.5 * rhs.dot(&weights)).max(0.0);
            (direction, f_value, pinv.rank)
        }
        StepKernel::Factored => {
            if n == 0 {
                (DVector::zeros(0), 0.0, 0)
            } else {
                factored_step(sel.select_columns(jac_t), &rhs, opts.rel_tol)
            }
        }
    };

    Ok(SketchedStepReport { direction, f_value, gram_rank, elapsed: clock.seconds() })
}

// With C = U Σ Vᵀ, (CᵀC)† = V Σ⁺² Vᵀ, so C (CᵀC)† s = U Σ⁺ Vᵀ s.
// Singular values are cut at √rel_tol·σ_max, the same rank rule as the
// eigenvalue cut in `pinv_psd`.
fn factored_step(cols: DMatrix<f64>, rhs: &DVector<f64>, rel_tol: f64) -> (DVector<f64>, f64, usize) {
    let n = cols.nrows();
    let svd = SVD::new(cols, true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        unreachable!("SVD was asked for both factors")
    };
    let sigma = svd.singular_values;
    let largest = sigma.amax();
    let cutoff = rel_tol.sqrt() * largest;

    let mut direction = DVector::zeros(n);
    let mut sq = 0.0;
    let mut rank = 0;
    for k in 0..sigma.len() {
        if largest > 0.0 && sigma[k] > cutoff {
            let coeff = v_t.row(k).transpose().dot(rhs) / sigma[k];
            direction.axpy(coeff, &u.column(k), 1.0);
            sq += coeff * coeff;
            rank += 1;
        }
    }
    (direction, 0.5 * sq, rank)
}
