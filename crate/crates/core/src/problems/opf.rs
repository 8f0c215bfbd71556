//! DC optimal power flow with exponential line-flow penalties.
//!
//! Decision vector `x = (p, P, θ)`: generator outputs, line flows, and bus
//! angles, all in per-unit on the case base. The objective is
//!
//! ```text
//! g(x) = Σ_g a_g p_g² + b_g p_g + Σ_l exp(α_l P_l²)
//! ```
//!
//! subject to `A x = b_t`, whose rows are, in order:
//!
//! * nodal balance per bus `i`: `Σ_l inc(i, l) P_l − Σ_{g at i} p_g = −d_i`,
//!   with `inc = +1` at the lower-indexed end of a line and `−1` at the other;
//! * flow definitions `P_l − B_l (θ_from − θ_to) = 0`;
//! * the reference angle `θ_ref = 0`.
//!
//! Costs are converted from MW to per-unit so that the optimum is unchanged.
//! Demand perturbations are drawn in MW and converted.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EqualityConstrained, ObjectiveEval, OnlineObjective};
use crate::affine::AffineConstraintSet;
use crate::error::{invalid, Error, Result};
use crate::matpower::{validate_case, CaseError, PowerCase};
use crate::rng::SimRng;

/// Largest `α P²` accepted before `exp` is considered saturated.
pub const EXP_LIMIT: f64 = 700.0;
pub const DEFAULT_UNLIMITED_RATING: f64 = 1e3;
pub const DEFAULT_DEMAND_VARIANCE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaRule {
    /// `α = s̄²`.
    #[default]
    #[serde(alias = "paper")]
    Square,
    /// `α = 1 / s̄²`.
    InverseSquare,
}

impl std::str::FromStr for AlphaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" | "paper" => Ok(AlphaRule::Square),
            "inverse-square" => Ok(AlphaRule::InverseSquare),
            other => Err(invalid(format!("unknown alpha rule {other:?} (expected square or inverse-square)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpfOptions {
    pub alpha_rule: AlphaRule,
    /// Rating in MVA substituted for `rate_a = 0`.
    pub unlimited_rating: f64,
    /// Variance (MW²) of the demand step at round 1; round `t` uses `variance / t`.
    pub demand_variance: f64,
}

impl Default for OpfOptions {
    fn default() -> Self {
        OpfOptions {
            alpha_rule: AlphaRule::Square,
            unlimited_rating: DEFAULT_UNLIMITED_RATING,
            demand_variance: DEFAULT_DEMAND_VARIANCE,
        }
    }
}

/// Offsets of the three blocks in the flat decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpfLayout {
    pub n_gen: usize,
    pub n_line: usize,
    pub n_bus: usize,
}

impl OpfLayout {
    pub fn gen(&self, g: usize) -> usize {
        g
    }

    pub fn line(&self, l: usize) -> usize {
        self.n_gen + l
    }

    pub fn angle(&self, b: usize) -> usize {
        self.n_gen + self.n_line + b
    }

    pub fn n_vars(&self) -> usize {
        self.n_gen + self.n_line + self.n_bus
    }

    /// Row of the nodal balance equation of bus `b`.
    pub fn balance_row(&self, b: usize) -> usize {
        b
    }

    pub fn n_rows(&self) -> usize {
        self.n_bus + self.n_line + 1
    }
}

#[derive(Debug, Clone)]
pub struct PenalizedOpfProblem {
    layout: OpfLayout,
    /// Per-unit `(a, b)` per generator.
    costs: Vec<(f64, f64)>,
    alpha: Vec<f64>,
    /// Line endpoints as bus positions, lower index first.
    ends: Vec<(usize, usize)>,
    base_mva: f64,
    demand_mw: DVector<f64>,
    load_buses: Vec<usize>,
    demand_variance: f64,
    constraints: AffineConstraintSet,
    rhs: DVector<f64>,
    round: usize,
}

/// Builds the penalized problem and its constraints; `b_1` comes from the
/// case demands.
pub fn opf_build(case: &PowerCase, opts: &OpfOptions) -> Result<PenalizedOpfProblem> {
    validate_case(case).map_err(|e| match e {
        CaseError::Disconnected(_) => Error::DegenerateConstraints(e.to_string()),
        CaseError::ZeroReactance(_) => Error::InvalidCase(e.to_string()),
        other => Error::Case(other),
    })?;
    if !(opts.unlimited_rating > 0.0) {
        return Err(invalid("unlimited_rating must be positive"));
    }

    let index = case.bus_index();
    let layout = OpfLayout { n_gen: case.gens.len(), n_line: case.branches.len(), n_bus: case.buses.len() };
    let base = case.base_mva;
    let mut a = DMatrix::zeros(layout.n_rows(), layout.n_vars());

    let mut ends = Vec::with_capacity(layout.n_line);
    let mut alpha = Vec::with_capacity(layout.n_line);
    for (l, br) in case.branches.iter().enumerate() {
        let (i, j) = (index[&br.from], index[&br.to]);
        let (lo, hi) = (i.min(j), i.max(j));
        ends.push((lo, hi));
        a[(layout.balance_row(lo), layout.line(l))] += 1.0;
        a[(layout.balance_row(hi), layout.line(l))] -= 1.0;

        let row = layout.n_bus + l;
        let susceptance = br.susceptance();
        a[(row, layout.line(l))] = 1.0;
        a[(row, layout.angle(lo))] = -susceptance;
        a[(row, layout.angle(hi))] = susceptance;

        let rating = if br.rate_a > 0.0 { br.rate_a } else { opts.unlimited_rating } / base;
        alpha.push(match opts.alpha_rule {
            AlphaRule::Square => rating * rating,
            AlphaRule::InverseSquare => 1.0 / (rating * rating),
        });
    }
    for (g, gen) in case.gens.iter().enumerate() {
        a[(layout.balance_row(index[&gen.bus]), layout.gen(g))] -= 1.0;
    }
    let reference = case.reference_bus().expect("validated case has a reference bus");
    a[(layout.n_rows() - 1, layout.angle(reference))] = 1.0;

    let costs = case.gencosts.iter().map(|c| (c.a * base * base, c.b * base)).collect();
    let demand_mw = DVector::from_iterator(layout.n_bus, case.buses.iter().map(|b| b.pd));
    let load_buses = (0..layout.n_bus).filter(|&i| demand_mw[i] != 0.0).collect();
    let constraints = AffineConstraintSet::build(a)?;

    let mut problem = PenalizedOpfProblem {
        layout,
        costs,
        alpha,
        ends,
        base_mva: base,
        demand_mw,
        load_buses,
        demand_variance: opts.demand_variance,
        constraints,
        rhs: DVector::zeros(layout.n_rows()),
        round: 1,
    };
    problem.rebuild_rhs();
    Ok(problem)
}

impl PenalizedOpfProblem {
    fn rebuild_rhs(&mut self) {
        for b in 0..self.layout.n_bus {
            self.rhs[self.layout.balance_row(b)] = -self.demand_mw[b] / self.base_mva;
        }
    }

    pub fn layout(&self) -> OpfLayout {
        self.layout
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Line endpoints as bus positions (lower first).
    pub fn line_ends(&self) -> &[(usize, usize)] {
        &self.ends
    }

    pub fn demand_mw(&self) -> &DVector<f64> {
        &self.demand_mw
    }

    /// Bus positions whose demand evolves over time.
    pub fn load_buses(&self) -> &[usize] {
        &self.load_buses
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    /// `d_{t+1} = d_t + N(0, variance/t)` on every load bus; returns the new `b`.
    pub fn advance_demand(&mut self, rng: &mut SimRng) -> &DVector<f64> {
        let sd = (self.demand_variance / self.round as f64).sqrt();
        if sd > 0.0 {
            let normal = Normal::new(0.0, sd).expect("finite standard deviation");
            for &i in &self.load_buses {
                self.demand_mw[i] += normal.sample(rng);
            }
        }
        self.round += 1;
        self.rebuild_rhs();
        &self.rhs
    }
}

pub fn opf_advance_demand<'a>(p: &'a mut PenalizedOpfProblem, rng: &mut SimRng) -> &'a DVector<f64> {
    p.advance_demand(rng)
}

impl OnlineObjective for PenalizedOpfProblem {
    fn dim(&self) -> usize {
        self.layout.n_vars()
    }

    fn round(&self) -> usize {
        self.round
    }

    fn evaluate(&self, x: &DVector<f64>) -> Result<ObjectiveEval> {
        let n = self.dim();
        if x.len() != n {
            return Err(invalid(format!("expected x in R^{n}, got {}", x.len())));
        }
        let mut value = 0.0;
        let mut gradient = DVector::zeros(n);
        let mut hessian = DMatrix::zeros(n, n);
        for (g, &(a, b)) in self.costs.iter().enumerate() {
            let k = self.layout.gen(g);
            let p = x[k];
            value += a * p * p + b * p;
            gradient[k] = 2.0 * a * p + b;
            hessian[(k, k)] = 2.0 * a;
        }
        for (l, &alpha) in self.alpha.iter().enumerate() {
            let k = self.layout.line(l);
            let flow = x[k];
            let exponent = alpha * flow * flow;
            if !(exponent <= EXP_LIMIT) {
                return Err(Error::Saturation { line: l, exponent, limit: EXP_LIMIT });
            }
            let e = exponent.exp();
            value += e;
            gradient[k] = 2.0 * alpha * flow * e;
            hessian[(k, k)] = (2.0 * alpha + 4.0 * alpha * alpha * flow * flow) * e;
        }
        Ok(ObjectiveEval { value, gradient, hessian })
    }

    fn advance(&mut self, rng: &mut SimRng) {
        self.advance_demand(rng);
    }
}

impl EqualityConstrained for PenalizedOpfProblem {
    fn constraints(&self) -> &AffineConstraintSet {
        &self.constraints
    }

    fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }
}
