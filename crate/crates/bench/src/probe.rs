//! Per-step cost of sketched steps on a dense synthetic system.

use nalgebra::{DMatrix, DVector};
use osnr_core::{rng, sample_sketch, snr_step, SketchSize, StepOptions};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

const COST_PROBE: &str = "cost-probe";
pub const LOW_RHO: f64 = 0.1;
pub const HIGH_RHO: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostProbe {
    pub n: usize,
    pub m: usize,
    pub steps: usize,
    pub low_rho: f64,
    pub low_tau: usize,
    pub low_mean_seconds: f64,
    pub high_rho: f64,
    pub high_tau: usize,
    pub high_mean_seconds: f64,
    /// `low_mean_seconds / high_mean_seconds`.
    pub ratio: f64,
}

/// Mean wall time of `steps` sketched steps at `ρ = 0.1` and `ρ = 1` on a
/// Gaussian `n × n` Jacobian, with a fresh sketch per step.
pub fn cost_probe(n: usize, steps: usize, seed: u64) -> Result<CostProbe> {
    if n == 0 || steps == 0 {
        return Err(BenchError::InvalidArgument("cost probe needs n >= 1 and steps >= 1".into()));
    }
    let mut rng = rng::stream(seed, COST_PROBE);
    let jac_t = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let f = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let opts = StepOptions::default();
    let mut time = |rho: f64| -> Result<(usize, f64)> {
        let tau = SketchSize::Fraction(rho).resolve(n)?;
        let mut total = 0.0;
        for _ in 0..steps {
            let sel = sample_sketch(n, tau, &mut rng)?;
            total += snr_step(&f, &jac_t, &sel, &opts)?.elapsed;
        }
        Ok((tau, total / steps as f64))
    };
    let (low_tau, low) = time(LOW_RHO)?;
    let (high_tau, high) = time(HIGH_RHO)?;
    Ok(CostProbe {
        n,
        m: n,
        steps,
        low_rho: LOW_RHO,
        low_tau,
        low_mean_seconds: low,
        high_rho: HIGH_RHO,
        high_tau,
        high_mean_seconds: high,
        ratio: low / high,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_probe_reports_both_sizes() {
        let p = cost_probe(60, 3, 1).unwrap();
        assert_eq!((p.low_tau, p.high_tau), (6, 60));
        assert!(p.low_mean_seconds > 0.0 && p.high_mean_seconds > 0.0);
        assert!(cost_probe(0, 3, 1).is_err());
    }
}
