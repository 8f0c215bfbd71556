//! Experiment configuration: built-in defaults, overridden by a TOML file,
//! overridden in turn by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use osnr_core::problems::AlphaRule;
use osnr_core::Algorithm;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    /// Range-based tracking of a moving target.
    Track,
    /// Penalized DC optimal power flow with random demand.
    Opf,
    /// Quadratic root-finding with a controlled contraction constant.
    RootDemo,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Track => "track",
            Experiment::Opf => "opf",
            Experiment::RootDemo => "root-demo",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "track" => Ok(Experiment::Track),
            "opf" => Ok(Experiment::Opf),
            "root-demo" | "root_demo" => Ok(Experiment::RootDemo),
            other => Err(BenchError::Config(format!(
                "unknown experiment {other:?} (expected track, opf or root-demo)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Decision dimension (track, root-demo).
    pub n: usize,
    /// Number of sensors (track).
    pub m: usize,
    /// MATPOWER case file (opf).
    pub case: Option<PathBuf>,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub algorithms: Vec<Algorithm>,
    /// Sketch percentages applied to every sketched algorithm.
    pub rho: Vec<f64>,
    pub runs: usize,
    pub base_seed: u64,
    /// Step size for `ogd`; `1/(15√T)` when absent.
    pub eta: Option<f64>,
    pub alpha_rule: AlphaRule,
    pub out: PathBuf,
    pub record_decisions: bool,
    /// Maximum concurrent runs; 0 uses every core.
    pub jobs: usize,
    /// Time sketched steps at n = m = 800 and report the result in the manifest.
    pub cost_probe: bool,
    /// Root drift scale (root-demo); 0 keeps the field static.
    pub drift: f64,
    /// Condition number of the root-demo matrix.
    pub condition: f64,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let base = ExperimentConfig {
            experiment,
            n: 20,
            m: 18,
            case: None,
            horizon: 1000,
            algorithms: vec![Algorithm::Osnr, Algorithm::Ogd],
            rho: vec![0.05, 0.25, 1.0],
            runs: 20,
            base_seed: 0,
            eta: None,
            alpha_rule: AlphaRule::Square,
            out: PathBuf::from("results").join(experiment.as_str()),
            record_decisions: false,
            jobs: 0,
            cost_probe: false,
            drift: 0.0,
            condition: 10.0,
        };
        match experiment {
            Experiment::Track => base,
            Experiment::Opf => ExperimentConfig {
                case: Some(PathBuf::from("fixtures/case9.m")),
                horizon: 200,
                runs: 50,
                algorithms: vec![Algorithm::OsnrEc],
                ..base
            },
            Experiment::RootDemo => ExperimentConfig {
                n: 12,
                m: 12,
                horizon: 200,
                runs: 50,
                algorithms: vec![Algorithm::Osnr],
                rho: vec![0.1, 0.5, 1.0],
                ..base
            },
        }
    }

    /// Defaults for the patch's experiment (track if unset), then the patch.
    pub fn from_patch(patch: &ConfigPatch) -> Result<Self> {
        let mut cfg = ExperimentConfig::defaults(patch.experiment.unwrap_or(Experiment::Track));
        patch.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(BenchError::Config(msg));
        if self.horizon == 0 {
            return fail("T must be at least 1".into());
        }
        if self.runs == 0 {
            return fail("runs must be at least 1".into());
        }
        if self.algorithms.is_empty() {
            return fail("at least one algorithm is required".into());
        }
        if let Some(rho) = self.rho.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return fail(format!("rho = {rho} must lie in (0, 1]"));
        }
        let sketched = self.algorithms.iter().any(|a| matches!(a, Algorithm::Osnr | Algorithm::OsnrEc));
        if sketched && self.rho.is_empty() {
            return fail("sketched algorithms need at least one rho".into());
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return fail(format!("eta = {eta} must be positive"));
            }
        }
        match self.experiment {
            Experiment::Opf => {
                if self.case.is_none() {
                    return fail("the opf experiment needs a case file".into());
                }
                if let Some(a) = self.algorithms.iter().find(|a| !matches!(a, Algorithm::OsnrEc | Algorithm::Onm)) {
                    return fail(format!("{a} is not available for the constrained opf experiment"));
                }
            }
            Experiment::Track | Experiment::RootDemo => {
                if self.algorithms.contains(&Algorithm::OsnrEc) {
                    return fail(format!("osnr_ec needs constraints; {} has none", self.experiment));
                }
                if self.n == 0 || (self.experiment == Experiment::Track && self.m == 0) {
                    return fail("dimensions must be at least 1".into());
                }
            }
        }
        if self.experiment == Experiment::RootDemo && !(self.condition >= 1.0 && self.drift >= 0.0) {
            return fail("root-demo needs condition >= 1 and drift >= 0".into());
        }
        Ok(())
    }

    /// Every (algorithm, ρ) combination, in output order.
    pub fn variants(&self) -> Vec<Variant> {
        let mut out = Vec::new();
        for &algorithm in &self.algorithms {
            match algorithm {
                Algorithm::Osnr | Algorithm::OsnrEc => {
                    out.extend(self.rho.iter().map(|&rho| Variant { algorithm, rho: Some(rho) }));
                }
                Algorithm::Onm | Algorithm::Ogd => out.push(Variant { algorithm, rho: None }),
            }
        }
        out
    }

    /// Output dimension of the root-finding experiments.
    pub fn output_dim(&self) -> usize {
        match self.experiment {
            Experiment::RootDemo => self.n,
            _ => self.m,
        }
    }
}

/// An algorithm with its sketch percentage, if it has one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub algorithm: Algorithm,
    pub rho: Option<f64>,
}

impl Variant {
    /// File-name stem, e.g. `osnr_rho0.25` or `ogd`.
    pub fn label(&self) -> String {
        match self.rho {
            Some(rho) => format!("{}_rho{rho}", self.algorithm),
            None => self.algorithm.to_string(),
        }
    }

    pub fn rho_field(&self) -> String {
        match (self.rho, self.algorithm) {
            (Some(rho), _) => rho.to_string(),
            (None, Algorithm::Onm) => "1".into(),
            (None, _) => String::new(),
        }
    }
}

/// A partial configuration, as read from a file or from flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigPatch {
    pub experiment: Option<Experiment>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub case: Option<PathBuf>,
    #[serde(rename = "T", alias = "horizon")]
    pub horizon: Option<usize>,
    pub algorithms: Option<Vec<Algorithm>>,
    pub rho: Option<Vec<f64>>,
    pub runs: Option<usize>,
    #[serde(alias = "base_seed")]
    pub seed: Option<u64>,
    pub eta: Option<f64>,
    pub alpha_rule: Option<AlphaRule>,
    pub out: Option<PathBuf>,
    pub record_decisions: Option<bool>,
    pub jobs: Option<usize>,
    pub cost_probe: Option<bool>,
    pub drift: Option<f64>,
    pub condition: Option<f64>,
}

impl ConfigPatch {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| BenchError::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut patch = ConfigPatch::from_toml(&text)?;
        // relative case paths are taken from the config file's directory
        if let (Some(case), Some(dir)) = (&patch.case, path.parent()) {
            if case.is_relative() && !case.exists() && dir.join(case).exists() {
                patch.case = Some(dir.join(case));
            }
        }
        Ok(patch)
    }

    /// Values set in `other` win.
    pub fn merge(mut self, other: ConfigPatch) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            experiment, n, m, case, horizon, algorithms, rho, runs, seed, eta, alpha_rule, out,
            record_decisions, jobs, cost_probe, drift, condition
        );
        self
    }

    fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! set {
            ($($f:ident => $g:ident),*) => { $( if let Some(v) = &self.$f { cfg.$g = v.clone(); } )* };
        }
        set!(
            n => n, m => m, horizon => horizon, algorithms => algorithms, rho => rho, runs => runs,
            seed => base_seed, alpha_rule => alpha_rule, out => out, record_decisions => record_decisions,
            jobs => jobs, cost_probe => cost_probe, drift => drift, condition => condition
        );
        if self.case.is_some() {
            cfg.case = self.case.clone();
        }
        if self.eta.is_some() {
            cfg.eta = self.eta;
        }
        if cfg.experiment == Experiment::RootDemo {
            cfg.m = cfg.n;
        }
    }
}
