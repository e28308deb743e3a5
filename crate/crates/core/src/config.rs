//! Run configuration, read from TOML.
//!
//! ```toml
//! output_dir = "riskpath-out"
//!
//! [problem]
//! n_interior = 127
//! tikhonov = 1e-3
//! lower = -50.0          # scalar or one value per interior node
//! upper = 50.0
//! target = { kind = "sine", amplitude = 1.0 }
//!
//! [constraint]
//! kind = "mixed"         # mixed | volume | gradient
//! epsilon = 0.01
//!
//! [scenarios]
//! n_scenarios = 16
//! seed = 20240607
//! a0 = 1.0
//! sigma = [0.3, 0.15, 0.05]
//! a_min = 0.2
//! bound_noise = 0.02
//! bound_spec = { kind = "constant", value = 0.3 }
//!
//! [risk]
//! kind = "expectation"   # expectation | avar | smoothed-avar
//!
//! [solver]
//! tol_stationarity = 1e-8
//!
//! [path]
//! gammas = [1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6]
//! ```
//!
//! Every section except `[problem]` has defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cone::{ConstraintKind, ConstraintMap};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::objective::{ProblemData, ProblemParts};
use crate::path::{GammaSchedule, PathOptions};
use crate::risk::RiskMeasure;
use crate::scenario::{sample, BoundSpec, ScenarioConfig};
use crate::solver::SolveOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    Constant {
        value: f64,
    },
    /// `amplitude * sin(frequency * pi * s)`.
    Sine {
        amplitude: f64,
        #[serde(default = "one")]
        frequency: f64,
    },
    Values {
        values: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

/// A scalar applied at every node, or explicit nodal values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodalValue {
    Scalar(f64),
    Values(Vec<f64>),
}

impl NodalValue {
    fn resolve(&self, name: &str, n: usize) -> Result<GridFunction> {
        let v = match self {
            NodalValue::Scalar(c) => vec![*c; n],
            NodalValue::Values(v) => {
                if v.len() != n {
                    return Err(Error::invalid(name, format!("expected {n} values, found {}", v.len())));
                }
                v.clone()
            }
        };
        if v.iter().any(|x| x.is_nan()) {
            return Err(Error::invalid(name, "contains NaN"));
        }
        Ok(v.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub n_interior: usize,
    pub tikhonov: f64,
    pub target: TargetSpec,
    pub lower: NodalValue,
    pub upper: NodalValue,
    #[serde(default = "zero_value")]
    pub initial_control: NodalValue,
    #[serde(default = "default_tol_feas")]
    pub tol_feas: f64,
}

fn zero_value() -> NodalValue {
    NodalValue::Scalar(0.0)
}

fn default_tol_feas() -> f64 {
    1e-9
}

/// How the feasible reference control for the sandwich check is built: the
/// given base control is scaled toward zero until it is feasible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// Base is the control at the last path point.
    ScaledPathEnd,
    /// Base is the given control.
    ScaledControl { control: NodalValue },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    pub gammas: Vec<f64>,
    pub warm_start: bool,
    pub bound_factor: f64,
    pub concentration_q: f64,
    pub feasible_reference: Option<ReferenceSpec>,
}

impl Default for PathSection {
    fn default() -> Self {
        PathSection {
            gammas: GammaSchedule::default().values().to_vec(),
            warm_start: true,
            bound_factor: 10.0,
            concentration_q: crate::kkt::DEFAULT_CONCENTRATION_Q,
            feasible_reference: Some(ReferenceSpec::ScaledPathEnd),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub problem: ProblemSection,
    #[serde(default = "default_constraint")]
    pub constraint: ConstraintMap,
    #[serde(default = "default_scenarios")]
    pub scenarios: ScenarioConfig,
    #[serde(default = "default_risk")]
    pub risk: RiskMeasure,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub path: PathSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("riskpath-out")
}

fn default_constraint() -> ConstraintMap {
    ConstraintMap {
        kind: ConstraintKind::Mixed,
        epsilon: 0.01,
        delta: 1e-8,
    }
}

fn default_scenarios() -> ScenarioConfig {
    ScenarioConfig {
        n_scenarios: 16,
        seed: 20240607,
        a0: 1.0,
        sigma: vec![0.3, 0.15, 0.05],
        a_min: 0.2,
        bound_spec: BoundSpec::Constant { value: 0.3 },
        bound_noise: 0.02,
    }
}

fn default_risk() -> RiskMeasure {
    RiskMeasure::Expectation
}

impl RunConfig {
    /// The reference fixture: 127 interior nodes, 16 scenarios, a mixed
    /// constraint that is active in the middle of the domain, expectation risk.
    pub fn default_fixture() -> Self {
        RunConfig {
            output_dir: default_output_dir(),
            problem: ProblemSection {
                n_interior: 127,
                tikhonov: 1e-3,
                target: TargetSpec::Sine {
                    amplitude: 1.0,
                    frequency: 1.0,
                },
                lower: NodalValue::Scalar(-50.0),
                upper: NodalValue::Scalar(50.0),
                initial_control: zero_value(),
                tol_feas: default_tol_feas(),
            },
            constraint: default_constraint(),
            scenarios: default_scenarios(),
            risk: default_risk(),
            solver: SolveOptions::default(),
            path: PathSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file. A relative scenario bound file is
    /// resolved against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        if let BoundSpec::PerScenarioFile { path: file } = &mut cfg.scenarios.bound_spec {
            if file.is_relative() {
                if let Some(dir) = path.parent() {
                    *file = dir.join(&*file);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every precondition that does not need the scenario draw.
    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        Grid::new(p.n_interior).map_err(|_| Error::invalid("problem.n_interior", "must be positive"))?;
        if !(p.tikhonov > 0.0) || !p.tikhonov.is_finite() {
            return Err(Error::invalid("problem.tikhonov", "must be strictly positive"));
        }
        if !(p.tol_feas >= 0.0) {
            return Err(Error::invalid("problem.tol_feas", "must be nonnegative"));
        }
        let lower = p.lower.resolve("problem.lower", p.n_interior)?;
        let upper = p.upper.resolve("problem.upper", p.n_interior)?;
        if let Some(j) = (0..p.n_interior).find(|&j| !(lower[j] <= upper[j])) {
            return Err(Error::invalid(
                "problem.upper",
                format!("lower > upper at node {j}: control set is empty"),
            ));
        }
        p.initial_control.resolve("problem.initial_control", p.n_interior)?;
        self.target()?;
        self.constraint.validate()?;
        self.scenarios.validate()?;
        self.risk.validate()?;
        self.solver.validate()?;
        GammaSchedule::new(self.path.gammas.clone())?;
        if !(self.path.bound_factor > 1.0) {
            return Err(Error::invalid("path.bound_factor", "must exceed 1"));
        }
        if !(self.path.concentration_q > 0.0 && self.path.concentration_q < 1.0) {
            return Err(Error::invalid("path.concentration_q", "must lie in (0, 1)"));
        }
        if let Some(ReferenceSpec::ScaledControl { control }) = &self.path.feasible_reference {
            control.resolve("path.feasible_reference.control", p.n_interior)?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.problem.n_interior)
    }

    pub fn target(&self) -> Result<GridFunction> {
        let grid = self.grid()?;
        let pi = std::f64::consts::PI;
        let t = match &self.problem.target {
            TargetSpec::Constant { value } => grid.sample(|_| *value),
            TargetSpec::Sine { amplitude, frequency } => grid.sample(|s| amplitude * (frequency * pi * s).sin()),
            TargetSpec::Values { values } => NodalValue::Values(values.clone()).resolve("problem.target.values", grid.n_interior())?,
        };
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("problem.target", "must be finite"));
        }
        Ok(t)
    }

    pub fn initial_control(&self) -> Result<GridFunction> {
        self.problem
            .initial_control
            .resolve("problem.initial_control", self.problem.n_interior)
    }

    pub fn schedule(&self) -> Result<GammaSchedule> {
        GammaSchedule::new(self.path.gammas.clone())
    }

    pub fn path_options(&self) -> PathOptions {
        PathOptions {
            solve: self.solver.clone(),
            warm_start: self.path.warm_start,
            concentration_q: self.path.concentration_q,
        }
    }

    /// Draws the scenarios and assembles the problem.
    pub fn build_problem(&self) -> Result<ProblemData> {
        self.validate()?;
        let grid = self.grid()?;
        let scenarios = sample(&self.scenarios, &grid, self.constraint.kind.bound_layout())?;
        ProblemData::new(ProblemParts {
            grid,
            scenarios,
            constraint: self.constraint,
            risk: self.risk,
            target: self.target()?,
            tikhonov: self.problem.tikhonov,
            lower: self.problem.lower.resolve("problem.lower", grid.n_interior())?,
            upper: self.problem.upper.resolve("problem.upper", grid.n_interior())?,
            tol_feas: self.problem.tol_feas,
        })
    }

    /// The resolved config as JSON without the output location, which does
    /// not affect results.
    pub fn canonical_value(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config is serializable");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        v
    }

    /// Compact form of [`RunConfig::canonical_value`]; field order is fixed.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.canonical_value()).expect("config is serializable")
    }

    /// SHA-256 of [`RunConfig::canonical_json`], hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
