//! Penalized reduced objective and its adjoint-based gradient.
//!
//! For a control `x1` and every scenario `k` the state solves
//! `e(x1, x2) = h A_k x2 - h x1 = 0`, i.e. `e_x2 = h A_k` (lumped-mass times
//! the stencil) and `e_x1 = -h I`. The objective is
//!
//! ```text
//! j_gamma(x1) = mu/2 |x1|_h^2 + R[ 1/2 |x2_k - y_D|_h^2 ] + E[ gamma/2 |max(0, i_k)|_H^2 ]
//! ```
//!
//! and the reduced gradient `g = eta + E[rho]` is assembled from the adjoint
//! states `lambda_e` solving `e_x2^* lambda_e = -(theta zeta2 + i_x2^* lambda_i)`
//! and `rho = theta zeta1 + e_x1^* lambda_e + i_x1^* lambda_i`. Gradients and
//! other dual quantities are Euclidean vectors (`<g, v> = sum g_j v_j`); the
//! `L^2` Riesz representative is `g / h`.

use rayon::prelude::*;

use crate::cone::{self, ConeSpec, ConstraintMap};
use crate::error::{check_len, Error, Result};
use crate::grid::{EllipticOperator, Grid, GridFunction};
use crate::risk::RiskMeasure;
use crate::scenario::ScenarioSet;

/// Deliberate defects used by the verification harness to prove that its
/// checks can fail.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FaultInjection {
    #[default]
    None,
    FlipAdjointSign,
}

/// Inputs to [`ProblemData::new`].
#[derive(Debug, Clone)]
pub struct ProblemParts {
    pub grid: Grid,
    pub scenarios: ScenarioSet,
    pub constraint: ConstraintMap,
    pub risk: RiskMeasure,
    pub target: GridFunction,
    pub tikhonov: f64,
    pub lower: GridFunction,
    pub upper: GridFunction,
    pub tol_feas: f64,
}

/// A validated problem instance with per-scenario operators assembled.
#[derive(Debug, Clone)]
pub struct ProblemData {
    grid: Grid,
    scenarios: ScenarioSet,
    operators: Vec<EllipticOperator>,
    constraint: ConstraintMap,
    cone: ConeSpec,
    risk: RiskMeasure,
    target: GridFunction,
    tikhonov: f64,
    lower: GridFunction,
    upper: GridFunction,
    tol_feas: f64,
    fault: FaultInjection,
}

impl ProblemData {
    pub fn new(parts: ProblemParts) -> Result<Self> {
        let ProblemParts {
            grid,
            scenarios,
            constraint,
            risk,
            target,
            tikhonov,
            lower,
            upper,
            tol_feas,
        } = parts;
        let n = grid.n_interior();
        check_len("target", n, target.len())?;
        check_len("lower bound", n, lower.len())?;
        check_len("upper bound", n, upper.len())?;
        if !(tikhonov > 0.0) || !tikhonov.is_finite() {
            return Err(Error::invalid("problem.tikhonov", "must be strictly positive"));
        }
        if let Some(j) = (0..n).find(|&j| !(lower[j] <= upper[j])) {
            return Err(Error::invalid(
                "problem.control_bounds",
                format!("lower > upper at node {j}: control set is empty"),
            ));
        }
        if !(tol_feas >= 0.0) {
            return Err(Error::invalid("problem.tol_feas", "must be nonnegative"));
        }
        constraint.validate()?;
        risk.validate()?;
        let layout_len = constraint.value_len(&grid);
        for k in 0..scenarios.len() {
            check_len("scenario bound", layout_len, scenarios.bound(k).len())?;
        }
        let operators = (0..scenarios.len())
            .map(|k| EllipticOperator::assemble(&grid, scenarios.conductivity(k)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProblemData {
            cone: constraint.cone(&grid),
            grid,
            scenarios,
            operators,
            constraint,
            risk,
            target,
            tikhonov,
            lower,
            upper,
            tol_feas,
            fault: FaultInjection::None,
        })
    }

    #[doc(hidden)]
    pub fn with_fault(mut self, fault: FaultInjection) -> Self {
        self.fault = fault;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn scenarios(&self) -> &ScenarioSet {
        &self.scenarios
    }

    pub fn operator(&self, k: usize) -> &EllipticOperator {
        &self.operators[k]
    }

    pub fn constraint(&self) -> &ConstraintMap {
        &self.constraint
    }

    pub fn cone(&self) -> &ConeSpec {
        &self.cone
    }

    pub fn risk(&self) -> &RiskMeasure {
        &self.risk
    }

    pub fn target(&self) -> &GridFunction {
        &self.target
    }

    pub fn tikhonov(&self) -> f64 {
        self.tikhonov
    }

    pub fn lower(&self) -> &GridFunction {
        &self.lower
    }

    pub fn upper(&self) -> &GridFunction {
        &self.upper
    }

    pub fn tol_feas(&self) -> f64 {
        self.tol_feas
    }

    /// Replaces the risk measure, keeping everything else.
    pub fn with_risk(mut self, risk: RiskMeasure) -> Result<Self> {
        risk.validate()?;
        self.risk = risk;
        Ok(self)
    }

    /// Projection onto the control box.
    pub fn clamp(&self, x: &[f64]) -> GridFunction {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .map(|(v, (lo, hi))| v.max(*lo).min(*hi))
            .collect::<Vec<_>>()
            .into()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    /// `x2_k = A_k^{-1} x1`.
    pub fn solve_state(&self, k: usize, x1: &[f64]) -> Result<GridFunction> {
        self.operators[k].solve_state(x1)
    }

    /// `e(x1, x2; k) = h A_k x2 - h x1`.
    pub fn state_equation_residual(&self, k: usize, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
        let h = self.grid.h();
        let ax = self.operators[k].apply(x2)?;
        Ok(ax.iter().zip(x1).map(|(a, u)| h * a - h * u).collect())
    }

    /// `e_x2^* v = h A_k v` (the stencil is symmetric).
    pub fn apply_state_adjoint(&self, k: usize, v: &[f64]) -> Result<Vec<f64>> {
        let h = self.grid.h();
        Ok(self.operators[k].apply(v)?.iter().map(|a| h * a).collect())
    }

    /// `e_x1^* v = -h v`.
    pub fn apply_control_adjoint(&self, v: &[f64]) -> Vec<f64> {
        let h = self.grid.h();
        v.iter().map(|x| -h * x).collect()
    }

    fn check_control(&self, x1: &[f64]) -> Result<()> {
        check_len("control", self.grid.n_interior(), x1.len())?;
        if x1.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("control", "contains non-finite values"));
        }
        Ok(())
    }

    fn tracking(&self, x2: &[f64]) -> f64 {
        let h = self.grid.h();
        0.5 * h
            * x2.iter()
                .zip(self.target.iter())
                .map(|(y, d)| (y - d).powi(2))
                .sum::<f64>()
    }

    fn tikhonov_value(&self, x1: &[f64]) -> f64 {
        0.5 * self.tikhonov * self.grid.h() * x1.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Per-scenario pieces of an evaluation.
#[derive(Debug, Clone)]
pub struct ScenarioEval {
    pub state: GridFunction,
    /// `J2 = 1/2 |x2 - y_D|_h^2`.
    pub cost: f64,
    /// Constraint value `i(x1, x2)`.
    pub constraint: Vec<f64>,
    /// `max(0, i)`.
    pub residual: Vec<f64>,
    /// `gamma/2 |max(0, i)|_H^2`.
    pub penalty: f64,
    /// `lambda_i = gamma max(0, i)`.
    pub multiplier: Vec<f64>,
    /// Adjoint state `lambda_e`.
    pub adjoint: GridFunction,
    /// `zeta2 = h (x2 - y_D)`; `zeta1` is identically zero.
    pub zeta2: Vec<f64>,
    /// `rho = theta zeta1 + e_x1^* lambda_e + i_x1^* lambda_i`.
    pub rho: Vec<f64>,
}

/// Everything computed at one `(gamma, x1)`.
#[derive(Debug, Clone)]
pub struct EvalBundle {
    pub gamma: f64,
    pub control: GridFunction,
    pub scenarios: Vec<ScenarioEval>,
    pub j1: f64,
    pub risk_value: f64,
    /// `E[beta_gamma(-i)]`.
    pub penalty_term: f64,
    pub j_gamma: f64,
    pub theta: Vec<f64>,
    /// `eta = mu h x1`.
    pub eta: Vec<f64>,
    /// `E[rho]`.
    pub mean_rho: Vec<f64>,
    /// Reduced gradient `eta + E[rho]`, a Euclidean dual vector.
    pub gradient: Vec<f64>,
}

impl EvalBundle {
    /// `L^2` representative of the gradient, `g / h`.
    pub fn riesz_gradient(&self, grid: &Grid) -> Vec<f64> {
        let h = grid.h();
        self.gradient.iter().map(|g| g / h).collect()
    }
}

struct Primal {
    state: GridFunction,
    cost: f64,
    constraint: Vec<f64>,
    residual: Vec<f64>,
    penalty: f64,
    multiplier: Vec<f64>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("gamma", format!("must be positive and finite, got {gamma}")))
    }
}

fn primal(data: &ProblemData, gamma: f64, k: usize, x1: &[f64]) -> Result<Primal> {
    let state = data.solve_state(k, x1)?;
    let cost = data.tracking(&state);
    let i = cone::constraint_eval(
        &data.constraint,
        &data.grid,
        x1,
        &state,
        data.scenarios.bound(k),
    )?;
    let pv = cone::penalty(&data.cone, gamma, &i)?;
    let multiplier = cone::penalty_multiplier(&data.cone, gamma, &i)?;
    Ok(Primal {
        state,
        cost,
        constraint: i,
        residual: pv.residual,
        penalty: pv.value,
        multiplier,
    })
}

fn primal_all(data: &ProblemData, gamma: f64, x1: &[f64]) -> Result<Vec<Primal>> {
    (0..data.scenarios.len())
        .into_par_iter()
        .map(|k| primal(data, gamma, k, x1))
        .collect()
}

fn weighted_sum(weights: &[f64], values: impl Iterator<Item = f64>) -> f64 {
    weights.iter().zip(values).map(|(p, v)| p * v).sum()
}

/// Full evaluation: states, costs, penalty, multipliers, adjoints and the
/// reduced gradient.
pub fn evaluate(data: &ProblemData, gamma: f64, x1: &[f64]) -> Result<EvalBundle> {
    check_gamma(gamma)?;
    data.check_control(x1)?;
    let weights = data.scenarios.weights();
    let primals = primal_all(data, gamma, x1)?;
    let costs: Vec<f64> = primals.iter().map(|p| p.cost).collect();
    let risk_value = data.risk.evaluate(&costs, weights)?;
    let theta = data.risk.subgradient(&costs, weights)?.theta;
    let penalty_term = weighted_sum(weights, primals.iter().map(|p| p.penalty));
    let j1 = data.tikhonov_value(x1);
    let h = data.grid.h();
    let adjoint_sign = match data.fault {
        FaultInjection::None => 1.0,
        FaultInjection::FlipAdjointSign => -1.0,
    };

    let scenarios: Vec<ScenarioEval> = primals
        .into_par_iter()
        .enumerate()
        .map(|(k, p)| -> Result<ScenarioEval> {
            let zeta2: Vec<f64> = p
                .state
                .iter()
                .zip(data.target.iter())
                .map(|(y, d)| h * (y - d))
                .collect();
            let (a1, a2) = cone::constraint_adjoints(
                &data.constraint,
                &data.grid,
                x1,
                &p.state,
                data.scenarios.bound(k),
                &p.multiplier,
            )?;
            // h A lambda_e = -(theta zeta2 + a2)
            let rhs: Vec<f64> = zeta2
                .iter()
                .zip(&a2)
                .map(|(z, a)| -(theta[k] * z + a) / h)
                .collect();
            let mut adjoint = data.operators[k].apply_adjoint_solve(&rhs)?;
            adjoint.iter_mut().for_each(|v| *v *= adjoint_sign);
            let rho: Vec<f64> = data
                .apply_control_adjoint(&adjoint)
                .iter()
                .zip(&a1)
                .map(|(e, a)| e + a)
                .collect();
            Ok(ScenarioEval {
                state: p.state,
                cost: p.cost,
                constraint: p.constraint,
                residual: p.residual,
                penalty: p.penalty,
                multiplier: p.multiplier,
                adjoint,
                zeta2,
                rho,
            })
        })
        .collect::<Result<_>>()?;

    let n = data.grid.n_interior();
    let mut mean_rho = vec![0.0; n];
    for (s, p) in scenarios.iter().zip(weights) {
        for (m, r) in mean_rho.iter_mut().zip(&s.rho) {
            *m += p * r;
        }
    }
    let eta: Vec<f64> = x1.iter().map(|v| data.tikhonov * h * v).collect();
    let gradient = eta.iter().zip(&mean_rho).map(|(e, r)| e + r).collect();

    Ok(EvalBundle {
        gamma,
        control: x1.to_vec().into(),
        scenarios,
        j1,
        risk_value,
        penalty_term,
        j_gamma: j1 + risk_value + penalty_term,
        theta,
        eta,
        mean_rho,
        gradient,
    })
}

/// `j_gamma(x1)` without adjoints.
pub fn objective_only(data: &ProblemData, gamma: f64, x1: &[f64]) -> Result<f64> {
    check_gamma(gamma)?;
    data.check_control(x1)?;
    let weights = data.scenarios.weights();
    let primals = primal_all(data, gamma, x1)?;
    let costs: Vec<f64> = primals.iter().map(|p| p.cost).collect();
    let risk_value = data.risk.evaluate(&costs, weights)?;
    let penalty_term = weighted_sum(weights, primals.iter().map(|p| p.penalty));
    Ok(data.tikhonov_value(x1) + risk_value + penalty_term)
}

/// The unpenalized objective with a feasibility verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unpenalized {
    pub j: f64,
    pub feasible: bool,
    /// `max(0, max_{k, j} i_k(j))`.
    pub max_violation: f64,
}

pub fn unpenalized_objective(data: &ProblemData, x1: &[f64]) -> Result<Unpenalized> {
    data.check_control(x1)?;
    let weights = data.scenarios.weights();
    let primals = primal_all(data, 1.0, x1)?;
    let costs: Vec<f64> = primals.iter().map(|p| p.cost).collect();
    let j = data.tikhonov_value(x1) + data.risk.evaluate(&costs, weights)?;
    let max_i = primals
        .iter()
        .flat_map(|p| p.constraint.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Unpenalized {
        j,
        feasible: max_i <= data.tol_feas,
        max_violation: max_i.max(0.0),
    })
}
