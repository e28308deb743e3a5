//! Residuals of the discrete optimality systems.
//!
//! The penalized system at fixed `gamma` is
//!
//! ```text
//! eta + E[rho] + xi = 0,                          xi in N_C(x1)
//! rho = theta zeta1 + e_x1^* lambda_e + i_x1^* lambda_i
//! theta zeta2 + e_x2^* lambda_e + i_x2^* lambda_i = 0
//! e(x1, x2) = 0
//! lambda_i = gamma max(0, i)
//! ```
//!
//! and [`LimitDiagnostics`] measures the distance of a penalized solution to
//! the limit system (feasibility, dual cone membership, complementarity) along
//! with the size of the multipliers. Dual vectors are measured in the
//! Euclidean norm of their nodal coefficients; spatial sizes of multipliers
//! use the discrete `L^1` norm `sum h |lambda|`.

use serde::{Deserialize, Serialize};

use crate::cone::{self, ConeSpec};
use crate::error::{check_len, Error, Result};
use crate::grid::norm_h;
use crate::objective::{EvalBundle, ProblemData};
use crate::solver::SolveResult;

/// Default mass fraction for [`concentration_index`].
pub const DEFAULT_CONCENTRATION_Q: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaResiduals {
    /// `|x1 - clamp(x1 - g / h)|_h`.
    pub stationarity_x1: f64,
    /// `|(eta + E[rho] + xi) / h|_h`, informative only: nonzero on free nodes
    /// near a bound even at a stationary point of the projected measure.
    pub foc_residual: f64,
    pub adjoint_residual: Vec<f64>,
    pub adjoint_residual_max: f64,
    pub rho_consistency: f64,
    pub state_residual: f64,
    pub multiplier_formula_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitDiagnostics {
    /// `max(0, max_{k, j} i_k(j))`.
    pub primal_feasibility: f64,
    /// `max(0, -min_{k, j} lambda_i)`.
    pub dual_cone_violation: f64,
    /// `|E[(lambda_i, i)_H]|`.
    pub complementarity: f64,
    /// `E[|max(0, i)|_H^2]`.
    pub sq_violation: f64,
    /// `E[|lambda_i|_1]`.
    pub multiplier_l1: f64,
    /// `max_k |lambda_i,k|_1`.
    pub multiplier_l1_max: f64,
    /// `E[|lambda_e|_1]`.
    pub adjoint_l1: f64,
    pub concentration_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub gamma: f64,
    #[serde(flatten)]
    pub residuals: GammaResiduals,
    #[serde(flatten)]
    pub limit: LimitDiagnostics,
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    l2(a.iter().zip(b).map(|(x, y)| x - y))
}

fn check_bundle(data: &ProblemData, bundle: &EvalBundle, xi: &[f64]) -> Result<()> {
    let n = data.grid().n_interior();
    check_len("control", n, bundle.control.len())?;
    check_len("normal cone element", n, xi.len())?;
    check_len("gradient", n, bundle.gradient.len())?;
    check_len("scenario evaluations", data.scenarios().len(), bundle.scenarios.len())?;
    check_len("risk density", data.scenarios().len(), bundle.theta.len())?;
    Ok(())
}

/// Residuals of the penalized optimality system at `bundle`, with `xi` the
/// normal-cone element paired with it.
pub fn check_gamma_system(data: &ProblemData, bundle: &EvalBundle, xi: &[f64]) -> Result<GammaResiduals> {
    check_bundle(data, bundle, xi)?;
    let grid = *data.grid();
    let h = grid.h();
    let x1 = &bundle.control;
    let gamma = bundle.gamma;

    let riesz = bundle.riesz_gradient(&grid);
    let trial: Vec<f64> = x1.iter().zip(&riesz).map(|(a, g)| a - g).collect();
    let proj = data.clamp(&trial);
    let stationarity_x1 = norm_h(&grid, &x1.iter().zip(proj.iter()).map(|(a, b)| a - b).collect::<Vec<_>>())?;

    let foc: Vec<f64> = (0..x1.len())
        .map(|j| (bundle.eta[j] + bundle.mean_rho[j] + xi[j]) / h)
        .collect();
    let foc_residual = norm_h(&grid, &foc)?;

    let mut adjoint_residual = Vec::with_capacity(bundle.scenarios.len());
    let mut rho_consistency: f64 = 0.0;
    let mut state_residual: f64 = 0.0;
    let mut multiplier_formula_residual: f64 = 0.0;
    for (k, s) in bundle.scenarios.iter().enumerate() {
        let e = data.state_equation_residual(k, x1, &s.state)?;
        state_residual = state_residual.max(l2(e.into_iter()));

        let i = cone::constraint_eval(data.constraint(), &grid, x1, &s.state, data.scenarios().bound(k))?;
        let formula: Vec<f64> = i.iter().map(|v| gamma * v.max(0.0)).collect();
        multiplier_formula_residual = multiplier_formula_residual.max(diff_norm(&formula, &s.multiplier));

        let (a1, a2) = cone::constraint_adjoints(
            data.constraint(),
            &grid,
            x1,
            &s.state,
            data.scenarios().bound(k),
            &s.multiplier,
        )?;
        let zeta2: Vec<f64> = s
            .state
            .iter()
            .zip(data.target().iter())
            .map(|(y, d)| h * (y - d))
            .collect();
        let e_star = data.apply_state_adjoint(k, &s.adjoint)?;
        let adj = l2((0..zeta2.len()).map(|j| bundle.theta[k] * zeta2[j] + e_star[j] + a2[j]));
        adjoint_residual.push(adj);

        let rho: Vec<f64> = data
            .apply_control_adjoint(&s.adjoint)
            .iter()
            .zip(&a1)
            .map(|(e, a)| e + a)
            .collect();
        rho_consistency = rho_consistency.max(diff_norm(&rho, &s.rho));
    }
    // E[rho] and eta as stored must assemble the gradient
    let weights = data.scenarios().weights();
    let mean: Vec<f64> = (0..x1.len())
        .map(|j| {
            bundle
                .scenarios
                .iter()
                .zip(weights)
                .map(|(s, p)| p * s.rho[j])
                .sum::<f64>()
        })
        .collect();
    rho_consistency = rho_consistency.max(diff_norm(&mean, &bundle.mean_rho));
    let assembled: Vec<f64> = (0..x1.len())
        .map(|j| data.tikhonov() * h * x1[j] + mean[j])
        .collect();
    rho_consistency = rho_consistency.max(diff_norm(&assembled, &bundle.gradient));

    let adjoint_residual_max = adjoint_residual.iter().copied().fold(0.0, f64::max);
    Ok(GammaResiduals {
        stationarity_x1,
        foc_residual,
        adjoint_residual,
        adjoint_residual_max,
        rho_consistency,
        state_residual,
        multiplier_formula_residual,
    })
}

/// `E[(lambda_i, i)_H]`, signed.
pub fn complementarity_value(cone: &ConeSpec, weights: &[f64], bundle: &EvalBundle) -> f64 {
    bundle
        .scenarios
        .iter()
        .zip(weights)
        .map(|(s, p)| p * cone.inner(&s.multiplier, &s.constraint))
        .sum()
}

/// Fraction of `sum_k p_k m_k` carried by the largest-mass scenarios whose
/// total probability does not exceed `q`.
pub fn concentration_index(masses: &[f64], weights: &[f64], q: f64) -> Result<f64> {
    check_len("scenario weights", masses.len(), weights.len())?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid("q", "must lie in (0, 1)"));
    }
    let weighted: Vec<f64> = masses.iter().zip(weights).map(|(m, p)| p * m).collect();
    let total: f64 = weighted.iter().sum();
    if !(total > 0.0) {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..masses.len()).collect();
    order.sort_by(|&a, &b| weighted[b].total_cmp(&weighted[a]).then(a.cmp(&b)));
    let mut prob = 0.0;
    let mut carried = 0.0;
    for k in order {
        if prob + weights[k] > q + 1e-12 {
            break;
        }
        prob += weights[k];
        carried += weighted[k];
    }
    Ok((carried / total).clamp(0.0, 1.0))
}

/// Distance of a penalized solution to the limit system.
pub fn check_limit_system(data: &ProblemData, bundle: &EvalBundle, q: f64) -> Result<LimitDiagnostics> {
    let cone = data.cone();
    let weights = data.scenarios().weights();
    let mut primal_feasibility: f64 = 0.0;
    let mut min_lambda = f64::INFINITY;
    let mut sq_violation = 0.0;
    let mut multiplier_l1 = 0.0;
    let mut adjoint_l1 = 0.0;
    let mut masses = Vec::with_capacity(bundle.scenarios.len());
    let h = data.grid().h();
    for (s, p) in bundle.scenarios.iter().zip(weights) {
        for &v in &s.constraint {
            primal_feasibility = primal_feasibility.max(v);
        }
        for &l in &s.multiplier {
            min_lambda = min_lambda.min(l);
        }
        let positive: Vec<f64> = s.constraint.iter().map(|v| v.max(0.0)).collect();
        sq_violation += p * cone.norm_sq(&positive);
        let m = cone.norm_l1(&s.multiplier);
        masses.push(m);
        multiplier_l1 += p * m;
        adjoint_l1 += p * h * s.adjoint.iter().map(|v| v.abs()).sum::<f64>();
    }
    Ok(LimitDiagnostics {
        primal_feasibility,
        dual_cone_violation: (-min_lambda).max(0.0),
        complementarity: complementarity_value(cone, weights, bundle).abs(),
        sq_violation,
        multiplier_l1,
        multiplier_l1_max: masses.iter().copied().fold(0.0, f64::max),
        adjoint_l1,
        concentration_index: concentration_index(&masses, weights, q)?,
    })
}

/// Both systems at a solver result.
pub fn kkt_report(data: &ProblemData, result: &SolveResult, q: f64) -> Result<KktReport> {
    Ok(KktReport {
        gamma: result.gamma,
        residuals: check_gamma_system(data, &result.bundle, &result.xi)?,
        limit: check_limit_system(data, &result.bundle, q)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{ConeKind, ConstraintKind};
    use crate::objective::evaluate;
    use crate::objective::tests::small_problem;
    use crate::risk::RiskMeasure;
    use crate::solver::{minimize, SolveOptions};

    #[test]
    fn concentration_examples() {
        let w = vec![0.1; 10];
        let uniform = vec![3.0; 10];
        assert!((concentration_index(&uniform, &w, 0.1).unwrap() - 0.1).abs() < 1e-12);
        let mut single = vec![0.0; 10];
        single[4] = 2.5;
        assert_eq!(concentration_index(&single, &w, 0.1).unwrap(), 1.0);
        assert_eq!(concentration_index(&[0.0; 10], &w, 0.1).unwrap(), 0.0);
        assert!(concentration_index(&uniform, &w, 1.0).is_err());
    }

    #[test]
    fn concentration_matches_subset_search() {
        // brute force over all subsets with probability <= q
        let masses = [0.3, 5.0, 0.0, 2.0, 1.0, 4.0, 0.5];
        let w = [0.2, 0.05, 0.1, 0.15, 0.2, 0.1, 0.2];
        for &q in &[0.05, 0.15, 0.3, 0.5] {
            let total: f64 = masses.iter().zip(&w).map(|(m, p)| m * p).sum();
            let mut best: f64 = 0.0;
            for mask in 0u32..(1 << masses.len()) {
                let (mut pr, mut c) = (0.0, 0.0);
                for k in 0..masses.len() {
                    if mask & (1 << k) != 0 {
                        pr += w[k];
                        c += w[k] * masses[k];
                    }
                }
                if pr <= q + 1e-12 {
                    best = best.max(c / total);
                }
            }
            let got = concentration_index(&masses, &w, q).unwrap();
            // greedy by mass is optimal here because prefix sets are feasible
            assert!(got <= best + 1e-12);
            assert!(got >= 0.0 && got <= 1.0);
        }
    }

    #[test]
    fn complementarity_direct_product() {
        // i = 0.5 at one node of weight 1, gamma = 2 gives lambda = 1
        let cone = ConeSpec { kind: ConeKind::NonnegGrid, weight: 1.0 };
        let i = [0.5];
        let lambda = cone::penalty_multiplier(&cone, 2.0, &i).unwrap();
        assert_eq!(lambda, vec![1.0]);
        assert!((cone.inner(&lambda, &i) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn converged_solve_has_small_residuals() {
        for kind in [ConstraintKind::Mixed, ConstraintKind::Volume, ConstraintKind::Gradient] {
            let bound = if kind == ConstraintKind::Volume { 0.05 } else { 0.1 };
            let data = small_problem(kind, bound, RiskMeasure::Expectation, 31, -20.0, 20.0);
            let res = minimize(&data, 100.0, &SolveOptions::default(), None).unwrap();
            assert!(res.converged, "{kind:?}");
            let r = kkt_report(&data, &res, 0.2).unwrap();
            assert!(r.residuals.stationarity_x1 <= 1e-8);
            assert!(r.residuals.adjoint_residual_max <= 1e-10, "{:?}", r.residuals);
            assert!(r.residuals.rho_consistency <= 1e-10);
            assert!(r.residuals.state_residual <= 1e-10);
            assert!(r.residuals.multiplier_formula_residual <= 1e-10);
            assert_eq!(r.limit.dual_cone_violation, 0.0);
            let identity = res.gamma * r.limit.sq_violation;
            assert!((r.limit.complementarity - identity).abs() <= 1e-12 * identity.max(1.0));
        }
    }

    #[test]
    fn perturbed_adjoint_shows_up() {
        let data = small_problem(ConstraintKind::Mixed, 0.1, RiskMeasure::Expectation, 31, -20.0, 20.0);
        let x = vec![1.5; 31];
        let mut b = evaluate(&data, 10.0, &x).unwrap();
        let xi = vec![0.0; 31];
        let clean = check_gamma_system(&data, &b, &xi).unwrap();
        let mut delta = vec![0.0; 31];
        delta[7] = 1e-3;
        for (a, d) in b.scenarios[2].adjoint.iter_mut().zip(&delta) {
            *a += d;
        }
        let r = check_gamma_system(&data, &b, &xi).unwrap();
        let expected = l2(data.apply_state_adjoint(2, &delta).unwrap().into_iter());
        assert!((r.adjoint_residual[2] - expected).abs() <= 1e-9 * expected + clean.adjoint_residual[2]);
        assert!(r.adjoint_residual[0] <= 1e-10);
    }

    #[test]
    fn slack_problem_limit_quantities_vanish() {
        let data = small_problem(ConstraintKind::Mixed, 1e6, RiskMeasure::Expectation, 15, -5.0, 5.0);
        for gamma in [1.0, 1e3, 1e6] {
            let b = evaluate(&data, gamma, &vec![0.7; 15]).unwrap();
            let l = check_limit_system(&data, &b, 0.2).unwrap();
            assert_eq!(l.primal_feasibility, 0.0);
            assert_eq!(l.complementarity, 0.0);
            assert_eq!(l.multiplier_l1, 0.0);
            assert_eq!(l.concentration_index, 0.0);
        }
    }

    #[test]
    fn infeasible_point_violation_by_scan() {
        let data = small_problem(ConstraintKind::Mixed, 0.0, RiskMeasure::Expectation, 15, -50.0, 50.0);
        let x = vec![10.0; 15];
        let b = evaluate(&data, 3.0, &x).unwrap();
        let l = check_limit_system(&data, &b, 0.2).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..data.scenarios().len() {
            let state = data.solve_state(k, &x).unwrap();
            for j in 0..15 {
                let v = state[j] - data.scenarios().bound(k)[j] - data.constraint().epsilon * x[j];
                worst = worst.max(v);
            }
        }
        assert!(worst > 0.0);
        assert!((l.primal_feasibility - worst).abs() <= 1e-13);
    }

    #[test]
    fn orthogonality_on_nodal_basis() {
        let data = small_problem(ConstraintKind::Mixed, 0.0, RiskMeasure::Expectation, 15, -50.0, 50.0);
        let b = evaluate(&data, 7.0, &vec![6.0; 15]).unwrap();
        let cone = data.cone();
        for s in &b.scenarios {
            let base = cone.inner(&s.multiplier, &s.constraint);
            for j in 0..s.constraint.len() {
                let mut e = vec![0.0; s.constraint.len()];
                e[j] = 1.0;
                assert!(base + cone.inner(&s.multiplier, &e) >= 0.0);
            }
        }
    }
}
