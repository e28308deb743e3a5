//! Projected first-order minimization of `j_gamma` over the control box.
//!
//! Three modes are available: plain projected gradient with Armijo
//! backtracking along the projection arc, FISTA-type acceleration with
//! backtracking and function-value restart, and (for nonsmooth risk measures)
//! projected subgradient steps `c / sqrt(k)` with best-iterate tracking.
//!
//! Steps are taken along the `L^2` representative `G = g / h` of the reduced
//! gradient, and stationarity is measured by `|x - clamp(x - G)|_h`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{norm_h, GridFunction};
use crate::objective::{evaluate, EvalBundle, ProblemData};

/// Relative size below which a change in the objective is dominated by
/// rounding.
const ROUNDING: f64 = 1e3 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepRule {
    /// Constant step `1 / L`, with `L` from power iteration at the start.
    Fixed,
    Backtracking { armijo: f64, shrink: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Backtracking {
            armijo: 1e-4,
            shrink: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub tol_stationarity: f64,
    pub step_rule: StepRule,
    pub accelerated: bool,
    /// Force projected subgradient steps even for smooth objectives. They are
    /// always used when the risk measure is nonsmooth.
    pub subgradient: bool,
    /// Scale `c` of the diminishing subgradient steps `c / sqrt(k)`.
    pub subgradient_scale: f64,
    /// Power iterations for the initial curvature estimate.
    pub power_iters: usize,
    /// Keep one [`IterationRecord`] per iteration.
    pub record_log: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            max_iters: 200_000,
            tol_stationarity: 1e-8,
            step_rule: StepRule::default(),
            accelerated: true,
            subgradient: false,
            subgradient_scale: 1.0,
            power_iters: 5,
            record_log: false,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_stationarity > 0.0) {
            return Err(Error::invalid("solver.tol_stationarity", "must be positive"));
        }
        if let StepRule::Backtracking { armijo, shrink } = self.step_rule {
            if !(armijo > 0.0 && armijo < 0.5) {
                return Err(Error::invalid("solver.step_rule.armijo", "must lie in (0, 0.5)"));
            }
            if !(shrink > 0.0 && shrink < 1.0) {
                return Err(Error::invalid("solver.step_rule.shrink", "must lie in (0, 1)"));
            }
        }
        if !(self.subgradient_scale > 0.0) {
            return Err(Error::invalid("solver.subgradient_scale", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    ProjectedGradient,
    Accelerated,
    Subgradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub j_gamma: f64,
    pub stationarity: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub gamma: f64,
    pub x1_opt: GridFunction,
    pub bundle: EvalBundle,
    /// Normal-cone element: `-g` on the properly active bound set, else 0.
    pub xi: Vec<f64>,
    pub iterations: usize,
    pub stationarity_norm: f64,
    pub converged: bool,
    pub mode: SolveMode,
    pub initial_step: f64,
    pub log: Vec<IterationRecord>,
}

/// `|x - clamp(x - G)|_h` for the Riesz gradient `G`.
fn projected_residual(data: &ProblemData, x: &[f64], riesz: &[f64]) -> f64 {
    let trial: Vec<f64> = x.iter().zip(riesz).map(|(a, g)| a - g).collect();
    let p = data.clamp(&trial);
    let d: Vec<f64> = x.iter().zip(p.iter()).map(|(a, b)| a - b).collect();
    norm_h(data.grid(), &d).expect("control length checked")
}

/// Projected-gradient stationarity measure at `x1`.
pub fn stationarity_residual(data: &ProblemData, gamma: f64, x1: &[f64]) -> Result<f64> {
    let b = evaluate(data, gamma, x1)?;
    Ok(projected_residual(data, x1, &b.riesz_gradient(data.grid())))
}

/// Normal-cone element matching the gradient at `x`.
pub fn normal_cone_element(data: &ProblemData, x: &[f64], gradient: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(gradient)
        .zip(data.lower().iter().zip(data.upper().iter()))
        .map(|((&v, &g), (&lo, &hi))| {
            if lo == hi || (v <= lo && g > 0.0) || (v >= hi && g < 0.0) {
                -g
            } else {
                0.0
            }
        })
        .collect()
}

fn checked_eval(data: &ProblemData, gamma: f64, x: &[f64], iteration: usize) -> Result<EvalBundle> {
    let b = evaluate(data, gamma, x)?;
    if b.j_gamma.is_finite() && b.gradient.iter().all(|g| g.is_finite()) {
        Ok(b)
    } else {
        Err(Error::Diverged { iteration })
    }
}

fn h_dot(h: f64, a: &[f64], b: &[f64]) -> f64 {
    h * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

fn h_norm_sq(h: f64, a: &[f64]) -> f64 {
    h_dot(h, a, a)
}

/// `f1 - f0` for a step `d`, or the trapezoidal estimate `(g0 + g1, d)_h / 2`
/// (exact for quadratics) when the difference is lost in rounding.
fn objective_change(h: f64, f0: f64, f1: f64, g0: &[f64], g1: &[f64], d: &[f64]) -> f64 {
    if (f1 - f0).abs() <= ROUNDING * f0.abs().max(f1.abs()) {
        0.5 * (h_dot(h, g0, d) + h_dot(h, g1, d))
    } else {
        f1 - f0
    }
}

/// Largest eigenvalue of the Hessian of `j_gamma` at `x`, by power iteration
/// on finite differences of the Riesz gradient.
pub fn estimate_curvature(data: &ProblemData, gamma: f64, x: &[f64], iters: usize) -> Result<f64> {
    let h = data.grid().h();
    let g0 = evaluate(data, gamma, x)?.riesz_gradient(data.grid());
    let n = x.len();
    let mut v: Vec<f64> = (0..n).map(|j| 1.0 + 0.1 * ((j * 7919) % 13) as f64).collect();
    let nv = h_norm_sq(h, &v).sqrt();
    v.iter_mut().for_each(|e| *e /= nv);
    let xnorm = h_norm_sq(h, x).sqrt();
    let eps = 1e-6 * xnorm.max(1.0);
    let mut estimate = data.tikhonov();
    for _ in 0..iters.max(1) {
        let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
        let gp = evaluate(data, gamma, &xp)?.riesz_gradient(data.grid());
        let hv: Vec<f64> = gp.iter().zip(&g0).map(|(a, b)| (a - b) / eps).collect();
        let norm = h_norm_sq(h, &hv).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            break;
        }
        estimate = norm;
        v = hv.iter().map(|e| e / norm).collect();
    }
    Ok(estimate.max(data.tikhonov()))
}

struct Outcome {
    x: GridFunction,
    bundle: EvalBundle,
    iterations: usize,
    stationarity: f64,
    converged: bool,
}

/// Minimizes `j_gamma` over the control box.
pub fn minimize(
    data: &ProblemData,
    gamma: f64,
    opts: &SolveOptions,
    warm_start: Option<&[f64]>,
) -> Result<SolveResult> {
    opts.validate()?;
    let x0 = match warm_start {
        Some(w) => data.clamp(w),
        None => data.clamp(&vec![0.0; data.grid().n_interior()]),
    };
    let mode = if opts.subgradient || !data.risk().is_smooth() {
        SolveMode::Subgradient
    } else if opts.accelerated {
        SolveMode::Accelerated
    } else {
        SolveMode::ProjectedGradient
    };

    let bundle = checked_eval(data, gamma, &x0, 0)?;
    let fixed = data
        .lower()
        .iter()
        .zip(data.upper().iter())
        .all(|(lo, hi)| lo == hi);
    let mut log = Vec::new();
    let (outcome, initial_step) = if fixed {
        let r = projected_residual(data, &x0, &bundle.riesz_gradient(data.grid()));
        (
            Outcome {
                x: x0,
                bundle,
                iterations: 0,
                stationarity: r,
                converged: true,
            },
            0.0,
        )
    } else {
        let curvature = estimate_curvature(data, gamma, &x0, opts.power_iters)?;
        let step = 1.0 / curvature;
        let out = match mode {
            SolveMode::ProjectedGradient => projected_gradient(data, gamma, opts, x0, bundle, step, &mut log)?,
            SolveMode::Accelerated => accelerated(data, gamma, opts, x0, bundle, step, &mut log)?,
            SolveMode::Subgradient => subgradient(data, gamma, opts, x0, bundle, &mut log)?,
        };
        (out, step)
    };

    let xi = normal_cone_element(data, &outcome.x, &outcome.bundle.gradient);
    Ok(SolveResult {
        gamma,
        x1_opt: outcome.x,
        bundle: outcome.bundle,
        xi,
        iterations: outcome.iterations,
        stationarity_norm: outcome.stationarity,
        converged: outcome.converged,
        mode,
        initial_step,
        log,
    })
}

fn push_log(log: &mut Vec<IterationRecord>, opts: &SolveOptions, rec: IterationRecord) {
    if opts.record_log {
        log.push(rec);
    }
}

fn projected_gradient(
    data: &ProblemData,
    gamma: f64,
    opts: &SolveOptions,
    mut x: GridFunction,
    mut b: EvalBundle,
    initial_step: f64,
    log: &mut Vec<IterationRecord>,
) -> Result<Outcome> {
    let grid = *data.grid();
    let h = grid.h();
    let mut riesz = b.riesz_gradient(&grid);
    let mut r = projected_residual(data, &x, &riesz);
    let mut step = initial_step;
    push_log(log, opts, IterationRecord { iter: 0, j_gamma: b.j_gamma, stationarity: r, step });
    let mut iter = 0;
    while r > opts.tol_stationarity && iter < opts.max_iters {
        iter += 1;
        let (next, nb) = match opts.step_rule {
            StepRule::Fixed => {
                let trial = data.clamp(&axpy(&x, -step, &riesz));
                let nb = checked_eval(data, gamma, &trial, iter)?;
                (trial, nb)
            }
            StepRule::Backtracking { armijo, shrink } => {
                let mut s = step / shrink;
                loop {
                    let trial = data.clamp(&axpy(&x, -s, &riesz));
                    let nb = checked_eval(data, gamma, &trial, iter)?;
                    let d: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, c)| a - c).collect();
                    let decrease = h_dot(h, &riesz, &d);
                    let change = objective_change(h, b.j_gamma, nb.j_gamma, &riesz, &nb.riesz_gradient(&grid), &d);
                    if change <= armijo * decrease {
                        step = s;
                        break (trial, nb);
                    }
                    s *= shrink;
                    if s < 1e-12 * initial_step {
                        step = s;
                        break (trial, nb);
                    }
                }
            }
        };
        if next == x {
            break;
        }
        x = next;
        b = nb;
        riesz = b.riesz_gradient(&grid);
        r = projected_residual(data, &x, &riesz);
        push_log(log, opts, IterationRecord { iter, j_gamma: b.j_gamma, stationarity: r, step });
    }
    Ok(Outcome {
        x,
        bundle: b,
        iterations: iter,
        stationarity: r,
        converged: r <= opts.tol_stationarity,
    })
}

fn axpy(x: &[f64], a: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(u, v)| u + a * v).collect()
}

fn accelerated(
    data: &ProblemData,
    gamma: f64,
    opts: &SolveOptions,
    mut x: GridFunction,
    mut bx: EvalBundle,
    initial_step: f64,
    log: &mut Vec<IterationRecord>,
) -> Result<Outcome> {
    let grid = *data.grid();
    let h = grid.h();
    let shrink = match opts.step_rule {
        StepRule::Backtracking { shrink, .. } => Some(shrink),
        StepRule::Fixed => None,
    };
    let mut step = initial_step;
    let mut r = projected_residual(data, &x, &bx.riesz_gradient(&grid));
    push_log(log, opts, IterationRecord { iter: 0, j_gamma: bx.j_gamma, stationarity: r, step });

    let mut y: Vec<f64> = x.to_vec();
    let mut by = bx.clone();
    let mut t = 1.0f64;
    let mut iter = 0;
    let mut restarts_in_row = 0;
    while r > opts.tol_stationarity && iter < opts.max_iters {
        iter += 1;
        let gy = by.riesz_gradient(&grid);
        let (next, nb) = loop {
            let trial = data.clamp(&axpy(&y, -step, &gy));
            let nb = checked_eval(data, gamma, &trial, iter)?;
            let Some(shrink) = shrink else { break (trial, nb) };
            let d: Vec<f64> = trial.iter().zip(&y).map(|(a, c)| a - c).collect();
            let model = h_dot(h, &gy, &d) + h_norm_sq(h, &d) / (2.0 * step);
            let change = objective_change(h, by.j_gamma, nb.j_gamma, &gy, &nb.riesz_gradient(&grid), &d);
            if change <= model || step < 1e-12 * initial_step {
                break (trial, nb);
            }
            step *= shrink;
        };

        let moved_from_x = y.as_slice() != x.as_ref();
        let dx: Vec<f64> = next.iter().zip(x.iter()).map(|(a, c)| a - c).collect();
        let increase = objective_change(
            h,
            bx.j_gamma,
            nb.j_gamma,
            &bx.riesz_gradient(&grid),
            &nb.riesz_gradient(&grid),
            &dx,
        );
        if increase > 0.0 && moved_from_x {
            // momentum overshot: restart from x
            t = 1.0;
            y = x.to_vec();
            by = bx.clone();
            restarts_in_row += 1;
            if restarts_in_row > 3 {
                break;
            }
            continue;
        }
        restarts_in_row = 0;
        if next == x && !moved_from_x {
            break;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        y = next
            .iter()
            .zip(x.iter())
            .map(|(a, c)| a + beta * (a - c))
            .collect();
        t = t_next;
        x = next;
        bx = nb;
        r = projected_residual(data, &x, &bx.riesz_gradient(&grid));
        push_log(log, opts, IterationRecord { iter, j_gamma: bx.j_gamma, stationarity: r, step });
        if r <= opts.tol_stationarity {
            break;
        }
        by = if beta == 0.0 {
            bx.clone()
        } else {
            checked_eval(data, gamma, &y, iter)?
        };
    }
    Ok(Outcome {
        x,
        bundle: bx,
        iterations: iter,
        stationarity: r,
        converged: r <= opts.tol_stationarity,
    })
}

fn subgradient(
    data: &ProblemData,
    gamma: f64,
    opts: &SolveOptions,
    x0: GridFunction,
    b0: EvalBundle,
    log: &mut Vec<IterationRecord>,
) -> Result<Outcome> {
    let grid = *data.grid();
    let h = grid.h();
    let mut x = x0;
    let mut b = b0;
    let mut r = projected_residual(data, &x, &b.riesz_gradient(&grid));
    let mut best = (x.clone(), b.clone(), r);
    push_log(log, opts, IterationRecord { iter: 0, j_gamma: b.j_gamma, stationarity: r, step: 0.0 });
    let mut iter = 0;
    while r > opts.tol_stationarity && iter < opts.max_iters {
        iter += 1;
        let g = b.riesz_gradient(&grid);
        let gnorm = h_norm_sq(h, &g).sqrt();
        if gnorm == 0.0 {
            break;
        }
        let step = opts.subgradient_scale / (iter as f64).sqrt() / gnorm;
        x = data.clamp(&axpy(&x, -step, &g));
        b = checked_eval(data, gamma, &x, iter)?;
        r = projected_residual(data, &x, &b.riesz_gradient(&grid));
        if b.j_gamma < best.1.j_gamma {
            best = (x.clone(), b.clone(), r);
        }
        push_log(log, opts, IterationRecord { iter, j_gamma: b.j_gamma, stationarity: r, step });
    }
    let converged = r <= opts.tol_stationarity;
    let (x, b, r) = if converged { (x, b, r) } else { best };
    Ok(Outcome {
        x,
        bundle: b,
        iterations: iter,
        stationarity: r,
        converged: r <= opts.tol_stationarity,
    })
}
