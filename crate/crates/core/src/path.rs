//! Continuation in the penalty parameter.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::{norm_h, GridFunction};
use crate::kkt::{complementarity_value, kkt_report, KktReport};
use crate::objective::{unpenalized_objective, ProblemData};
use crate::solver::{minimize, SolveOptions, SolveResult};

/// Strictly increasing positive penalty parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GammaSchedule(Vec<f64>);

impl GammaSchedule {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("path.gammas", "schedule is empty"));
        }
        for (j, g) in values.iter().enumerate() {
            if !(*g > 0.0 && g.is_finite()) {
                return Err(Error::invalid("path.gammas", format!("entry {j} is not a positive finite number")));
            }
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("path.gammas", "must be strictly increasing"));
        }
        Ok(GammaSchedule(values))
    }

    /// `10^first, ..., 10^last`.
    pub fn decades(first: i32, last: i32) -> Result<Self> {
        Self::new((first..=last).map(|e| 10f64.powi(e)).collect())
    }

    /// Decade schedule refined by `sqrt(10)`.
    pub fn half_decades(first: i32, last: i32) -> Result<Self> {
        let mut v = Vec::new();
        for e in first..last {
            v.push(10f64.powi(e));
            v.push(10f64.powf(e as f64 + 0.5));
        }
        v.push(10f64.powi(last));
        Self::new(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl Default for GammaSchedule {
    fn default() -> Self {
        Self::decades(0, 6).expect("static schedule")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    pub solve: SolveOptions,
    pub warm_start: bool,
    pub concentration_q: f64,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            solve: SolveOptions::default(),
            warm_start: true,
            concentration_q: crate::kkt::DEFAULT_CONCENTRATION_Q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub gamma: f64,
    pub j: f64,
    pub j_gamma: f64,
    pub penalty_term: f64,
    pub max_violation: f64,
    pub sq_violation: f64,
    /// `E[(lambda_i, i)_H]`, signed.
    pub complementarity: f64,
    pub multiplier_l1: f64,
    pub multiplier_l1_max: f64,
    pub adjoint_l1: f64,
    pub concentration_index: f64,
    /// `|x1^gamma - x1^prev|_h`; for the first record the previous control
    /// is the initial one.
    pub control_change: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stationarity: f64,
    pub adjoint_residual: f64,
    pub rho_consistency: f64,
    pub state_residual: f64,
    pub multiplier_formula_residual: f64,
    pub dual_cone_violation: f64,
}

/// Column order of the path table.
pub const PATH_COLUMNS: [&str; 21] = [
    "gamma",
    "j",
    "j_gamma",
    "penalty_term",
    "max_violation",
    "sq_violation",
    "complementarity",
    "multiplier_l1",
    "multiplier_l1_max",
    "adjoint_l1",
    "concentration_index",
    "control_change",
    "iterations",
    "converged",
    "stationarity",
    "adjoint_residual",
    "rho_consistency",
    "state_residual",
    "multiplier_formula_residual",
    "dual_cone_violation",
    "penalty_identity_gap",
];

impl PathRecord {
    /// Numeric value of a named column.
    pub fn field(&self, name: &str) -> Option<f64> {
        Some(match name {
            "gamma" => self.gamma,
            "j" => self.j,
            "j_gamma" => self.j_gamma,
            "penalty_term" => self.penalty_term,
            "max_violation" => self.max_violation,
            "sq_violation" => self.sq_violation,
            "complementarity" => self.complementarity,
            "multiplier_l1" => self.multiplier_l1,
            "multiplier_l1_max" => self.multiplier_l1_max,
            "adjoint_l1" => self.adjoint_l1,
            "concentration_index" => self.concentration_index,
            "control_change" => self.control_change,
            "iterations" => self.iterations as f64,
            "converged" => f64::from(u8::from(self.converged)),
            "stationarity" => self.stationarity,
            "adjoint_residual" => self.adjoint_residual,
            "rho_consistency" => self.rho_consistency,
            "state_residual" => self.state_residual,
            "multiplier_formula_residual" => self.multiplier_formula_residual,
            "dual_cone_violation" => self.dual_cone_violation,
            "penalty_identity_gap" => self.penalty_identity_gap(),
            _ => return None,
        })
    }

    /// `|penalty_term - gamma/2 sq_violation|`.
    pub fn penalty_identity_gap(&self) -> f64 {
        (self.penalty_term - 0.5 * self.gamma * self.sq_violation).abs()
    }

    pub fn from_solve(data: &ProblemData, result: &SolveResult, report: &KktReport, previous: &[f64]) -> Result<Self> {
        let un = unpenalized_objective(data, &result.x1_opt)?;
        let diff: Vec<f64> = result.x1_opt.iter().zip(previous).map(|(a, b)| a - b).collect();
        let b = &result.bundle;
        Ok(PathRecord {
            gamma: result.gamma,
            j: un.j,
            j_gamma: b.j_gamma,
            penalty_term: b.penalty_term,
            max_violation: un.max_violation,
            sq_violation: report.limit.sq_violation,
            complementarity: complementarity_value(data.cone(), data.scenarios().weights(), b),
            multiplier_l1: report.limit.multiplier_l1,
            multiplier_l1_max: report.limit.multiplier_l1_max,
            adjoint_l1: report.limit.adjoint_l1,
            concentration_index: report.limit.concentration_index,
            control_change: norm_h(data.grid(), &diff)?,
            iterations: result.iterations,
            converged: result.converged,
            stationarity: report.residuals.stationarity_x1,
            adjoint_residual: report.residuals.adjoint_residual_max,
            rho_consistency: report.residuals.rho_consistency,
            state_residual: report.residuals.state_residual,
            multiplier_formula_residual: report.residuals.multiplier_formula_residual,
            dual_cone_violation: report.limit.dual_cone_violation,
        })
    }
}

/// Records of a path run. `failure` is set when a solve aborted the run; the
/// records before it are kept.
#[derive(Debug)]
pub struct PathRun {
    pub records: Vec<PathRecord>,
    pub reports: Vec<KktReport>,
    pub controls: Vec<GridFunction>,
    pub failure: Option<Error>,
}

/// Solves along `schedule`, warm-starting each solve from the previous one
/// unless disabled.
pub fn run_path(data: &ProblemData, schedule: &GammaSchedule, opts: &PathOptions, initial: &[f64]) -> Result<PathRun> {
    check_len("initial control", data.grid().n_interior(), initial.len())?;
    opts.solve.validate()?;
    let initial = data.clamp(initial);
    let mut run = PathRun {
        records: Vec::new(),
        reports: Vec::new(),
        controls: Vec::new(),
        failure: None,
    };
    let mut previous = initial.clone();
    for &gamma in schedule.values() {
        let start = if opts.warm_start { &previous } else { &initial };
        let step = minimize(data, gamma, &opts.solve, Some(start)).and_then(|res| {
            let report = kkt_report(data, &res, opts.concentration_q)?;
            let rec = PathRecord::from_solve(data, &res, &report, &previous)?;
            Ok((res, report, rec))
        });
        match step {
            Ok((res, report, rec)) => {
                run.records.push(rec);
                run.reports.push(report);
                previous = res.x1_opt.clone();
                run.controls.push(res.x1_opt);
            }
            Err(e) => {
                run.failure = Some(e);
                break;
            }
        }
    }
    Ok(run)
}

/// Least-squares slope of `log(field)` against `log(gamma)` and its
/// coefficient of determination.
pub fn fit_decay_slope(records: &[PathRecord], field: &str) -> Result<(f64, f64)> {
    let mut pts = Vec::new();
    for r in records {
        let v = r
            .field(field)
            .ok_or_else(|| Error::invalid("field", format!("unknown path column '{field}'")))?;
        if v > 0.0 && v.is_finite() {
            pts.push((r.gamma.ln(), v.ln()));
        }
    }
    if pts.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            found: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("records", "all gamma values coincide"));
    }
    let slope = sxy / sxx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let r2 = if syy <= f64::EPSILON * n * my.abs().max(1.0) { 1.0 } else { 1.0 - ss_res / syy };
    Ok((slope, r2))
}

/// A strictly feasible control `t * base` (clamped to the box), with `t`
/// the largest feasible factor in `[0, 1]` found by bisection.
pub fn feasible_reference(data: &ProblemData, base: &[f64]) -> Result<(GridFunction, f64)> {
    check_len("reference base", data.grid().n_interior(), base.len())?;
    let scaled = |t: f64| data.clamp(&base.iter().map(|v| t * v).collect::<Vec<_>>());
    let feasible = |x: &[f64]| -> Result<bool> {
        let u = unpenalized_objective(data, x)?;
        Ok(u.max_violation <= 0.0)
    };
    if feasible(&scaled(1.0))? {
        let x = scaled(1.0);
        let j = unpenalized_objective(data, &x)?.j;
        return Ok((x, j));
    }
    if !feasible(&scaled(0.0))? {
        return Err(Error::NoFeasibleReference(
            "the clamped zero control violates the state constraint".into(),
        ));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(&scaled(mid))? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = scaled(lo);
    let j = unpenalized_objective(data, &x)?.j;
    Ok((x, j))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCheck {
    pub name: String,
    /// Hard checks fail the run; soft ones are logged.
    pub hard: bool,
    pub passed: bool,
    pub detail: String,
}

const SANDWICH_SLACK: f64 = 1e-10;

fn check(name: &str, hard: bool, passed: bool, detail: String) -> PathCheck {
    PathCheck {
        name: name.into(),
        hard,
        passed,
        detail,
    }
}

/// Path invariants. `reference_j` is the unpenalized objective of a feasible
/// control; `bound_factor` limits the spread of multiplier norms after the
/// first decade; `tol_stationarity` scales the control-change diagnostic.
pub fn path_checks(
    records: &[PathRecord],
    reference_j: Option<f64>,
    bound_factor: f64,
    tol_stationarity: f64,
) -> Vec<PathCheck> {
    let mut out = Vec::new();

    let mut worst = f64::NEG_INFINITY;
    for r in records {
        worst = worst.max(r.j - r.j_gamma);
        if let Some(jf) = reference_j {
            worst = worst.max(r.j_gamma - jf);
        }
    }
    out.push(check(
        "sandwich",
        true,
        worst <= SANDWICH_SLACK,
        match reference_j {
            Some(jf) => format!("max excess {worst:e} against reference j = {jf:e}"),
            None => format!("max excess {worst:e}, no feasible reference"),
        },
    ));

    let first_gamma = records.first().map(|r| r.gamma).unwrap_or(1.0);
    let tail: Vec<&PathRecord> = records.iter().filter(|r| r.gamma >= 10.0 * first_gamma).collect();
    let sq_ok = tail.windows(2).all(|w| w[1].sq_violation < w[0].sq_violation || w[0].sq_violation == 0.0);
    out.push(check(
        "sq_violation_decreasing",
        true,
        sq_ok,
        "strict decrease after the first decade".into(),
    ));

    let jg_ok = records
        .windows(2)
        .all(|w| w[1].j_gamma >= w[0].j_gamma - SANDWICH_SLACK);
    out.push(check("j_gamma_nondecreasing", true, jg_ok, String::new()));

    let id = records.iter().map(|r| r.penalty_identity_gap()).fold(0.0, f64::max);
    out.push(check(
        "penalty_identity",
        true,
        records
            .iter()
            .all(|r| r.penalty_identity_gap() <= 1e-12 * r.penalty_term.abs().max(1.0)),
        format!("max gap {id:e}"),
    ));

    for field in ["multiplier_l1", "adjoint_l1"] {
        let vals: Vec<f64> = tail.iter().filter_map(|r| r.field(field)).collect();
        let max = vals.iter().copied().fold(0.0, f64::max);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let passed = vals.is_empty() || max == 0.0 || (min > 0.0 && max / min < bound_factor);
        out.push(check(
            &format!("{field}_bounded"),
            false,
            passed,
            format!("ratio {:e} against factor {bound_factor}", max / min),
        ));
    }

    if let Some(last) = records.last() {
        out.push(check(
            "control_change_small",
            false,
            last.control_change <= 10.0 * tol_stationarity,
            format!("last change {:e}", last.control_change),
        ));
        let peak = records.iter().map(|r| r.complementarity).fold(0.0, f64::max);
        out.push(check(
            "complementarity_decays",
            false,
            last.complementarity <= 1e-2 * peak,
            format!("last {:e}, peak {peak:e}", last.complementarity),
        ));
    }
    out
}
