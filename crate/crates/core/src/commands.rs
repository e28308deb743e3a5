//! The `solve`, `path` and `verify` commands behind the command-line tool.
//!
//! Each command writes its artifacts into an output directory and returns an
//! exit status. Errors are returned to the caller, which reports them and
//! exits with status 1.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ReferenceSpec, RunConfig};
use crate::error::Result;
use crate::grid::GridFunction;
use crate::kkt::{kkt_report, KktReport};
use crate::objective::{FaultInjection, ProblemData};
use crate::path::{feasible_reference, fit_decay_slope, path_checks, run_path, PathCheck, PathRecord, PathRun};
use crate::report::{self, envelope, to_json, write_file};
use crate::solver::{minimize, SolveMode};
use crate::verify::{run_battery, CheckOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

/// Switches that do not belong in the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct CommandOptions {
    /// Start every path solve from the configured initial control.
    pub cold: bool,
    #[doc(hidden)]
    pub fault: FaultInjection,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
    /// One-line summary for the terminal.
    pub message: String,
}

fn problem(cfg: &RunConfig, opts: &CommandOptions) -> Result<ProblemData> {
    Ok(cfg.build_problem()?.with_fault(opts.fault))
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    gamma: f64,
    mode: SolveMode,
    converged: bool,
    iterations: usize,
    stationarity_norm: f64,
    initial_step: f64,
    j_gamma: f64,
    j1: f64,
    risk_value: f64,
    penalty_term: f64,
    theta: &'a [f64],
    x1_opt: &'a GridFunction,
    xi: &'a [f64],
}

/// Minimizes at one penalty parameter.
pub fn cmd_solve(cfg: &RunConfig, gamma: f64, out: &Path, opts: &CommandOptions) -> Result<Outcome> {
    let data = problem(cfg, opts)?;
    let mut solve = cfg.solver.clone();
    solve.record_log = true;
    let res = minimize(&data, gamma, &solve, Some(&cfg.initial_control()?))?;
    let kkt = kkt_report(&data, &res, cfg.path.concentration_q)?;
    let summary = SolveSummary {
        gamma,
        mode: res.mode,
        converged: res.converged,
        iterations: res.iterations,
        stationarity_norm: res.stationarity_norm,
        initial_step: res.initial_step,
        j_gamma: res.bundle.j_gamma,
        j1: res.bundle.j1,
        risk_value: res.bundle.risk_value,
        penalty_term: res.bundle.penalty_term,
        theta: &res.bundle.theta,
        x1_opt: &res.x1_opt,
        xi: &res.xi,
    };
    let files = vec![
        write_file(out, "solve_summary.json", &to_json(&envelope(cfg, report::SOLVE_SCHEMA, summary)))?,
        write_file(out, "kkt_report.json", &to_json(&envelope(cfg, report::KKT_SCHEMA, &kkt)))?,
        write_file(out, "iterations.log", &report::iteration_log(cfg, &res.log))?,
    ];
    let (exit_code, state) = if res.converged {
        (EXIT_OK, "converged")
    } else {
        (EXIT_NOT_CONVERGED, "max iterations reached")
    };
    Ok(Outcome {
        exit_code,
        files,
        message: format!(
            "gamma={gamma:e}: {state} after {} iterations, j_gamma={:e}, stationarity={:e}",
            res.iterations, res.bundle.j_gamma, res.stationarity_norm
        ),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub slope: Option<f64>,
    pub r2: Option<f64>,
    pub error: Option<String>,
}

/// Fields whose log-log decay against the penalty parameter is fitted.
pub const FITTED_FIELDS: [&str; 5] = [
    "sq_violation",
    "max_violation",
    "complementarity",
    "multiplier_l1",
    "adjoint_l1",
];

pub fn slope_fits(records: &[PathRecord]) -> BTreeMap<String, SlopeFit> {
    FITTED_FIELDS
        .iter()
        .map(|f| {
            let fit = match fit_decay_slope(records, f) {
                Ok((s, r2)) => SlopeFit {
                    slope: Some(s),
                    r2: Some(r2),
                    error: None,
                },
                Err(e) => SlopeFit {
                    slope: None,
                    r2: None,
                    error: Some(e.to_string()),
                },
            };
            (f.to_string(), fit)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Reference {
    pub j: f64,
    pub scale_base: String,
}

#[derive(Serialize)]
struct PathSummary<'a> {
    warm_start: bool,
    completed: usize,
    scheduled: usize,
    failure: Option<String>,
    all_converged: bool,
    reference: Option<Reference>,
    reference_error: Option<String>,
    slopes: BTreeMap<String, SlopeFit>,
    checks: &'a [PathCheck],
    /// Fraction of penalty values where the warm-started solve needed no more
    /// iterations than the cold one; present when both were run.
    warm_start_dominance: Option<f64>,
}

/// Everything `path` computes, before anything is written.
pub struct PathArtifacts {
    pub run: PathRun,
    pub reference: Option<Reference>,
    pub reference_error: Option<String>,
    pub checks: Vec<PathCheck>,
    pub slopes: BTreeMap<String, SlopeFit>,
    pub warm_start_dominance: Option<f64>,
}

pub fn compute_path(cfg: &RunConfig, opts: &CommandOptions) -> Result<PathArtifacts> {
    let data = problem(cfg, opts)?;
    let schedule = cfg.schedule()?;
    let initial = cfg.initial_control()?;
    let mut popts = cfg.path_options();
    if opts.cold {
        popts.warm_start = false;
    }
    let run = run_path(&data, &schedule, &popts, &initial)?;

    let warm_start_dominance = if opts.cold && run.failure.is_none() {
        let mut warm = popts.clone();
        warm.warm_start = true;
        let wrun = run_path(&data, &schedule, &warm, &initial)?;
        let n = wrun.records.len().min(run.records.len());
        let ok = (0..n)
            .filter(|&j| wrun.records[j].iterations <= run.records[j].iterations)
            .count();
        (n > 0).then(|| ok as f64 / n as f64)
    } else {
        None
    };

    let (mut reference, mut reference_error) = (None, None);
    let base = match &cfg.path.feasible_reference {
        Some(ReferenceSpec::ScaledPathEnd) => run.controls.last().map(|x| (x.to_vec(), "path end")),
        Some(ReferenceSpec::ScaledControl { control }) => {
            let c = match control {
                crate::config::NodalValue::Scalar(v) => vec![*v; data.grid().n_interior()],
                crate::config::NodalValue::Values(v) => v.clone(),
            };
            Some((c, "configured control"))
        }
        None => None,
    };
    if let Some((b, label)) = base {
        match feasible_reference(&data, &b) {
            Ok((_, j)) => {
                reference = Some(Reference {
                    j,
                    scale_base: label.into(),
                })
            }
            Err(e) => reference_error = Some(e.to_string()),
        }
    }
    let checks = path_checks(
        &run.records,
        reference.as_ref().map(|r| r.j),
        cfg.path.bound_factor,
        cfg.solver.tol_stationarity,
    );
    let slopes = slope_fits(&run.records);
    Ok(PathArtifacts {
        run,
        reference,
        reference_error,
        checks,
        slopes,
        warm_start_dominance,
    })
}

/// Runs the penalty path and writes the table, the records as JSON and a
/// summary with slope fits and path checks.
pub fn cmd_path(cfg: &RunConfig, out: &Path, opts: &CommandOptions) -> Result<Outcome> {
    let art = compute_path(cfg, opts)?;
    let stem = report::path_file_stem(cfg);
    let records = &art.run.records;
    #[derive(Serialize)]
    struct Records<'a> {
        records: &'a [PathRecord],
        kkt: &'a [KktReport],
    }
    let all_converged = records.iter().all(|r| r.converged);
    let summary = PathSummary {
        warm_start: !opts.cold && cfg.path.warm_start,
        completed: records.len(),
        scheduled: cfg.path.gammas.len(),
        failure: art.run.failure.as_ref().map(|e| e.to_string()),
        all_converged,
        reference: art.reference.clone(),
        reference_error: art.reference_error.clone(),
        slopes: art.slopes.clone(),
        checks: &art.checks,
        warm_start_dominance: art.warm_start_dominance,
    };
    let files = vec![
        write_file(out, &format!("{stem}.csv"), &report::path_csv(cfg, records))?,
        write_file(
            out,
            &format!("{stem}.json"),
            &to_json(&envelope(
                cfg,
                report::PATH_SCHEMA,
                Records {
                    records,
                    kkt: &art.run.reports,
                },
            )),
        )?,
        write_file(out, "path_summary.json", &to_json(&envelope(cfg, report::SUMMARY_SCHEMA, summary)))?,
    ];
    if let Some(e) = art.run.failure {
        return Err(e);
    }
    let failed: Vec<&str> = art
        .checks
        .iter()
        .filter(|c| c.hard && !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    let (exit_code, message) = if !failed.is_empty() {
        (EXIT_CHECK_FAILED, format!("path check failed: {}", failed.join(", ")))
    } else if !all_converged {
        (EXIT_NOT_CONVERGED, "path complete, some solves did not converge".to_string())
    } else {
        let s = &art.slopes["sq_violation"];
        (
            EXIT_OK,
            format!(
                "path complete: {} points, sq_violation slope {}",
                records.len(),
                s.slope.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into())
            ),
        )
    };
    Ok(Outcome {
        exit_code,
        files,
        message,
    })
}

#[derive(Serialize)]
struct VerifySummary<'a> {
    passed: bool,
    gamma: f64,
    checks: &'a [CheckOutcome],
    notes: &'a [String],
}

/// Penalty parameter used by `verify`: the geometric middle of the schedule.
pub fn verify_gamma(cfg: &RunConfig) -> f64 {
    let g = &cfg.path.gammas;
    (g[0].ln() * 0.5 + g[g.len() - 1].ln() * 0.5).exp()
}

/// Runs the verification battery on the configured problem.
pub fn cmd_verify(cfg: &RunConfig, out: &Path, opts: &CommandOptions) -> Result<Outcome> {
    let data = problem(cfg, opts)?;
    let gamma = verify_gamma(cfg);
    let rep = run_battery(&data, gamma, cfg.scenarios.seed)?;
    let summary = VerifySummary {
        passed: rep.passed(),
        gamma,
        checks: &rep.checks,
        notes: &rep.notes,
    };
    let files = vec![write_file(
        out,
        "verify_report.json",
        &to_json(&envelope(cfg, report::VERIFY_SCHEMA, summary)),
    )?];
    let mut message = match rep.first_failure() {
        None => format!("all {} checks passed", rep.checks.len()),
        Some(c) => format!(
            "check failed: {} ({} of {} instances, worst {:e} > {:e})",
            c.name, c.failures, c.instances, c.worst, c.tolerance
        ),
    };
    for n in &rep.notes {
        message.push_str("\nnote: ");
        message.push_str(n);
    }
    Ok(Outcome {
        exit_code: if rep.passed() { EXIT_OK } else { EXIT_CHECK_FAILED },
        files,
        message,
    })
}
