//! Randomized verification battery run by `riskpath verify` and the
//! acceptance suite.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::cone::{self, ConeKind, ConeSpec, ConstraintKind};
use crate::error::Result;
use crate::grid::{inner_h, GridFunction};
use crate::objective::{evaluate, objective_only, ProblemData};
use crate::risk::RiskMeasure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    /// Largest normalized error seen.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        CheckOutcome {
            name: name.into(),
            instances: 0,
            failures: 0,
            worst: 0.0,
            tolerance,
            passed: true,
        }
    }

    /// Records one instance whose normalized error is `err`.
    fn record(&mut self, err: f64) {
        self.instances += 1;
        if err.is_nan() || err > self.tolerance {
            self.failures += 1;
            self.passed = false;
        }
        if err.is_nan() {
            self.worst = f64::NAN;
        } else if !self.worst.is_nan() {
            self.worst = self.worst.max(err);
        }
    }

    fn fail(&mut self) {
        self.instances += 1;
        self.failures += 1;
        self.passed = false;
    }
}

/// Uniform draws from a seeded ChaCha20 stream.
pub struct Sampler(ChaCha20Rng);

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler(ChaCha20Rng::seed_from_u64(seed))
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        lo + (hi - lo) * u
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn index(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as usize
    }

    /// Entries in `[-scale, scale]`, a quarter of them snapped to zero.
    fn vec_with_zeros(&mut self, n: usize, scale: f64) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v = self.uniform(-scale, scale);
                if self.uniform(0.0, 1.0) < 0.25 {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    }
}

fn random_cone(s: &mut Sampler) -> (ConeSpec, usize) {
    if s.uniform(0.0, 1.0) < 0.2 {
        (ConeSpec::nonneg_scalar(), 1)
    } else {
        let n = s.index(1, 24);
        (ConeSpec::nonneg_grid(1.0 / (n as f64 + 1.0)), n)
    }
}

/// Projection triple, nonexpansiveness, `grad beta = gamma (id - pi)` against
/// central differences, and penalty zero iff feasible.
pub fn cone_identities(seed: u64, instances: usize) -> Result<Vec<CheckOutcome>> {
    let mut s = Sampler::new(seed);
    let mut triple = CheckOutcome::new("cone.projection_triple", 1e-12);
    let mut nonexp = CheckOutcome::new("cone.nonexpansive", 1e-12);
    let mut grad = CheckOutcome::new("cone.penalty_gradient", 1e-6);
    let mut zero = CheckOutcome::new("cone.penalty_zero_iff_feasible", 0.0);
    for _ in 0..instances {
        let (cone, n) = random_cone(&mut s);
        let k = s.vec_with_zeros(n, 5.0);
        let p = cone::project(&cone, &k)?;
        let r: Vec<f64> = k.iter().zip(&p).map(|(a, b)| a - b).collect();
        let w: Vec<f64> = s.vec(n, 0.0, 3.0);
        let scale = 1.0 + cone.norm_sq(&k);
        let membership = p.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
        let polar = cone.inner(&r, &w).max(0.0) / scale;
        let orth = cone.inner(&r, &p).abs() / scale;
        triple.record(membership.max(polar).max(orth));

        let k2: Vec<f64> = s.vec(n, -5.0, 5.0);
        let p2 = cone::project(&cone, &k2)?;
        let dp: Vec<f64> = p.iter().zip(&p2).map(|(a, b)| a - b).collect();
        let dk: Vec<f64> = k.iter().zip(&k2).map(|(a, b)| a - b).collect();
        nonexp.record((cone.norm_sq(&dp).sqrt() - cone.norm_sq(&dk).sqrt()).max(0.0) / scale.sqrt());

        let gamma = 10f64.powf(s.uniform(-2.0, 4.0));
        let beta = |k: &[f64]| -> Result<f64> {
            let i: Vec<f64> = k.iter().map(|v| -v).collect();
            Ok(cone::penalty(&cone, gamma, &i)?.value)
        };
        // central differences are exact to O(eps^2) only away from the kink
        let k = s.vec(n, -5.0, 5.0);
        let r: Vec<f64> = k.iter().zip(cone::project(&cone, &k)?).map(|(a, b)| a - b).collect();
        let d = s.vec(n, -1.0, 1.0);
        let eps = 1e-6;
        let kp: Vec<f64> = k.iter().zip(&d).map(|(a, b)| a + eps * b).collect();
        let km: Vec<f64> = k.iter().zip(&d).map(|(a, b)| a - eps * b).collect();
        let fd = (beta(&kp)? - beta(&km)?) / (2.0 * eps);
        let an = gamma * cone.inner(&r, &d);
        let near_kink = k.iter().any(|v| v.abs() < 2.0 * eps);
        if !near_kink {
            grad.record((fd - an).abs() / an.abs().max(gamma.max(1.0) * 1e-3));
        }

        let i = s.vec_with_zeros(n, 1.0);
        let feasible = i.iter().all(|v| *v <= 0.0);
        let value = cone::penalty(&cone, gamma, &i)?.value;
        if (value == 0.0) != feasible {
            zero.fail();
        } else {
            zero.record(0.0);
        }
    }
    Ok(vec![triple, nonexp, grad, zero])
}

/// Convexity, monotonicity, translation equivariance and positive
/// homogeneity (the latter two only for coherent measures), plus a duality
/// gap at the returned subgradient.
pub fn risk_axioms(measure: &RiskMeasure, seed: u64, instances: usize) -> Result<Vec<CheckOutcome>> {
    measure.validate()?;
    let label = match measure {
        RiskMeasure::Expectation => "expectation".to_string(),
        RiskMeasure::Avar { alpha } => format!("avar({alpha})"),
        RiskMeasure::SmoothedAvar { alpha, tau } => format!("smoothed-avar({alpha},{tau})"),
    };
    let mut s = Sampler::new(seed);
    let mut convex = CheckOutcome::new(format!("risk.{label}.convexity"), 1e-12);
    let mut mono = CheckOutcome::new(format!("risk.{label}.monotonicity"), 1e-12);
    let mut trans = CheckOutcome::new(format!("risk.{label}.translation"), 1e-12);
    let mut homog = CheckOutcome::new(format!("risk.{label}.homogeneity"), 1e-12);
    let mut gap = CheckOutcome::new(format!("risk.{label}.duality_gap"), 1e-12);
    for _ in 0..instances {
        let n = s.index(1, 12);
        let raw = s.vec(n, 0.05, 1.0);
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let xi = s.vec(n, -5.0, 5.0);
        let eta = s.vec(n, -5.0, 5.0);
        let r = |v: &[f64]| measure.evaluate(v, &w);
        let rx = r(&xi)?;
        let scale = 1.0 + xi.iter().chain(&eta).map(|v| v.abs()).fold(0.0, f64::max);

        let l = s.uniform(0.0, 1.0);
        let mix: Vec<f64> = xi.iter().zip(&eta).map(|(a, b)| l * a + (1.0 - l) * b).collect();
        convex.record((r(&mix)? - l * rx - (1.0 - l) * r(&eta)?).max(0.0) / scale);

        let up: Vec<f64> = xi.iter().map(|v| v + s.uniform(0.0, 2.0)).collect();
        mono.record((rx - r(&up)?).max(0.0) / scale);

        if measure.is_coherent() {
            let c = s.uniform(-3.0, 3.0);
            let shifted: Vec<f64> = xi.iter().map(|v| v + c).collect();
            trans.record((r(&shifted)? - rx - c).abs() / scale);
            let t = s.uniform(0.01, 3.0);
            let scaled: Vec<f64> = xi.iter().map(|v| t * v).collect();
            homog.record((r(&scaled)? - t * rx).abs() / scale);
        }

        let theta = measure.subgradient(&xi, &w)?.theta;
        let g = measure.duality_gap(&xi, &theta, &w)?;
        match g.infeasible {
            Some(_) => gap.fail(),
            None => gap.record(g.gap.abs()),
        }
    }
    let mut out = vec![convex, mono];
    if measure.is_coherent() {
        out.push(trans);
        out.push(homog);
    }
    out.push(gap);
    Ok(out)
}

/// Relative error of the adjoint gradient against central differences of
/// `j_gamma` in `directions` random directions at a random control.
pub fn adjoint_gradient(data: &ProblemData, gamma: f64, seed: u64, directions: usize) -> Result<CheckOutcome> {
    let tol = match data.risk() {
        RiskMeasure::Expectation => 1e-6,
        _ => 1e-4,
    };
    let mut out = CheckOutcome::new("gradient.adjoint", tol);
    let mut s = Sampler::new(seed);
    let n = data.grid().n_interior();
    let raw: Vec<f64> = (0..n)
        .map(|j| {
            let (lo, hi) = (data.lower()[j], data.upper()[j]);
            let (lo, hi) = (lo.max(-20.0), hi.min(20.0));
            if lo < hi {
                s.uniform(lo, hi)
            } else {
                data.lower()[j]
            }
        })
        .collect();
    let x = data.clamp(&raw);
    let g = evaluate(data, gamma, &x)?.gradient;
    // RMS of <g, d> for d uniform on [-1, 1]^n; keeps nearly orthogonal
    // directions from amplifying rounding in the difference quotient.
    let typical = g.iter().map(|v| v * v).sum::<f64>().sqrt() / 3f64.sqrt();
    for _ in 0..directions {
        let d = s.vec(n, -1.0, 1.0);
        let eps = 1e-5;
        let xp: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + eps * b).collect();
        let xm: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a - eps * b).collect();
        let fd = (objective_only(data, gamma, &xp)? - objective_only(data, gamma, &xm)?) / (2.0 * eps);
        let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        out.record((fd - an).abs() / an.abs().max(typical).max(1e-8));
    }
    Ok(out)
}

/// `(A u, v)_h = (u, A v)_h` for every scenario operator.
pub fn operator_symmetry(data: &ProblemData, seed: u64, trials: usize) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new("pde.self_adjoint", 1e-10);
    let mut s = Sampler::new(seed);
    let grid = *data.grid();
    for k in 0..data.scenarios().len() {
        let op = data.operator(k);
        for _ in 0..trials {
            let u = s.vec(grid.n_interior(), -1.0, 1.0);
            let v = s.vec(grid.n_interior(), -1.0, 1.0);
            let au = op.apply(&u)?;
            let av = op.apply(&v)?;
            let lhs = inner_h(&grid, &au, &v)?;
            let rhs = inner_h(&grid, &u, &av)?;
            let scale = crate::grid::norm_h(&grid, &au)?.max(crate::grid::norm_h(&grid, &av)?).max(1.0);
            out.record((lhs - rhs).abs() / scale);
        }
    }
    Ok(out)
}

/// `(i'(x)[d1, d2], lambda)_H = <a1, d1> + <a2, d2>` against central
/// differences of the constraint map, per scenario.
pub fn constraint_adjoint(data: &ProblemData, seed: u64) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new("constraint.adjoint", 1e-6);
    let mut s = Sampler::new(seed);
    let grid = *data.grid();
    let n = grid.n_interior();
    let map = data.constraint();
    let cone = data.cone();
    let x1: GridFunction = s.vec(n, -5.0, 5.0).into();
    for k in 0..data.scenarios().len() {
        let x2 = data.solve_state(k, &x1)?;
        let bound = data.scenarios().bound(k);
        let m = map.value_len(&grid);
        let lambda = s.vec(m, 0.0, 2.0);
        let (a1, a2) = cone::constraint_adjoints(map, &grid, &x1, &x2, bound, &lambda)?;
        let d1 = s.vec(n, -1.0, 1.0);
        let d2 = s.vec(n, -1.0, 1.0);
        let eps = 1e-6;
        let shift = |t: f64| -> Result<Vec<f64>> {
            let y1: Vec<f64> = x1.iter().zip(&d1).map(|(a, b)| a + t * b).collect();
            let y2: Vec<f64> = x2.iter().zip(&d2).map(|(a, b)| a + t * b).collect();
            cone::constraint_eval(map, &grid, &y1, &y2, bound)
        };
        let ip = shift(eps)?;
        let im = shift(-eps)?;
        let di: Vec<f64> = ip.iter().zip(&im).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let lhs = cone.inner(&di, &lambda);
        let rhs: f64 = a1.iter().zip(&d1).chain(a2.iter().zip(&d2)).map(|(a, b)| a * b).sum();
        out.record((lhs - rhs).abs() / rhs.abs().max(1.0));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckOutcome>,
    pub notes: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| !c.passed)
    }
}

/// Instances per randomized identity in [`run_battery`].
pub const BATTERY_INSTANCES: usize = 1000;

/// Every check on the configured problem at penalty `gamma`.
pub fn run_battery(data: &ProblemData, gamma: f64, seed: u64) -> Result<VerifyReport> {
    let mut checks = cone_identities(seed, BATTERY_INSTANCES)?;
    let mut measures = vec![
        RiskMeasure::Expectation,
        RiskMeasure::Avar { alpha: 0.1 },
        RiskMeasure::Avar { alpha: 0.5 },
        RiskMeasure::Avar { alpha: 0.9 },
    ];
    if !measures.contains(data.risk()) {
        measures.push(*data.risk());
    }
    for (j, m) in measures.iter().enumerate() {
        checks.extend(risk_axioms(m, seed.wrapping_add(1 + j as u64), BATTERY_INSTANCES)?);
    }
    checks.push(operator_symmetry(data, seed, 4)?);
    checks.push(constraint_adjoint(data, seed)?);
    checks.push(adjoint_gradient(data, gamma, seed, 10)?);

    let mut notes = Vec::new();
    let map = data.constraint();
    if map.kind == ConstraintKind::Gradient && map.delta == 0.0 {
        notes.push(
            "gradient constraint with delta = 0: where the discrete derivative vanishes the \
             zero element of the subdifferential is used"
                .into(),
        );
    }
    if data.cone().kind == ConeKind::NonnegScalar {
        notes.push("scalar constraint: one multiplier per scenario".into());
    }
    if !data.risk().is_smooth() {
        notes.push("nonsmooth risk measure: gradient check uses the selected subgradient".into());
    }
    Ok(VerifyReport { checks, notes })
}
