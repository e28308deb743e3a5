//! Risk measures on a finite probability space.
//!
//! `Avar { alpha }` is the average value-at-risk of the upper `alpha` tail,
//! `min_t { t + E[max(0, xi - t)] / alpha }`; its dual set is the densities
//! `0 <= theta <= 1/alpha` with `E[theta] = 1`. `SmoothedAvar` replaces the
//! ramp by `tau * softplus(. / tau)`, which makes the measure differentiable
//! but no longer positively homogeneous.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Feasibility tolerance for dual densities.
const DUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RiskMeasure {
    Expectation,
    Avar {
        alpha: f64,
    },
    /// AVaR with the epigraph kink replaced by a softplus of temperature `tau`.
    SmoothedAvar {
        alpha: f64,
        #[serde(rename = "smoothing_tau")]
        tau: f64,
    },
}

/// A density `theta` with respect to the scenario weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSubgradient {
    pub theta: Vec<f64>,
}

/// `R[xi] - (E[xi theta] - R^*[theta])`, or an infeasibility report.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityGap {
    pub gap: f64,
    pub infeasible: Option<String>,
}

impl RiskMeasure {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RiskMeasure::Expectation => Ok(()),
            RiskMeasure::Avar { alpha } => check_alpha(alpha),
            RiskMeasure::SmoothedAvar { alpha, tau } => {
                check_alpha(alpha)?;
                if tau > 0.0 && tau.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("risk.smoothing_tau", "must be positive and finite"))
                }
            }
        }
    }

    /// True when the measure satisfies translation equivariance and positive
    /// homogeneity (coherent in the full sense).
    pub fn is_coherent(&self) -> bool {
        !matches!(self, RiskMeasure::SmoothedAvar { .. })
    }

    /// True when `evaluate` is differentiable in `xi`.
    pub fn is_smooth(&self) -> bool {
        match *self {
            RiskMeasure::Expectation | RiskMeasure::SmoothedAvar { .. } => true,
            RiskMeasure::Avar { alpha } => alpha >= 1.0,
        }
    }

    pub fn evaluate(&self, xi: &[f64], weights: &[f64]) -> Result<f64> {
        check_samples(xi, weights)?;
        Ok(match *self {
            RiskMeasure::Expectation => expectation(xi, weights),
            RiskMeasure::Avar { alpha } => {
                let t = upper_quantile(xi, weights, alpha);
                t + xi
                    .iter()
                    .zip(weights)
                    .map(|(x, p)| p * (x - t).max(0.0))
                    .sum::<f64>()
                    / alpha
            }
            RiskMeasure::SmoothedAvar { alpha, tau } => {
                if alpha >= 1.0 {
                    return Ok(expectation(xi, weights));
                }
                let t = smoothed_threshold(xi, weights, alpha, tau);
                t + xi
                    .iter()
                    .zip(weights)
                    .map(|(x, p)| p * tau * softplus((x - t) / tau))
                    .sum::<f64>()
                    / alpha
            }
        })
    }

    pub fn subgradient(&self, xi: &[f64], weights: &[f64]) -> Result<RiskSubgradient> {
        check_samples(xi, weights)?;
        let n = xi.len();
        let theta = match *self {
            RiskMeasure::Expectation => vec![1.0; n],
            RiskMeasure::Avar { alpha } => avar_density(xi, weights, alpha),
            RiskMeasure::SmoothedAvar { alpha, tau } => {
                if alpha >= 1.0 {
                    vec![1.0; n]
                } else {
                    let t = smoothed_threshold(xi, weights, alpha, tau);
                    xi.iter().map(|x| sigmoid((x - t) / tau) / alpha).collect()
                }
            }
        };
        Ok(RiskSubgradient { theta })
    }

    /// Convex conjugate `R^*[theta]`; `Err` carries the reason when `theta`
    /// lies outside the domain.
    pub fn conjugate(&self, theta: &[f64], weights: &[f64]) -> std::result::Result<f64, String> {
        let mass = expectation(theta, weights);
        if (mass - 1.0).abs() > DUAL_TOL * theta.len().max(1) as f64 {
            return Err(format!("E[theta] = {mass}, expected 1"));
        }
        match *self {
            RiskMeasure::Expectation => {
                match theta.iter().position(|t| (t - 1.0).abs() > DUAL_TOL) {
                    Some(k) => Err(format!("theta[{k}] = {} but expectation requires 1", theta[k])),
                    None => Ok(0.0),
                }
            }
            RiskMeasure::Avar { alpha } => {
                let cap = 1.0 / alpha;
                match theta
                    .iter()
                    .position(|&t| t < -DUAL_TOL || t > cap + DUAL_TOL * cap)
                {
                    Some(k) => Err(format!("theta[{k}] = {} outside [0, {cap}]", theta[k])),
                    None => Ok(0.0),
                }
            }
            RiskMeasure::SmoothedAvar { alpha, tau } => {
                if alpha >= 1.0 {
                    return RiskMeasure::Expectation.conjugate(theta, weights);
                }
                let mut total = 0.0;
                for (k, (&t, p)) in theta.iter().zip(weights).enumerate() {
                    let s = alpha * t;
                    if !(-DUAL_TOL..=1.0 + DUAL_TOL).contains(&s) {
                        return Err(format!("theta[{k}] = {t} outside [0, {}]", 1.0 / alpha));
                    }
                    total += p * neg_binary_entropy(s.clamp(0.0, 1.0));
                }
                Ok(tau * total / alpha)
            }
        }
    }

    pub fn duality_gap(&self, xi: &[f64], theta: &[f64], weights: &[f64]) -> Result<DualityGap> {
        check_samples(xi, weights)?;
        check_len("density", xi.len(), theta.len())?;
        let value = self.evaluate(xi, weights)?;
        Ok(match self.conjugate(theta, weights) {
            Ok(conj) => {
                let pairing: f64 = xi
                    .iter()
                    .zip(theta)
                    .zip(weights)
                    .map(|((x, t), p)| p * x * t)
                    .sum();
                DualityGap {
                    gap: value - (pairing - conj),
                    infeasible: None,
                }
            }
            Err(reason) => DualityGap {
                gap: f64::INFINITY,
                infeasible: Some(reason),
            },
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("risk.alpha", format!("must lie in (0, 1], got {alpha}")))
    }
}

fn check_samples(xi: &[f64], weights: &[f64]) -> Result<()> {
    if xi.is_empty() {
        return Err(Error::invalid("samples", "empty sample"));
    }
    check_len("risk weights", xi.len(), weights.len())
}

fn expectation(xi: &[f64], weights: &[f64]) -> f64 {
    xi.iter().zip(weights).map(|(x, p)| x * p).sum()
}

/// Scenario order by decreasing value; ties in ascending index.
fn descending_order(xi: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..xi.len()).collect();
    order.sort_by(|&a, &b| xi[b].total_cmp(&xi[a]).then(a.cmp(&b)));
    order
}

/// Smallest value whose upper tail carries probability at least `alpha`.
fn upper_quantile(xi: &[f64], weights: &[f64], alpha: f64) -> f64 {
    let order = descending_order(xi);
    let mut mass = 0.0;
    for &k in &order {
        mass += weights[k];
        if mass >= alpha {
            return xi[k];
        }
    }
    xi[*order.last().unwrap()]
}

fn avar_density(xi: &[f64], weights: &[f64], alpha: f64) -> Vec<f64> {
    let n = xi.len();
    let (lo, hi) = xi
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    if lo == hi {
        return vec![1.0; n];
    }
    let mut theta = vec![0.0; n];
    let mut remaining = alpha;
    for k in descending_order(xi) {
        if remaining <= 1e-15 * alpha {
            break;
        }
        let p = weights[k];
        if p == 0.0 {
            continue;
        }
        let take = p.min(remaining);
        theta[k] = take / (p * alpha);
        remaining -= take;
    }
    theta
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn neg_binary_entropy(s: f64) -> f64 {
    let xlogx = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
    xlogx(s) + xlogx(1.0 - s)
}

/// Root of `E[sigmoid((xi - t)/tau)] = alpha`, the minimizer of the smoothed
/// epigraph form.
fn smoothed_threshold(xi: &[f64], weights: &[f64], alpha: f64, tau: f64) -> f64 {
    let (min, max) = xi
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let tail = |t: f64| -> f64 {
        xi.iter()
            .zip(weights)
            .map(|(x, p)| p * sigmoid((x - t) / tau))
            .sum::<f64>()
            - alpha
    };
    let reach = 50.0 + (1.0 / (1.0 - alpha)).ln() + (1.0 / alpha).ln();
    let mut lo = min - tau * reach;
    let mut hi = max + tau * reach;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if tail(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
