//! Finite scenario sets: per-scenario conductivity fields, constraint bounds
//! and probability weights.
//!
//! Conductivities follow a truncated sine expansion
//! `a_k(s) = a0 + sum_m xi_{k,m} sigma_m sin(m pi s)` evaluated at cell
//! midpoints, with `xi` uniform on `[-1, 1]`. Randomness comes from
//! ChaCha20 (`rand_chacha::ChaCha20Rng::seed_from_u64`); the conductivity
//! coefficients are drawn from stream 0 and the bound offsets from stream 1.
//! A uniform draw is `(next_u64() >> 11) * 2^-53`, mapped affinely to
//! `[-1, 1]`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::Grid;

/// Name of the pseudo-random generator, echoed in every output artifact.
pub const GENERATOR: &str = "ChaCha20Rng(seed_from_u64); stream0=conductivity, stream1=bounds; u=(next_u64>>11)*2^-53";

const TABLE_MAGIC: &str = "# riskpath-scenarios v1";

/// Where bound values live for a given constraint kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundLayout {
    /// One value per interior node.
    Nodes,
    /// One value per cell midpoint.
    Cells,
    /// A single scalar per scenario.
    Scalar,
}

impl BoundLayout {
    pub fn len(&self, grid: &Grid) -> usize {
        match self {
            BoundLayout::Nodes => grid.n_interior(),
            BoundLayout::Cells => grid.n_cells(),
            BoundLayout::Scalar => 1,
        }
    }
}

/// Deterministic part of the constraint bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BoundSpec {
    Constant { value: f64 },
    /// `intercept + slope * s`; a scalar bound uses the spatial mean.
    AffineInS { intercept: f64, slope: f64 },
    /// Whitespace-separated rows, one per scenario, each holding the full
    /// bound vector.
    PerScenarioFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_scenarios: usize,
    pub seed: u64,
    pub a0: f64,
    #[serde(default)]
    pub sigma: Vec<f64>,
    pub a_min: f64,
    pub bound_spec: BoundSpec,
    /// Amplitude of a per-scenario uniform shift added to the bound.
    #[serde(default)]
    pub bound_noise: f64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenarios == 0 {
            return Err(Error::invalid("scenarios.n_scenarios", "must be positive"));
        }
        if !(self.a_min > 0.0) {
            return Err(Error::invalid("scenarios.a_min", "must be strictly positive"));
        }
        if !(self.a0.is_finite()) || self.a0 <= 0.0 {
            return Err(Error::invalid("scenarios.a0", "must be positive and finite"));
        }
        if self.sigma.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("scenarios.sigma", "entries must be finite"));
        }
        if !(self.bound_noise >= 0.0) || !self.bound_noise.is_finite() {
            return Err(Error::invalid("scenarios.bound_noise", "must be finite and nonnegative"));
        }
        Ok(())
    }

    /// True when `a0 - sum |sigma_m|` can fall below `a_min`, i.e. when the
    /// clipping in [`sample`] may activate.
    pub fn clipping_possible(&self) -> bool {
        self.a0 - self.sigma.iter().map(|s| s.abs()).sum::<f64>() <= self.a_min
    }
}

/// A finite probability space with its random data.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    weights: Vec<f64>,
    seed: u64,
    a_min: f64,
    conductivities: Vec<Vec<f64>>,
    bounds: Vec<Vec<f64>>,
}

impl ScenarioSet {
    /// Builds a set from explicit data, checking the weight and ellipticity
    /// invariants.
    pub fn from_parts(
        weights: Vec<f64>,
        conductivities: Vec<Vec<f64>>,
        bounds: Vec<Vec<f64>>,
        seed: u64,
        a_min: f64,
    ) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::invalid("weights", "scenario set is empty"));
        }
        check_len("conductivity fields", n, conductivities.len())?;
        check_len("bound fields", n, bounds.len())?;
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("weights", "must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("weights", format!("sum to {total}, expected 1")));
        }
        if !(a_min > 0.0) {
            return Err(Error::invalid("a_min", "must be strictly positive"));
        }
        for field in &conductivities {
            if let Some((index, &value)) = field.iter().enumerate().find(|(_, a)| !(**a >= a_min)) {
                return Err(Error::EllipticityViolation { index, value });
            }
        }
        Ok(ScenarioSet {
            weights,
            seed,
            a_min,
            conductivities,
            bounds,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn a_min(&self) -> f64 {
        self.a_min
    }

    pub fn conductivity(&self, k: usize) -> &[f64] {
        &self.conductivities[k]
    }

    pub fn bound(&self, k: usize) -> &[f64] {
        &self.bounds[k]
    }

    /// Serializes the set as a flat text table: one row per scenario holding
    /// the weight, the conductivity cells and the bound values.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let cells = self.conductivities[0].len();
        let nb = self.bounds[0].len();
        writeln!(out, "{TABLE_MAGIC}").unwrap();
        writeln!(
            out,
            "# n_scenarios={} cells={} bounds={} seed={} a_min={:e}",
            self.len(),
            cells,
            nb,
            self.seed,
            self.a_min
        )
        .unwrap();
        for k in 0..self.len() {
            let mut row = vec![format!("{:e}", self.weights[k])];
            row.extend(self.conductivities[k].iter().map(|v| format!("{v:e}")));
            row.extend(self.bounds[k].iter().map(|v| format!("{v:e}")));
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == TABLE_MAGIC => {}
            _ => {
                return Err(Error::ScenarioTable {
                    line: 1,
                    reason: format!("expected `{TABLE_MAGIC}`"),
                })
            }
        }
        let (_, header) = lines.next().ok_or(Error::ScenarioTable {
            line: 2,
            reason: "missing header".into(),
        })?;
        let mut n = None;
        let mut cells = None;
        let mut nb = None;
        let mut seed = 0u64;
        let mut a_min = None;
        for tok in header.trim_start_matches('#').split_whitespace() {
            let (key, value) = tok.split_once('=').ok_or(Error::ScenarioTable {
                line: 2,
                reason: format!("bad header token `{tok}`"),
            })?;
            let bad = |_| Error::ScenarioTable {
                line: 2,
                reason: format!("bad value for `{key}`"),
            };
            match key {
                "n_scenarios" => n = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "cells" => cells = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "bounds" => nb = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "seed" => seed = value.parse::<u64>().map_err(|e| bad(e.to_string()))?,
                "a_min" => a_min = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                _ => {}
            }
        }
        let missing = |what: &str| Error::ScenarioTable {
            line: 2,
            reason: format!("header lacks `{what}`"),
        };
        let n = n.ok_or_else(|| missing("n_scenarios"))?;
        let cells = cells.ok_or_else(|| missing("cells"))?;
        let nb = nb.ok_or_else(|| missing("bounds"))?;
        let a_min = a_min.ok_or_else(|| missing("a_min"))?;

        let mut weights = Vec::with_capacity(n);
        let mut conductivities = Vec::with_capacity(n);
        let mut bounds = Vec::with_capacity(n);
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::ScenarioTable {
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            if values.len() != 1 + cells + nb {
                return Err(Error::ScenarioTable {
                    line: idx + 1,
                    reason: format!("expected {} values, found {}", 1 + cells + nb, values.len()),
                });
            }
            weights.push(values[0]);
            conductivities.push(values[1..1 + cells].to_vec());
            bounds.push(values[1 + cells..].to_vec());
        }
        if weights.len() != n {
            return Err(Error::ScenarioTable {
                line: 2,
                reason: format!("header announces {n} scenarios, found {}", weights.len()),
            });
        }
        ScenarioSet::from_parts(weights, conductivities, bounds, seed, a_min)
    }
}

fn uniform_pm1(rng: &mut ChaCha20Rng) -> f64 {
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    2.0 * u - 1.0
}

/// Draws a scenario set on `grid` with bounds laid out per `layout`.
pub fn sample(config: &ScenarioConfig, grid: &Grid, layout: BoundLayout) -> Result<ScenarioSet> {
    config.validate()?;
    let n = config.n_scenarios;
    let midpoints = grid.midpoints();
    let pi = std::f64::consts::PI;

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(0);
    let mut conductivities = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: Vec<f64> = config.sigma.iter().map(|_| uniform_pm1(&mut rng)).collect();
        let field = midpoints
            .iter()
            .map(|&s| {
                let a = config.a0
                    + xi
                        .iter()
                        .zip(&config.sigma)
                        .enumerate()
                        .map(|(m, (x, sig))| x * sig * ((m + 1) as f64 * pi * s).sin())
                        .sum::<f64>();
                a.max(config.a_min)
            })
            .collect();
        conductivities.push(field);
    }

    let base = base_bound(&config.bound_spec, grid, layout, n)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let bounds = base
        .into_iter()
        .map(|mut b| {
            let shift = config.bound_noise * uniform_pm1(&mut rng);
            b.iter_mut().for_each(|v| *v += shift);
            b
        })
        .collect();

    let weights = vec![1.0 / n as f64; n];
    ScenarioSet::from_parts(weights, conductivities, bounds, config.seed, config.a_min)
}

fn base_bound(spec: &BoundSpec, grid: &Grid, layout: BoundLayout, n: usize) -> Result<Vec<Vec<f64>>> {
    let points = match layout {
        BoundLayout::Nodes => grid.nodes(),
        BoundLayout::Cells => grid.midpoints(),
        BoundLayout::Scalar => vec![0.5],
    };
    match spec {
        BoundSpec::Constant { value } => Ok(vec![vec![*value; points.len()]; n]),
        BoundSpec::AffineInS { intercept, slope } => {
            let row: Vec<f64> = points.iter().map(|s| intercept + slope * s).collect();
            Ok(vec![row; n])
        }
        BoundSpec::PerScenarioFile { path } => read_bound_file(path, layout.len(grid), n),
    }
}

fn read_bound_file(path: &Path, len: usize, n: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.split_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::ScenarioTable {
                    line: i + 1,
                    reason: e.to_string(),
                })
        })
        .collect::<Result<_>>()?;
    check_len("bound file rows", n, rows.len())?;
    for row in &rows {
        check_len("bound file row", len, row.len())?;
    }
    Ok(rows)
}

/// `sum_k p_k v_k`.
pub fn empirical_expectation(set: &ScenarioSet, values: &[f64]) -> Result<f64> {
    check_len("scenario values", set.len(), values.len())?;
    Ok(set.weights.iter().zip(values).map(|(p, v)| p * v).sum())
}
