//! Uniform grid on the unit interval and the finite-difference diffusion
//! operator `-(a u')'` with homogeneous Dirichlet boundary values.
//!
//! Grid functions store interior nodal values only; the boundary values are
//! implicitly zero. All spatial inner products use the lumped mass `h`, so
//! that `(u, v)_h = sum_j h u_j v_j`.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Uniform mesh of `(0, 1)` with `n_interior` interior nodes `s_j = j h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n_interior: usize,
    h: f64,
}

impl Grid {
    pub fn new(n_interior: usize) -> Result<Self> {
        if n_interior == 0 {
            return Err(Error::invalid("n_interior", "must be positive"));
        }
        Ok(Grid {
            n_interior,
            h: 1.0 / (n_interior as f64 + 1.0),
        })
    }

    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    /// Number of cells, `n_interior + 1`.
    pub fn n_cells(&self) -> usize {
        self.n_interior + 1
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Interior node coordinates.
    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.n_interior).map(|j| j as f64 * self.h).collect()
    }

    /// Cell midpoints `(j + 1/2) h` for `j = 0..=n_interior`.
    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.n_cells())
            .map(|j| (j as f64 + 0.5) * self.h)
            .collect()
    }

    pub fn zeros(&self) -> GridFunction {
        GridFunction::zeros(self.n_interior)
    }

    /// Samples `f` at the interior nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction::new(self.nodes().into_iter().map(f).collect())
    }
}

/// Interior nodal values of a function on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridFunction(Vec<f64>);

impl GridFunction {
    pub fn new(values: Vec<f64>) -> Self {
        GridFunction(values)
    }

    pub fn zeros(n: usize) -> Self {
        GridFunction(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Self {
        GridFunction(vec![value; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for GridFunction {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GridFunction {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for GridFunction {
    fn from(values: Vec<f64>) -> Self {
        GridFunction(values)
    }
}

/// Lumped-mass inner product `sum_j h u_j v_j`.
pub fn inner_h(grid: &Grid, u: &[f64], v: &[f64]) -> Result<f64> {
    check_len("inner_h left operand", grid.n_interior(), u.len())?;
    check_len("inner_h right operand", grid.n_interior(), v.len())?;
    Ok(weighted_dot(grid.h(), u, v))
}

/// `sqrt((u, u)_h)`.
pub fn norm_h(grid: &Grid, u: &[f64]) -> Result<f64> {
    inner_h(grid, u, u).map(f64::sqrt)
}

pub(crate) fn weighted_dot(weight: f64, u: &[f64], v: &[f64]) -> f64 {
    weight * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
}

/// Assembled three-point stencil of `-(a u')'` together with its LDL^T
/// factorization.
///
/// Row `j` has diagonal `(a_{j-1/2} + a_{j+1/2}) / h^2` and off-diagonals
/// `-a_{j -/+ 1/2} / h^2`.
#[derive(Debug, Clone)]
pub struct EllipticOperator {
    grid: Grid,
    conductivity: Vec<f64>,
    diag: Vec<f64>,
    off: Vec<f64>,
    // LDL^T: unit lower bidiagonal multipliers and pivots.
    lower: Vec<f64>,
    pivots: Vec<f64>,
}

impl EllipticOperator {
    /// Assembles the stencil from cell-midpoint conductivities (`n_interior + 1`
    /// entries, all strictly positive).
    pub fn assemble(grid: &Grid, conductivity: &[f64]) -> Result<Self> {
        check_len("conductivity", grid.n_cells(), conductivity.len())?;
        if let Some((index, &value)) = conductivity
            .iter()
            .enumerate()
            .find(|(_, a)| !(**a > 0.0 && a.is_finite()))
        {
            return Err(Error::EllipticityViolation { index, value });
        }
        let n = grid.n_interior();
        let inv_h2 = 1.0 / (grid.h() * grid.h());
        let diag: Vec<f64> = (0..n)
            .map(|j| (conductivity[j] + conductivity[j + 1]) * inv_h2)
            .collect();
        let off: Vec<f64> = (1..n).map(|j| -conductivity[j] * inv_h2).collect();

        let mut lower = vec![0.0; n.saturating_sub(1)];
        let mut pivots = vec![0.0; n];
        pivots[0] = diag[0];
        for j in 1..n {
            let prev = pivots[j - 1];
            if !(prev > 0.0) || !prev.is_finite() {
                return Err(Error::DegeneratePivot {
                    row: j - 1,
                    pivot: prev,
                });
            }
            lower[j - 1] = off[j - 1] / prev;
            pivots[j] = diag[j] - lower[j - 1] * off[j - 1];
        }
        if !(pivots[n - 1] > 0.0) || !pivots[n - 1].is_finite() {
            return Err(Error::DegeneratePivot {
                row: n - 1,
                pivot: pivots[n - 1],
            });
        }

        Ok(EllipticOperator {
            grid: *grid,
            conductivity: conductivity.to_vec(),
            diag,
            off,
            lower,
            pivots,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn conductivity(&self) -> &[f64] {
        &self.conductivity
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Sub/super-diagonal (the matrix is symmetric).
    pub fn off_diagonal(&self) -> &[f64] {
        &self.off
    }

    /// Irreducible diagonal dominance with negative off-diagonals: every row
    /// weakly dominant, at least one strictly, and no zero coupling. Together
    /// with symmetry this certifies positive definiteness.
    pub fn is_diagonally_dominant(&self) -> bool {
        let n = self.diag.len();
        let mut strict = false;
        for j in 0..n {
            let left = if j > 0 { self.off[j - 1] } else { 0.0 };
            let right = if j + 1 < n { self.off[j] } else { 0.0 };
            let offsum = left.abs() + right.abs();
            if left > 0.0 || right > 0.0 || offsum > self.diag[j] {
                return false;
            }
            strict |= offsum < self.diag[j];
        }
        strict && self.off.iter().all(|&o| o < 0.0)
    }

    /// Matrix-vector product.
    pub fn apply(&self, u: &[f64]) -> Result<GridFunction> {
        let n = self.diag.len();
        check_len("operator argument", n, u.len())?;
        let mut out = vec![0.0; n];
        for j in 0..n {
            let mut acc = self.diag[j] * u[j];
            if j > 0 {
                acc += self.off[j - 1] * u[j - 1];
            }
            if j + 1 < n {
                acc += self.off[j] * u[j + 1];
            }
            out[j] = acc;
        }
        Ok(GridFunction(out))
    }

    /// Solves `A u = rhs` by tridiagonal elimination (Thomas algorithm on the
    /// stored LDL^T factors).
    pub fn solve_state(&self, rhs: &[f64]) -> Result<GridFunction> {
        let n = self.diag.len();
        check_len("right-hand side", n, rhs.len())?;
        let mut u = rhs.to_vec();
        for j in 1..n {
            u[j] -= self.lower[j - 1] * u[j - 1];
        }
        for (uj, d) in u.iter_mut().zip(&self.pivots) {
            *uj /= d;
        }
        for j in (0..n.saturating_sub(1)).rev() {
            u[j] -= self.lower[j] * u[j + 1];
        }
        Ok(GridFunction(u))
    }

    /// Solves `A^T v = rhs`. The stencil is symmetric, so this is the state
    /// solve.
    pub fn apply_adjoint_solve(&self, rhs: &[f64]) -> Result<GridFunction> {
        self.solve_state(rhs)
    }

    /// Dense copy of the matrix, row-major.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.diag.len();
        let mut m = vec![vec![0.0; n]; n];
        for j in 0..n {
            m[j][j] = self.diag[j];
            if j + 1 < n {
                m[j][j + 1] = self.off[j];
                m[j + 1][j] = self.off[j];
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    fn lcg(state: &mut u64) -> f64 {
        *state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (*state >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn grid_invariants() {
        for n in [1, 2, 7, 127] {
            let g = Grid::new(n).unwrap();
            assert!((g.h() * (n as f64 + 1.0) - 1.0).abs() < 1e-15);
            let nodes = g.nodes();
            assert!(nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(nodes.iter().all(|&s| s > 0.0 && s < 1.0));
        }
        assert!(Grid::new(0).is_err());
    }

    #[test]
    fn stencil_unit_conductivity() {
        let g = Grid::new(3).unwrap();
        let op = EllipticOperator::assemble(&g, &[1.0; 4]).unwrap();
        assert_eq!(op.diagonal(), &[32.0, 32.0, 32.0]);
        assert_eq!(op.off_diagonal(), &[-16.0, -16.0]);
        assert!(op.is_diagonally_dominant());
    }

    #[test]
    fn stencil_single_node() {
        let g = Grid::new(1).unwrap();
        let op = EllipticOperator::assemble(&g, &[2.0, 2.0]).unwrap();
        assert_eq!(op.diagonal(), &[16.0]);
        assert!(op.off_diagonal().is_empty());
    }

    #[test]
    fn stencil_matches_literal_loop() {
        let g = Grid::new(5).unwrap();
        let a = [1.0, 2.5, 0.5, 3.0, 1.5, 0.75];
        let op = EllipticOperator::assemble(&g, &a).unwrap();
        // literal assembly: 36 * [[a0+a1, -a1, ...]]
        let h2 = 1.0 / 36.0;
        let mut expected = vec![vec![0.0; 5]; 5];
        for i in 0..5 {
            expected[i][i] = (a[i] + a[i + 1]) / h2;
            if i > 0 {
                expected[i][i - 1] = -a[i] / h2;
            }
            if i < 4 {
                expected[i][i + 1] = -a[i + 1] / h2;
            }
        }
        assert_eq!(op.to_dense(), expected);
    }

    #[test]
    fn rejects_nonpositive_conductivity() {
        let g = Grid::new(3).unwrap();
        let err = EllipticOperator::assemble(&g, &[1.0, 0.0, 1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::EllipticityViolation { index: 1, .. }));
        assert!(EllipticOperator::assemble(&g, &[1.0, 1.0, -2.0, 1.0]).is_err());
        assert!(EllipticOperator::assemble(&g, &[1.0; 3]).is_err());
    }

    #[test]
    fn poisson_midpoint_value() {
        let g = Grid::new(199).unwrap();
        let op = EllipticOperator::assemble(&g, &vec![1.0; 200]).unwrap();
        let u = op.solve_state(&vec![1.0; 199]).unwrap();
        assert!((u[99] - 0.125).abs() < 1e-4);
        let zero = op.solve_state(&vec![0.0; 199]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    // The stencil is exact on quadratics, so this case carries no h^2 signal.
    #[test]
    fn quadratic_solution_exact_at_nodes() {
        for n in [25, 50, 100, 200] {
            let g = Grid::new(n).unwrap();
            let op = EllipticOperator::assemble(&g, &vec![1.0; n + 1]).unwrap();
            let u = op.solve_state(&vec![1.0; n]).unwrap();
            let err = g
                .nodes()
                .iter()
                .zip(u.iter())
                .map(|(s, v)| (v - s * (1.0 - s) / 2.0).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-12, "n = {n}: {err:e}");
        }
    }

    #[test]
    fn thomas_matches_dense_lu() {
        let mut seed = 7u64;
        let g = Grid::new(40).unwrap();
        let a: Vec<f64> = (0..41).map(|_| 0.2 + 3.0 * lcg(&mut seed)).collect();
        let rhs: Vec<f64> = (0..40).map(|_| lcg(&mut seed) - 0.5).collect();
        let op = EllipticOperator::assemble(&g, &a).unwrap();
        let u = op.solve_state(&rhs).unwrap();
        let reference = dense_lu_solve(op.to_dense(), rhs.clone());
        let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in u.iter().zip(&reference) {
            assert!((x - y).abs() <= 1e-12 * scale.max(1.0));
        }
        let residual = op.apply(&u).unwrap();
        let rnorm: f64 = residual
            .iter()
            .zip(&rhs)
            .map(|(r, b)| (r - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let bnorm: f64 = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(rnorm <= 1e-12 * bnorm);
        assert_eq!(op.apply_adjoint_solve(&rhs).unwrap(), u);
    }

    #[test]
    fn inner_product_examples() {
        let g = Grid::new(3).unwrap();
        assert!((inner_h(&g, &[1.0; 3], &[1.0; 3]).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(inner_h(&g, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!(inner_h(&g, &[1.0; 2], &[1.0; 3]).is_err());
    }

    #[test]
    fn inner_product_matches_trapezoid() {
        // with zero boundary values the trapezoid rule reduces to sum h u v
        let g = Grid::new(9).unwrap();
        let u = g.sample(|s| (3.0 * s).sin());
        let v = g.sample(|s| s * s - 0.3);
        let mut full_u = vec![0.0];
        full_u.extend_from_slice(&u);
        full_u.push(0.0);
        let mut full_v = vec![0.0];
        full_v.extend_from_slice(&v);
        full_v.push(0.0);
        let trap: f64 = full_u
            .windows(2)
            .zip(full_v.windows(2))
            .map(|(a, b)| 0.5 * g.h() * (a[0] * b[0] + a[1] * b[1]))
            .sum();
        assert!((inner_h(&g, &u, &v).unwrap() - trap).abs() < 1e-14);
    }

    #[test]
    fn solve_is_self_adjoint() {
        let mut seed = 99u64;
        let g = Grid::new(63).unwrap();
        let a: Vec<f64> = (0..64).map(|_| 0.5 + lcg(&mut seed)).collect();
        let op = EllipticOperator::assemble(&g, &a).unwrap();
        let r: Vec<f64> = (0..63).map(|_| lcg(&mut seed) - 0.5).collect();
        let q: Vec<f64> = (0..63).map(|_| lcg(&mut seed) - 0.5).collect();
        let lhs = inner_h(&g, &op.solve_state(&r).unwrap(), &q).unwrap();
        let rhs = inner_h(&g, &r, &op.solve_state(&q).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn second_order_convergence() {
        let sizes = [25usize, 50, 100, 200];
        let mut pts = Vec::new();
        for &n in &sizes {
            let g = Grid::new(n).unwrap();
            // n odd-free: use a forcing with non-polynomial exact solution
            let op = EllipticOperator::assemble(&g, &vec![1.0; n + 1]).unwrap();
            let pi = std::f64::consts::PI;
            let rhs = g.sample(|s| pi * pi * (pi * s).sin());
            let u = op.solve_state(&rhs).unwrap();
            let err = g
                .nodes()
                .iter()
                .zip(u.iter())
                .map(|(s, v)| ((pi * s).sin() - v).abs())
                .fold(0.0, f64::max);
            pts.push((g.h().ln(), err.ln()));
        }
        let slope = least_squares_slope(&pts);
        assert!((slope - 2.0).abs() < 0.1, "slope {slope}");
    }

    fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }
}
