//! Nonnegativity cones, their projections, the Moreau-Yosida penalty
//! `beta_gamma(k) = gamma/2 |k - P(k)|_H^2` with gradient
//! `gamma (k - P(k))`, and the three constraint maps `i(x1, x2)` (mixed
//! control/state, state volume, state gradient) with their partial adjoints.
//!
//! A constraint holds when `i <= 0`, i.e. when `-i` lies in the cone. The
//! penalty is applied to `k = -i`, so its value is `gamma/2 |max(0, i)|_H^2`
//! and the associated multiplier is `gamma max(0, i)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::{weighted_dot, Grid};
use crate::scenario::BoundLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConeKind {
    /// Pointwise nonnegative grid functions in the lumped `L^2` space.
    NonnegGrid,
    /// The half line.
    NonnegScalar,
}

/// A nonnegativity cone together with the inner product of its ambient
/// Hilbert space (`weight * sum a_j b_j`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeSpec {
    pub kind: ConeKind,
    pub weight: f64,
}

impl ConeSpec {
    pub fn nonneg_grid(h: f64) -> Self {
        ConeSpec {
            kind: ConeKind::NonnegGrid,
            weight: h,
        }
    }

    pub fn nonneg_scalar() -> Self {
        ConeSpec {
            kind: ConeKind::NonnegScalar,
            weight: 1.0,
        }
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        weighted_dot(self.weight, a, b)
    }

    pub fn norm_sq(&self, a: &[f64]) -> f64 {
        self.inner(a, a)
    }

    /// `weight * sum |a_j|`, the discrete `L^1` norm.
    pub fn norm_l1(&self, a: &[f64]) -> f64 {
        self.weight * a.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn check(&self, k: &[f64]) -> Result<()> {
        if self.kind == ConeKind::NonnegScalar {
            check_len("scalar cone element", 1, k.len())?;
        }
        Ok(())
    }
}

/// Projection onto the cone: pointwise `max(0, k)`.
pub fn project(cone: &ConeSpec, k: &[f64]) -> Result<Vec<f64>> {
    cone.check(k)?;
    Ok(k.iter().map(|&v| v.max(0.0)).collect())
}

/// Value of the Moreau-Yosida penalty at `-i_value`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyValue {
    pub value: f64,
    /// `max(0, i)`, the infeasible part of the constraint.
    pub residual: Vec<f64>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("gamma", format!("must be positive and finite, got {gamma}")))
    }
}

/// `beta_gamma(-i) = gamma/2 |(-i) - P(-i)|_H^2 = gamma/2 |max(0, i)|_H^2`.
pub fn penalty(cone: &ConeSpec, gamma: f64, i_value: &[f64]) -> Result<PenaltyValue> {
    check_gamma(gamma)?;
    cone.check(i_value)?;
    let residual: Vec<f64> = i_value.iter().map(|&v| v.max(0.0)).collect();
    let value = 0.5 * gamma * cone.norm_sq(&residual);
    Ok(PenaltyValue { value, residual })
}

/// `lambda = gamma (i + P(-i)) = gamma max(0, i)`.
pub fn penalty_multiplier(cone: &ConeSpec, gamma: f64, i_value: &[f64]) -> Result<Vec<f64>> {
    check_gamma(gamma)?;
    cone.check(i_value)?;
    let proj = project(cone, &i_value.iter().map(|v| -v).collect::<Vec<_>>())?;
    Ok(i_value
        .iter()
        .zip(&proj)
        .map(|(i, p)| gamma * (i + p))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    /// `x2 - bound - epsilon x1` at every node.
    Mixed,
    /// `sum_j h x2_j - b`.
    Volume,
    /// `sqrt((Dx2)^2 + delta^2) - delta - psi` at every cell.
    Gradient,
}

impl ConstraintKind {
    pub fn bound_layout(&self) -> BoundLayout {
        match self {
            ConstraintKind::Mixed => BoundLayout::Nodes,
            ConstraintKind::Volume => BoundLayout::Scalar,
            ConstraintKind::Gradient => BoundLayout::Cells,
        }
    }
}

/// A constraint map `i(x1, x2; omega)`; the bound data comes per scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMap {
    pub kind: ConstraintKind,
    /// Control coupling in the mixed constraint.
    #[serde(default)]
    pub epsilon: f64,
    /// Smoothing of the Euclidean norm in the gradient constraint.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    1e-8
}

impl ConstraintMap {
    pub fn new(kind: ConstraintKind, epsilon: f64, delta: f64) -> Result<Self> {
        let map = ConstraintMap {
            kind,
            epsilon,
            delta,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid("constraint.epsilon", "must be finite and nonnegative"));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid("constraint.delta", "must be finite and nonnegative"));
        }
        Ok(())
    }

    /// The cone the constraint value lives in.
    pub fn cone(&self, grid: &Grid) -> ConeSpec {
        match self.kind {
            ConstraintKind::Mixed | ConstraintKind::Gradient => ConeSpec::nonneg_grid(grid.h()),
            ConstraintKind::Volume => ConeSpec::nonneg_scalar(),
        }
    }

    pub fn value_len(&self, grid: &Grid) -> usize {
        self.kind.bound_layout().len(grid)
    }

    fn check_shapes(&self, grid: &Grid, x1: &[f64], x2: &[f64], bound: &[f64]) -> Result<()> {
        check_len("control", grid.n_interior(), x1.len())?;
        check_len("state", grid.n_interior(), x2.len())?;
        check_len("constraint bound", self.value_len(grid), bound.len())
    }
}

/// Forward differences over all cells, with zero boundary values.
fn cell_gradient(grid: &Grid, u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let at = |m: usize| if m == 0 || m > n { 0.0 } else { u[m - 1] };
    (0..=n).map(|j| (at(j + 1) - at(j)) / grid.h()).collect()
}

fn smoothed_norm_derivative(du: f64, delta: f64) -> f64 {
    let r = (du * du + delta * delta).sqrt();
    // subgradient 0 at an exact kink (delta = 0, du = 0)
    if r == 0.0 {
        0.0
    } else {
        du / r
    }
}

/// Evaluates `i(x1, x2)` for one scenario with bound data `bound`.
pub fn constraint_eval(
    map: &ConstraintMap,
    grid: &Grid,
    x1: &[f64],
    x2: &[f64],
    bound: &[f64],
) -> Result<Vec<f64>> {
    map.check_shapes(grid, x1, x2, bound)?;
    Ok(match map.kind {
        ConstraintKind::Mixed => x2
            .iter()
            .zip(bound)
            .zip(x1)
            .map(|((y, b), u)| y - b - map.epsilon * u)
            .collect(),
        ConstraintKind::Volume => vec![grid.h() * x2.iter().sum::<f64>() - bound[0]],
        ConstraintKind::Gradient => cell_gradient(grid, x2)
            .iter()
            .zip(bound)
            .map(|(du, psi)| (du * du + map.delta * map.delta).sqrt() - map.delta - psi)
            .collect(),
    })
}

/// Returns `(i_x1^* lambda, i_x2^* lambda)` as Euclidean dual vectors, so that
/// `(lambda, i_x1 du + i_x2 dy)_H = <a1, du> + <a2, dy>`.
pub fn constraint_adjoints(
    map: &ConstraintMap,
    grid: &Grid,
    x1: &[f64],
    x2: &[f64],
    bound: &[f64],
    lambda: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    map.check_shapes(grid, x1, x2, bound)?;
    check_len("constraint multiplier", map.value_len(grid), lambda.len())?;
    let h = grid.h();
    let n = grid.n_interior();
    Ok(match map.kind {
        ConstraintKind::Mixed => (
            lambda.iter().map(|l| -map.epsilon * h * l).collect(),
            lambda.iter().map(|l| h * l).collect(),
        ),
        ConstraintKind::Volume => (vec![0.0; n], vec![h * lambda[0]; n]),
        ConstraintKind::Gradient => {
            let du = cell_gradient(grid, x2);
            // cell weight h cancels the 1/h of the difference quotient
            let flux: Vec<f64> = du
                .iter()
                .zip(lambda)
                .map(|(d, l)| l * smoothed_norm_derivative(*d, map.delta))
                .collect();
            let a2 = (0..n).map(|m| flux[m] - flux[m + 1]).collect();
            (vec![0.0; n], a2)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_cone(n: usize) -> (Grid, ConeSpec) {
        let g = Grid::new(n).unwrap();
        (g, ConeSpec::nonneg_grid(g.h()))
    }

    #[test]
    fn projection_examples() {
        let (_, cone) = grid_cone(3);
        assert_eq!(project(&cone, &[-1.0, 0.0, 2.0]).unwrap(), vec![0.0, 0.0, 2.0]);
        let inside = [0.5, 0.0, 3.0];
        assert_eq!(project(&cone, &inside).unwrap(), inside.to_vec());
        assert!(project(&ConeSpec::nonneg_scalar(), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn projection_is_coordinatewise_minimizer() {
        // brute-force line search per coordinate of |k - y|^2 over y >= 0
        let (_, cone) = grid_cone(6);
        let k = [-0.7, 0.3, 1.9, -2.2, 0.0, 0.05];
        let p = project(&cone, &k).unwrap();
        for (kj, pj) in k.iter().zip(&p) {
            let best = (0..=40_000)
                .map(|t| t as f64 * 1e-4)
                .min_by(|a, b| (kj - a).powi(2).total_cmp(&(kj - b).powi(2)))
                .unwrap();
            assert!((best - pj).abs() <= 1e-4);
        }
    }

    #[test]
    fn penalty_examples() {
        let scalar = ConeSpec::nonneg_scalar();
        let pv = penalty(&scalar, 2.0, &[0.5]).unwrap();
        assert!((pv.value - 0.25).abs() < 1e-15);
        assert_eq!(pv.residual, vec![0.5]);
        let (_, cone) = grid_cone(4);
        let pv = penalty(&cone, 3.0, &[-1.0, 0.0, -0.2, -5.0]).unwrap();
        assert_eq!(pv.value, 0.0);
        assert!(pv.residual.iter().all(|&r| r == 0.0));
        assert!(penalty(&cone, 0.0, &[0.0; 4]).is_err());
        assert!(penalty(&cone, -1.0, &[0.0; 4]).is_err());
    }

    #[test]
    fn penalty_matches_envelope_definition() {
        // inf_y { delta_K(y) + gamma/2 |(-i) - y|^2 } by projected coordinate descent
        let (_, cone) = grid_cone(7);
        let i = [0.4, -0.3, 1.2, -2.0, 0.01, 0.7, -0.05];
        let gamma = 5.0;
        let k: Vec<f64> = i.iter().map(|v| -v).collect();
        let mut y = vec![1.0; 7];
        for _ in 0..50 {
            for j in 0..7 {
                // exact minimization of the separable quadratic in coordinate j
                y[j] = k[j].max(0.0);
            }
        }
        let diff: Vec<f64> = k.iter().zip(&y).map(|(a, b)| a - b).collect();
        let envelope = 0.5 * gamma * cone.norm_sq(&diff);
        let pv = penalty(&cone, gamma, &i).unwrap();
        assert!((pv.value - envelope).abs() < 1e-14);
    }

    #[test]
    fn multiplier_examples() {
        let scalar = ConeSpec::nonneg_scalar();
        assert!((penalty_multiplier(&scalar, 10.0, &[0.3]).unwrap()[0] - 3.0).abs() < 1e-15);
        let (_, cone) = grid_cone(3);
        assert_eq!(
            penalty_multiplier(&cone, 7.0, &[-1.0, 0.0, -3.0]).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
        assert!(penalty_multiplier(&cone, 0.0, &[0.0; 3]).is_err());
    }

    #[test]
    fn multiplier_is_negative_envelope_gradient() {
        // lambda = -grad_k beta(k) at k = -i; the H-gradient is the Euclidean
        // partial divided by the weight.
        let (_, cone) = grid_cone(5);
        let gamma = 3.0;
        let i = [0.2, -0.4, 0.9, 0.0001, -1.0];
        let lambda = penalty_multiplier(&cone, gamma, &i).unwrap();
        let beta = |k: &[f64]| {
            let ineg: Vec<f64> = k.iter().map(|v| -v).collect();
            penalty(&cone, gamma, &ineg).unwrap().value
        };
        let k: Vec<f64> = i.iter().map(|v| -v).collect();
        let eps = 1e-6;
        for j in 0..5 {
            let mut kp = k.clone();
            let mut km = k.clone();
            kp[j] += eps;
            km[j] -= eps;
            let fd = (beta(&kp) - beta(&km)) / (2.0 * eps) / cone.weight;
            assert!((-fd - lambda[j]).abs() < 1e-6, "node {j}: {fd} vs {}", lambda[j]);
        }
    }

    #[test]
    fn constraint_examples() {
        let g = Grid::new(3).unwrap();
        let mixed = ConstraintMap::new(ConstraintKind::Mixed, 0.0, 0.0).unwrap();
        let bound = [0.3, 0.4, 0.5];
        let v = constraint_eval(&mixed, &g, &[9.0; 3], &bound, &bound).unwrap();
        assert_eq!(v, vec![0.0; 3]);

        let volume = ConstraintMap::new(ConstraintKind::Volume, 0.0, 0.0).unwrap();
        let v = constraint_eval(&volume, &g, &[0.0; 3], &[1.0; 3], &[0.5]).unwrap();
        assert!((v[0] - 0.25).abs() < 1e-15);

        // tent with slopes +-2, |grad| = 2 on every cell
        let g = Grid::new(7).unwrap();
        let x2: Vec<f64> = g.nodes().iter().map(|&s| 2.0 * s.min(1.0 - s)).collect();
        let grad = ConstraintMap::new(ConstraintKind::Gradient, 0.0, 0.0).unwrap();
        let v = constraint_eval(&grad, &g, &[0.0; 7], &x2, &[1.0; 8]).unwrap();
        assert!(v.iter().all(|&x| (x - 1.0).abs() < 1e-12), "{v:?}");

        assert!(constraint_eval(&grad, &g, &[0.0; 7], &x2, &[1.0; 7]).is_err());
        assert!(ConstraintMap::new(ConstraintKind::Mixed, -1.0, 0.0).is_err());
    }

    #[test]
    fn adjoint_examples() {
        let g = Grid::new(4).unwrap();
        let h = g.h();
        let mixed = ConstraintMap::new(ConstraintKind::Mixed, 0.0, 0.0).unwrap();
        let lam = [1.0, 2.0, 0.0, 3.0];
        let (a1, a2) = constraint_adjoints(&mixed, &g, &[0.0; 4], &[0.0; 4], &[0.0; 4], &lam).unwrap();
        assert!(a1.iter().all(|&v| v == 0.0));
        assert_eq!(a2, lam.iter().map(|l| h * l).collect::<Vec<_>>());

        let volume = ConstraintMap::new(ConstraintKind::Volume, 0.0, 0.0).unwrap();
        let (a1, a2) = constraint_adjoints(&volume, &g, &[0.0; 4], &[0.0; 4], &[0.0], &[1.0]).unwrap();
        assert!(a1.iter().all(|&v| v == 0.0));
        assert_eq!(a2, vec![h; 4]);
    }

    #[test]
    fn gradient_kink_uses_zero_subgradient() {
        let g = Grid::new(3).unwrap();
        let grad = ConstraintMap::new(ConstraintKind::Gradient, 0.0, 0.0).unwrap();
        let (_, a2) =
            constraint_adjoints(&grad, &g, &[0.0; 3], &[0.0; 3], &[0.0; 4], &[1.0; 4]).unwrap();
        assert!(a2.iter().all(|&v| v == 0.0));
    }

    fn adjoint_identity_error(kind: ConstraintKind, epsilon: f64, delta: f64, seed: u64) -> f64 {
        let g = Grid::new(9).unwrap();
        let map = ConstraintMap::new(kind, epsilon, delta).unwrap();
        let cone = map.cone(&g);
        let mut s = seed;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let nb = map.value_len(&g);
        let x1: Vec<f64> = (0..9).map(|_| rnd()).collect();
        let x2: Vec<f64> = (0..9).map(|_| rnd()).collect();
        let du: Vec<f64> = (0..9).map(|_| rnd()).collect();
        let dy: Vec<f64> = (0..9).map(|_| rnd()).collect();
        let bound: Vec<f64> = (0..nb).map(|_| rnd()).collect();
        let lam: Vec<f64> = (0..nb).map(|_| rnd()).collect();
        let (a1, a2) = constraint_adjoints(&map, &g, &x1, &x2, &bound, &lam).unwrap();
        let eps = 1e-6;
        let shifted = |t: f64| {
            let u: Vec<f64> = x1.iter().zip(&du).map(|(a, b)| a + t * b).collect();
            let y: Vec<f64> = x2.iter().zip(&dy).map(|(a, b)| a + t * b).collect();
            constraint_eval(&map, &g, &u, &y, &bound).unwrap()
        };
        let (ip, im) = (shifted(eps), shifted(-eps));
        let dir: Vec<f64> = ip.iter().zip(&im).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let lhs = cone.inner(&lam, &dir);
        let rhs: f64 = a1.iter().zip(&du).map(|(a, b)| a * b).sum::<f64>()
            + a2.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>();
        (lhs - rhs).abs()
    }

    #[test]
    fn adjoint_identity_all_kinds() {
        for seed in 1..20 {
            assert!(adjoint_identity_error(ConstraintKind::Mixed, 0.3, 0.0, seed) < 1e-8);
            assert!(adjoint_identity_error(ConstraintKind::Volume, 0.0, 0.0, seed) < 1e-8);
            assert!(adjoint_identity_error(ConstraintKind::Gradient, 0.0, 1e-6, seed) < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn projection_characterization(k in prop::collection::vec(-5.0f64..5.0, 1..20)) {
            let cone = ConeSpec::nonneg_grid(0.1);
            let p = project(&cone, &k).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let diff: Vec<f64> = k.iter().zip(&p).map(|(a, b)| a - b).collect();
            prop_assert_eq!(cone.inner(&p, &diff), 0.0);
            // p - k in the dual cone, checked on the nodal basis
            for (pj, kj) in p.iter().zip(&k) {
                prop_assert!(cone.weight * (pj - kj) >= 0.0);
            }
            prop_assert_eq!(project(&cone, &p).unwrap(), p);
        }

        #[test]
        fn projection_nonexpansive(
            pair in (1usize..20).prop_flat_map(|n| (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            ))
        ) {
            let (a, b) = pair;
            let cone = ConeSpec::nonneg_grid(0.25);
            let pa = project(&cone, &a).unwrap();
            let pb = project(&cone, &b).unwrap();
            let d1: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
            let d0: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            prop_assert!(cone.norm_sq(&d1) <= cone.norm_sq(&d0) + 1e-15);
        }

        #[test]
        fn penalty_zero_iff_feasible_and_multiplier_signs(
            i in prop::collection::vec(-3.0f64..3.0, 1..15),
            gamma in 0.01f64..1e4,
        ) {
            let cone = ConeSpec::nonneg_grid(0.2);
            let pv = penalty(&cone, gamma, &i).unwrap();
            prop_assert!(pv.value >= 0.0);
            prop_assert_eq!(pv.value == 0.0, i.iter().all(|&v| v <= 0.0));
            let lam = penalty_multiplier(&cone, gamma, &i).unwrap();
            prop_assert!(lam.iter().all(|&l| l >= 0.0));
            let neg: Vec<f64> = i.iter().map(|v| -v).collect();
            let pneg = project(&cone, &neg).unwrap();
            prop_assert_eq!(cone.inner(&lam, &pneg), 0.0);
            // (lambda, i + e_j)_H >= 0 for every nonnegative basis element
            for j in 0..i.len() {
                let mut shifted = i.clone();
                shifted[j] += 1.0;
                let base = cone.inner(&lam, &i);
                prop_assert!(base >= 0.0);
                prop_assert!(cone.inner(&lam, &shifted) >= -1e-12);
            }
        }

        #[test]
        fn penalty_convex_on_segments(
            pair in (1usize..10).prop_flat_map(|n| (
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(-3.0f64..3.0, n),
            ))
        ) {
            let (a, b) = pair;
            let cone = ConeSpec::nonneg_grid(0.5);
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let f = |v: &[f64]| penalty(&cone, 2.0, v).unwrap().value;
            prop_assert!(f(&mid) <= 0.5 * (f(&a) + f(&b)) + 1e-12);
        }
    }
}
