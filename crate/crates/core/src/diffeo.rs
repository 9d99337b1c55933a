//! Velocity-field exponentiation and deformation-regularity metrics.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::{compose, compose_adjoint, Field, Grid, ScalarField, VectorField};

/// Default number of squaring steps.
pub const DEFAULT_SQUARING_STEPS: usize = 7;

/// Displacement of `exp(v)` by scaling and squaring: start from `v / 2^N`
/// and self-compose `N` times.
pub fn exponentiate(velocity: &VectorField, n_steps: usize) -> VectorField {
    ExpTape::forward(velocity, n_steps).0
}

/// Displacement of the group inverse `exp(−v)`.
pub fn invert(velocity: &VectorField, n_steps: usize) -> VectorField {
    exponentiate(&velocity.scaled(-1.0), n_steps)
}

/// Intermediate fields of one scaling-and-squaring pass, kept for the
/// reverse sweep.
#[derive(Clone, Debug)]
pub struct ExpTape {
    /// `u_0 … u_{N−1}`; step `k` computes `u_{k+1} = u_k ∘ u_k`.
    steps: Vec<VectorField>,
    scale: f64,
}

impl ExpTape {
    pub fn forward(velocity: &VectorField, n_steps: usize) -> (VectorField, ExpTape) {
        let scale = 0.5f64.powi(n_steps as i32);
        let mut u = velocity.scaled(scale);
        let mut steps = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let next = compose(&u, &u).expect("self-composition shares a grid");
            steps.push(std::mem::replace(&mut u, next));
        }
        (u, ExpTape { steps, scale })
    }

    /// Gradient with respect to the velocity given the gradient on the
    /// exponentiated displacement.
    pub fn backward(&self, upstream: &VectorField) -> Result<VectorField> {
        let mut g = upstream.clone();
        for u in self.steps.iter().rev() {
            let (go, gi) = compose_adjoint(u, u, &g)?;
            g = go;
            for (a, b) in g.data_mut().iter_mut().zip(gi.values()) {
                *a += b;
            }
        }
        let s = self.scale;
        g.data_mut().iter_mut().for_each(|x| *x *= s);
        Ok(g)
    }
}

/// Reverse-mode derivative of [`exponentiate`].
pub fn exponentiate_with_adjoint(velocity: &VectorField, n_steps: usize, upstream: &VectorField) -> Result<VectorField> {
    velocity.grid().check_same(upstream.grid())?;
    ExpTape::forward(velocity, n_steps).1.backward(upstream)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Diff {
    Forward,
    Backward,
    Central,
}

/// `∂u_c/∂x_b` at voxel `lin` using the requested difference on axis `b`;
/// falls back to whichever one-sided difference exists at the border.
#[inline]
fn partials(disp: &VectorField, lin: usize, idx: &[usize; 3], kinds: &[Diff; 3]) -> [[f64; 3]; 3] {
    let grid = disp.grid();
    let d = grid.ndim();
    let strides = grid.strides();
    let v = disp.values();
    let mut jac = [[0.0; 3]; 3];
    for b in 0..d {
        let n = grid.dims()[b];
        let has_fwd = idx[b] + 1 < n;
        let has_bwd = idx[b] > 0;
        let kind = match kinds[b] {
            Diff::Central if has_fwd && has_bwd => Diff::Central,
            Diff::Backward if has_bwd => Diff::Backward,
            Diff::Forward if has_fwd => Diff::Forward,
            _ if has_fwd => Diff::Forward,
            _ => Diff::Backward,
        };
        let (hi, lo, h) = match kind {
            Diff::Central => (lin + strides[b], lin - strides[b], 2.0),
            Diff::Forward => (lin + strides[b], lin, 1.0),
            Diff::Backward => (lin, lin - strides[b], 1.0),
        };
        for (c, row) in jac.iter_mut().enumerate().take(d) {
            row[b] = (v[hi * d + c] - v[lo * d + c]) / h;
        }
    }
    jac
}

fn det_identity_plus(jac: &[[f64; 3]; 3], d: usize) -> f64 {
    let m = |r: usize, c: usize| jac[r][c] + if r == c { 1.0 } else { 0.0 };
    if d == 2 {
        m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)
    } else {
        m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
            + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0))
    }
}

/// `det(I + ∇u)` per voxel: central differences inside, one-sided at the
/// border.
pub fn jacobian_determinant(disp: &VectorField) -> ScalarField {
    let grid = disp.grid();
    let d = grid.ndim();
    let kinds = [Diff::Central; 3];
    ScalarField::from_parts_unchecked(
        grid.clone(),
        (0..grid.len())
            .map(|lin| det_identity_plus(&partials(disp, lin, &grid.unravel(lin), &kinds), d))
            .collect(),
    )
}

/// Folding statistics of a displacement field. Fractions lie in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    /// Fraction of voxels whose central-difference determinant is `≤ 0`.
    pub pct_nonpos_j: f64,
    /// Non-diffeomorphic volume fraction under the one-sided differences.
    pub pct_ndv: f64,
    pub min_j: f64,
    #[serde(skip)]
    pub determinant: Option<ScalarField>,
}

/// Fold metrics of `disp`.
///
/// `pct_ndv` evaluates all `2^d` forward/backward difference combinations at
/// each voxel and weights the voxel by the share of combinations with a
/// non-positive determinant. It stands in for the digital-diffeomorphism
/// volume measure and agrees with it on piecewise-affine folds.
pub fn fold_metrics(disp: &VectorField) -> JacobianReport {
    let grid: &Grid = disp.grid();
    let d = grid.ndim();
    let det = jacobian_determinant(disp);
    let n = grid.len() as f64;
    let nonpos = det.values().iter().filter(|&&j| j <= 0.0).count() as f64;
    let combos = 1usize << d;
    let mut ndv = 0.0;
    for lin in 0..grid.len() {
        let idx = grid.unravel(lin);
        let mut bad = 0usize;
        for c in 0..combos {
            let mut kinds = [Diff::Forward; 3];
            for (a, k) in kinds.iter_mut().enumerate().take(d) {
                if (c >> a) & 1 == 1 {
                    *k = Diff::Backward;
                }
            }
            if det_identity_plus(&partials(disp, lin, &idx, &kinds), d) <= 0.0 {
                bad += 1;
            }
        }
        ndv += bad as f64 / combos as f64;
    }
    JacobianReport {
        pct_nonpos_j: nonpos / n,
        pct_ndv: ndv / n,
        min_j: det.min(),
        determinant: Some(det),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_constant_velocity() {
        let g = Grid::new(&[6, 5, 4]).unwrap();
        let z = exponentiate(&VectorField::zeros(&g), 7);
        assert!(z.values().iter().all(|&v| v == 0.0));
        let c = VectorField::constant(&g, &[1.5, -0.75, 2.0]).unwrap();
        let e = exponentiate(&c, 7);
        assert_eq!(e, c);
    }

    #[test]
    fn adjoint_with_zero_steps_is_identity() {
        let g = Grid::new(&[5, 5]).unwrap();
        let v = VectorField::from_fn(&g, |i| [0.1 * i[0] as f64, -0.05 * i[1] as f64, 0.0]);
        let up = VectorField::from_fn(&g, |i| [i[1] as f64, 1.0 - i[0] as f64, 0.0]);
        assert_eq!(exponentiate_with_adjoint(&v, 0, &up).unwrap(), up);
    }

    #[test]
    fn adjoint_at_zero_velocity_is_identity() {
        let g = Grid::new(&[6, 5, 4]).unwrap();
        let up = VectorField::from_fn(&g, |i| [i[0] as f64 - 2.0, (i[1] * i[2]) as f64, 0.5]);
        let grad = exponentiate_with_adjoint(&VectorField::zeros(&g), 7, &up).unwrap();
        assert_eq!(grad, up);
    }

    #[test]
    fn determinant_of_identity_and_scale() {
        let g = Grid::new(&[5, 5, 5]).unwrap();
        let j = jacobian_determinant(&VectorField::zeros(&g));
        assert!(j.values().iter().all(|&v| v == 1.0));
        let s = VectorField::from_fn(&g, |i| [0.1 * i[0] as f64, 0.1 * i[1] as f64, 0.1 * i[2] as f64]);
        let j = jacobian_determinant(&s);
        for v in j.values() {
            assert!((v - 1.331).abs() < 1e-12);
        }
        let r = fold_metrics(&VectorField::zeros(&g));
        assert_eq!((r.pct_nonpos_j, r.pct_ndv, r.min_j), (0.0, 0.0, 1.0));
    }
}
