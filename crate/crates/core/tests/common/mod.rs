#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svreg_core::{Field, Grid, ScalarField, VectorField};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_scalar(grid: &Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    let data = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
    ScalarField::new(grid.clone(), data).unwrap()
}

pub fn random_vector(grid: &Grid, scale: f64, rng: &mut ChaCha8Rng) -> VectorField {
    let data = (0..grid.len() * grid.ndim())
        .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    VectorField::new(grid.clone(), data).unwrap()
}

/// Per-point multilinear interpolation written directly from the definition:
/// clamp each coordinate, then sum the 2^d corner values with product weights.
pub fn interp_oracle(grid: &Grid, data: &[f64], channels: usize, p: &[f64]) -> Vec<f64> {
    let d = grid.ndim();
    let dims = grid.dims();
    let mut out = vec![0.0; channels];
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut idx = vec![0usize; d];
        for a in 0..d {
            let top = (dims[a] - 1) as f64;
            let x = p[a].clamp(0.0, top);
            let i0 = x.floor().min(top);
            let t = x - i0;
            let hi = corner >> a & 1 == 1;
            idx[a] = if hi { (i0 as usize + 1).min(dims[a] - 1) } else { i0 as usize };
            w *= if hi { t } else { 1.0 - t };
        }
        let mut lin = 0;
        for a in 0..d {
            lin = lin * dims[a] + idx[a];
        }
        for c in 0..channels {
            out[c] += w * data[lin * channels + c];
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Affine displacement `u(x) = A x + t` (voxel coordinates).
pub fn affine_disp(grid: &Grid, a: &[[f64; 3]; 3], t: &[f64; 3]) -> VectorField {
    let d = grid.ndim();
    VectorField::from_fn(grid, |idx| {
        let mut u = [0.0; 3];
        for r in 0..d {
            u[r] = t[r];
            for c in 0..d {
                u[r] += a[r][c] * idx[c] as f64;
            }
        }
        u
    })
}

pub fn det(m: &[[f64; 3]; 3], d: usize) -> f64 {
    if d == 2 {
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    } else {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

pub fn interior(grid: &Grid, lin: usize, border: usize) -> bool {
    let idx = grid.unravel(lin);
    (0..grid.ndim()).all(|a| idx[a] >= border && idx[a] + border < grid.dims()[a])
}

pub fn data_of<F: Field>(f: &F) -> &[f64] {
    f.data()
}
