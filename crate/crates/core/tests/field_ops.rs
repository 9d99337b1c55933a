mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use svreg_core::field::{forward_gradient, sample_linear, upsample_linear};
use svreg_core::{compose, warp, Grid, ScalarField, VectorField};

fn grid_strategy() -> impl Strategy<Value = Grid> {
    prop_oneof![
        (2usize..7, 2usize..7).prop_map(|(a, b)| Grid::new(&[a, b]).unwrap()),
        (2usize..5, 2usize..5, 2usize..5).prop_map(|(a, b, c)| Grid::new(&[a, b, c]).unwrap()),
    ]
}

#[test]
fn sample_matches_pointwise_oracle() {
    let g = Grid::new(&[5, 5, 5]).unwrap();
    let mut r = rng(1);
    let f = random_scalar(&g, &mut r);
    let coords: Vec<f64> = (0..300).map(|_| r.random::<f64>() * 6.0 - 0.5).collect();
    let got = sample_linear(&f, &coords).unwrap();
    for (k, p) in coords.chunks(3).enumerate() {
        let want = interp_oracle(&g, f.values(), 1, p)[0];
        assert!((got[k] - want).abs() <= 1e-12, "{p:?}: {} vs {want}", got[k]);
    }
}

#[test]
fn sample_rejects_non_finite() {
    let g = Grid::new(&[3, 3]).unwrap();
    let f = ScalarField::zeros(&g);
    assert!(sample_linear(&f, &[0.5, f64::NAN]).is_err());
    assert!(sample_linear(&f, &[0.5, 1.0, 2.0]).is_err());
}

#[test]
fn warp_matches_sample_oracle() {
    let g = Grid::new(&[6, 5, 4]).unwrap();
    let mut r = rng(2);
    let f = random_scalar(&g, &mut r);
    let u = random_vector(&g, 1.5, &mut r);
    let w = warp(&f, &u).unwrap();
    for lin in 0..g.len() {
        let idx = g.unravel(lin);
        let p: Vec<f64> = (0..3).map(|a| idx[a] as f64 + u.at(lin)[a]).collect();
        let want = sample_linear(&f, &p).unwrap()[0];
        assert!((w.values()[lin] - want).abs() <= 1e-14);
    }
}

#[test]
fn translation_warp_clamps_last_slice() {
    let g = Grid::new(&[5, 3, 3]).unwrap();
    let ramp = ScalarField::from_fn(&g, |i| i[0] as f64);
    let shift = VectorField::constant(&g, &[1.0, 0.0, 0.0]).unwrap();
    let w = warp(&ramp, &shift).unwrap();
    for lin in 0..g.len() {
        let x = g.unravel(lin)[0];
        assert_eq!(w.values()[lin], (x + 1).min(4) as f64);
    }
}

#[test]
fn compose_matches_warp_then_add() {
    let g = Grid::new(&[7, 6]).unwrap();
    let mut r = rng(3);
    let a = random_vector(&g, 2.0, &mut r);
    let b = random_vector(&g, 2.0, &mut r);
    let c = compose(&a, &b).unwrap();
    for lin in 0..g.len() {
        let idx = g.unravel(lin);
        let p = [idx[0] as f64 + b.at(lin)[0], idx[1] as f64 + b.at(lin)[1]];
        let outer = interp_oracle(&g, a.values(), 2, &p);
        for k in 0..2 {
            assert!((c.at(lin)[k] - (outer[k] + b.at(lin)[k])).abs() <= 1e-13);
        }
    }
}

#[test]
fn upsample_matches_oracle() {
    let src = Grid::new(&[3, 3]).unwrap();
    let dst = Grid::new(&[6, 6]).unwrap();
    let f = random_scalar(&src, &mut rng(4));
    let up = upsample_linear(&f, &dst).unwrap();
    for lin in 0..dst.len() {
        let idx = dst.unravel(lin);
        let p = [idx[0] as f64 * 2.0 / 5.0, idx[1] as f64 * 2.0 / 5.0];
        let want = interp_oracle(&src, f.values(), 1, &p)[0];
        assert!((up.values()[lin] - want).abs() <= 1e-12);
    }
    assert!(upsample_linear(&f, &Grid::new(&[2, 6]).unwrap()).is_err());
}

#[test]
fn forward_gradient_matches_difference_matrix() {
    let g = Grid::new(&[4, 4, 4]).unwrap();
    let f = random_scalar(&g, &mut rng(5));
    let n = g.len();
    let grads = forward_gradient(&f);
    for axis in 0..3 {
        // Explicit difference matrix: row p has −1 at p and +1 at p+e_axis
        // when the forward neighbour exists, an empty row otherwise.
        let mut m = vec![0.0; n * n];
        for p in 0..n {
            let idx = g.unravel(p);
            if idx[axis] + 1 < 4 {
                let mut q = idx;
                q[axis] += 1;
                m[p * n + p] = -1.0;
                m[p * n + g.ravel(&q)] = 1.0;
            }
        }
        let want: Vec<f64> = (0..n)
            .map(|p| (0..n).map(|q| m[p * n + q] * f.values()[q]).sum())
            .collect();
        assert!(max_abs_diff(grads[axis].values(), &want) <= 1e-15);
    }
}

#[test]
fn forward_gradient_telescopes_in_1d_chain() {
    let g = Grid::new(&[9, 2]).unwrap();
    let f = random_scalar(&g, &mut rng(6));
    let dx = &forward_gradient(&f)[0];
    for col in 0..2 {
        let sum: f64 = (0..9).map(|row| dx.get(&[row, col])).sum();
        assert!((sum - (f.get(&[8, col]) - f.get(&[0, col]))).abs() <= 1e-14);
    }
}

fn field_for(grid: &Grid, seed: u64) -> (ScalarField, VectorField) {
    let mut r = rng(seed);
    (random_scalar(grid, &mut r), random_vector(grid, 2.5, &mut r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_at_integer_coordinates(g in grid_strategy(), seed in any::<u64>()) {
        let (f, _) = field_for(&g, seed);
        let coords: Vec<f64> = (0..g.len()).flat_map(|lin| {
            let idx = g.unravel(lin);
            (0..g.ndim()).map(move |a| idx[a] as f64).collect::<Vec<_>>()
        }).collect();
        prop_assert_eq!(sample_linear(&f, &coords).unwrap(), f.values().to_vec());
    }

    #[test]
    fn affine_fields_reproduced_inside(g in grid_strategy(), c in prop::array::uniform4(-3.0f64..3.0), pts in prop::collection::vec(0.0f64..1.0, 30)) {
        let d = g.ndim();
        let f = ScalarField::from_fn(&g, |i| c[3] + (0..d).map(|a| c[a] * i[a] as f64).sum::<f64>());
        for p in pts.chunks(d).filter(|p| p.len() == d) {
            let x: Vec<f64> = (0..d).map(|a| p[a] * (g.dims()[a] - 1) as f64).collect();
            let want = c[3] + (0..d).map(|a| c[a] * x[a]).sum::<f64>();
            let got = sample_linear(&f, &x).unwrap()[0];
            prop_assert!((got - want).abs() <= 1e-12, "{} vs {}", got, want);
        }
    }

    #[test]
    fn identity_cases_are_bitwise(g in grid_strategy(), seed in any::<u64>()) {
        let (f, u) = field_for(&g, seed);
        let zero = VectorField::zeros(&g);
        prop_assert_eq!(warp(&f, &zero).unwrap(), f.clone());
        prop_assert_eq!(warp(&u, &zero).unwrap(), u.clone());
        prop_assert_eq!(compose(&u, &zero).unwrap(), u.clone());
        prop_assert_eq!(compose(&zero, &u).unwrap(), u);
    }

    #[test]
    fn constant_displacements_add(g in grid_strategy(), c1 in prop::array::uniform3(-4.0f64..4.0), c2 in prop::array::uniform3(-4.0f64..4.0)) {
        let d = g.ndim();
        let a = VectorField::constant(&g, &c1[..d]).unwrap();
        let b = VectorField::constant(&g, &c2[..d]).unwrap();
        let s = compose(&a, &b).unwrap();
        for lin in 0..g.len() {
            for k in 0..d {
                prop_assert_eq!(s.at(lin)[k], c1[k] + c2[k]);
            }
        }
    }

    #[test]
    fn upsampling_preserves_constants_and_ramps(g in grid_strategy(), extra in prop::array::uniform3(0usize..6), c in -5.0f64..5.0, slope in -2.0f64..2.0) {
        let d = g.ndim();
        let target_dims: Vec<usize> = (0..d).map(|a| g.dims()[a] + extra[a]).collect();
        let t = Grid::new(&target_dims).unwrap();
        let up = upsample_linear(&ScalarField::constant(&g, c), &t).unwrap();
        prop_assert!(up.values().iter().all(|&v| v == c));
        let ramp = ScalarField::from_fn(&g, |i| slope * i[0] as f64);
        let up = upsample_linear(&ramp, &t).unwrap();
        let ratio = (g.dims()[0] - 1) as f64 / (t.dims()[0] - 1) as f64;
        for lin in 0..t.len() {
            let want = slope * t.unravel(lin)[0] as f64 * ratio;
            prop_assert!((up.values()[lin] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn gradient_of_constant_vanishes(g in grid_strategy(), c in prop::array::uniform3(-5.0f64..5.0)) {
        let u = VectorField::constant(&g, &c[..g.ndim()]).unwrap();
        for part in forward_gradient(&u) {
            prop_assert!(part.values().iter().all(|&v| v == 0.0));
        }
    }
}
