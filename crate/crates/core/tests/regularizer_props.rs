mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use svreg_core::optimize::low_resolution_grid;
use svreg_core::regularizer::{beta_penalty, build_laplacian_dense, gaussian_penalty, weighted_diffusion};
use svreg_core::similarity::ncc_loss;
use svreg_core::synth::translation_pair;
use svreg_core::*;

fn random_grid(r: &mut impl Rng) -> Grid {
    let d = r.random_range(2..=3);
    let dims: Vec<usize> = (0..d).map(|_| r.random_range(2..=5)).collect();
    Grid::new(&dims).unwrap()
}

fn quadratic_form(lap: &[f64], u: &VectorField) -> f64 {
    let n = u.grid().len();
    let d = u.ndim();
    let mut total = 0.0;
    for c in 0..d {
        let col: Vec<f64> = (0..n).map(|i| u.at(i)[c]).collect();
        for i in 0..n {
            let row: f64 = (0..n).map(|j| lap[i * n + j] * col[j]).sum();
            total += col[i] * row;
        }
    }
    total
}

#[test]
fn quadratic_form_identity_on_100_instances() {
    let mut r = rng(13);
    for _ in 0..100 {
        let g = random_grid(&mut r);
        let u = random_vector(&g, 2.0, &mut r);
        let lam = random_scalar(&g, &mut r).map(f64::abs);
        let (energy, _, _) = weighted_diffusion(&u, &lam).unwrap();
        let lap = build_laplacian_dense(&lam).unwrap();
        let want = quadratic_form(&lap, &u);
        let got = g.len() as f64 * energy;
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-300), "{got} vs {want} on {:?}", g.dims());
    }
}

#[test]
fn laplacian_is_symmetric_with_zero_row_sums() {
    let mut r = rng(5);
    let g = Grid::new(&[3, 4, 2]).unwrap();
    let lam = random_scalar(&g, &mut r).map(f64::abs);
    let lap = build_laplacian_dense(&lam).unwrap();
    let n = g.len();
    for i in 0..n {
        assert!((0..n).map(|j| lap[i * n + j]).sum::<f64>().abs() < 1e-12);
        for j in 0..n {
            assert_eq!(lap[i * n + j], lap[j * n + i]);
        }
    }
    let zero = build_laplacian_dense(&ScalarField::zeros(&g)).unwrap();
    assert!(zero.iter().all(|&x| x == 0.0));
}

#[test]
fn uniform_weight_scales_plain_diffusion() {
    let mut r = rng(8);
    let g = Grid::new(&[6, 5, 4]).unwrap();
    let u = random_vector(&g, 1.0, &mut r);
    let (plain, _, _) = weighted_diffusion(&u, &ScalarField::constant(&g, 1.0)).unwrap();
    let mut oracle = 0.0;
    for lin in 0..g.len() {
        let idx = g.unravel(lin);
        for a in 0..3 {
            if idx[a] + 1 < g.dims()[a] {
                let mut nb = idx;
                nb[a] += 1;
                let q = g.ravel(&nb[..3]);
                oracle += (0..3).map(|c| (u.at(q)[c] - u.at(lin)[c]).powi(2)).sum::<f64>();
            }
        }
    }
    assert!((plain - oracle / g.len() as f64).abs() < 1e-12);
    let (scaled, _, _) = weighted_diffusion(&u, &ScalarField::constant(&g, 2.7)).unwrap();
    assert!((scaled - 2.7 * plain).abs() < 1e-12);
}

#[test]
fn trivial_total_loss_and_additivity() {
    let g = Grid::new(&[12, 12]).unwrap();
    let (img, other, _) = translation_pair(&g, &[1.0, 0.5], 2).unwrap();
    let cfg = RegistrationConfig {
        prior: PriorKind::Gaussian {
            sigma_prime: 0.525,
            lambda_mean: 3.796,
        },
        lambda_resolution_factor: 0.5,
        ..Default::default()
    };
    let low = low_resolution_grid(&g, 0.5).unwrap();
    let wp = WeightParams {
        z: ScalarField::constant(&low, 3.796),
        prior: cfg.prior,
        resolution_factor: 0.5,
    };
    let zero = VectorField::zeros(&g);
    let eval = total_loss(&img, &img, &zero, &wp, &cfg, None).unwrap();
    assert!((eval.terms.total + 1.0).abs() < 1e-12, "{:?}", eval.terms);

    let mut r = rng(1);
    let v = random_vector(&g, 0.4, &mut r);
    let z = random_scalar(&low, &mut r).map(|x| 3.0 + x);
    let wp = WeightParams { z, ..wp };
    let eval = total_loss(&img, &other, &v, &wp, &cfg, None).unwrap();
    let disp = exponentiate(&v, cfg.n_squaring);
    let (ncc, _) = ncc_loss(&img, &warp(&other, &disp).unwrap(), &cfg.ncc).unwrap();
    let lam = upsample_linear(&wp.z.map(|x| x.max(0.0)), &g).unwrap();
    let (diff, _, _) = weighted_diffusion(&v, &lam).unwrap();
    let (pen, _) = gaussian_penalty(&lam, 0.525, 3.796).unwrap();
    let t = eval.terms;
    assert!((t.similarity - ncc).abs() < 1e-12);
    assert!((t.diffusion - diff).abs() < 1e-12);
    assert!((t.prior - pen).abs() < 1e-12);
    assert!((t.total - (ncc + diff + pen)).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn diffusion_homogeneity(seed in any::<u64>(), s in 0.1f64..4.0, c in 0.1f64..4.0) {
        let mut r = rng(seed);
        let g = random_grid(&mut r);
        let u = random_vector(&g, 1.0, &mut r);
        let lam = random_scalar(&g, &mut r).map(f64::abs);
        let (e, _, _) = weighted_diffusion(&u, &lam).unwrap();
        let (eu, _, _) = weighted_diffusion(&u.scaled(s), &lam).unwrap();
        let (el, _, _) = weighted_diffusion(&u, &lam.map(|x| c * x)).unwrap();
        prop_assert!((eu - s * s * e).abs() <= 1e-12 * (1.0 + eu.abs()));
        prop_assert!((el - c * e).abs() <= 1e-12 * (1.0 + el.abs()));
    }

    #[test]
    fn constant_displacement_costs_nothing(seed in any::<u64>(), k in -3.0f64..3.0) {
        let mut r = rng(seed);
        let g = random_grid(&mut r);
        let u = VectorField::constant(&g, &vec![k; g.ndim()]).unwrap();
        let lam = random_scalar(&g, &mut r).map(f64::abs);
        let (e, gu, _) = weighted_diffusion(&u, &lam).unwrap();
        prop_assert_eq!(e, 0.0);
        prop_assert!(gu.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn beta_penalty_nonnegative_and_monotone(seed in any::<u64>(), ap in 0.0f64..5.0) {
        let mut r = rng(seed);
        let g = Grid::new(&[5, 4]).unwrap();
        let x = ScalarField::new(g.clone(), (0..g.len()).map(|_| r.random_range(1e-6..=1.0)).collect()).unwrap();
        let (e, grad) = beta_penalty(&x, ap).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!(grad.values().iter().all(|&d| d <= 0.0));
        let k = r.random_range(0..g.len());
        let mut bumped = x.values().to_vec();
        bumped[k] = (bumped[k] * 1.5).min(1.0);
        let (e2, _) = beta_penalty(&ScalarField::new(g.clone(), bumped).unwrap(), ap).unwrap();
        prop_assert!(e2 <= e);
        let (e_mode, _) = beta_penalty(&ScalarField::constant(&g, 1.0), ap).unwrap();
        prop_assert_eq!(e_mode, 0.0);
    }

    #[test]
    fn gaussian_penalty_convex_with_mode(seed in any::<u64>(), sp in 0.01f64..5.0, mean in 0.5f64..5.0) {
        let mut r = rng(seed);
        let g = Grid::new(&[4, 4]).unwrap();
        let a = ScalarField::new(g.clone(), (0..g.len()).map(|_| r.random_range(0.0..10.0)).collect()).unwrap();
        let b = ScalarField::new(g.clone(), (0..g.len()).map(|_| r.random_range(0.0..10.0)).collect()).unwrap();
        let mid = ScalarField::new(g.clone(), a.values().iter().zip(b.values()).map(|(x, y)| 0.5 * (x + y)).collect()).unwrap();
        let (ea, _) = gaussian_penalty(&a, sp, mean).unwrap();
        let (eb, _) = gaussian_penalty(&b, sp, mean).unwrap();
        let (em, _) = gaussian_penalty(&mid, sp, mean).unwrap();
        prop_assert!(ea >= 0.0 && eb >= 0.0);
        prop_assert!(em <= 0.5 * (ea + eb) + 1e-12);
        let (e0, _) = gaussian_penalty(&ScalarField::constant(&g, mean), sp, mean).unwrap();
        prop_assert!(e0.abs() < 1e-15);
    }
}
