use svreg_core::diffeo::{exponentiate, fold_metrics, jacobian_determinant};
use svreg_core::synth::*;
use svreg_core::{warp, Field, Grid, ScalarField};

fn autocorrelation(f: &ScalarField, lag: usize) -> f64 {
    let g = f.grid();
    let (rows, cols) = (g.dims()[0], g.dims()[1]);
    let mean = f.mean();
    let var: f64 = f.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.values().len() as f64;
    let mut acc = 0.0;
    let mut n = 0.0;
    for r in 0..rows {
        for c in 0..cols - lag {
            acc += (f.get(&[r, c]) - mean) * (f.get(&[r, c + lag]) - mean);
            n += 1.0;
        }
    }
    acc / n / var
}

#[test]
fn perlin_is_smooth_at_its_cell_scale() {
    let g = Grid::new(&[128, 128]).unwrap();
    for (seed, cell) in [(1u64, 8usize), (2, 6), (3, 4)] {
        let f = perlin_noise(&g, cell as f64, seed).unwrap();
        let near = autocorrelation(&f, cell / 2);
        let far = autocorrelation(&f, 4 * cell);
        assert!(near > far, "cell {cell}: {near} vs {far}");
        assert!(f.values().iter().all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn shape_labels_cover_every_class() {
    let g = Grid::new(&[128, 128]).unwrap();
    for n_labels in [2usize, 5, 8] {
        for seed in 0..100u64 {
            let (img, labels) = random_shapes_image(&g, n_labels, seed).unwrap();
            let mut counts = vec![0usize; n_labels + 1];
            for &l in labels.values() {
                assert_eq!(l.fract(), 0.0);
                assert!((1.0..=n_labels as f64).contains(&l));
                counts[l as usize] += 1;
            }
            let worst = counts[1..].iter().min().copied().unwrap() as f64 / g.len() as f64;
            assert!(worst >= MIN_LABEL_FRACTION, "n {n_labels} seed {seed}: {worst}");
            assert!(img.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn shapes_are_deterministic() {
    let g = Grid::new(&[40, 36]).unwrap();
    assert_eq!(random_shapes_image(&g, 4, 7).unwrap(), random_shapes_image(&g, 4, 7).unwrap());
    assert_ne!(random_shapes_image(&g, 4, 7).unwrap().1, random_shapes_image(&g, 4, 8).unwrap().1);
    assert!(random_shapes_image(&g, 1, 7).is_err());
}

#[test]
fn smooth_velocity_rescaled_and_foldfree() {
    let g = Grid::new(&[32, 32, 32]).unwrap();
    let v = random_smooth_velocity(&g, 2.0, 8.0, 5).unwrap();
    assert!((v.max_magnitude() - 2.0).abs() <= 1e-12);
    assert_eq!(v, random_smooth_velocity(&g, 2.0, 8.0, 5).unwrap());
    let rep = fold_metrics(&exponentiate(&v, 7));
    assert_eq!((rep.pct_nonpos_j, rep.pct_ndv), (0.0, 0.0));
    assert!(random_smooth_velocity(&g, 0.0, 8.0, 5).is_err());
}

#[test]
fn sliding_truth_is_piecewise_rigid() {
    for sc in golden_scenarios() {
        let pair = sliding_pair_2d(&sc).unwrap();
        let g = pair.moving.grid().clone();
        assert_eq!(warp(&pair.moving, &pair.true_disp).unwrap(), pair.fixed, "{}", sc.name);
        assert!(pair.moving.values().iter().all(|v| (0.0..=1.0).contains(v)));

        let t = sc.tangent_axis();
        let mut seen = [None, None];
        for lin in 0..g.len() {
            let region = pair.labels.values()[lin] as usize - 1;
            let u = pair.true_disp.at(lin);
            assert_eq!(u[1 - t], 0.0);
            match seen[region] {
                None => seen[region] = Some(u[t]),
                Some(prev) => assert_eq!(prev, u[t]),
            }
        }
        assert_eq!(seen, [Some(0.0), Some(sc.offset)]);

        // Determinant is 1 wherever the central stencil stays in one region.
        let det = jacobian_determinant(&pair.true_disp);
        for lin in 0..g.len() {
            let idx = g.unravel(lin);
            let same = (0..2).all(|a| {
                let lo = idx[a].saturating_sub(1);
                let hi = (idx[a] + 1).min(g.dims()[a] - 1);
                let mut p = idx;
                p[a] = lo;
                let mut q = idx;
                q[a] = hi;
                pair.labels.get(&p[..2]) == pair.labels.get(&q[..2])
            });
            if same {
                assert_eq!(det.values()[lin], 1.0);
            }
        }
        let band = pair.discontinuity_mask.values().iter().filter(|&&m| m > 0.5).count();
        assert!(band > 0 && band < g.len() / 4);
    }
}

#[test]
fn scenario_validation() {
    let mut sc = golden_scenario("slide-v6").unwrap();
    assert!(sc.validate().is_ok());
    sc.offset = 40.0;
    assert!(sc.validate().is_err());
    assert!(golden_scenario("nope").is_none());
    assert_eq!(golden_scenarios().len(), 3);
}
