mod common;

use svreg_core::optimize::AdamConfig;
use svreg_core::synth::{random_shapes_image, translation_pair};
use svreg_core::*;

fn fast_config(iterations: usize) -> RegistrationConfig {
    RegistrationConfig {
        iterations,
        prior: PriorKind::Beta {
            alpha_prime: 0.05,
            lambda_max: 10.0,
        },
        adam: AdamConfig {
            lr: 0.05,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn mean_error(disp: &VectorField, truth: &VectorField, margin: usize) -> f64 {
    let g = disp.grid();
    let (mut sum, mut n) = (0.0, 0.0);
    for lin in 0..g.len() {
        let idx = g.unravel(lin);
        if (0..g.ndim()).any(|a| idx[a] < margin || idx[a] + margin >= g.dims()[a]) {
            continue;
        }
        let d: f64 = disp.at(lin).iter().zip(truth.at(lin)).map(|(a, b)| (a - b).powi(2)).sum();
        sum += d.sqrt();
        n += 1.0;
    }
    sum / n
}

#[test]
fn identical_images_keep_zero_velocity() {
    let g = Grid::new(&[32, 32]).unwrap();
    let (img, _) = random_shapes_image(&g, 3, 2).unwrap();
    let r = register(&img, &img, &fast_config(20), None).unwrap();
    assert!(r.velocity.values().iter().all(|&v| v == 0.0));
    assert!(r.displacement.values().iter().all(|&v| v == 0.0));
    assert_eq!(r.jacobian.pct_ndv, 0.0);
    assert_eq!(r.loss_trace.len(), 20);
}

#[test]
fn recovers_constant_shifts() {
    let g = Grid::new(&[64, 64]).unwrap();
    for (k, shift) in [[3.0, 0.0], [0.0, -3.0]].iter().enumerate() {
        let (m, f, truth) = translation_pair(&g, shift, k as u64).unwrap();
        let r = register(&m, &f, &fast_config(400), None).unwrap();
        let err = mean_error(&r.displacement, &truth, 8);
        assert!(err <= 0.2, "shift {shift:?}: {err}");
    }
}

#[test]
fn deterministic_and_descending() {
    let g = Grid::new(&[24, 28]).unwrap();
    let (m, f, _) = translation_pair(&g, &[1.5, -1.0], 4).unwrap();
    let cfg = fast_config(60);
    let a = register(&m, &f, &cfg, None).unwrap();
    let b = register(&m, &f, &cfg, None).unwrap();
    assert_eq!(a.displacement, b.displacement);
    assert_eq!(a.lambda, b.lambda);
    assert_eq!(a.loss_trace, b.loss_trace);
    assert!(a.loss_trace[49].total <= a.loss_trace[0].total);
}

#[test]
fn weights_stay_in_prior_range() {
    let g = Grid::new(&[24, 24]).unwrap();
    let (m, f, _) = translation_pair(&g, &[2.0, 1.0], 8).unwrap();
    let r = register(&m, &f, &fast_config(80), None).unwrap();
    assert!(r.lambda.values().iter().all(|&l| (0.0..=10.0).contains(&l)));

    let mut cfg = fast_config(40);
    cfg.prior = PriorKind::Uniform { lambda: 2.5 };
    let r = register(&m, &f, &cfg, None).unwrap();
    assert!(r.lambda.values().iter().all(|&l| l == 2.5));

    cfg.prior = PriorKind::Gaussian {
        sigma_prime: 1.0,
        lambda_mean: 2.0,
    };
    let r = register(&m, &f, &cfg, None).unwrap();
    assert!(r.lambda.min() >= 0.0);
}

#[test]
fn observer_stops_early() {
    let g = Grid::new(&[16, 16]).unwrap();
    let (m, f, _) = translation_pair(&g, &[1.0, 0.0], 1).unwrap();
    let r = register_observed(&m, &f, &fast_config(50), None, |rep| rep.iteration < 7).unwrap();
    assert!(r.stopped_early);
    assert_eq!(r.loss_trace.len(), 7);
}

#[test]
fn rejects_bad_inputs() {
    let g = Grid::new(&[16, 16]).unwrap();
    let (m, f, _) = translation_pair(&g, &[1.0, 0.0], 1).unwrap();
    let other = ScalarField::zeros(&Grid::new(&[16, 15]).unwrap());
    assert!(register(&m, &other, &fast_config(5), None).is_err());
    assert!(register(&m.map(|x| 2.0 * x + 0.5), &f, &fast_config(5), None).is_err());
    let mut cfg = fast_config(5);
    cfg.adam.lr = -1.0;
    assert!(register(&m, &f, &cfg, None).is_err());
}
