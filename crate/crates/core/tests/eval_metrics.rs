mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use svreg_core::eval::{label_classes, LabelPair, LandmarkPair};
use svreg_core::synth::{random_shapes_image, random_smooth_velocity};
use svreg_core::*;

/// Landmark mapping by dense resampling: sample each displacement component
/// as a scalar image at the fixed landmark's voxel position.
fn mapped_by_sampling(fixed: &[f64], disp: &VectorField) -> Vec<f64> {
    let g = disp.grid();
    let d = g.ndim();
    let vox: Vec<f64> = (0..d).map(|a| fixed[a] / g.spacing()[a]).collect();
    (0..d)
        .map(|a| {
            let comp = disp.component(a);
            let u = svreg_core::field::sample_linear(&comp, &vox).unwrap()[0];
            (vox[a] + u) * g.spacing()[a]
        })
        .collect()
}

#[test]
fn tre_matches_dense_sampling_oracle() {
    let g = Grid::with_spacing(&[20, 18, 16], &[1.2, 0.9, 2.5]).unwrap();
    let disp = random_smooth_velocity(&g, 3.0, 6.0, 2).unwrap();
    let mut r = rng(3);
    let fixed_pts: Vec<Vec<f64>> = (0..40)
        .map(|_| (0..3).map(|a| r.random::<f64>() * (g.dims()[a] - 1) as f64 * g.spacing()[a]).collect())
        .collect();
    let moving_pts: Vec<Vec<f64>> = fixed_pts
        .iter()
        .map(|p| p.iter().map(|x| x + r.random::<f64>() - 0.5).collect())
        .collect();
    let fixed = LandmarkSet::new(fixed_pts.clone()).unwrap();
    let moving = LandmarkSet::new(moving_pts.clone()).unwrap();
    let res = tre(&moving, &fixed, &disp).unwrap();
    assert_eq!(res.excluded, 0);
    for (k, d) in res.distances.iter().enumerate() {
        let m = mapped_by_sampling(&fixed_pts[k], &disp);
        let want = (0..3).map(|a| (m[a] - moving_pts[k][a]).powi(2)).sum::<f64>().sqrt();
        assert!((d.unwrap() - want).abs() <= 1e-9);
    }
}

#[test]
fn tre_with_zero_displacement_is_initial_distance() {
    let g = Grid::with_spacing(&[10, 10], &[2.0, 0.5]).unwrap();
    let fixed = LandmarkSet::new(vec![vec![4.0, 1.0], vec![10.0, 3.5]]).unwrap();
    let moving = LandmarkSet::new(vec![vec![7.0, 5.0], vec![10.0, 3.5]]).unwrap();
    let res = tre(&moving, &fixed, &VectorField::zeros(&g)).unwrap();
    assert_eq!(res.distances, vec![Some(5.0), Some(0.0)]);
}

#[test]
fn dice_identity_and_disjoint() {
    let g = Grid::new(&[48, 48]).unwrap();
    let (_, labels) = random_shapes_image(&g, 4, 1).unwrap();
    let classes = label_classes(&labels, &labels);
    assert_eq!(classes, vec![1, 2, 3, 4]);
    let same = dice(&labels, &labels, &classes).unwrap();
    assert!(same.per_class.values().all(|s| *s == Some(1.0)));
    let shifted = labels.map(|l| l + 10.0);
    let apart = dice(&labels, &shifted, &classes).unwrap();
    assert!(apart.per_class.values().all(|s| *s == Some(0.0)));
}

#[test]
fn identity_report() {
    let g = Grid::new(&[24, 24]).unwrap();
    let (img, labels) = random_shapes_image(&g, 3, 5).unwrap();
    let cfg = RegistrationConfig { iterations: 3, ..Default::default() };
    let result = register(&img, &img, &cfg, None).unwrap();
    let lms = LandmarkSet::new(vec![vec![3.0, 4.0], vec![12.5, 20.0]]).unwrap();
    let rep = report(
        &result,
        Some(LabelPair { moving: &labels, fixed: &labels }),
        Some(LandmarkPair { moving: &lms, fixed: &lms }),
    )
    .unwrap();
    assert_eq!(rep.metrics.dice.as_ref().unwrap().mean, Some(1.0));
    assert!(rep.metrics.tre.as_ref().unwrap().max.unwrap() < 1e-3);
    assert_eq!((rep.metrics.pct_nonpos_j, rep.metrics.pct_ndv), (0.0, 0.0));
    assert_eq!(rep.loss.iterations, 3);

    let json = serde_json::to_string(&rep).unwrap();
    let back: Report = serde_json::from_str(&json).unwrap();
    assert_eq!(back, rep);

    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    let metrics = value["metrics"].as_object().unwrap();
    let keys: Vec<&str> = metrics.keys().map(String::as_str).collect();
    assert_eq!(keys, ["dice", "min_j", "pct_ndv", "pct_nonpos_j", "tre"]);
    for key in ["metrics", "loss", "hyperparameters", "timings"] {
        assert_eq!(json.matches(&format!("\"{key}\"")).count(), 1, "{key}");
    }

    let bare = report(&result, None, None).unwrap();
    let value = serde_json::to_value(&bare).unwrap();
    assert!(value["metrics"].get("dice").is_none() && value["metrics"].get("tre").is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dice_symmetric_and_bounded(seed in any::<u64>()) {
        let g = Grid::new(&[9, 11]).unwrap();
        let mut r = rng(seed);
        let mut labels = || ScalarField::new(g.clone(), (0..g.len()).map(|_| r.random_range(0..4) as f64).collect()).unwrap();
        let a = labels();
        let b = labels();
        let ab = dice(&a, &b, &[1, 2, 3]).unwrap();
        let ba = dice(&b, &a, &[1, 2, 3]).unwrap();
        prop_assert_eq!(&ab, &ba);
        for s in ab.per_class.values().flatten() {
            prop_assert!((0.0..=1.0).contains(s));
        }
    }

    #[test]
    fn tre_invariant_to_consistent_reordering(seed in any::<u64>()) {
        let g = Grid::new(&[12, 12]).unwrap();
        let disp = random_smooth_velocity(&g, 2.0, 4.0, seed % 1000).unwrap();
        let mut r = rng(seed);
        let pts: Vec<Vec<f64>> = (0..8).map(|_| vec![r.random::<f64>() * 11.0, r.random::<f64>() * 11.0]).collect();
        let mov: Vec<Vec<f64>> = (0..8).map(|_| vec![r.random::<f64>() * 11.0, r.random::<f64>() * 11.0]).collect();
        let base = tre(&LandmarkSet::new(mov.clone()).unwrap(), &LandmarkSet::new(pts.clone()).unwrap(), &disp).unwrap();
        let perm: Vec<usize> = (0..8).rev().collect();
        let pp: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
        let mp: Vec<Vec<f64>> = perm.iter().map(|&i| mov[i].clone()).collect();
        let other = tre(&LandmarkSet::new(mp).unwrap(), &LandmarkSet::new(pp).unwrap(), &disp).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(other.distances[k], base.distances[i]);
        }
        prop_assert!((other.mean.unwrap() - base.mean.unwrap()).abs() < 1e-12);
    }
}
