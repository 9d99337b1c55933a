use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_FD_STEP: f64 = 1e-5;
pub const DEFAULT_PROBES: usize = 30;

/// Compares `analytic` against central differences of `loss` at
/// `n_probes` randomly chosen coordinates and returns the largest relative
/// error.
///
/// The relative error is `|fd − analytic| / max(|fd|, |analytic|, floor)`
/// where `floor` is `1e-3` of the largest analytic entry, so coordinates with
/// a vanishing derivative are judged against the gradient's overall scale.
pub fn gradient_check(
    loss: impl Fn(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    n_probes: usize,
    seed: u64,
) -> f64 {
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let scale = analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let floor = (1e-3 * scale).max(1e-300);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes = sample(&mut rng, params.len(), n_probes.min(params.len()));
    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for i in probes {
        let x = work[i];
        work[i] = x + eps;
        let up = loss(&work);
        work[i] = x - eps;
        let down = loss(&work);
        work[i] = x;
        let fd = (up - down) / (2.0 * eps);
        let denom = fd.abs().max(analytic[i].abs()).max(floor);
        worst = worst.max((fd - analytic[i]).abs() / denom);
    }
    worst
}
