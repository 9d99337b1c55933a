use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::hyperopt::study::{TpeStudy, TrialState};
use crate::hyperopt::{ParamSpec, Params, SearchSpace};
use crate::synth::derive_seed;

/// One-dimensional mixture of Gaussians truncated to `[low, high]`, with a
/// broad prior component centred on the interval.
struct Parzen {
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    /// Log of each component's mass inside the bounds.
    log_mass: Vec<f64>,
    low: f64,
    high: f64,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

impl Parzen {
    fn fit(obs: &[f64], low: f64, high: f64) -> Self {
        let width = high - low;
        let prior_mu = 0.5 * (low + high);
        let mut mus: Vec<f64> = obs.to_vec();
        mus.push(prior_mu);
        let mut order: Vec<usize> = (0..mus.len()).collect();
        order.sort_by(|&a, &b| mus[a].total_cmp(&mus[b]));

        // Bandwidth of each point is the larger gap to its sorted neighbours
        // (bounds act as neighbours at the ends).
        let mut sigmas = vec![0.0; mus.len()];
        for (rank, &i) in order.iter().enumerate() {
            let left = if rank == 0 { low } else { mus[order[rank - 1]] };
            let right = if rank + 1 == order.len() { high } else { mus[order[rank + 1]] };
            sigmas[i] = (mus[i] - left).max(right - mus[i]);
        }
        let min_sigma = width / (100.0f64).min(1.0 + mus.len() as f64);
        for s in &mut sigmas {
            *s = s.clamp(min_sigma, width);
        }
        let prior = mus.len() - 1;
        sigmas[prior] = width;

        let n = std_normal();
        let log_mass = mus
            .iter()
            .zip(&sigmas)
            .map(|(&m, &s)| {
                let mass = n.cdf((high - m) / s) - n.cdf((low - m) / s);
                mass.max(1e-300).ln()
            })
            .collect();
        Self {
            mus,
            sigmas,
            log_mass,
            low,
            high,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let n = std_normal();
        let k = rng.random_range(0..self.mus.len());
        let (m, s) = (self.mus[k], self.sigmas[k]);
        let a = n.cdf((self.low - m) / s);
        let b = n.cdf((self.high - m) / s);
        let u = a + rng.random::<f64>() * (b - a);
        let x = m + s * n.inverse_cdf(u.clamp(1e-300, 1.0 - 1e-16));
        x.clamp(self.low, self.high)
    }

    fn log_pdf(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .mus
            .iter()
            .zip(&self.sigmas)
            .zip(&self.log_mass)
            .map(|((&m, &s), &lm)| {
                let z = (x - m) / s;
                -0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - lm
            })
            .collect();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln() - (self.mus.len() as f64).ln()
    }
}

fn uniform(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> f64 {
    let (lo, hi) = spec.internal_bounds();
    spec.external_value(lo + rng.random::<f64>() * (hi - lo))
}

/// Next parameter assignment. Uniform until `n_startup` trials have
/// completed; afterwards each parameter independently takes the candidate
/// drawn from the good-trial density that maximizes `l(x) / g(x)`. The
/// random stream depends only on the study seed and the next trial id.
pub fn tpe_suggest(study: &TpeStudy, space: &SearchSpace) -> Result<Params> {
    let trial_id = study.trials.len() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(study.seed, trial_id));

    let mut history: Vec<(f64, &Params)> = Vec::new();
    for t in study.trials.iter().filter(|t| t.state == TrialState::Complete) {
        let Some(v) = t.value.filter(|v| v.is_finite()) else {
            continue;
        };
        for p in space.params() {
            let inside = t.params.get(&p.name).is_some_and(|&x| x >= p.low && x <= p.high);
            if !inside {
                return Err(Error::Study(format!(
                    "trial {} does not match the search space at {:?}",
                    t.id, p.name
                )));
            }
        }
        history.push((study.direction.loss(v), &t.params));
    }

    let cfg = &study.sampler;
    if history.len() < cfg.n_startup.max(2) {
        return Ok(space
            .params()
            .iter()
            .map(|p| (p.name.clone(), uniform(p, &mut rng)))
            .collect());
    }

    history.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_good = ((cfg.gamma * history.len() as f64).ceil() as usize).clamp(1, history.len() - 1);
    let (good, bad) = history.split_at(n_good);

    let mut out = Params::new();
    for p in space.params() {
        let (lo, hi) = p.internal_bounds();
        let pick = |set: &[(f64, &Params)]| -> Vec<f64> { set.iter().map(|(_, ps)| p.to_internal(ps[&p.name])).collect() };
        let l = Parzen::fit(&pick(good), lo, hi);
        let g = Parzen::fit(&pick(bad), lo, hi);
        let mut best = (f64::NEG_INFINITY, 0.5 * (lo + hi));
        for _ in 0..cfg.n_ei_candidates {
            let x = l.sample(&mut rng);
            let score = l.log_pdf(x) - g.log_pdf(x);
            if score > best.0 {
                best = (score, x);
            }
        }
        out.insert(p.name.clone(), p.external_value(best.1));
    }
    Ok(out)
}
