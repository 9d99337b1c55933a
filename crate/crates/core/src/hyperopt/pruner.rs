use crate::hyperopt::study::{Direction, TpeStudy, Trial, TrialState};

/// Median rule: prune once enough trials have completed, past the warm-up,
/// on the check interval, when `trial` is strictly worse at `step` than the
/// median of completed trials that reported that step.
pub fn should_prune(study: &TpeStudy, trial: &Trial, step: usize) -> bool {
    let cfg = &study.pruner;
    if !cfg.enabled {
        return false;
    }
    let completed: Vec<&Trial> = study
        .trials
        .iter()
        .filter(|t| t.state == TrialState::Complete && t.id != trial.id)
        .collect();
    if completed.len() < cfg.n_startup_trials || step < cfg.n_warmup_steps {
        return false;
    }
    if cfg.interval_steps == 0 || !step.is_multiple_of(cfg.interval_steps) {
        return false;
    }
    let Some(value) = trial.value_at(step) else {
        return false;
    };
    let mut peers: Vec<f64> = completed.iter().filter_map(|t| t.value_at(step)).collect();
    if peers.is_empty() || !value.is_finite() {
        return !value.is_finite() && !peers.is_empty();
    }
    peers.sort_by(f64::total_cmp);
    let n = peers.len();
    let median = if n % 2 == 1 {
        peers[n / 2]
    } else {
        0.5 * (peers[n / 2 - 1] + peers[n / 2])
    };
    match study.direction {
        Direction::Minimize => value > median,
        Direction::Maximize => value < median,
    }
}
