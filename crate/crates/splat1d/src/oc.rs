//! Per-primitive observation statistics and observation-completeness
//! pruning.
//!
//! A primitive counts as effectively observed in an iteration when its
//! position-gradient norm exceeds [`EFFECTIVE_GRAD_THRESHOLD`]. Observed
//! iterations feed an online mean/variance of the observing camera
//! positions (the unbiased sample variance, updated iteratively), and the
//! completeness score is an exponential moving average
//!
//!   oc <- 0.98 oc + 0.02 * ||var_pos||_2 * u
//!
//! updated every iteration for every primitive, so unobserved primitives
//! decay. Pruning removes primitives that are both nearly unobserved over
//! the last full round (fewer than 3 effective observations) and carry an
//! oc below 0.03 — floaters seen from almost nowhere.

use serde::{Deserialize, Serialize};

use crate::scene::Vec2;

/// Effective-observation gate on the position-gradient norm (strict).
pub const EFFECTIVE_GRAD_THRESHOLD: f64 = 1e-7;
/// EMA decay of the completeness score.
pub const OC_DECAY: f64 = 0.98;
/// Pruning threshold on the completeness score.
pub const OCP_OC_THRESHOLD: f64 = 0.03;
/// Pruning threshold on per-round effective observations.
pub const OCP_MIN_OBSERVATIONS: u64 = 3;

/// Online observation state of one primitive.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObservationStats {
    /// Number of effective observations (never reset).
    pub m: u64,
    /// Running mean of observing camera positions.
    pub mean_pos: Vec2,
    /// Running per-axis sample variance of observing camera positions.
    pub var_pos: Vec2,
    /// Observation-completeness score.
    pub oc: f64,
    /// Effective observations in the current round; reset by
    /// [`ocp_prune`] / [`reset_epoch_counts`].
    pub epoch_observation_count: u64,
}

/// 1 iff the position gradient clears the effective-observation gate.
pub fn effective_observation(grad_p: f64) -> u8 {
    debug_assert!(grad_p >= 0.0);
    (grad_p > EFFECTIVE_GRAD_THRESHOLD) as u8
}

/// Folds one camera position into the running statistics when `u == 1`;
/// a no-op when `u == 0`.
///
/// The variance recurrence
///   var_m = ((m-2)/(m-1)) var_{m-1} + (x - mean_{m-1})^2 / m
/// (with the new count m) reproduces the unbiased two-pass sample
/// variance; the m = 1 case is defined as zero since a single sample has
/// no spread.
pub fn update_stats(stats: &mut ObservationStats, camera_position: Vec2, u: u8) {
    if u == 0 {
        return;
    }
    let m = stats.m + 1;
    for axis in 0..2 {
        let delta = camera_position[axis] - stats.mean_pos[axis];
        stats.mean_pos[axis] += delta / m as f64;
        if m == 1 {
            stats.var_pos[axis] = 0.0;
        } else {
            let keep = (m as f64 - 2.0) / (m as f64 - 1.0);
            stats.var_pos[axis] = keep * stats.var_pos[axis] + delta * delta / m as f64;
        }
    }
    stats.m = m;
    stats.epoch_observation_count += 1;
}

/// EMA update of the completeness score; runs every iteration.
pub fn update_oc(stats: &mut ObservationStats, u: u8) {
    let delta = crate::scene::norm(stats.var_pos) * u as f64;
    stats.oc = OC_DECAY * stats.oc + (1.0 - OC_DECAY) * delta;
}

/// Indices to remove at a round boundary: completeness below 0.03 and
/// fewer than 3 effective observations this round. Epoch counters reset.
pub fn ocp_prune(all_stats: &mut [ObservationStats]) -> Vec<usize> {
    let pruned = all_stats
        .iter()
        .enumerate()
        .filter(|(_, s)| s.oc < OCP_OC_THRESHOLD && s.epoch_observation_count < OCP_MIN_OBSERVATIONS)
        .map(|(i, _)| i)
        .collect();
    reset_epoch_counts(all_stats);
    pruned
}

/// Round-boundary reset of the per-round observation counters (used
/// directly when pruning is disabled).
pub fn reset_epoch_counts(all_stats: &mut [ObservationStats]) {
    for s in all_stats {
        s.epoch_observation_count = 0;
    }
}
