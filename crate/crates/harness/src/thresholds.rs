//! Score thresholds for steps-to-threshold, as fractions of the scripted
//! player's mean score over the eight reference seeds.

use demolab::env::EnvId;

/// Scripted-player mean over the reference seeds (recomputed in tests).
pub const SCRIPTED_MEAN_PONG: f64 = 4.0;
pub const SCRIPTED_MEAN_PACMAN: f64 = 7911.25;

pub const PONG_FRACTION: f64 = 0.8;
pub const PACMAN_FRACTION: f64 = 0.6;

pub fn scripted_mean(env: EnvId) -> f64 {
    match env {
        EnvId::MiniPong => SCRIPTED_MEAN_PONG,
        EnvId::MiniPacman => SCRIPTED_MEAN_PACMAN,
    }
}

pub fn score_threshold(env: EnvId) -> f64 {
    match env {
        EnvId::MiniPong => PONG_FRACTION * SCRIPTED_MEAN_PONG,
        EnvId::MiniPacman => PACMAN_FRACTION * SCRIPTED_MEAN_PACMAN,
    }
}
