//! Re-runs archived episodes through fresh games to confirm the recording.

use demolab::archive::DemoArchive;
use demolab::env::Env;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub rewards: Vec<f32>,
    pub score: f64,
    /// Step at which the game reported its end, if it did.
    pub end_step: Option<usize>,
    pub truncated: bool,
}

impl Replay {
    /// Bit-equal rewards and the same ending as the stored episode.
    pub fn matches(&self, archive: &DemoArchive, index: usize) -> bool {
        let ep = &archive.episodes[index];
        let same_rewards = self.rewards.len() == ep.rewards.len()
            && self.rewards.iter().zip(&ep.rewards).all(|(a, b)| a.to_bits() == b.to_bits());
        let same_end = if ep.terminal {
            self.end_step == Some(ep.len() - 1) && !self.truncated
        } else {
            // cap-ended or stopped by the player
            self.end_step.is_none() || self.truncated
        };
        same_rewards && same_end
    }
}

pub fn replay_archive(archive: &DemoArchive, index: usize) -> Result<Replay> {
    let spec = archive.env_spec();
    if archive.manifest.env_version != spec.version() {
        return Err(Error::Replay(format!(
            "archive was recorded with {} v{}, this build has v{}",
            spec.id,
            archive.manifest.env_version,
            spec.version()
        )));
    }
    let ep = archive
        .episodes
        .get(index)
        .ok_or_else(|| Error::Replay(format!("episode {index} out of range ({} stored)", archive.len())))?;
    let mut env = Env::new(&spec);
    env.reset(ep.seed);
    let mut replay = Replay { rewards: Vec::with_capacity(ep.len()), score: 0.0, end_step: None, truncated: false };
    for (t, &a) in ep.actions.iter().enumerate() {
        let r = env.step(a as usize).map_err(|e| Error::Replay(format!("step {t}: {e}")))?;
        replay.rewards.push(r.reward as f32);
        if r.terminal {
            replay.end_step = Some(t);
            replay.truncated = r.truncated;
        }
    }
    replay.score = replay.rewards.iter().map(|&r| r as f64).sum();
    Ok(replay)
}
