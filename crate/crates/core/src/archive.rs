//! On-disk demonstration archives.
//!
//! Layout: one JSON manifest line terminated by `\n`, then every episode's
//! records back to back. A record is the observed frame (7744 bytes), the
//! action taken (1 byte), the reward received (f32 LE) and a terminal flag
//! (1 byte). The manifest carries per-episode state counts, scores, reset
//! seeds and SHA-256 checksums of the record bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{EnvId, EnvSpec, Frame, FRAME_BYTES, FRAME_SIDE};
use crate::error::{Error, Result};
use crate::sil::Episode;

pub const FORMAT: &str = "demolab-archive";
pub const VERSION: u32 = 1;
pub const RECORD_BYTES: usize = FRAME_BYTES + 1 + 4 + 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub seed: u64,
    pub states: usize,
    pub score: f64,
    pub terminal: bool,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format: String,
    pub version: u32,
    pub env_id: EnvId,
    pub env_version: u32,
    pub frame_height: usize,
    pub frame_width: usize,
    pub action_names: Vec<String>,
    pub episodes: Vec<EpisodeEntry>,
}

impl ArchiveManifest {
    pub fn new(spec: &EnvSpec) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            env_id: spec.id,
            env_version: spec.version(),
            frame_height: FRAME_SIDE,
            frame_width: FRAME_SIDE,
            action_names: spec.action_set.iter().map(|s| s.to_string()).collect(),
            episodes: Vec::new(),
        }
    }

    pub fn total_states(&self) -> usize {
        self.episodes.iter().map(|e| e.states).sum()
    }
}

/// One recorded episode: `frames[t]` was on screen when `actions[t]` was chosen.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoEpisode {
    pub seed: u64,
    pub frames: Vec<Frame>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f32>,
    /// True when the game ended; false for a step cap or a user stop.
    pub terminal: bool,
}

impl DemoEpisode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn score(&self) -> f64 {
        self.rewards.iter().map(|&r| r as f64).sum()
    }

    fn validate(&self) -> Result<()> {
        let n = self.actions.len();
        if n == 0 {
            return Err(Error::Empty("episode"));
        }
        if self.frames.len() != n || self.rewards.len() != n {
            return Err(Error::Archive(format!(
                "episode has {} frames, {} actions and {} rewards",
                self.frames.len(),
                n,
                self.rewards.len()
            )));
        }
        Ok(())
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * RECORD_BYTES);
        let last = self.len() - 1;
        for t in 0..self.len() {
            out.extend_from_slice(self.frames[t].as_bytes());
            out.push(self.actions[t]);
            out.extend_from_slice(&self.rewards[t].to_le_bytes());
            out.push(u8::from(self.terminal && t == last));
        }
        out
    }

    fn entry(&self, bytes: &[u8]) -> EpisodeEntry {
        EpisodeEntry {
            seed: self.seed,
            states: self.len(),
            score: self.score(),
            terminal: self.terminal,
            sha256: hex(&Sha256::digest(bytes)),
        }
    }

    /// The episode as SIL input; non-terminal endings bootstrap from zero.
    pub fn to_episode(&self) -> Episode {
        Episode {
            frames: self.frames.clone(),
            actions: self.actions.clone(),
            rewards: self.rewards.iter().map(|&r| r as f64).collect(),
            terminal: self.terminal,
            bootstrap: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoArchive {
    pub manifest: ArchiveManifest,
    pub episodes: Vec<DemoEpisode>,
}

impl DemoArchive {
    pub fn new(spec: &EnvSpec) -> Self {
        Self {
            manifest: ArchiveManifest::new(spec),
            episodes: Vec::new(),
        }
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec::new(self.manifest.env_id)
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn total_states(&self) -> usize {
        self.manifest.total_states()
    }

    pub fn push(&mut self, episode: DemoEpisode) -> Result<&EpisodeEntry> {
        episode.validate()?;
        let num_actions = self.manifest.action_names.len();
        if let Some(&a) = episode.actions.iter().find(|&&a| a as usize >= num_actions) {
            return Err(Error::InvalidAction { action: a as usize, size: num_actions });
        }
        let entry = episode.entry(&episode.encode());
        self.manifest.episodes.push(entry);
        self.episodes.push(episode);
        Ok(self.manifest.episodes.last().unwrap())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.manifest)?;
        out.push(b'\n');
        for ep in &self.episodes {
            out.extend_from_slice(&ep.encode());
        }
        Ok(out)
    }

    /// Writes atomically through a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Archive("missing manifest line".into()))?;
        let manifest: ArchiveManifest = serde_json::from_slice(&bytes[..split])?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Archive(format!(
                "unsupported archive {} v{}",
                manifest.format, manifest.version
            )));
        }
        if (manifest.frame_height, manifest.frame_width) != (FRAME_SIDE, FRAME_SIDE) {
            return Err(Error::Archive(format!(
                "frames are {}x{}, expected {FRAME_SIDE}x{FRAME_SIDE}",
                manifest.frame_height, manifest.frame_width
            )));
        }
        let num_actions = manifest.action_names.len();

        let mut rest = &bytes[split + 1..];
        let mut episodes = Vec::with_capacity(manifest.episodes.len());
        for (i, entry) in manifest.episodes.iter().enumerate() {
            let need = entry.states * RECORD_BYTES;
            if rest.len() < need {
                return Err(Error::Truncated { last_complete: i.checked_sub(1) });
            }
            let (chunk, tail) = rest.split_at(need);
            rest = tail;
            let bad = |reason: String| Error::ArchiveEpisode { episode: i, reason };
            if entry.states == 0 {
                return Err(bad("zero states".into()));
            }
            if hex(&Sha256::digest(chunk)) != entry.sha256 {
                return Err(bad("checksum mismatch".into()));
            }
            let mut ep = DemoEpisode {
                seed: entry.seed,
                frames: Vec::with_capacity(entry.states),
                actions: Vec::with_capacity(entry.states),
                rewards: Vec::with_capacity(entry.states),
                terminal: false,
            };
            for (t, rec) in chunk.chunks_exact(RECORD_BYTES).enumerate() {
                let (frame, tail) = rec.split_at(FRAME_BYTES);
                let action = tail[0];
                if action as usize >= num_actions {
                    return Err(bad(format!("action {action} at step {t} outside the action set")));
                }
                let terminal = tail[5] != 0;
                if terminal && t + 1 != entry.states {
                    return Err(bad(format!("terminal flag at step {t} before the end")));
                }
                ep.frames.push(Frame::new(frame.to_vec())?);
                ep.actions.push(action);
                ep.rewards.push(f32::from_le_bytes(tail[1..5].try_into().unwrap()));
                ep.terminal = terminal;
            }
            if ep.terminal != entry.terminal {
                return Err(bad("terminal flag disagrees with the manifest".into()));
            }
            if ep.score() != entry.score {
                return Err(bad(format!("stored rewards sum to {}, manifest says {}", ep.score(), entry.score)));
            }
            episodes.push(ep);
        }
        if !rest.is_empty() {
            return Err(Error::Archive(format!("{} trailing bytes after the last episode", rest.len())));
        }
        Ok(Self { manifest, episodes })
    }
}

/// Appends `episode` to the archive at `path`, creating it when absent.
pub fn append_episode(path: &Path, spec: &EnvSpec, episode: DemoEpisode) -> Result<EpisodeEntry> {
    let mut archive = if path.exists() {
        let a = DemoArchive::load(path)?;
        if a.manifest.env_id != spec.id || a.manifest.env_version != spec.version() {
            return Err(Error::Archive(format!(
                "archive holds {} v{} episodes, not {} v{}",
                a.manifest.env_id,
                a.manifest.env_version,
                spec.id,
                spec.version()
            )));
        }
        a
    } else {
        DemoArchive::new(spec)
    };
    let entry = archive.push(episode)?.clone();
    archive.save(path)?;
    Ok(entry)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
