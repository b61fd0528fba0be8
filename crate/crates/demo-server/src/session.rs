//! One human playing one game: the held action, the recording of the current
//! episode and the save/discard cycle. Owned by a single task; no locking.

use std::path::{Path, PathBuf};

use demolab::archive::{append_episode, DemoEpisode, EpisodeEntry};
use demolab::env::{Env, EnvSpec, Frame};

use crate::error::{Error, Result};
use crate::protocol::{ClientMessage, FrameMessage, ServerMessage};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Playing,
    /// Episode over; `terminal` is false after a stop or the step cap.
    Ended { terminal: bool },
}

pub struct Session {
    spec: EnvSpec,
    env: Env,
    base_seed: u64,
    episode_index: u64,
    seed: u64,
    held: usize,
    on_screen: Frame,
    recording: DemoEpisode,
    phase: Phase,
    archive: PathBuf,
    saved: usize,
    saved_states: usize,
}

/// What the connection should send after handling a message or a tick.
#[derive(Debug, Default)]
pub struct Outbox {
    pub frame: Option<FrameMessage>,
    pub status: Vec<ServerMessage>,
}

impl Session {
    /// Starts the first episode from `seed`; later episodes use `seed + 1`, `seed + 2`, …
    pub fn new(spec: EnvSpec, seed: u64, archive: impl Into<PathBuf>) -> Self {
        let mut env = Env::new(&spec);
        let on_screen = env.reset(seed);
        Self {
            recording: empty_episode(seed),
            spec,
            env,
            base_seed: seed,
            episode_index: 0,
            seed,
            held: 0,
            on_screen,
            phase: Phase::Playing,
            archive: archive.into(),
            saved: 0,
            saved_states: 0,
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn held_action(&self) -> usize {
        self.held
    }

    /// Steps recorded since the last reset.
    pub fn recording_len(&self) -> usize {
        self.recording.len()
    }

    pub fn archive_path(&self) -> &Path {
        &self.archive
    }

    pub fn hello(&self, tick_hz: f64) -> ServerMessage {
        ServerMessage::Hello {
            env: self.spec.id.to_string(),
            env_version: self.spec.version(),
            actions: self.spec.action_set.clone(),
            default_action: 0,
            tick_hz,
        }
    }

    /// One clock tick: step with the held action unless the episode is over.
    pub fn tick(&mut self) -> Result<Outbox> {
        let mut out = Outbox::default();
        if self.phase != Phase::Playing {
            return Ok(out);
        }
        let action = self.held;
        let r = self.env.step(action)?;
        let shown = std::mem::replace(&mut self.on_screen, r.observation.clone());
        self.recording.frames.push(shown);
        self.recording.actions.push(action as u8);
        self.recording.rewards.push(r.reward as f32);
        out.frame = Some(FrameMessage {
            step: self.env.steps() as u32,
            reward: r.reward as f32,
            terminal: r.terminal,
            score: r.score as f32,
            frame: r.observation,
        });
        if r.terminal {
            self.end(!r.truncated, &mut out);
        }
        Ok(out)
    }

    pub fn handle(&mut self, msg: ClientMessage, tick_hz: f64) -> Outbox {
        let mut out = Outbox::default();
        match msg {
            ClientMessage::Hello => out.status.push(self.hello(tick_hz)),
            ClientMessage::Action { action } => {
                if action < self.spec.num_actions() {
                    self.held = action;
                } else {
                    out.status.push(warning(format!(
                        "action {action} outside the action set of {} actions",
                        self.spec.num_actions()
                    )));
                }
            }
            ClientMessage::Stop => match self.phase {
                Phase::Playing if !self.recording.is_empty() => self.end(false, &mut out),
                Phase::Playing => out.status.push(warning("nothing recorded yet".into())),
                Phase::Ended { .. } => {}
            },
            ClientMessage::Save => match self.phase {
                Phase::Ended { .. } => match self.save() {
                    Ok(entry) => {
                        out.status.push(ServerMessage::Saved {
                            seed: entry.seed,
                            states: entry.states,
                            score: entry.score,
                            episodes: self.saved,
                            total_states: self.saved_states,
                        });
                        self.next_episode();
                    }
                    // the recording stays for another attempt
                    Err(e) => out.status.push(warning(format!("save failed: {e}"))),
                },
                Phase::Playing => out.status.push(warning("stop the episode before saving".into())),
            },
            ClientMessage::Discard => match self.phase {
                Phase::Ended { .. } => {
                    out.status.push(ServerMessage::Discarded { states: self.recording.len() });
                    self.next_episode();
                }
                Phase::Playing => out.status.push(warning("stop the episode before discarding".into())),
            },
            ClientMessage::Reset => {
                if !self.recording.is_empty() {
                    out.status.push(ServerMessage::Discarded { states: self.recording.len() });
                }
                self.next_episode();
            }
        }
        out
    }

    fn end(&mut self, terminal: bool, out: &mut Outbox) {
        self.phase = Phase::Ended { terminal };
        self.recording.terminal = terminal;
        out.status.push(ServerMessage::Paused {
            terminal,
            steps: self.recording.len(),
            score: self.recording.score(),
        });
    }

    /// Appends the finished recording to the archive file.
    pub fn save(&mut self) -> Result<EpisodeEntry> {
        if self.phase == Phase::Playing {
            return Err(Error::Protocol("episode still running".into()));
        }
        let entry = append_episode(&self.archive, &self.spec, self.recording.clone())?;
        self.saved += 1;
        self.saved_states += entry.states;
        Ok(entry)
    }

    fn next_episode(&mut self) {
        self.episode_index += 1;
        self.seed = self.base_seed.wrapping_add(self.episode_index);
        self.on_screen = self.env.reset(self.seed);
        self.recording = empty_episode(self.seed);
        self.held = 0;
        self.phase = Phase::Playing;
    }
}

fn empty_episode(seed: u64) -> DemoEpisode {
    DemoEpisode {
        seed,
        frames: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        terminal: false,
    }
}

pub(crate) fn warning(message: String) -> ServerMessage {
    ServerMessage::Warning { message }
}
