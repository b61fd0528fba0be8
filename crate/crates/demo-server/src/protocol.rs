//! Messages on the session socket. The client sends JSON text; the server
//! answers with binary frames and JSON status messages.

use demolab::env::{Frame, FRAME_BYTES};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `u32` step + `f32` reward + `u8` terminal + `f32` score.
pub const FRAME_HEADER_BYTES: usize = 4 + 4 + 1 + 4;
pub const FRAME_MESSAGE_BYTES: usize = FRAME_HEADER_BYTES + FRAME_BYTES;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello,
    Action { action: usize },
    Reset,
    Save,
    Discard,
    Stop,
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Protocol(format!("unreadable message: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        env: String,
        env_version: u32,
        actions: Vec<String>,
        default_action: usize,
        tick_hz: f64,
    },
    /// The episode ended (game over or stop) and waits for save or discard.
    Paused { terminal: bool, steps: usize, score: f64 },
    Saved { seed: u64, states: usize, score: f64, episodes: usize, total_states: usize },
    Discarded { states: usize },
    Warning { message: String },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

/// One streamed step.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMessage {
    pub step: u32,
    pub reward: f32,
    pub terminal: bool,
    pub score: f32,
    pub frame: Frame,
}

impl FrameMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_MESSAGE_BYTES);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.reward.to_le_bytes());
        out.push(u8::from(self.terminal));
        out.extend_from_slice(&self.score.to_le_bytes());
        out.extend_from_slice(self.frame.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != FRAME_MESSAGE_BYTES {
            return Err(Error::Protocol(format!(
                "frame message is {} bytes, expected {FRAME_MESSAGE_BYTES}",
                bytes.len()
            )));
        }
        let word = |at: usize| -> [u8; 4] { bytes[at..at + 4].try_into().unwrap() };
        Ok(Self {
            step: u32::from_le_bytes(word(0)),
            reward: f32::from_le_bytes(word(4)),
            terminal: bytes[8] != 0,
            score: f32::from_le_bytes(word(9)),
            frame: Frame::new(bytes[FRAME_HEADER_BYTES..].to_vec())?,
        })
    }
}
