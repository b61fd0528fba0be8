//! Deterministic 88×88 grayscale toy games with frame skip and frame stacking.

pub mod pacman;
pub mod pong;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndgrad::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use pacman::MiniPacman;
pub use pong::MiniPong;

pub const FRAME_SIDE: usize = 88;
pub const FRAME_BYTES: usize = FRAME_SIDE * FRAME_SIDE;
pub const STACK_DEPTH: usize = 4;
pub const FRAME_SKIP: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    MiniPong,
    MiniPacman,
}

impl EnvId {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::MiniPong => "minipong",
            EnvId::MiniPacman => "minipacman",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minipong" => Ok(EnvId::MiniPong),
            "minipacman" => Ok(EnvId::MiniPacman),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: EnvId,
    pub action_set: Vec<String>,
    pub frame_skip: usize,
    pub max_episode_steps: usize,
}

impl EnvSpec {
    pub fn new(id: EnvId) -> Self {
        let (actions, max_steps): (&[&str], usize) = match id {
            EnvId::MiniPong => (&["noop", "up", "down"], 1000),
            EnvId::MiniPacman => (&["up", "down", "left", "right"], 1500),
        };
        Self {
            id,
            action_set: actions.iter().map(|s| s.to_string()).collect(),
            frame_skip: FRAME_SKIP,
            max_episode_steps: max_steps,
        }
    }

    pub fn parse(id: &str) -> Result<Self> {
        Ok(Self::new(id.parse()?))
    }

    pub fn num_actions(&self) -> usize {
        self.action_set.len()
    }

    /// Dynamics version; archives recorded under a different version cannot be replayed.
    pub fn version(&self) -> u32 {
        match self.id {
            EnvId::MiniPong => pong::VERSION,
            EnvId::MiniPacman => pacman::VERSION,
        }
    }
}

/// One raw 88×88 grayscale frame.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame(Arc<[u8]>);

impl Frame {
    pub fn new(bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() != FRAME_BYTES {
            return Err(Error::FrameSize {
                expected: FRAME_BYTES,
                got: bytes.len(),
            });
        }
        Ok(Self(bytes.into()))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Frame({} bytes)", self.0.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Frame,
    /// Raw reward summed over the skipped frames.
    pub reward: f64,
    pub terminal: bool,
    /// Ended by the step cap rather than by the game.
    pub truncated: bool,
    /// Raw score accumulated since reset.
    pub score: f64,
}

/// Scale a raw frame to `[0, 1]` as an 88×88 tensor.
pub fn preprocess<T: Real>(frame: &[u8]) -> Result<Tensor<T>> {
    if frame.len() != FRAME_BYTES {
        return Err(Error::FrameSize {
            expected: FRAME_BYTES,
            got: frame.len(),
        });
    }
    let scale = T::from_f64_lossy(1.0 / 255.0);
    Ok(Tensor::new(
        vec![FRAME_SIDE, FRAME_SIDE],
        frame.iter().map(|&b| T::from_u8(b).unwrap() * scale).collect(),
    )?)
}

/// The last [`STACK_DEPTH`] frames, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    frames: VecDeque<Frame>,
}

impl FrameStack {
    /// Stack filled with `frame` repeated.
    pub fn new(frame: Frame) -> Self {
        Self {
            frames: std::iter::repeat(frame).take(STACK_DEPTH).collect(),
        }
    }

    pub fn push(&mut self, frame: Frame) {
        self.frames.pop_front();
        self.frames.push_back(frame);
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter()
    }

    pub fn latest(&self) -> &Frame {
        self.frames.back().expect("stack is never empty")
    }

    /// Write the stack as `[88, 88, 4]` values in `[0, 1]` into `out`.
    pub fn write_into<T: Real>(&self, out: &mut [T]) {
        let refs: Vec<&[u8]> = self.frames.iter().map(Frame::as_bytes).collect();
        write_stack(&refs, out);
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let mut data = vec![T::zero(); FRAME_BYTES * STACK_DEPTH];
        self.write_into(&mut data);
        Tensor::new(vec![FRAME_SIDE, FRAME_SIDE, STACK_DEPTH], data).expect("fixed shape")
    }
}

/// Interleave `frames` (oldest first) as channels of one NHWC image scaled to `[0, 1]`.
pub fn write_stack<T: Real>(frames: &[&[u8]], out: &mut [T]) {
    let depth = frames.len();
    assert_eq!(out.len(), FRAME_BYTES * depth);
    let scale = T::from_f64_lossy(1.0 / 255.0);
    let lut: Vec<T> = (0..=255u8).map(|b| T::from_u8(b).unwrap() * scale).collect();
    for (c, frame) in frames.iter().enumerate() {
        for (p, &b) in frame.iter().enumerate() {
            out[p * depth + c] = lut[b as usize];
        }
    }
}

/// Frames making up the stack at step `t` of an episode, oldest first. Steps
/// before the start repeat frame 0, so stacks never cross episode boundaries.
pub fn stack_at(frames: &[Frame], t: usize) -> [&[u8]; STACK_DEPTH] {
    std::array::from_fn(|i| frames[(t + i + 1).saturating_sub(STACK_DEPTH)].as_bytes())
}

/// `[n, 88, 88, 4]` batch from `(episode frames, step)` pairs.
pub fn batch_from_episodes<'a, T: Real>(items: impl ExactSizeIterator<Item = (&'a [Frame], usize)>) -> Tensor<T> {
    let n = items.len();
    let per = FRAME_BYTES * STACK_DEPTH;
    let mut data = vec![T::zero(); n * per];
    for ((frames, t), out) in items.zip(data.chunks_exact_mut(per)) {
        write_stack(&stack_at(frames, t), out);
    }
    Tensor::new(vec![n, FRAME_SIDE, FRAME_SIDE, STACK_DEPTH], data).expect("fixed shape")
}

/// `[n, 88, 88, 4]` batch from live stacks.
pub fn batch_from_stacks<T: Real>(stacks: &[FrameStack]) -> Tensor<T> {
    let per = FRAME_BYTES * STACK_DEPTH;
    let mut data = vec![T::zero(); stacks.len() * per];
    for (s, out) in stacks.iter().zip(data.chunks_exact_mut(per)) {
        s.write_into(out);
    }
    Tensor::new(vec![stacks.len(), FRAME_SIDE, FRAME_SIDE, STACK_DEPTH], data).expect("fixed shape")
}

/// Tiny fixed-size grayscale canvas.
pub(crate) struct Canvas(Vec<u8>);

impl Canvas {
    pub fn new() -> Self {
        Self(vec![0; FRAME_BYTES])
    }

    pub fn fill(&mut self, x: i32, y: i32, w: i32, h: i32, value: u8) {
        let x0 = x.clamp(0, FRAME_SIDE as i32) as usize;
        let y0 = y.clamp(0, FRAME_SIDE as i32) as usize;
        let x1 = (x + w).clamp(0, FRAME_SIDE as i32) as usize;
        let y1 = (y + h).clamp(0, FRAME_SIDE as i32) as usize;
        for row in y0..y1 {
            self.0[row * FRAME_SIDE + x0..row * FRAME_SIDE + x1].fill(value);
        }
    }

    pub fn into_frame(self) -> Frame {
        Frame(self.0.into())
    }
}

/// A seeded game instance. One per actor; never shared between threads.
#[derive(Clone, Debug)]
pub enum Env {
    Pong(MiniPong),
    Pacman(MiniPacman),
}

impl Env {
    pub fn new(spec: &EnvSpec) -> Self {
        match spec.id {
            EnvId::MiniPong => Env::Pong(MiniPong::new(spec.clone())),
            EnvId::MiniPacman => Env::Pacman(MiniPacman::new(spec.clone())),
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        match self {
            Env::Pong(e) => &e.spec,
            Env::Pacman(e) => &e.spec,
        }
    }

    /// Deterministic initial frame for `seed`.
    pub fn reset(&mut self, seed: u64) -> Frame {
        match self {
            Env::Pong(e) => e.reset(seed),
            Env::Pacman(e) => e.reset(seed),
        }
    }

    /// Reset and return the initial stack.
    pub fn reset_stack(&mut self, seed: u64) -> FrameStack {
        FrameStack::new(self.reset(seed))
    }

    /// Repeat `action` for `frame_skip` ticks, summing rewards.
    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        let size = self.spec().num_actions();
        if action >= size {
            return Err(Error::InvalidAction { action, size });
        }
        if self.is_terminal() {
            return Err(Error::StepAfterTerminal);
        }
        let skip = self.spec().frame_skip;
        let max_steps = self.spec().max_episode_steps;
        let mut reward = 0.0;
        let mut terminal = false;
        for _ in 0..skip {
            let (r, done) = match self {
                Env::Pong(e) => e.tick(action),
                Env::Pacman(e) => e.tick(action),
            };
            reward += r;
            if done {
                terminal = true;
                break;
            }
        }
        let steps = match self {
            Env::Pong(e) => {
                e.steps += 1;
                e.steps
            }
            Env::Pacman(e) => {
                e.steps += 1;
                e.steps
            }
        };
        let truncated = !terminal && steps >= max_steps;
        terminal |= truncated;
        self.set_terminal(terminal);
        Ok(StepResult {
            observation: self.render(),
            reward,
            terminal,
            truncated,
            score: self.score(),
        })
    }

    pub fn render(&self) -> Frame {
        match self {
            Env::Pong(e) => e.render(),
            Env::Pacman(e) => e.render(),
        }
    }

    pub fn score(&self) -> f64 {
        match self {
            Env::Pong(e) => e.score(),
            Env::Pacman(e) => e.score(),
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            Env::Pong(e) => e.steps,
            Env::Pacman(e) => e.steps,
        }
    }

    pub fn is_terminal(&self) -> bool {
        match self {
            Env::Pong(e) => e.terminal,
            Env::Pacman(e) => e.terminal,
        }
    }

    fn set_terminal(&mut self, t: bool) {
        match self {
            Env::Pong(e) => e.terminal = t,
            Env::Pacman(e) => e.terminal = t,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(v: u8) -> Frame {
        Frame::new(vec![v; FRAME_BYTES]).unwrap()
    }

    #[test]
    fn preprocess_scales_bytes() {
        let mut bytes = vec![0u8; FRAME_BYTES];
        bytes[1] = 255;
        let t = preprocess::<f64>(&bytes).unwrap();
        assert_eq!(t.shape(), &[88, 88]);
        assert_eq!(t.data()[0], 0.0);
        assert_eq!(t.data()[1], 1.0);
        assert!(matches!(preprocess::<f64>(&[0u8; 10]), Err(Error::FrameSize { .. })));
    }

    #[test]
    fn stack_window_keeps_last_four() {
        let mut s = FrameStack::new(frame(1));
        assert_eq!(s.depth(), 4);
        for v in 2..=5 {
            s.push(frame(v));
        }
        let firsts: Vec<u8> = s.frames().map(|f| f.as_bytes()[0]).collect();
        assert_eq!(firsts, vec![2, 3, 4, 5]);
        let t = s.to_tensor::<f32>();
        assert_eq!(t.shape(), &[88, 88, 4]);
        assert_eq!(t.data()[3], 5.0 / 255.0);
    }

    #[test]
    fn unknown_env_rejected() {
        assert!(matches!(EnvSpec::parse("breakout"), Err(Error::UnknownEnv(_))));
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        for id in [EnvId::MiniPong, EnvId::MiniPacman] {
            let spec = EnvSpec::new(id);
            let a = Env::new(&spec).reset(17);
            let b = Env::new(&spec).reset(17);
            assert_eq!(a, b);
            let stack = Env::new(&spec).reset_stack(17);
            assert_eq!(stack.depth(), 4);
            assert!(stack.frames().all(|f| f == &a));
        }
    }

    #[test]
    fn step_after_terminal_and_bad_action_rejected() {
        let mut env = Env::new(&EnvSpec::new(EnvId::MiniPong));
        env.reset(0);
        assert!(matches!(env.step(3), Err(Error::InvalidAction { .. })));
        loop {
            if env.step(0).unwrap().terminal {
                break;
            }
        }
        assert!(matches!(env.step(0), Err(Error::StepAfterTerminal)));
    }

    #[test]
    fn episode_stacks_match_live_stack() {
        let frames: Vec<Frame> = (0..6).map(frame).collect();
        let mut live = FrameStack::new(frames[0].clone());
        for t in 0..frames.len() {
            if t > 0 {
                live.push(frames[t].clone());
            }
            let live_refs: Vec<&[u8]> = live.frames().map(Frame::as_bytes).collect();
            assert_eq!(stack_at(&frames, t).to_vec(), live_refs);
        }
        let batch = batch_from_episodes::<f32>([(frames.as_slice(), 0), (frames.as_slice(), 5)].into_iter());
        assert_eq!(batch.shape(), &[2, 88, 88, 4]);
        assert_eq!(&batch.data()[..4], &[0.0; 4]);
        let second = &batch.data()[FRAME_BYTES * 4..FRAME_BYTES * 4 + 4];
        let scale = (1.0f64 / 255.0) as f32;
        assert_eq!(second, &[2.0 * scale, 3.0 * scale, 4.0 * scale, 5.0 * scale]);
    }
}
