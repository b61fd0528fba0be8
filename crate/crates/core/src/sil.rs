//! Self-imitation: episodes handed over by actors, transformed returns, the
//! replay memory and the learner that imitates transitions whose return beats
//! the current value estimate.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_channel::{Receiver, Sender};
use ndgrad::{Gradients, ParamSet, ParameterStore, Real, StepOutcome, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::a3c::constant_vec;
use crate::archive::DemoArchive;
use crate::env::{batch_from_episodes, Frame};
use crate::error::{Error, Result};
use crate::net::{NetOutput, PolicyValueNet};
use crate::transform::{transformed_recursion, ValueTransform};

/// A finished trajectory: `frames[t]` was observed when `actions[t]` was taken
/// and `rewards[t]` followed.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub frames: Vec<Frame>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
    pub terminal: bool,
    /// Value of the state after the last step, in return space; used only when
    /// the episode was cut short.
    pub bootstrap: f64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// How rewards become returns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnSpec {
    pub gamma: f64,
    pub transform: ValueTransform,
    pub clip_rewards: bool,
}

impl ReturnSpec {
    pub fn returns(&self, rewards: &[f64], bootstrap: f64) -> Vec<f64> {
        if self.clip_rewards {
            let clipped: Vec<f64> = rewards.iter().map(|r| r.clamp(-1.0, 1.0)).collect();
            transformed_recursion(&clipped, bootstrap, self.gamma, self.transform)
        } else {
            transformed_recursion(rewards, bootstrap, self.gamma, self.transform)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformedEpisode {
    pub frames: Arc<[Frame]>,
    pub actions: Vec<u8>,
    pub returns: Vec<f64>,
}

impl TransformedEpisode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = SilSample> + '_ {
        (0..self.len()).map(|t| SilSample {
            frames: self.frames.clone(),
            step: t as u32,
            action: self.actions[t],
            ret: self.returns[t] as f32,
        })
    }
}

pub fn compute_transformed_returns(episode: &Episode, spec: &ReturnSpec) -> Result<TransformedEpisode> {
    if episode.is_empty() {
        return Err(Error::Empty("episode"));
    }
    let bootstrap = if episode.terminal { 0.0 } else { episode.bootstrap };
    Ok(TransformedEpisode {
        frames: episode.frames.clone().into(),
        actions: episode.actions.clone(),
        returns: spec.returns(&episode.rewards, bootstrap),
    })
}

/// One `(s, a, G)` entry; the stack is rebuilt from the shared episode frames.
#[derive(Clone, Debug)]
pub struct SilSample {
    pub frames: Arc<[Frame]>,
    pub step: u32,
    pub action: u8,
    pub ret: f32,
}

/// Fixed-capacity FIFO with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<E> {
    items: VecDeque<E>,
    capacity: usize,
    evicted: u64,
}

impl<E> ReplayBuffer<E> {
    pub const DEFAULT_CAPACITY: usize = 1_000_000;

    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: VecDeque::new(),
            capacity,
            evicted: 0,
        }
    }

    pub fn push(&mut self, item: E) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
            self.evicted += 1;
        }
        self.items.push_back(item);
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = E>) -> usize {
        let mut n = 0;
        for item in items {
            self.push(item);
            n += 1;
        }
        n
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    pub fn iter(&self) -> impl Iterator<Item = &E> {
        self.items.iter()
    }

    /// `n` draws with replacement; empty when the buffer is.
    pub fn sample<'a>(&'a self, rng: &mut impl Rng, n: usize) -> Vec<&'a E> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}

/// Bounded multi-producer queue of finished episodes; producers block when full.
pub struct EpisodeQueue {
    tx: Sender<TransformedEpisode>,
    rx: Receiver<TransformedEpisode>,
    enqueued: AtomicU64,
    dequeued: AtomicU64,
}

impl EpisodeQueue {
    pub const DEFAULT_BOUND: usize = 1024;

    pub fn new(bound: usize) -> Self {
        let (tx, rx) = crossbeam_channel::bounded(bound);
        Self {
            tx,
            rx,
            enqueued: AtomicU64::new(0),
            dequeued: AtomicU64::new(0),
        }
    }

    pub fn push(&self, episode: TransformedEpisode) {
        // both ends live in `self`, so the channel cannot be disconnected
        self.tx.send(episode).expect("queue receiver alive");
        self.enqueued.fetch_add(1, Ordering::SeqCst);
    }

    /// Everything queued right now, oldest first.
    pub fn drain(&self) -> Vec<TransformedEpisode> {
        let out: Vec<_> = self.rx.try_iter().collect();
        self.dequeued.fetch_add(out.len() as u64, Ordering::SeqCst);
        out
    }

    pub fn enqueued(&self) -> u64 {
        self.enqueued.load(Ordering::SeqCst)
    }

    pub fn dequeued(&self) -> u64 {
        self.dequeued.load(Ordering::SeqCst)
    }
}

impl Default for EpisodeQueue {
    fn default() -> Self {
        Self::new(Self::DEFAULT_BOUND)
    }
}

/// `−Σ log π(a|s)·(G − V)₊ + β·½ Σ ((G − V)₊)²`, advantage detached in the
/// policy term.
pub fn sil_loss<T: Real>(tape: &mut Tape<T>, out: &NetOutput, actions: &[usize], returns: &[f64], beta_sil: f64) -> Result<Var> {
    sil_loss_impl(tape, out, actions, returns, None, beta_sil)
}

/// [`sil_loss`] with constant policy weights in place of the detached `(G − V)₊`.
pub fn sil_loss_with_weights<T: Real>(
    tape: &mut Tape<T>,
    out: &NetOutput,
    actions: &[usize],
    returns: &[f64],
    weights: &[f64],
    beta_sil: f64,
) -> Result<Var> {
    sil_loss_impl(tape, out, actions, returns, Some(weights), beta_sil)
}

fn sil_loss_impl<T: Real>(
    tape: &mut Tape<T>,
    out: &NetOutput,
    actions: &[usize],
    returns: &[f64],
    weights: Option<&[f64]>,
    beta_sil: f64,
) -> Result<Var> {
    let g = constant_vec(tape, returns)?;
    let gap = tape.sub(g, out.value)?;
    let adv = tape.pos_part(gap);

    let lp = tape.log_softmax(out.logits);
    let picked = tape.pick(lp, actions)?;
    let weight = match weights {
        Some(w) => constant_vec(tape, w)?,
        None => tape.detach(adv),
    };
    let weighted = tape.mul(picked, weight)?;
    let policy = tape.sum(weighted);
    let policy = tape.scale(policy, -T::one());

    let sq = tape.square(adv);
    let value = tape.sum(sq);
    let value = tape.scale(value, T::from_f64_lossy(0.5 * beta_sil));
    Ok(tape.add(policy, value)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SilConfig {
    pub updates_per_iteration: usize,
    pub batch_size: usize,
    pub beta_sil: f64,
    pub capacity: usize,
}

impl Default for SilConfig {
    fn default() -> Self {
        Self {
            updates_per_iteration: 4,
            batch_size: 32,
            beta_sil: 0.5,
            capacity: ReplayBuffer::<SilSample>::DEFAULT_CAPACITY,
        }
    }
}

/// Where SIL minibatch gradients come from; tests substitute scripted ones.
pub trait SilGradients {
    fn gradients(&mut self, params: &ParamSet<f32>, batch: &[&SilSample]) -> Result<Gradients<f32>>;
}

pub struct NetSilGradients {
    pub net: PolicyValueNet,
    pub beta_sil: f64,
}

impl SilGradients for NetSilGradients {
    fn gradients(&mut self, params: &ParamSet<f32>, batch: &[&SilSample]) -> Result<Gradients<f32>> {
        let x = batch_from_episodes::<f32>(batch.iter().map(|s| (&s.frames[..], s.step as usize)));
        let actions: Vec<usize> = batch.iter().map(|s| s.action as usize).collect();
        let returns: Vec<f64> = batch.iter().map(|s| s.ret as f64).collect();
        let mut tape = Tape::for_params(params);
        let xv = tape.constant(x);
        let out = self.net.forward(&mut tape, params, xv, false)?;
        let loss = sil_loss(&mut tape, &out, &actions, &returns, self.beta_sil)?;
        Ok(tape.backward(loss)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SilIteration {
    pub updates: usize,
    pub episodes_drained: usize,
    pub transitions_added: usize,
}

/// The learner owns the replay memory and no environment.
pub struct SilLearner<G> {
    config: SilConfig,
    buffer: ReplayBuffer<SilSample>,
    rng: ChaCha8Rng,
    source: G,
    updates: u64,
}

impl<G: SilGradients> SilLearner<G> {
    pub fn new(config: SilConfig, source: G, rng: ChaCha8Rng) -> Self {
        let buffer = ReplayBuffer::new(config.capacity);
        Self {
            config,
            buffer,
            rng,
            source,
            updates: 0,
        }
    }

    pub fn buffer(&self) -> &ReplayBuffer<SilSample> {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut ReplayBuffer<SilSample> {
        &mut self.buffer
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Sync once, run M minibatch updates when the buffer holds a full batch,
    /// then move every queued episode into the buffer.
    pub fn iterate(&mut self, store: &ParameterStore<f32>, queue: &EpisodeQueue) -> Result<SilIteration> {
        let mut it = SilIteration::default();
        if self.buffer.len() >= self.config.batch_size {
            let params = store.snapshot();
            for _ in 0..self.config.updates_per_iteration {
                let batch = self.buffer.sample(&mut self.rng, self.config.batch_size);
                let grads = self.source.gradients(&params, &batch)?;
                if let StepOutcome::Applied { .. } = store.apply(grads)? {
                    it.updates += 1;
                }
            }
        }
        for ep in queue.drain() {
            it.episodes_drained += 1;
            it.transitions_added += self.buffer.extend(ep.samples());
        }
        self.updates += it.updates as u64;
        Ok(it)
    }
}

/// Converts every demonstration episode and loads it into `buffer`.
pub fn seed_buffer_from_demos(buffer: &mut ReplayBuffer<SilSample>, archive: &DemoArchive, spec: &ReturnSpec) -> Result<usize> {
    let mut inserted = 0;
    for (i, demo) in archive.episodes.iter().enumerate() {
        let ep = compute_transformed_returns(&demo.to_episode(), spec).map_err(|e| Error::ArchiveEpisode {
            episode: i,
            reason: e.to_string(),
        })?;
        inserted += buffer.extend(ep.samples());
    }
    Ok(inserted)
}
