//! Advantage actor-critic: n-step targets (plain or value-rescaled), the
//! actor-critic loss, asynchronous actor-learners and policy evaluation.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use ndgrad::{softmax_and_entropy, AccessMode, OptimizerConfig, ParamSet, ParameterStore, Real, StepOutcome, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::DemoArchive;
use crate::derive_seed;
use crate::env::{Env, EnvSpec, FrameStack};
use crate::error::{Error, Result};
use crate::net::{NetOutput, PolicyValueNet};
use crate::sil::{compute_transformed_returns, seed_buffer_from_demos, Episode, EpisodeQueue, NetSilGradients, ReturnSpec, SilConfig, SilLearner};
use crate::transform::ValueTransform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Rewards clipped to [−1, 1], plain discounted targets.
    Clipped,
    /// Raw rewards through the value-rescaling recursion.
    RawTb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub beta_a3c: f64,
    pub reward_mode: RewardMode,
    pub tb_epsilon: f64,
    pub actors: usize,
    pub t_max: usize,
    /// Global environment-step budget.
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Serialize everything on one thread; requires a single actor.
    pub strict: bool,
    pub sil: Option<SilConfig>,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.5,
            beta_a3c: 0.01,
            reward_mode: RewardMode::RawTb,
            tb_epsilon: 0.01,
            actors: 16,
            t_max: 20,
            total_steps: 2_000_000,
            eval_every: 50_000,
            eval_episodes: 10,
            strict: false,
            sil: None,
            optimizer: OptimizerConfig::a3c_rmsprop(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.actors == 0 || self.t_max == 0 {
            return bad("actors and t_max must be at least 1");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("evaluation cadence and episode count must be positive");
        }
        if self.tb_epsilon <= 0.0 && self.reward_mode == RewardMode::RawTb {
            return bad("tb_epsilon must be positive");
        }
        if self.strict && self.actors != 1 {
            return bad("strict mode runs exactly one actor");
        }
        if let Some(s) = &self.sil {
            if s.updates_per_iteration == 0 || s.batch_size == 0 || s.capacity == 0 {
                return bad("SIL sizes must be positive");
            }
        }
        self.optimizer.validate()?;
        Ok(())
    }

    pub fn transform(&self) -> ValueTransform {
        match self.reward_mode {
            RewardMode::Clipped => ValueTransform::Identity,
            RewardMode::RawTb => ValueTransform::Rescale { epsilon: self.tb_epsilon },
        }
    }

    pub fn return_spec(&self) -> ReturnSpec {
        ReturnSpec {
            gamma: self.gamma,
            transform: self.transform(),
            clip_rewards: self.reward_mode == RewardMode::Clipped,
        }
    }
}

/// Up to `t_max` consecutive steps of one actor.
#[derive(Clone, Debug, Default)]
pub struct RolloutSegment {
    pub stacks: Vec<FrameStack>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// `V(s_{t+n})`, zero when the segment ends the episode.
    pub bootstrap: f64,
    pub ends_episode: bool,
}

impl RolloutSegment {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn batch<T: Real>(&self) -> Tensor<T> {
        crate::env::batch_from_stacks(&self.stacks)
    }
}

pub fn compute_targets(segment: &RolloutSegment, config: &TrainConfig) -> Result<Vec<f64>> {
    if segment.is_empty() {
        return Err(Error::Empty("rollout segment"));
    }
    let bootstrap = if segment.ends_episode { 0.0 } else { segment.bootstrap };
    Ok(config.return_spec().returns(&segment.rewards, bootstrap))
}

/// `−Σ log π(a|s)·(q − V) − β Σ H(π) + α Σ (q − V)²` with the advantage detached.
pub fn a3c_loss<T: Real>(tape: &mut Tape<T>, out: &NetOutput, actions: &[usize], targets: &[f64], alpha: f64, beta: f64) -> Result<Var> {
    a3c_loss_impl(tape, out, actions, targets, None, alpha, beta)
}

/// [`a3c_loss`] with the policy-gradient weights supplied as constants instead
/// of the detached `q − V`; both give the same gradient when the weights equal
/// the current advantage, but only this one is a plain function of the
/// parameters (which is what finite differences need).
pub fn a3c_loss_with_weights<T: Real>(
    tape: &mut Tape<T>,
    out: &NetOutput,
    actions: &[usize],
    targets: &[f64],
    weights: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    a3c_loss_impl(tape, out, actions, targets, Some(weights), alpha, beta)
}

fn a3c_loss_impl<T: Real>(
    tape: &mut Tape<T>,
    out: &NetOutput,
    actions: &[usize],
    targets: &[f64],
    weights: Option<&[f64]>,
    alpha: f64,
    beta: f64,
) -> Result<Var> {
    let q = constant_vec(tape, targets)?;
    let gap = tape.sub(q, out.value)?;

    let lp = tape.log_softmax(out.logits);
    let picked = tape.pick(lp, actions)?;
    let adv = match weights {
        Some(w) => constant_vec(tape, w)?,
        None => tape.detach(gap),
    };
    let weighted = tape.mul(picked, adv)?;
    let policy = tape.sum(weighted);
    let policy = tape.scale(policy, -T::one());

    // Σ p log p is the negated entropy
    let p = tape.exp(lp);
    let plogp = tape.mul(p, lp)?;
    let neg_entropy = tape.sum(plogp);
    let entropy_term = tape.scale(neg_entropy, T::from_f64_lossy(beta));

    let sq = tape.square(gap);
    let value = tape.sum(sq);
    let value = tape.scale(value, T::from_f64_lossy(alpha));

    let l = tape.add(policy, entropy_term)?;
    Ok(tape.add(l, value)?)
}

pub(crate) fn constant_vec<T: Real>(tape: &mut Tape<T>, values: &[f64]) -> Result<Var> {
    let t = Tensor::new(vec![values.len()], values.iter().map(|&v| T::from_f64_lossy(v)).collect())?;
    Ok(tape.constant(t))
}

pub fn sample_action(logits: &[f64], rng: &mut impl Rng) -> usize {
    let (probs, _) = softmax_and_entropy(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn policy_step(net: &PolicyValueNet, params: &ParamSet<f32>, stack: &FrameStack) -> Result<(Vec<f64>, f64)> {
    let (logits, value) = net.infer(params, crate::env::batch_from_stacks(std::slice::from_ref(stack)))?;
    Ok((logits.iter().map(|&v| v as f64).collect(), value[0] as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub scores: Vec<f64>,
}

impl EvalResult {
    pub fn mean(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// Raw game scores of `episodes` sampled-policy episodes. Episode `i` uses env
/// and action seeds derived from `(seed, i)`, so results do not depend on
/// scheduling.
pub fn evaluate_policy(net: &PolicyValueNet, params: &ParamSet<f32>, spec: &EnvSpec, episodes: usize, seed: u64) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let results = ndgrad::parallel::map_indices(episodes, |i| -> Result<f64> {
        let mut env = Env::new(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 * i as u64 + 1));
        let mut stack = env.reset_stack(derive_seed(seed, 2 * i as u64));
        loop {
            let (logits, _) = policy_step(net, params, &stack)?;
            let r = env.step(sample_action(&logits, &mut rng))?;
            if r.terminal {
                return Ok(r.score);
            }
            stack.push(r.observation);
        }
    });
    Ok(EvalResult {
        scores: results.into_iter().collect::<Result<_>>()?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub step: u64,
    pub scores: Vec<f64>,
}

/// State shared by every thread of one training run.
pub struct Shared {
    pub store: ParameterStore<f32>,
    pub queue: Option<EpisodeQueue>,
    steps: AtomicU64,
    budget: u64,
    evals: Mutex<Vec<EvalRow>>,
    episodes: AtomicU64,
    a3c_updates: AtomicU64,
    incidents: AtomicU64,
}

impl Shared {
    pub fn new(store: ParameterStore<f32>, budget: u64, with_queue: bool) -> Self {
        Self {
            store,
            queue: with_queue.then(EpisodeQueue::default),
            steps: AtomicU64::new(0),
            budget,
            evals: Mutex::new(Vec::new()),
            episodes: AtomicU64::new(0),
            a3c_updates: AtomicU64::new(0),
            incidents: AtomicU64::new(0),
        }
    }

    /// Environment steps actually taken.
    pub fn steps(&self) -> u64 {
        self.steps.load(Ordering::SeqCst).min(self.budget)
    }

    pub fn episodes(&self) -> u64 {
        self.episodes.load(Ordering::SeqCst)
    }

    fn claim_step(&self) -> Option<u64> {
        let t = self.steps.fetch_add(1, Ordering::SeqCst);
        (t < self.budget).then_some(t)
    }

    fn record_eval(&self, row: EvalRow) {
        self.evals.lock().unwrap().push(row);
    }
}

struct Runner<'a> {
    net: &'a PolicyValueNet,
    spec: &'a EnvSpec,
    config: &'a TrainConfig,
    shared: &'a Shared,
}

impl Runner<'_> {
    fn eval_at(&self, step: u64) -> Result<()> {
        let params = self.shared.store.snapshot();
        let seed = derive_seed(self.config.seed ^ 0xe7a1, step);
        let r = evaluate_policy(self.net, &params, self.spec, self.config.eval_episodes, seed)?;
        log::info!("step {step}: mean eval score {:.2}", r.mean());
        self.shared.record_eval(EvalRow { step, scores: r.scores });
        Ok(())
    }

    fn finish_episode(&self, ep: Episode, params: &ParamSet<f32>, last: &FrameStack, truncated: bool) -> Result<()> {
        self.shared.episodes.fetch_add(1, Ordering::SeqCst);
        let Some(queue) = &self.shared.queue else { return Ok(()) };
        let bootstrap = if truncated { policy_step(self.net, params, last)?.1 } else { 0.0 };
        let ep = Episode { terminal: !truncated, bootstrap, ..ep };
        queue.push(compute_transformed_returns(&ep, &self.config.return_spec())?);
        Ok(())
    }

    /// One actor-learner until the global budget is spent. `inline_sil` runs a
    /// SIL iteration after every update (strict mode).
    fn actor_loop(&self, actor: usize, mut inline_sil: Option<&mut SilLearner<NetSilGradients>>) -> Result<()> {
        let cfg = self.config;
        let mut env = Env::new(self.spec);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1000 + actor as u64));
        let mut episode_index = 0u64;
        let next_seed = |i: &mut u64| {
            *i += 1;
            derive_seed(cfg.seed, ((actor as u64) << 32) | *i)
        };
        let mut stack = env.reset_stack(next_seed(&mut episode_index));
        let mut ep = Episode {
            frames: vec![stack.latest().clone()],
            actions: Vec::new(),
            rewards: Vec::new(),
            terminal: false,
            bootstrap: 0.0,
        };

        let mut budget_left = true;
        while budget_left {
            let params = self.shared.store.snapshot();
            let mut seg = RolloutSegment::default();
            for _ in 0..cfg.t_max {
                let Some(t) = self.shared.claim_step() else {
                    budget_left = false;
                    break;
                };
                if t > 0 && t % cfg.eval_every == 0 {
                    self.eval_at(t)?;
                }
                let (logits, value) = policy_step(self.net, &params, &stack)?;
                let action = sample_action(&logits, &mut rng);
                let r = match env.step(action) {
                    Ok(r) => r,
                    Err(e) => {
                        log::warn!("actor {actor}: environment fault ({e}); episode discarded");
                        self.shared.incidents.fetch_add(1, Ordering::SeqCst);
                        stack = env.reset_stack(next_seed(&mut episode_index));
                        ep = Episode { frames: vec![stack.latest().clone()], actions: vec![], rewards: vec![], ..ep };
                        seg = RolloutSegment::default();
                        break;
                    }
                };
                seg.stacks.push(stack.clone());
                seg.actions.push(action);
                seg.rewards.push(r.reward);
                seg.values.push(value);
                ep.actions.push(action as u8);
                ep.rewards.push(r.reward);
                stack.push(r.observation.clone());
                if r.terminal {
                    seg.ends_episode = true;
                    let done = std::mem::replace(
                        &mut ep,
                        Episode { frames: vec![], actions: vec![], rewards: vec![], terminal: false, bootstrap: 0.0 },
                    );
                    self.finish_episode(done, &params, &stack, r.truncated)?;
                    stack = env.reset_stack(next_seed(&mut episode_index));
                    ep.frames.push(stack.latest().clone());
                    break;
                }
                ep.frames.push(r.observation);
            }
            if seg.is_empty() {
                continue;
            }
            if !seg.ends_episode {
                seg.bootstrap = policy_step(self.net, &params, &stack)?.1;
            }
            let targets = compute_targets(&seg, cfg)?;
            let mut tape = Tape::for_params(&params);
            let x = tape.constant(seg.batch());
            let out = self.net.forward(&mut tape, &params, x, false)?;
            let loss = a3c_loss(&mut tape, &out, &seg.actions, &targets, cfg.alpha, cfg.beta_a3c)?;
            let grads = tape.backward(loss)?;
            if let StepOutcome::Applied { .. } = self.shared.store.apply(grads)? {
                self.shared.a3c_updates.fetch_add(1, Ordering::SeqCst);
            }
            if let (Some(sil), Some(queue)) = (inline_sil.as_deref_mut(), &self.shared.queue) {
                sil.iterate(&self.shared.store, queue)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Sorted by step; the first row is step 0.
    pub evals: Vec<EvalRow>,
    pub steps: u64,
    pub episodes: u64,
    pub a3c_updates: u64,
    pub sil_updates: u64,
    pub sil_buffer_len: usize,
    pub demo_transitions: usize,
    pub threads: usize,
    pub incidents: u64,
    pub params: ParamSet<f32>,
}

/// Trains from `init` until the step budget is spent. With SIL configured the
/// replay memory is first loaded from `demos` when given.
pub fn train(net: &PolicyValueNet, spec: &EnvSpec, config: &TrainConfig, init: ParamSet<f32>, demos: Option<&DemoArchive>) -> Result<TrainReport> {
    config.validate()?;
    let mode = if config.strict { AccessMode::Strict } else { AccessMode::Concurrent };
    let store = ParameterStore::new(init, config.optimizer.clone(), mode)?;
    let shared = Shared::new(store, config.total_steps, config.sil.is_some());
    let runner = Runner { net, spec, config, shared: &shared };
    runner.eval_at(0)?;

    let mut sil = config.sil.as_ref().map(|sc| {
        let grads = NetSilGradients { net: net.clone(), beta_sil: sc.beta_sil };
        SilLearner::new(sc.clone(), grads, ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 77)))
    });
    let mut demo_transitions = 0;
    if let (Some(sil), Some(demos)) = (sil.as_mut(), demos) {
        demo_transitions = seed_buffer_from_demos(sil.buffer_mut(), demos, &config.return_spec())?;
    }

    let threads = config.actors + usize::from(sil.is_some());
    log::info!("training with {threads} threads ({} actors{})", config.actors, if sil.is_some() { " + 1 SIL learner" } else { "" });

    if config.strict {
        runner.actor_loop(0, sil.as_mut())?;
    } else {
        let actors_done = AtomicBool::new(false);
        std::thread::scope(|scope| -> Result<()> {
            let runner = &runner;
            let handles: Vec<_> = (0..config.actors).map(|a| scope.spawn(move || runner.actor_loop(a, None))).collect();
            let sil_handle = sil.as_mut().map(|learner| {
                let (shared, done) = (&shared, &actors_done);
                scope.spawn(move || -> Result<()> {
                    let queue = shared.queue.as_ref().expect("SIL runs with a queue");
                    while !done.load(Ordering::SeqCst) {
                        let it = learner.iterate(&shared.store, queue)?;
                        if it.updates == 0 && it.episodes_drained == 0 {
                            std::thread::sleep(Duration::from_millis(1));
                        }
                    }
                    Ok(())
                })
            });
            let mut first_err = None;
            for h in handles {
                if let Err(e) = h.join().expect("actor thread panicked") {
                    first_err.get_or_insert(e);
                }
            }
            actors_done.store(true, Ordering::SeqCst);
            if let Some(h) = sil_handle {
                if let Err(e) = h.join().expect("SIL thread panicked") {
                    first_err.get_or_insert(e);
                }
            }
            first_err.map_or(Ok(()), Err)
        })?;
    }
    // episodes finished after the learner's last pass
    if let (Some(learner), Some(queue)) = (sil.as_mut(), &shared.queue) {
        for ep in queue.drain() {
            learner.buffer_mut().extend(ep.samples());
        }
    }

    if config.total_steps > 0 {
        runner.eval_at(config.total_steps)?;
    }
    let mut evals = shared.evals.lock().unwrap().clone();
    evals.sort_by_key(|r| r.step);
    Ok(TrainReport {
        evals,
        steps: shared.steps(),
        episodes: shared.episodes(),
        a3c_updates: shared.a3c_updates.load(Ordering::SeqCst),
        sil_updates: sil.as_ref().map_or(0, |s| s.updates()),
        sil_buffer_len: sil.as_ref().map_or(0, |s| s.buffer().len()),
        demo_transitions,
        threads,
        incidents: shared.incidents.load(Ordering::SeqCst) + shared.store.incidents(),
        params: shared.store.snapshot(),
    })
}
