//! Pre-training from demonstrations: supervised action prediction, optionally
//! gated by the return advantage, return regression, and input reconstruction.
//! Also weight transfer into a fresh actor-critic network.

use std::path::Path;
use std::sync::Arc;

use ndgrad::{checkpoint, AccessMode, OptimizerConfig, ParamSet, ParameterStore, Real, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::DemoArchive;
use crate::derive_seed;
use crate::env::{batch_from_episodes, Frame};
use crate::error::{Error, Result};
use crate::net::{is_decoder_block, is_output_block, NetConfig, NetOutput, PolicyValueNet};
use crate::sil::{compute_transformed_returns, ReturnSpec};
use crate::transform::ValueTransform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PretrainMode {
    #[serde(rename = "SL")]
    Sl,
    #[serde(rename = "SL_V")]
    SlV,
    #[serde(rename = "SL_V_AE")]
    SlVAe,
    #[serde(rename = "AE")]
    Ae,
}

impl PretrainMode {
    pub const ALL: [PretrainMode; 4] = [PretrainMode::Sl, PretrainMode::SlV, PretrainMode::SlVAe, PretrainMode::Ae];

    pub fn supervised(self) -> bool {
        self != PretrainMode::Ae
    }

    pub fn value(self) -> bool {
        matches!(self, PretrainMode::SlV | PretrainMode::SlVAe)
    }

    pub fn autoencoder(self) -> bool {
        matches!(self, PretrainMode::SlVAe | PretrainMode::Ae)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PretrainMode::Sl => "SL",
            PretrainMode::SlV => "SL_V",
            PretrainMode::SlVAe => "SL_V_AE",
            PretrainMode::Ae => "AE",
        }
    }
}

impl std::str::FromStr for PretrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PretrainMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown pre-training mode `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub supervised: f64,
    pub value: f64,
    pub reconstruction: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            supervised: 1.0,
            value: 1.0,
            reconstruction: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub mode: PretrainMode,
    pub weights: LossWeights,
    pub updates: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub holdout_fraction: f64,
    pub log_every: usize,
    pub gamma: f64,
    pub tb_epsilon: f64,
    /// Training-set samples used to track the full objective.
    pub probe_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            mode: PretrainMode::SlVAe,
            weights: LossWeights::default(),
            updates: 50_000,
            batch_size: 32,
            optimizer: OptimizerConfig::pretrain_adam(),
            holdout_fraction: 0.2,
            log_every: 1000,
            gamma: 0.99,
            tb_epsilon: 0.01,
            probe_size: 256,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let w = &self.weights;
        if w.supervised < 0.0 || w.value < 0.0 || w.reconstruction < 0.0 {
            return bad("loss weights must be non-negative".into());
        }
        let needed = [
            (self.mode.supervised(), w.supervised, "supervised"),
            (self.mode.value(), w.value, "value"),
            (self.mode.autoencoder(), w.reconstruction, "reconstruction"),
        ];
        for (used, weight, name) in needed {
            if used && weight <= 0.0 {
                return bad(format!("mode {} needs a positive {name} weight", self.mode.as_str()));
            }
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return bad("batch size and logging interval must be positive".into());
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout fraction must lie in [0, 1)".into());
        }
        self.optimizer.validate()?;
        Ok(())
    }

    pub fn return_spec(&self) -> ReturnSpec {
        ReturnSpec {
            gamma: self.gamma,
            transform: ValueTransform::Rescale { epsilon: self.tb_epsilon },
            clip_rewards: false,
        }
    }
}

/// `(x, y, G)` for one demonstration step; the stack is rebuilt from the episode frames.
#[derive(Clone, Debug)]
pub struct DemoSample {
    pub frames: Arc<[Frame]>,
    pub episode: usize,
    pub step: usize,
    pub action: u8,
    pub ret: f64,
}

impl DemoSample {
    pub fn one_hot(&self, num_actions: usize) -> Vec<f64> {
        (0..num_actions).map(|a| f64::from(a == self.action as usize)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct PretrainDataset {
    pub num_actions: usize,
    pub train: Vec<DemoSample>,
    pub holdout: Vec<DemoSample>,
    pub holdout_episodes: Vec<usize>,
}

/// Every step of every episode becomes one sample; whole episodes go to the
/// holdout side.
pub fn build_pretrain_dataset(archive: &DemoArchive, spec: &ReturnSpec, holdout_fraction: f64, seed: u64) -> Result<PretrainDataset> {
    if archive.is_empty() {
        return Err(Error::Empty("demonstration archive"));
    }
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::Config("holdout fraction must lie in [0, 1)".into()));
    }
    let per_episode = ndgrad::parallel::map_slice(&archive.episodes, |demo| compute_transformed_returns(&demo.to_episode(), spec));
    let n = archive.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = ((holdout_fraction * n as f64).round() as usize).min(n - 1);
    let mut holdout_episodes: Vec<usize> = order[..n_hold].to_vec();
    holdout_episodes.sort_unstable();

    let mut ds = PretrainDataset {
        num_actions: archive.manifest.action_names.len(),
        train: Vec::new(),
        holdout: Vec::new(),
        holdout_episodes,
    };
    for (i, ep) in per_episode.into_iter().enumerate() {
        let ep = ep.map_err(|e| Error::ArchiveEpisode { episode: i, reason: e.to_string() })?;
        let side = if ds.holdout_episodes.contains(&i) { &mut ds.holdout } else { &mut ds.train };
        side.extend((0..ep.len()).map(|t| DemoSample {
            frames: ep.frames.clone(),
            episode: i,
            step: t,
            action: ep.actions[t],
            ret: ep.returns[t],
        }));
    }
    Ok(ds)
}

pub fn sample_batch<T: Real>(samples: &[&DemoSample]) -> Tensor<T> {
    batch_from_episodes(samples.iter().map(|s| (&s.frames[..], s.step)))
}

/// Tape handles of the individual terms; absent terms are `None`.
#[derive(Clone, Copy, Debug)]
pub struct JointLoss {
    pub total: Var,
    pub supervised: Option<Var>,
    pub value: Option<Var>,
    pub reconstruction: Option<Var>,
}

/// `w_s·L_s + w_v·L_v + w_ae·L_ae`, each term a batch mean. In value modes the
/// cross-entropy of each sample is weighted by the detached `(G − V)₊`.
pub fn joint_pretrain_loss<T: Real>(
    tape: &mut Tape<T>,
    out: &NetOutput,
    input: Var,
    actions: &[usize],
    returns: &[f64],
    mode: PretrainMode,
    weights: &LossWeights,
) -> Result<JointLoss> {
    joint_loss_impl(tape, out, input, actions, returns, None, mode, weights)
}

/// [`joint_pretrain_loss`] with constant per-sample cross-entropy weights in
/// place of the detached `(G − V)₊` (ignored in `SL` mode, which has none).
#[allow(clippy::too_many_arguments)]
pub fn joint_pretrain_loss_with_weights<T: Real>(
    tape: &mut Tape<T>,
    out: &NetOutput,
    input: Var,
    actions: &[usize],
    returns: &[f64],
    ce_weights: &[f64],
    mode: PretrainMode,
    weights: &LossWeights,
) -> Result<JointLoss> {
    joint_loss_impl(tape, out, input, actions, returns, Some(ce_weights), mode, weights)
}

#[allow(clippy::too_many_arguments)]
fn joint_loss_impl<T: Real>(
    tape: &mut Tape<T>,
    out: &NetOutput,
    input: Var,
    actions: &[usize],
    returns: &[f64],
    ce_weights: Option<&[f64]>,
    mode: PretrainMode,
    weights: &LossWeights,
) -> Result<JointLoss> {
    let mut terms = Vec::new();
    let gap = if mode.value() {
        let g = crate::a3c::constant_vec(tape, returns)?;
        Some(tape.sub(g, out.value)?)
    } else {
        None
    };

    let supervised = if mode.supervised() {
        let lp = tape.log_softmax(out.logits);
        let picked = tape.pick(lp, actions)?;
        let ce = tape.scale(picked, -T::one());
        let ce = match (gap, ce_weights) {
            (Some(_), Some(w)) => {
                let w = crate::a3c::constant_vec(tape, w)?;
                tape.mul(ce, w)?
            }
            (Some(gap), None) => {
                let w = tape.pos_part(gap);
                let w = tape.detach(w);
                tape.mul(ce, w)?
            }
            (None, _) => ce,
        };
        let l = tape.mean(ce);
        terms.push(tape.scale(l, T::from_f64_lossy(weights.supervised)));
        Some(l)
    } else {
        None
    };

    let value = match gap {
        Some(gap) => {
            let sq = tape.square(gap);
            let m = tape.mean(sq);
            let l = tape.scale(m, T::from_f64_lossy(0.5));
            terms.push(tape.scale(l, T::from_f64_lossy(weights.value)));
            Some(l)
        }
        None => None,
    };

    let reconstruction = if mode.autoencoder() {
        let recon = out
            .reconstruction
            .ok_or_else(|| Error::Config(format!("mode {} needs the decoder", mode.as_str())))?;
        let diff = tape.sub(recon, input)?;
        let sq = tape.square(diff);
        let l = tape.mean(sq);
        terms.push(tape.scale(l, T::from_f64_lossy(weights.reconstruction)));
        Some(l)
    } else {
        None
    };

    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(JointLoss { total, supervised, value, reconstruction })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub update: usize,
    /// Full objective on the fixed training probe.
    pub train_loss: f64,
    /// Plain cross-entropy and argmax accuracy on the holdout episodes.
    pub holdout_ce: Option<f64>,
    pub holdout_accuracy: Option<f64>,
    /// Pixel MSE on the holdout episodes (training probe when there is no holdout).
    pub reconstruction_mse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub mode: PretrainMode,
    pub params: ParamSet<f32>,
    pub trace: Vec<TraceRow>,
}

impl PretrainOutcome {
    pub fn last(&self) -> &TraceRow {
        self.trace.last().expect("trace has the initial row")
    }
}

struct Probe<'a> {
    net: &'a PolicyValueNet,
    config: &'a PretrainConfig,
}

impl Probe<'_> {
    const CHUNK: usize = 64;

    fn objective(&self, params: &ParamSet<f32>, samples: &[&DemoSample]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in samples.chunks(Self::CHUNK) {
            let mut tape = Tape::for_params(params);
            let x = tape.constant(sample_batch(chunk));
            let out = self.net.forward(&mut tape, params, x, self.config.mode.autoencoder())?;
            let actions: Vec<usize> = chunk.iter().map(|s| s.action as usize).collect();
            let returns: Vec<f64> = chunk.iter().map(|s| s.ret).collect();
            let loss = joint_pretrain_loss(&mut tape, &out, x, &actions, &returns, self.config.mode, &self.config.weights)?;
            total += tape.value(loss.total).data()[0] as f64 * chunk.len() as f64;
        }
        Ok(total / samples.len() as f64)
    }

    /// (cross-entropy, accuracy, reconstruction MSE)
    fn holdout(&self, params: &ParamSet<f32>, samples: &[&DemoSample]) -> Result<(f64, f64, Option<f64>)> {
        let (mut ce, mut hits, mut mse) = (0.0, 0usize, 0.0);
        let decode = self.config.mode.autoencoder();
        let a = self.net.num_actions();
        for chunk in samples.chunks(Self::CHUNK) {
            let x = sample_batch::<f32>(chunk);
            let inf = self.net.infer_full(params, x.clone(), decode)?;
            for (s, logits) in chunk.iter().zip(inf.logits.chunks_exact(a)) {
                let l: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
                let (p, _) = ndgrad::softmax_and_entropy(&l);
                ce -= p[s.action as usize].max(1e-300).ln();
                let best = (0..a).max_by(|&i, &j| l[i].total_cmp(&l[j])).unwrap();
                hits += usize::from(best == s.action as usize);
            }
            if let Some(r) = inf.reconstruction {
                mse += r.data().iter().zip(x.data()).map(|(&u, &v)| ((u - v) as f64).powi(2)).sum::<f64>();
            }
        }
        let n = samples.len() as f64;
        let per_pixel = n * x_len(self.net.config());
        Ok((ce / n, hits as f64 / n, decode.then_some(mse / per_pixel)))
    }

    fn row(&self, update: usize, params: &ParamSet<f32>, train_probe: &[&DemoSample], holdout: &[&DemoSample]) -> Result<TraceRow> {
        let train_loss = self.objective(params, train_probe)?;
        let (holdout_ce, holdout_accuracy, mut reconstruction_mse) = if holdout.is_empty() {
            (None, None, None)
        } else {
            let (ce, acc, mse) = self.holdout(params, holdout)?;
            (Some(ce), Some(acc), mse)
        };
        if reconstruction_mse.is_none() && self.config.mode.autoencoder() {
            reconstruction_mse = self.holdout(params, train_probe)?.2;
        }
        Ok(TraceRow { update, train_loss, holdout_ce, holdout_accuracy, reconstruction_mse })
    }
}

fn x_len(c: &NetConfig) -> f64 {
    (c.input_side * c.input_side * c.input_depth) as f64
}

/// Adam on minibatches drawn uniformly from the training side. A trace row is
/// written before the first update, every `log_every` updates and at the end.
pub fn run_pretraining(net: &PolicyValueNet, dataset: &PretrainDataset, config: &PretrainConfig, seed: u64) -> Result<PretrainOutcome> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Empty("pre-training set"));
    }
    if dataset.num_actions != net.num_actions() {
        return Err(Error::Config(format!(
            "demonstrations have {} actions, network has {}",
            dataset.num_actions,
            net.num_actions()
        )));
    }
    let decode = config.mode.autoencoder();
    let init = net.init::<f32>(seed, decode)?;
    let store = ParameterStore::new(init, config.optimizer.clone(), AccessMode::Strict)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x9e7));

    let mut probe_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x960be));
    let train_probe: Vec<&DemoSample> = dataset.train.choose_multiple(&mut probe_rng, config.probe_size.min(dataset.train.len())).collect();
    let holdout: Vec<&DemoSample> = dataset.holdout.iter().collect();
    let probe = Probe { net, config };

    let mut trace = vec![probe.row(0, &store.snapshot(), &train_probe, &holdout)?];
    for update in 1..=config.updates {
        let batch: Vec<&DemoSample> = (0..config.batch_size).map(|_| &dataset.train[rng.gen_range(0..dataset.train.len())]).collect();
        let params = store.snapshot();
        let mut tape = Tape::for_params(&params);
        let x = tape.constant(sample_batch(&batch));
        let out = net.forward(&mut tape, &params, x, decode)?;
        let actions: Vec<usize> = batch.iter().map(|s| s.action as usize).collect();
        let returns: Vec<f64> = batch.iter().map(|s| s.ret).collect();
        let loss = joint_pretrain_loss(&mut tape, &out, x, &actions, &returns, config.mode, &config.weights)?;
        let value = tape.value(loss.total).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::Diverged { update, loss: value });
        }
        store.apply(tape.backward(loss.total)?)?;
        if update % config.log_every == 0 || update == config.updates {
            let row = probe.row(update, &store.snapshot(), &train_probe, &holdout)?;
            log::info!(
                "pretrain {} update {update}: probe loss {:.4}, holdout acc {:?}",
                config.mode.as_str(),
                row.train_loss,
                row.holdout_accuracy
            );
            trace.push(row);
        }
    }
    Ok(PretrainOutcome {
        mode: config.mode,
        params: store.snapshot(),
        trace,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferPolicy {
    Full,
    NoFc,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferManifest {
    pub policy: TransferPolicy,
    pub transferred: Vec<String>,
}

/// Copies pre-trained blocks into `target` (a freshly initialised network).
/// Decoder blocks never move; `no_fc` also keeps the target's `fc2`/`fc3`.
pub fn transfer_weights(
    pretrained: &ParamSet<f32>,
    mode: PretrainMode,
    target: &ParamSet<f32>,
    policy: TransferPolicy,
) -> Result<(ParamSet<f32>, TransferManifest)> {
    if mode == PretrainMode::Ae && policy == TransferPolicy::Full {
        return Err(Error::Transfer("AE checkpoints never trained fc2/fc3; only no_fc transfer is allowed".into()));
    }
    let mut out = target.clone();
    let mut transferred = Vec::new();
    for id in 0..target.len() {
        let name = target.name(id).to_string();
        if is_decoder_block(&name) || (policy == TransferPolicy::NoFc && is_output_block(&name)) {
            continue;
        }
        let src = pretrained
            .by_name(&name)
            .map_err(|_| Error::Transfer(format!("block `{name}` missing from the checkpoint")))?;
        if src.shape() != target.get(id).shape() {
            return Err(Error::Transfer(format!(
                "block `{name}`: checkpoint shape {:?}, network shape {:?}",
                src.shape(),
                target.get(id).shape()
            )));
        }
        out.set(id, src.clone())?;
        transferred.push(name);
    }
    Ok((out, TransferManifest { policy, transferred }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub mode: PretrainMode,
    pub net: NetConfig,
    pub trace: Vec<TraceRow>,
}

pub fn save_pretrained(dir: &Path, net: &PolicyValueNet, outcome: &PretrainOutcome) -> Result<()> {
    let info = CheckpointInfo {
        mode: outcome.mode,
        net: net.config().clone(),
        trace: outcome.trace.clone(),
    };
    let updates = outcome.last().update as u64;
    checkpoint::save(dir, &outcome.params, updates, serde_json::to_value(info)?)?;
    Ok(())
}

pub fn load_pretrained(dir: &Path) -> Result<(CheckpointInfo, ParamSet<f32>)> {
    let (manifest, params) = checkpoint::load::<f32>(dir)?;
    let info: CheckpointInfo = serde_json::from_value(manifest.metadata)?;
    Ok((info, params))
}
