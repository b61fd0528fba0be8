//! Finite-difference checks of every training objective on a miniature network.
//!
//! Each loss detaches its advantage weight, so the tape gradient is that of a
//! surrogate in which the weight is a constant. The finite differences are
//! therefore taken of the `_with_weights` variant with the weight frozen at
//! the unperturbed parameters, and compared with the real loss's gradient.

use std::fmt;

use ndgrad::gradcheck::{analytic_gradients, compare_with_finite_differences, GradCheckReport};
use ndgrad::{ParamSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::a3c::{a3c_loss, a3c_loss_with_weights};
use crate::error::Result;
use crate::net::{ConvSpec, NetConfig, PolicyValueNet};
use crate::pretrain::{joint_pretrain_loss, joint_pretrain_loss_with_weights, LossWeights, PretrainMode};
use crate::sil::{sil_loss, sil_loss_with_weights};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
const BATCH: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    ActorCritic,
    SelfImitation,
    Pretrain(PretrainMode),
}

impl Objective {
    pub const ALL: [Objective; 6] = [
        Objective::ActorCritic,
        Objective::SelfImitation,
        Objective::Pretrain(PretrainMode::Sl),
        Objective::Pretrain(PretrainMode::SlV),
        Objective::Pretrain(PretrainMode::SlVAe),
        Objective::Pretrain(PretrainMode::Ae),
    ];
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::ActorCritic => f.write_str("a3c"),
            Objective::SelfImitation => f.write_str("sil"),
            Objective::Pretrain(m) => write!(f, "pretrain[{}]", m.as_str()),
        }
    }
}

/// 8×8×2 input, three small convolutions, a 6-wide hidden layer, 4 actions.
pub fn tiny_net() -> PolicyValueNet {
    PolicyValueNet::new(NetConfig {
        input_side: 8,
        input_depth: 2,
        convs: [
            ConvSpec { filters: 3, kernel: 4, stride: 2 },
            ConvSpec { filters: 3, kernel: 2, stride: 2 },
            ConvSpec { filters: 2, kernel: 2, stride: 1 },
        ],
        fc_width: 6,
        num_actions: 4,
    })
    .expect("tiny net is valid")
}

struct Instance {
    params: ParamSet<f64>,
    x: Tensor<f64>,
    actions: Vec<usize>,
    targets: Vec<f64>,
}

fn instance(net: &PolicyValueNet, seed: u64, decoder: bool) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = net.init::<f64>(seed, decoder)?;
    // non-zero biases so the relus sit away from their kinks in different places
    for id in 0..params.len() {
        if params.name(id).ends_with("/b") {
            for v in params.get_mut(id).data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let c = net.config();
    let x = Tensor::from_fn(&[BATCH, c.input_side, c.input_side, c.input_depth], |_| rng.gen_range(0.0..1.0));
    let actions = (0..BATCH).map(|_| rng.gen_range(0..c.num_actions)).collect();
    let targets = (0..BATCH).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Ok(Instance { params, x, actions, targets })
}

/// Tape gradient of `real` against central differences of `frozen`.
fn compare<R, F>(params: &ParamSet<f64>, real: R, frozen: F, tolerance: f64) -> Result<GradCheckReport>
where
    R: Fn(&mut Tape<f64>, &ParamSet<f64>) -> ndgrad::Result<Var>,
    F: Fn(&mut Tape<f64>, &ParamSet<f64>) -> ndgrad::Result<Var> + Sync,
{
    let (_, analytic) = analytic_gradients(params, &real)?;
    Ok(compare_with_finite_differences(params, &frozen, &analytic, tolerance)?)
}

// The loss builders return ndgrad results, so core errors are folded into one.
fn lift<T>(r: Result<T>) -> ndgrad::Result<T> {
    r.map_err(|e| match e {
        crate::Error::Grad(g) => g,
        other => ndgrad::Error::InvalidConfig(other.to_string()),
    })
}

/// Checks `objective` on the instance drawn from `seed`.
pub fn check_objective(objective: Objective, seed: u64, tolerance: f64) -> Result<GradCheckReport> {
    let net = tiny_net();
    match objective {
        Objective::ActorCritic => {
            let inst = instance(&net, seed, false)?;
            let values = net.infer(&inst.params, inst.x.clone())?.1;
            let adv: Vec<f64> = inst.targets.iter().zip(values).map(|(q, v)| q - v).collect();
            compare(
                &inst.params,
                |tape, p| {
                    let x = tape.constant(inst.x.clone());
                    let out = lift(net.forward(tape, p, x, false))?;
                    lift(a3c_loss(tape, &out, &inst.actions, &inst.targets, 0.5, 0.01))
                },
                |tape, p| {
                    let x = tape.constant(inst.x.clone());
                    let out = lift(net.forward(tape, p, x, false))?;
                    lift(a3c_loss_with_weights(tape, &out, &inst.actions, &inst.targets, &adv, 0.5, 0.01))
                },
                tolerance,
            )
        }
        Objective::SelfImitation => {
            let mut inst = instance(&net, seed, false)?;
            // one sample below its value estimate, the rest above
            for (i, t) in inst.targets.iter_mut().enumerate() {
                *t += if i == 0 { -5.0 } else { 3.0 };
            }
            let values = net.infer(&inst.params, inst.x.clone())?.1;
            let adv: Vec<f64> = inst.targets.iter().zip(values).map(|(g, v)| (g - v).max(0.0)).collect();
            compare(
                &inst.params,
                |tape, p| {
                    let x = tape.constant(inst.x.clone());
                    let out = lift(net.forward(tape, p, x, false))?;
                    lift(sil_loss(tape, &out, &inst.actions, &inst.targets, 0.5))
                },
                |tape, p| {
                    let x = tape.constant(inst.x.clone());
                    let out = lift(net.forward(tape, p, x, false))?;
                    lift(sil_loss_with_weights(tape, &out, &inst.actions, &inst.targets, &adv, 0.5))
                },
                tolerance,
            )
        }
        Objective::Pretrain(mode) => {
            let w = LossWeights::default();
            let decode = mode.autoencoder();
            let mut inst = instance(&net, seed, decode)?;
            inst.targets[0] += 3.0;
            let values = net.infer(&inst.params, inst.x.clone())?.1;
            let ce: Vec<f64> = inst.targets.iter().zip(values).map(|(g, v)| (g - v).max(0.0)).collect();
            compare(
                &inst.params,
                |tape, p| {
                    let x = tape.constant(inst.x.clone());
                    let out = lift(net.forward(tape, p, x, decode))?;
                    Ok(lift(joint_pretrain_loss(tape, &out, x, &inst.actions, &inst.targets, mode, &w))?.total)
                },
                |tape, p| {
                    let x = tape.constant(inst.x.clone());
                    let out = lift(net.forward(tape, p, x, decode))?;
                    Ok(lift(joint_pretrain_loss_with_weights(tape, &out, x, &inst.actions, &inst.targets, &ce, mode, &w))?.total)
                },
                tolerance,
            )
        }
    }
}

/// Worst relative error of `objective` over seeds `0..seeds`.
pub fn check_seeds(objective: Objective, seeds: u64, tolerance: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let report = check_objective(objective, seed, tolerance)?;
        if !report.passed() {
            log::warn!("{objective}, seed {seed}: {:?}", report.blocks);
        }
        worst = worst.max(report.max_rel_error());
    }
    Ok(worst)
}
