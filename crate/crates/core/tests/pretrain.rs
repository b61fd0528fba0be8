use std::collections::HashSet;

use demolab::env::{EnvId, EnvSpec, FRAME_BYTES};
use demolab::net::{ConvSpec, NetConfig, PolicyValueNet};
use demolab::pretrain::{
    build_pretrain_dataset, joint_pretrain_loss, joint_pretrain_loss_with_weights, load_pretrained, run_pretraining,
    sample_batch, save_pretrained, transfer_weights, LossWeights, PretrainConfig, PretrainDataset, PretrainMode,
    TransferPolicy,
};
use demolab::scripted::scripted_archive;
use demolab::Error;
use ndgrad::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Same input geometry as the real network, far fewer channels.
fn narrow_net(with_value_head_actions: usize) -> PolicyValueNet {
    PolicyValueNet::new(NetConfig {
        convs: [
            ConvSpec { filters: 4, kernel: 8, stride: 4 },
            ConvSpec { filters: 4, kernel: 4, stride: 2 },
            ConvSpec { filters: 4, kernel: 3, stride: 1 },
        ],
        fc_width: 16,
        ..NetConfig::standard(with_value_head_actions)
    })
    .unwrap()
}

fn small_dataset(holdout: f64) -> (demolab::archive::DemoArchive, PretrainDataset) {
    let archive = scripted_archive(&EnvSpec::new(EnvId::MiniPacman), 3, 40).unwrap();
    let spec = PretrainConfig::default().return_spec();
    let ds = build_pretrain_dataset(&archive, &spec, holdout, 5).unwrap();
    (archive, ds)
}

#[test]
fn dataset_is_a_bijection_onto_steps() {
    let (archive, ds) = small_dataset(0.34);
    assert_eq!(ds.train.len() + ds.holdout.len(), archive.total_states());
    assert_eq!(ds.holdout_episodes.len(), 1);
    let mut seen = HashSet::new();
    for s in ds.train.iter().chain(&ds.holdout) {
        assert!(seen.insert((s.episode, s.step)), "duplicate {:?}", (s.episode, s.step));
        let demo = &archive.episodes[s.episode];
        assert_eq!(s.action, demo.actions[s.step]);
        assert_eq!(s.one_hot(4).iter().sum::<f64>(), 1.0);
    }
    assert!(ds.holdout.iter().all(|s| ds.holdout_episodes.contains(&s.episode)));
    assert!(ds.train.iter().all(|s| !ds.holdout_episodes.contains(&s.episode)));

    let spec = PretrainConfig::default().return_spec();
    for (i, demo) in archive.episodes.iter().enumerate() {
        let expected = spec.returns(&demo.to_episode().rewards, 0.0);
        for s in ds.train.iter().chain(&ds.holdout).filter(|s| s.episode == i) {
            assert_eq!(s.ret, expected[s.step]);
        }
    }
}

#[test]
fn early_stacks_repeat_the_first_frame() {
    let (archive, ds) = small_dataset(0.0);
    let frames = &archive.episodes[0].frames;
    let pick = |t: usize| ds.train.iter().find(|s| s.episode == 0 && s.step == t).unwrap();
    let batch = sample_batch::<f32>(&[pick(0), pick(2)]);
    let scale = 1.0 / 255.0;
    let channel = |n: usize, c: usize| -> Vec<f32> { (0..FRAME_BYTES).map(|p| batch.data()[(n * FRAME_BYTES + p) * 4 + c]).collect() };
    let frame = |t: usize| -> Vec<f32> { frames[t].as_bytes().iter().map(|&b| b as f32 * scale).collect() };
    for c in 0..4 {
        assert_eq!(channel(0, c), frame(0));
    }
    assert_eq!(channel(1, 0), frame(0));
    assert_eq!(channel(1, 1), frame(0));
    assert_eq!(channel(1, 2), frame(1));
    assert_eq!(channel(1, 3), frame(2));
}

fn tiny_net() -> PolicyValueNet {
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
    .unwrap()
}

#[test]
fn uniform_policy_costs_ln_4() {
    let net = tiny_net();
    let mut p = net.init::<f64>(3, false).unwrap();
    for name in ["fc2/w", "fc2/b"] {
        let id = p.id(name).unwrap();
        p.get_mut(id).data_mut().fill(0.0);
    }
    let mut tape = Tape::for_params(&p);
    let x = tape.constant(Tensor::from_fn(&[5, 8, 8, 2], |i| (i % 9) as f64 / 9.0));
    let out = net.forward(&mut tape, &p, x, false).unwrap();
    let loss = joint_pretrain_loss(&mut tape, &out, x, &[0, 1, 2, 3, 1], &[0.0; 5], PretrainMode::Sl, &LossWeights::default()).unwrap();
    let l = tape.value(loss.total).item().unwrap();
    assert!((l - 4f64.ln()).abs() < 1e-12, "{l}");
    assert!((l - 1.38629).abs() < 1e-5);
}

#[test]
fn unit_weights_reduce_to_plain_cross_entropy() {
    let net = tiny_net();
    let p = net.init::<f64>(4, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::from_fn(&[6, 8, 8, 2], |_| rng.gen_range(0.0..1.0));
    let actions: Vec<usize> = (0..6).map(|_| rng.gen_range(0..4)).collect();
    let returns: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let supervised = |mode: PretrainMode, weighted: bool| {
        let mut tape = Tape::for_params(&p);
        let xv = tape.constant(x.clone());
        let out = net.forward(&mut tape, &p, xv, false).unwrap();
        let w = LossWeights::default();
        let loss = if weighted {
            joint_pretrain_loss_with_weights(&mut tape, &out, xv, &actions, &returns, &[1.0; 6], mode, &w).unwrap()
        } else {
            joint_pretrain_loss(&mut tape, &out, xv, &actions, &returns, mode, &w).unwrap()
        };
        tape.value(loss.supervised.unwrap()).item().unwrap()
    };
    let plain = supervised(PretrainMode::Sl, false);
    assert!((supervised(PretrainMode::SlV, true) - plain).abs() < 1e-12);

    // oracle: mean negative log-softmax of the chosen action
    let (logits, _) = net.infer(&p, x.clone()).unwrap();
    let ce: f64 = logits
        .chunks_exact(4)
        .zip(&actions)
        .map(|(l, &a)| {
            let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + l.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - l[a]
        })
        .sum::<f64>()
        / 6.0;
    assert!((plain - ce).abs() < 1e-12);
}

#[test]
fn zero_updates_keep_the_initialization() {
    let (_, ds) = small_dataset(0.34);
    let net = narrow_net(4);
    let cfg = PretrainConfig { mode: PretrainMode::SlV, updates: 0, probe_size: 16, ..Default::default() };
    let out = run_pretraining(&net, &ds, &cfg, 9).unwrap();
    assert_eq!(out.params, net.init::<f32>(9, false).unwrap());
    assert_eq!(out.trace.len(), 1);
}

#[test]
fn training_loss_falls_for_nineteen_of_twenty_seeds() {
    let (_, ds) = small_dataset(0.34);
    let net = narrow_net(4);
    let cfg = PretrainConfig {
        mode: PretrainMode::Sl,
        updates: 150,
        batch_size: 16,
        log_every: 150,
        probe_size: 64,
        ..Default::default()
    };
    let fell = (0..20u64)
        .filter(|&seed| {
            let out = run_pretraining(&net, &ds, &cfg, seed).unwrap();
            out.last().train_loss < out.trace[0].train_loss
        })
        .count();
    assert!(fell >= 19, "loss fell for {fell}/20 seeds");
}

#[test]
fn transfer_contracts() {
    let net = narrow_net(4);
    let pretrained = net.init::<f32>(100, true).unwrap();
    let target = net.init::<f32>(200, false).unwrap();

    let (full, manifest) = transfer_weights(&pretrained, PretrainMode::SlVAe, &target, TransferPolicy::Full).unwrap();
    assert_eq!(manifest.transferred.len(), 12);
    assert!(!full.contains("dec_fc/w"));
    let x = Tensor::from_fn(&[2, 88, 88, 4], |i| (i % 17) as f32 / 17.0);
    let encoder_only = {
        let mut p = ndgrad::ParamSet::new();
        for (name, t) in pretrained.iter().filter(|(n, _)| !n.starts_with("dec")) {
            p.insert(name, t.clone()).unwrap();
        }
        p
    };
    assert_eq!(net.infer(&full, x.clone()).unwrap(), net.infer(&encoder_only, x).unwrap());

    let (no_fc, manifest) = transfer_weights(&pretrained, PretrainMode::SlVAe, &target, TransferPolicy::NoFc).unwrap();
    assert_eq!(manifest.transferred, ["conv1/w", "conv1/b", "conv2/w", "conv2/b", "conv3/w", "conv3/b", "fc1/w", "fc1/b"]);
    for (name, t) in no_fc.iter() {
        let from_checkpoint = t == pretrained.by_name(name).unwrap();
        let output = name.starts_with("fc2/") || name.starts_with("fc3/");
        // zero-initialised biases coincide in both nets
        if output && !name.ends_with("/b") {
            assert!(!from_checkpoint, "{name} should keep the fresh initialization");
            assert_eq!(t, target.by_name(name).unwrap());
        } else if !output {
            assert!(from_checkpoint, "{name} should come from the checkpoint");
        }
    }

    assert!(matches!(
        transfer_weights(&pretrained, PretrainMode::Ae, &target, TransferPolicy::Full),
        Err(Error::Transfer(_))
    ));
    assert!(transfer_weights(&pretrained, PretrainMode::Ae, &target, TransferPolicy::NoFc).is_ok());

    let wide = PolicyValueNet::new(NetConfig { fc_width: 17, ..net.config().clone() }).unwrap();
    let err = transfer_weights(&pretrained, PretrainMode::Sl, &wide.init(1, false).unwrap(), TransferPolicy::Full).unwrap_err();
    assert!(err.to_string().contains("fc1/w"), "{err}");
}

#[test]
fn checkpoint_roundtrip() {
    let (_, ds) = small_dataset(0.34);
    let net = narrow_net(4);
    let cfg = PretrainConfig { mode: PretrainMode::SlVAe, updates: 3, log_every: 1, probe_size: 8, ..Default::default() };
    let out = run_pretraining(&net, &ds, &cfg, 2).unwrap();
    assert_eq!(out.trace.len(), 4);
    assert!(out.trace.iter().all(|r| r.reconstruction_mse.is_some() && r.holdout_accuracy.is_some()));
    let dir = tempfile::tempdir().unwrap();
    save_pretrained(dir.path(), &net, &out).unwrap();
    let (info, params) = load_pretrained(dir.path()).unwrap();
    assert_eq!(info.mode, PretrainMode::SlVAe);
    assert_eq!(&info.net, net.config());
    assert_eq!(info.trace, out.trace);
    assert_eq!(params, out.params);
}
