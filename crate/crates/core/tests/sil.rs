use std::sync::{Arc, Mutex};

use demolab::archive::{DemoArchive, DemoEpisode};
use demolab::env::{EnvId, EnvSpec, Frame, FRAME_BYTES};
use demolab::net::{ConvSpec, NetConfig, PolicyValueNet};
use demolab::sil::{
    compute_transformed_returns, seed_buffer_from_demos, sil_loss, Episode, EpisodeQueue, ReplayBuffer, ReturnSpec,
    SilConfig, SilGradients, SilLearner, SilSample,
};
use demolab::transform::ValueTransform;
use ndgrad::{AccessMode, Gradients, OptimizerConfig, ParamSet, ParameterStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

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
        num_actions: 3,
    })
    .unwrap()
}

fn sil_grads(net: &PolicyValueNet, p: &ParamSet<f64>, x: &Tensor<f64>, actions: &[usize], returns: &[f64]) -> Gradients<f64> {
    let mut tape = Tape::for_params(p);
    let xv = tape.constant(x.clone());
    let out = net.forward(&mut tape, p, xv, false).unwrap();
    let loss = sil_loss(&mut tape, &out, actions, returns, 0.5).unwrap();
    tape.backward(loss).unwrap()
}

fn rows(x: &Tensor<f64>, keep: &[usize]) -> Tensor<f64> {
    let per = x.len() / x.shape()[0];
    let mut shape = x.shape().to_vec();
    shape[0] = keep.len();
    let data = keep.iter().flat_map(|&i| x.data()[i * per..(i + 1) * per].iter().copied()).collect();
    Tensor::new(shape, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn samples_at_or_below_value_contribute_nothing(seed in any::<u64>(), n in 1usize..6, below in 0.0f64..3.0) {
        let net = tiny_net();
        let p = net.init::<f64>(seed, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[n, 8, 8, 2], |_| rng.gen_range(0.0..1.0));
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let (_, v) = net.infer(&p, x.clone()).unwrap();
        // the first sample sits exactly on its value estimate
        let returns: Vec<f64> = v.iter().enumerate().map(|(i, v)| if i == 0 { *v } else { v - below }).collect();
        let g = sil_grads(&net, &p, &x, &actions, &returns);
        for (name, block) in g.iter() {
            prop_assert!(block.data().iter().all(|&d| d == 0.0), "{} has a non-zero gradient", name);
        }
    }

    #[test]
    fn mixed_batch_equals_positive_subset(seed in any::<u64>(), mask in prop::collection::vec(any::<bool>(), 2..7)) {
        prop_assume!(mask.iter().any(|&m| m));
        let net = tiny_net();
        let p = net.init::<f64>(seed, false).unwrap();
        let n = mask.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x = Tensor::from_fn(&[n, 8, 8, 2], |_| rng.gen_range(0.0..1.0));
        let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let (_, v) = net.infer(&p, x.clone()).unwrap();
        let returns: Vec<f64> = v.iter().zip(&mask).map(|(v, &up)| if up { v + rng.gen_range(0.1..3.0) } else { v - rng.gen_range(0.0..3.0) }).collect();
        let full = sil_grads(&net, &p, &x, &actions, &returns);

        let keep: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        let sub_actions: Vec<usize> = keep.iter().map(|&i| actions[i]).collect();
        let sub_returns: Vec<f64> = keep.iter().map(|&i| returns[i]).collect();
        let subset = sil_grads(&net, &p, &rows(&x, &keep), &sub_actions, &sub_returns);

        for ((name, a), (_, b)) in full.iter().zip(subset.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{}: {} vs {}", name, x, y);
            }
        }
    }
}

/// Returns unit gradients and records which samples each minibatch held.
#[derive(Clone, Default)]
struct Scripted {
    batches: Arc<Mutex<Vec<Vec<u8>>>>,
}

impl SilGradients for Scripted {
    fn gradients(&mut self, params: &ParamSet<f32>, batch: &[&SilSample]) -> demolab::Result<Gradients<f32>> {
        self.batches.lock().unwrap().push(batch.iter().map(|s| s.action).collect());
        let mut g = params.zeros_like();
        for id in 0..g.len() {
            g.get_mut(id).data_mut().fill(1.0);
        }
        Ok(g)
    }
}

fn store() -> ParameterStore<f32> {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::<f32>::zeros(&[3])).unwrap();
    ParameterStore::new(p, OptimizerConfig::a3c_rmsprop(), AccessMode::Strict).unwrap()
}

fn blank() -> Frame {
    Frame::new(vec![0; FRAME_BYTES]).unwrap()
}

fn tagged_episode(len: usize, tag: u8) -> demolab::sil::TransformedEpisode {
    let spec = ReturnSpec { gamma: 0.99, transform: ValueTransform::Identity, clip_rewards: false };
    let ep = Episode {
        frames: vec![blank(); len],
        actions: vec![tag; len],
        rewards: vec![1.0; len],
        terminal: true,
        bootstrap: 0.0,
    };
    compute_transformed_returns(&ep, &spec).unwrap()
}

#[test]
fn empty_buffer_only_drains() {
    let store = store();
    let queue = EpisodeQueue::default();
    for (len, tag) in [(5, 1), (7, 2), (11, 3)] {
        queue.push(tagged_episode(len, tag));
    }
    let source = Scripted::default();
    let mut learner = SilLearner::new(SilConfig::default(), source.clone(), ChaCha8Rng::seed_from_u64(0));
    let it = learner.iterate(&store, &queue).unwrap();
    assert_eq!(it.updates, 0);
    assert_eq!(store.version(), 0);
    assert_eq!((it.episodes_drained, it.transitions_added), (3, 23));
    assert_eq!(learner.buffer().len(), 23);
    assert_eq!(queue.enqueued(), queue.dequeued());
    assert!(source.batches.lock().unwrap().is_empty());
}

#[test]
fn one_iteration_is_four_updates_then_a_drain() {
    let store = store();
    let queue = EpisodeQueue::default();
    let source = Scripted::default();
    let mut learner = SilLearner::new(SilConfig::default(), source.clone(), ChaCha8Rng::seed_from_u64(1));
    learner.buffer_mut().extend(tagged_episode(40, 7).samples());

    // queued before the iteration, so it must not be sampled by it
    queue.push(tagged_episode(9, 8));
    let it = learner.iterate(&store, &queue).unwrap();
    assert_eq!(it.updates, 4);
    assert_eq!(store.version(), 4);
    assert_eq!(it.episodes_drained, 1);
    assert_eq!(learner.buffer().len(), 49);
    let batches = source.batches.lock().unwrap().clone();
    assert_eq!(batches.len(), 4);
    assert!(batches.iter().all(|b| b.len() == 32 && b.iter().all(|&a| a == 7)));

    let it = learner.iterate(&store, &queue).unwrap();
    assert_eq!((it.updates, it.episodes_drained), (4, 0));
    assert_eq!(store.version(), 8);
    assert_eq!(learner.updates(), 8);
}

#[test]
fn buffer_holds_one_million_fifo() {
    let mut buffer = ReplayBuffer::new(ReplayBuffer::<SilSample>::DEFAULT_CAPACITY);
    assert_eq!(buffer.capacity(), 1_000_000);
    let frames: Arc<[Frame]> = vec![blank()].into();
    let sample = |i: u32| SilSample { frames: frames.clone(), step: i, action: 0, ret: 0.0 };
    buffer.extend((0..1_000_000).map(sample));
    assert_eq!((buffer.len(), buffer.evicted()), (1_000_000, 0));
    buffer.extend((1_000_000..1_000_025).map(sample));
    assert_eq!((buffer.len(), buffer.evicted()), (1_000_000, 25));
    assert_eq!(buffer.iter().next().unwrap().step, 25);
    assert_eq!(buffer.iter().last().unwrap().step, 1_000_024);
}

proptest! {
    #[test]
    fn buffer_never_exceeds_capacity(cap in 1usize..50, pushes in 0usize..200) {
        let mut b = ReplayBuffer::new(cap);
        b.extend(0..pushes);
        prop_assert_eq!(b.len(), pushes.min(cap));
        prop_assert_eq!(b.evicted() as usize, pushes.saturating_sub(cap));
        let expected: Vec<usize> = (pushes.saturating_sub(cap)..pushes).collect();
        prop_assert_eq!(b.iter().copied().collect::<Vec<_>>(), expected);
    }
}

/// An archive whose episodes have the given lengths; every frame shares one buffer.
fn synthetic_archive(lengths: &[usize]) -> DemoArchive {
    let frame = blank();
    let mut archive = DemoArchive::new(&EnvSpec::new(EnvId::MiniPacman));
    for (i, &len) in lengths.iter().enumerate() {
        archive
            .push(DemoEpisode {
                seed: i as u64,
                frames: vec![frame.clone(); len],
                actions: (0..len).map(|t| (t % 4) as u8).collect(),
                rewards: (0..len).map(|t| if t % 7 == 0 { 10.0 } else { 0.0 }).collect(),
                terminal: i % 2 == 0,
            })
            .unwrap();
    }
    archive
}

#[test]
fn seeding_inserts_every_demonstration_step() {
    let spec = ReturnSpec { gamma: 0.99, transform: ValueTransform::Rescale { epsilon: 0.01 }, clip_rewards: false };
    for lengths in [
        vec![1200, 2100, 1650, 1904, 1800, 2050, 1700, 2100],
        vec![3800, 3600, 3500, 3574, 3600, 3600],
    ] {
        let total: usize = lengths.iter().sum();
        let archive = synthetic_archive(&lengths);
        assert_eq!(archive.total_states(), total);
        let mut buffer = ReplayBuffer::new(ReplayBuffer::<SilSample>::DEFAULT_CAPACITY);
        assert_eq!(seed_buffer_from_demos(&mut buffer, &archive, &spec).unwrap(), total);
        assert_eq!(buffer.len(), total);
    }
    assert_eq!([1200, 2100, 1650, 1904, 1800, 2050, 1700, 2100].iter().sum::<usize>(), 14504);
    assert_eq!([3800, 3600, 3500, 3574, 3600, 3600].iter().sum::<usize>(), 21674);

    let mut buffer = ReplayBuffer::new(10);
    let empty = DemoArchive::new(&EnvSpec::new(EnvId::MiniPacman));
    assert_eq!(seed_buffer_from_demos(&mut buffer, &empty, &spec).unwrap(), 0);
}
