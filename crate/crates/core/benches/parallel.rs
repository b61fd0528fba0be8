//! Rayon fan-out against the sequential build. Run once normally and once with
//! `--no-default-features`; the bench ids carry the mode so criterion keeps the
//! two baselines side by side.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use demolab::a3c::evaluate_policy;
use demolab::env::{EnvId, EnvSpec};
use demolab::net::{ConvSpec, NetConfig, PolicyValueNet};
use demolab::pretrain::{build_pretrain_dataset, PretrainConfig};
use demolab::scripted::scripted_archive;

fn mode() -> &'static str {
    if ndgrad::parallel::is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

fn evaluation(c: &mut Criterion) {
    let spec = EnvSpec::new(EnvId::MiniPong);
    let net = PolicyValueNet::new(NetConfig {
        convs: [
            ConvSpec { filters: 4, kernel: 8, stride: 4 },
            ConvSpec { filters: 4, kernel: 4, stride: 2 },
            ConvSpec { filters: 4, kernel: 3, stride: 1 },
        ],
        fc_width: 16,
        ..NetConfig::standard(spec.num_actions())
    })
    .unwrap();
    let params = net.init::<f32>(1, false).unwrap();
    let mut group = c.benchmark_group("evaluate_policy");
    group.sample_size(10);
    group.bench_function(mode(), |b| b.iter(|| evaluate_policy(&net, &params, &spec, 4, black_box(7)).unwrap()));
    group.finish();
}

fn demo_returns(c: &mut Criterion) {
    let spec = EnvSpec::new(EnvId::MiniPacman);
    let archive = scripted_archive(&spec, 8, 3).unwrap();
    let returns = PretrainConfig::default().return_spec();
    let mut group = c.benchmark_group("pretrain_dataset");
    group.sample_size(10);
    group.bench_function(mode(), |b| b.iter(|| build_pretrain_dataset(black_box(&archive), &returns, 0.2, 1).unwrap()));
    group.finish();
}

criterion_group!(benches, evaluation, demo_returns);
criterion_main!(benches);
