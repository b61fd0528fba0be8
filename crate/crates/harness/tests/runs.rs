use std::fs;
use std::path::Path;

use demolab::env::EnvId;
use demolab::net::ConvSpec;
use demolab::pretrain::{PretrainConfig, PretrainMode, TransferPolicy};
use demolab::scripted::scripted_archive;
use demolab_harness::run::{seed_dir, AGGREGATE_CSV, CONFIG_FILE, LOG_FILE};
use demolab_harness::{emit_report, run_experiment, ExperimentConfig, LearningCurve, PretrainSection, Variant};

fn small(name: &str, env: EnvId, variant: Variant, seeds: Vec<u64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(name, env, variant, seeds);
    cfg.net.convs = Some([
        ConvSpec { filters: 4, kernel: 8, stride: 4 },
        ConvSpec { filters: 4, kernel: 4, stride: 2 },
        ConvSpec { filters: 4, kernel: 3, stride: 1 },
    ]);
    cfg.net.fc_width = Some(16);
    cfg.train.actors = 1;
    cfg.train.strict = true;
    cfg.train.total_steps = 200;
    cfg.train.eval_every = 100;
    cfg.train.eval_episodes = 2;
    cfg.sil.batch_size = 8;
    cfg.sil.capacity = 5_000;
    cfg
}

#[test]
fn zero_budget_gives_the_initial_evaluation_only() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = small("zero", EnvId::MiniPong, Variant::A3c, vec![4]);
    cfg.train.total_steps = 0;
    let out = run_experiment(&cfg, root.path()).unwrap();
    assert_eq!(out.curve.rows.len(), 1);
    assert_eq!(out.curve.rows[0].step, 0);
    let (curve, _) = LearningCurve::read_csv(&out.dir.join(AGGREGATE_CSV)).unwrap();
    assert_eq!(curve.rows.len(), 1);
}

#[test]
fn resolved_config_is_written_in_full() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = small("snap", EnvId::MiniPong, Variant::A3cTb, vec![1]);
    cfg.train.total_steps = 0;
    let out = run_experiment(&cfg, root.path()).unwrap();
    let text = fs::read_to_string(out.dir.join(CONFIG_FILE)).unwrap();
    let written = ExperimentConfig::from_toml(&text).unwrap();
    assert_eq!(written, out.config);
    assert_eq!(written.resolve().unwrap(), written);
    // defaults are materialised, including the pong optimizer override
    for key in ["gamma", "beta_a3c", "tb_epsilon", "learning_rate", "reward_mode", "fc_width", "[net]"] {
        assert!(text.contains(key), "{key} missing from\n{text}");
    }
    assert_eq!(written.train.optimizer.epsilon, 1e-4);
}

#[test]
fn sil_runs_log_one_extra_thread() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = small("sil", EnvId::MiniPacman, Variant::A3cTbSil, vec![2]);
    cfg.train.strict = false;
    cfg.train.actors = 2;
    let out = run_experiment(&cfg, root.path()).unwrap();
    assert_eq!(out.seeds[0].threads, 3);
    let log = fs::read_to_string(out.dir.join(LOG_FILE)).unwrap();
    assert!(log.contains("with 3 threads (2 actors + 1 SIL learner)"), "{log}");
    assert!(log.contains("threads=3"), "{log}");
    assert!(seed_dir(&out.dir, 2).join("checkpoint").is_dir());
}

#[test]
fn missing_archive_is_rejected_before_training() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = small("nodemo", EnvId::MiniPacman, Variant::A3cTbSil, vec![1]);
    cfg.pretrain = Some(PretrainSection {
        mode: PretrainMode::Sl,
        transfer: TransferPolicy::Full,
        archive: root.path().join("absent.demo"),
        checkpoint: None,
        seed_sil_buffer: true,
        settings: PretrainConfig::default(),
    });
    let err = run_experiment(&cfg, root.path()).unwrap_err();
    assert!(err.to_string().contains("not found"), "{err}");
    assert!(!root.path().join("nodemo").exists());
}

fn pretrained_config(archive: &Path) -> ExperimentConfig {
    let mut cfg = small("warm", EnvId::MiniPacman, Variant::A3cTbSil, vec![3, 5]);
    cfg.pretrain = Some(PretrainSection {
        mode: PretrainMode::SlVAe,
        transfer: TransferPolicy::Full,
        archive: archive.to_path_buf(),
        checkpoint: None,
        seed_sil_buffer: true,
        settings: PretrainConfig {
            updates: 20,
            batch_size: 8,
            log_every: 10,
            probe_size: 16,
            holdout_fraction: 0.34,
            ..Default::default()
        },
    });
    cfg.train.total_steps = 100;
    cfg
}

#[test]
fn pretrain_transfer_and_buffer_seeding() {
    let root = tempfile::tempdir().unwrap();
    let archive_path = root.path().join("demo.bin");
    let archive = scripted_archive(&demolab::env::EnvSpec::new(EnvId::MiniPacman), 3, 40).unwrap();
    archive.save(&archive_path).unwrap();

    let out = run_experiment(&pretrained_config(&archive_path), root.path()).unwrap();
    for r in &out.seeds {
        let p = r.pretrain.as_ref().unwrap();
        assert_eq!(p.transferred.len(), 12);
        assert!(p.reconstruction_mse.is_some());
        assert_eq!(r.demo_transitions, archive.total_states());
        assert!(seed_dir(&out.dir, r.seed).join("pretrained").is_dir());
    }
    assert_eq!(out.curve.label, "A3CTB+SIL [SL_V_AE] full");

    // an archive of the wrong game is turned away
    let pong_path = root.path().join("pong.bin");
    scripted_archive(&demolab::env::EnvSpec::new(EnvId::MiniPong), 1, 1).unwrap().save(&pong_path).unwrap();
    assert!(run_experiment(&pretrained_config(&pong_path), root.path()).is_err());
}

#[test]
fn strict_reruns_write_identical_csvs() {
    let cfg = small("again", EnvId::MiniPacman, Variant::A3cTbSil, vec![7, 8]);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&cfg, a.path()).unwrap();
    let rb = run_experiment(&cfg, b.path()).unwrap();
    assert_eq!(ra.curve.rows.len(), 3);
    let read = |dir: &Path| fs::read(dir.join(AGGREGATE_CSV)).unwrap();
    assert_eq!(read(&ra.dir), read(&rb.dir));
    for seed in [7, 8] {
        assert_eq!(read(&seed_dir(&ra.dir, seed)), read(&seed_dir(&rb.dir, seed)));
    }
}

#[test]
fn report_over_two_runs() {
    let root = tempfile::tempdir().unwrap();
    let one = run_experiment(&small("one", EnvId::MiniPong, Variant::A3c, vec![1, 2]), root.path()).unwrap();
    let two = run_experiment(&small("two", EnvId::MiniPong, Variant::A3cTb, vec![1, 2]), root.path()).unwrap();
    let out = root.path().join("report");
    let summary = emit_report(&[one.dir.clone(), two.dir.clone()], &out).unwrap();
    let svg = fs::read_to_string(out.join("report.svg")).unwrap();
    assert_eq!(svg.matches("class=\"legend\"").count(), 2);
    assert!(summary.lines().any(|l| l.starts_with("A3C:")));
    assert!(summary.lines().any(|l| l.starts_with("A3CTB:")));
    // random play never reaches 80% of the scripted pong score in 200 steps
    assert!(summary.contains("not reached"), "{summary}");

    let pacman = run_experiment(&small("three", EnvId::MiniPacman, Variant::A3c, vec![1]), root.path()).unwrap();
    assert!(emit_report(&[one.dir, pacman.dir], &out).is_err());
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        cfg.resolve().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert_eq!(n, 4);
}
