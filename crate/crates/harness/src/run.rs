//! Runs one experiment config over its seeds and lays out the run directory:
//!
//! ```text
//! <root>/<name>/config.toml       resolved config, every default spelled out
//! <root>/<name>/curve.csv         aggregate learning curve
//! <root>/<name>/run.log           plain-text log
//! <root>/<name>/seed-<s>/         curve.csv, summary.json, checkpoint/, pretrained/
//! ```

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use demolab::a3c::{train, EvalRow};
use demolab::archive::DemoArchive;
use demolab::net::{NetConfig, PolicyValueNet};
use demolab::pretrain::{build_pretrain_dataset, load_pretrained, run_pretraining, save_pretrained, transfer_weights, PretrainMode};
use ndgrad::ParamSet;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::curve::LearningCurve;
use crate::error::{Error, Result};

pub const RUN_ROOT_VAR: &str = "DEMOLAB_RUN_ROOT";
pub const CONFIG_FILE: &str = "config.toml";
pub const AGGREGATE_CSV: &str = "curve.csv";
pub const LOG_FILE: &str = "run.log";
pub const SEED_SUMMARY: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const PRETRAINED_DIR: &str = "pretrained";

/// `$DEMOLAB_RUN_ROOT`, or `runs` under the working directory.
pub fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed-{seed}"))
}

/// Append-only text log shared by the seeds of a run.
pub struct RunLog {
    file: Mutex<File>,
    start: Instant,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            file: Mutex::new(File::create(path)?),
            start: Instant::now(),
        })
    }

    pub fn line(&self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        log::info!("{msg}");
        let mut f = self.file.lock().unwrap();
        // a log write failure must not abort a long run
        let _ = writeln!(f, "[{:>9.1}s] {msg}", self.start.elapsed().as_secs_f64());
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub mode: PretrainMode,
    pub updates: usize,
    pub holdout_accuracy: Option<f64>,
    pub reconstruction_mse: Option<f64>,
    pub transferred: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub evals: Vec<EvalRow>,
    pub steps: u64,
    pub episodes: u64,
    pub a3c_updates: u64,
    pub sil_updates: u64,
    pub threads: usize,
    pub demo_transitions: usize,
    pub incidents: u64,
    pub pretrain: Option<PretrainSummary>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub curve: LearningCurve,
    pub seeds: Vec<SeedResult>,
}

/// Metadata stored next to trained parameters, enough to rebuild the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedInfo {
    pub label: String,
    pub env: demolab::env::EnvId,
    pub seed: u64,
    pub steps: u64,
    pub net: NetConfig,
}

struct Inputs {
    demos: Option<DemoArchive>,
    checkpoint: Option<(PretrainMode, ParamSet<f32>)>,
}

/// Everything that can be rejected is rejected here, before any training.
fn preflight(cfg: &ExperimentConfig) -> Result<Inputs> {
    let Some(p) = &cfg.pretrain else {
        return Ok(Inputs { demos: None, checkpoint: None });
    };
    if !p.archive.is_file() {
        return Err(Error::Config(format!("demonstration archive {} not found", p.archive.display())));
    }
    let demos = DemoArchive::load(&p.archive)?;
    if demos.env_spec().id != cfg.env {
        return Err(Error::Config(format!(
            "archive {} holds {} episodes, the experiment runs {}",
            p.archive.display(),
            demos.env_spec().id,
            cfg.env
        )));
    }
    if demos.is_empty() {
        return Err(Error::Config(format!("archive {} is empty", p.archive.display())));
    }
    let checkpoint = match &p.checkpoint {
        None => None,
        Some(dir) => {
            let (info, params) = load_pretrained(dir)?;
            if info.mode != p.mode {
                return Err(Error::Config(format!(
                    "checkpoint {} was pre-trained as [{}], config asks for [{}]",
                    dir.display(),
                    info.mode.as_str(),
                    p.mode.as_str()
                )));
            }
            if info.net != cfg.net_config() {
                return Err(Error::Config(format!("checkpoint {} has a different network shape", dir.display())));
            }
            Some((info.mode, params))
        }
    };
    Ok(Inputs {
        demos: Some(demos),
        checkpoint,
    })
}

fn run_seed(cfg: &ExperimentConfig, inputs: &Inputs, run_dir: &Path, seed: u64, log: &RunLog) -> Result<SeedResult> {
    let dir = seed_dir(run_dir, seed);
    fs::create_dir_all(&dir)?;
    let spec = cfg.spec();
    let net = PolicyValueNet::new(cfg.net_config())?;
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    let fresh = net.init::<f32>(seed, false)?;

    let mut pretrain_summary = None;
    let init = match (&cfg.pretrain, &inputs.demos) {
        (Some(p), Some(demos)) => {
            let (mode, pretrained, updates, acc, mse) = match &inputs.checkpoint {
                Some((mode, params)) => (*mode, params.clone(), 0, None, None),
                None => {
                    let dataset = build_pretrain_dataset(demos, &p.settings.return_spec(), p.settings.holdout_fraction, seed)?;
                    log.line(format!(
                        "seed {seed}: pre-training [{}] on {} samples ({} held out), {} updates",
                        p.mode.as_str(),
                        dataset.train.len(),
                        dataset.holdout.len(),
                        p.settings.updates
                    ));
                    let outcome = run_pretraining(&net, &dataset, &p.settings, seed)?;
                    save_pretrained(&dir.join(PRETRAINED_DIR), &net, &outcome)?;
                    let last = outcome.last().clone();
                    log.line(format!(
                        "seed {seed}: pre-training done, holdout accuracy {:?}, reconstruction mse {:?}",
                        last.holdout_accuracy, last.reconstruction_mse
                    ));
                    (outcome.mode, outcome.params, last.update, last.holdout_accuracy, last.reconstruction_mse)
                }
            };
            let (params, manifest) = transfer_weights(&pretrained, mode, &fresh, p.transfer)?;
            log.line(format!("seed {seed}: transferred {}", manifest.transferred.join(" ")));
            pretrain_summary = Some(PretrainSummary {
                mode,
                updates,
                holdout_accuracy: acc,
                reconstruction_mse: mse,
                transferred: manifest.transferred,
            });
            params
        }
        _ => fresh,
    };

    let sil_demos = match (&cfg.pretrain, &inputs.demos) {
        (Some(p), Some(d)) if p.seed_sil_buffer && tc.sil.is_some() => Some(d),
        _ => None,
    };
    log.line(format!(
        "seed {seed}: training {} for {} steps with {} threads ({} actors{})",
        cfg.label(),
        tc.total_steps,
        tc.actors + usize::from(tc.sil.is_some()),
        tc.actors,
        if tc.sil.is_some() { " + 1 SIL learner" } else { "" }
    ));
    let report = train(&net, &spec, &tc, init, sil_demos)?;
    for row in &report.evals {
        let mean = row.scores.iter().sum::<f64>() / row.scores.len() as f64;
        log.line(format!("seed {seed}: step {} eval mean {mean:.2}", row.step));
    }
    log.line(format!(
        "seed {seed}: done, threads={} steps={} episodes={} a3c_updates={} sil_updates={} demo_transitions={} incidents={}",
        report.threads, report.steps, report.episodes, report.a3c_updates, report.sil_updates, report.demo_transitions, report.incidents
    ));

    let info = TrainedInfo {
        label: cfg.label(),
        env: cfg.env,
        seed,
        steps: report.steps,
        net: cfg.net_config(),
    };
    ndgrad::checkpoint::save(&dir.join(CHECKPOINT_DIR), &report.params, report.a3c_updates, serde_json::to_value(&info)?)?;
    let result = SeedResult {
        seed,
        evals: report.evals,
        steps: report.steps,
        episodes: report.episodes,
        a3c_updates: report.a3c_updates,
        sil_updates: report.sil_updates,
        threads: report.threads,
        demo_transitions: report.demo_transitions,
        incidents: report.incidents,
        pretrain: pretrain_summary,
    };
    LearningCurve::from_seed_evals(cfg.label(), &[(seed, result.evals.clone())])?.write_csv(&dir.join(AGGREGATE_CSV))?;
    fs::write(dir.join(SEED_SUMMARY), serde_json::to_string_pretty(&result)?)?;
    Ok(result)
}

/// Resolves `config`, runs every seed under `root/<name>` and writes the aggregate curve.
pub fn run_experiment(config: &ExperimentConfig, root: &Path) -> Result<RunOutcome> {
    let cfg = config.resolve()?;
    let inputs = preflight(&cfg)?;
    let dir = root.join(&cfg.name);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    let log = RunLog::create(&dir.join(LOG_FILE))?;
    log.line(format!("experiment {} ({}) on {}, seeds {:?}", cfg.name, cfg.label(), cfg.env, cfg.seeds));

    let seeds: Vec<SeedResult> = if cfg.parallel_seeds && cfg.seeds.len() > 1 {
        std::thread::scope(|s| {
            let (cfg, inputs, dir, log) = (&cfg, &inputs, &dir, &log);
            let handles: Vec<_> = cfg.seeds.iter().map(|&seed| s.spawn(move || run_seed(cfg, inputs, dir, seed, log))).collect();
            handles.into_iter().map(|h| h.join().expect("seed thread panicked")).collect::<Result<_>>()
        })?
    } else {
        cfg.seeds.iter().map(|&seed| run_seed(&cfg, &inputs, &dir, seed, &log)).collect::<Result<_>>()?
    };

    let per_seed: Vec<(u64, Vec<EvalRow>)> = seeds.iter().map(|r| (r.seed, r.evals.clone())).collect();
    let curve = LearningCurve::from_seed_evals(cfg.label(), &per_seed)?;
    curve.write_csv(&dir.join(AGGREGATE_CSV))?;
    log.line(format!("final mean {:.2} over {} seeds", curve.final_mean(), seeds.len()));
    Ok(RunOutcome {
        dir,
        config: cfg,
        curve,
        seeds,
    })
}

/// Parameters and metadata saved by a finished seed.
pub fn load_trained(dir: &Path) -> Result<(TrainedInfo, ParamSet<f32>)> {
    let (manifest, params) = ndgrad::checkpoint::load::<f32>(dir)?;
    Ok((serde_json::from_value(manifest.metadata)?, params))
}
