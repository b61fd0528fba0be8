use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use demo_server::{replay_archive, DemoServer, ServerConfig};
use demolab::a3c::evaluate_policy;
use demolab::archive::DemoArchive;
use demolab::env::{EnvId, EnvSpec};
use demolab::gradcheck::{check_seeds, Objective};
use demolab::net::{NetConfig, PolicyValueNet};
use demolab::pretrain::{build_pretrain_dataset, run_pretraining, save_pretrained, PretrainConfig, PretrainMode};
use demolab::scripted::{reference_archive, scripted_archive};
use demolab_harness::run::{load_trained, run_root, RUN_ROOT_VAR};
use demolab_harness::{emit_report, run_experiment, ExperimentConfig, Result};

#[derive(Parser)]
#[command(name = "demolab", version, about = "Actor-critic training from demonstrations on pixel toy games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train a network on a demonstration archive.
    Pretrain(PretrainArgs),
    /// Run an experiment config over its seeds.
    Train(TrainArgs),
    /// Record demonstrations from a browser through the demo server.
    Collect(CollectArgs),
    /// Write scripted-player demonstrations (the reference set by default).
    Fixture(FixtureArgs),
    /// Evaluate a trained checkpoint.
    Eval(EvalArgs),
    /// Plot and summarise finished runs.
    Report(ReportArgs),
    /// Finite-difference check of every training objective.
    Gradcheck(GradcheckArgs),
    /// Replay archived episodes and compare their rewards.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    archive: PathBuf,
    #[arg(long, default_value = "SL_V_AE")]
    mode: PretrainMode,
    #[arg(long, default_value_t = 50_000)]
    updates: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML experiment config.
    config: PathBuf,
    /// Comma-separated seeds, replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    total_steps: Option<u64>,
    #[arg(long)]
    actors: Option<usize>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    parallel_seeds: bool,
    /// Strict single-actor mode with reproducible output.
    #[arg(long)]
    strict: bool,
    #[arg(long, env = RUN_ROOT_VAR)]
    run_root: Option<PathBuf>,
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long, default_value = "minipacman")]
    env: EnvId,
    /// Archive that saved episodes are appended to.
    #[arg(long)]
    archive: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Directory of browser assets; defaults to the bundled fallback page.
    #[arg(long)]
    assets: Option<PathBuf>,
    #[arg(long, default_value_t = demo_server::DEFAULT_TICK_HZ)]
    tick_hz: f64,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
    /// Other env or size than the reference set.
    #[arg(long)]
    env: Option<EnvId>,
    #[arg(long, default_value_t = 8)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// A seed's `checkpoint` directory.
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories to put in one chart.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = demolab::gradcheck::DEFAULT_TOLERANCE)]
    tolerance: f64,
}

#[derive(Args)]
struct ReplayArgs {
    archive: PathBuf,
    /// Only this episode.
    #[arg(long)]
    episode: Option<usize>,
}

fn pretrain(a: PretrainArgs) -> Result<bool> {
    let archive = DemoArchive::load(&a.archive)?;
    let spec = archive.env_spec();
    let config = PretrainConfig {
        mode: a.mode,
        updates: a.updates,
        batch_size: a.batch_size,
        ..Default::default()
    };
    config.validate()?;
    let dataset = build_pretrain_dataset(&archive, &config.return_spec(), config.holdout_fraction, a.seed)?;
    println!("{} training samples, {} held out (episodes {:?})", dataset.train.len(), dataset.holdout.len(), dataset.holdout_episodes);
    let net = PolicyValueNet::new(NetConfig::standard(spec.num_actions()))?;
    let outcome = run_pretraining(&net, &dataset, &config, a.seed)?;
    for row in &outcome.trace {
        println!(
            "update {:>6}  loss {:>10.4}  holdout ce {:>8}  accuracy {:>6}  mse {:>9}",
            row.update,
            row.train_loss,
            row.holdout_ce.map_or("-".into(), |v| format!("{v:.4}")),
            row.holdout_accuracy.map_or("-".into(), |v| format!("{v:.3}")),
            row.reconstruction_mse.map_or("-".into(), |v| format!("{v:.5}")),
        );
    }
    save_pretrained(&a.out, &net, &outcome)?;
    println!("checkpoint written to {}", a.out.display());
    Ok(true)
}

fn train(a: TrainArgs) -> Result<bool> {
    let mut config = ExperimentConfig::load(&a.config)?;
    if let Some(seeds) = a.seeds {
        config.seeds = seeds;
    }
    if let Some(n) = a.total_steps {
        config.train.total_steps = n;
    }
    if let Some(k) = a.actors {
        config.train.actors = k;
    }
    if let Some(name) = a.name {
        config.name = name;
    }
    if a.strict {
        config.train.strict = true;
        config.train.actors = 1;
    }
    config.parallel_seeds |= a.parallel_seeds;
    let root = a.run_root.unwrap_or_else(run_root);
    let outcome = run_experiment(&config, &root)?;
    println!("{}: final mean {:.2}; results in {}", outcome.config.label(), outcome.curve.final_mean(), outcome.dir.display());
    Ok(true)
}

fn collect(a: CollectArgs) -> Result<bool> {
    let mut config = ServerConfig::new(EnvSpec::new(a.env), a.seed, a.archive);
    if let Some(assets) = a.assets {
        config.assets = assets;
    }
    config.tick_hz = a.tick_hz;
    let runtime = tokio::runtime::Runtime::new()?;
    let summary = runtime.block_on(async {
        let server = DemoServer::bind(a.addr.as_str(), config).await?;
        println!("open http://{}/ in a browser", server.local_addr()?);
        server.run().await
    })?;
    println!("{} episodes ({} states) saved", summary.episodes_saved, summary.states_saved);
    Ok(true)
}

fn fixture(a: FixtureArgs) -> Result<bool> {
    let archive = match a.env {
        None => reference_archive()?,
        Some(env) => scripted_archive(&EnvSpec::new(env), a.episodes, a.seed)?,
    };
    archive.save(&a.out)?;
    println!(
        "{} episodes, {} states, mean score {:.2} written to {}",
        archive.len(),
        archive.total_states(),
        archive.manifest.episodes.iter().map(|e| e.score).sum::<f64>() / archive.len() as f64,
        a.out.display()
    );
    Ok(true)
}

fn eval(a: EvalArgs) -> Result<bool> {
    let (info, params) = load_trained(&a.checkpoint)?;
    let net = PolicyValueNet::new(info.net.clone())?;
    let r = evaluate_policy(&net, &params, &EnvSpec::new(info.env), a.episodes, a.seed)?;
    println!("{} (seed {}, {} steps): mean {:.2} over {:?}", info.label, info.seed, info.steps, r.mean(), r.scores);
    Ok(true)
}

fn report(a: ReportArgs) -> Result<bool> {
    print!("{}", emit_report(&a.runs, &a.out)?);
    Ok(true)
}

fn gradcheck(a: GradcheckArgs) -> Result<bool> {
    let mut ok = true;
    for objective in Objective::ALL {
        let worst = check_seeds(objective, a.seeds, a.tolerance)?;
        let pass = worst < a.tolerance;
        ok &= pass;
        println!("{:<18} max relative error {worst:.3e} over {} seeds: {}", objective.to_string(), a.seeds, if pass { "ok" } else { "FAILED" });
    }
    Ok(ok)
}

fn replay(a: ReplayArgs) -> Result<bool> {
    let archive = DemoArchive::load(&a.archive)?;
    let indices: Vec<usize> = match a.episode {
        Some(i) => vec![i],
        None => (0..archive.len()).collect(),
    };
    let mut ok = true;
    for i in indices {
        let r = replay_archive(&archive, i)?;
        let matches = r.matches(&archive, i);
        ok &= matches;
        println!("episode {i}: {} steps, score {}: {}", r.rewards.len(), r.score, if matches { "bit-equal" } else { "MISMATCH" });
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Pretrain(a) => pretrain(a),
        Command::Train(a) => train(a),
        Command::Collect(a) => collect(a),
        Command::Fixture(a) => fixture(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Replay(a) => replay(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
