use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vpp_sim::config::ScenarioConfig;
use vpp_sim::harness::{self, Policy};
use vpp_sim::output::{self, Checkpoint, Manifest};
use vpp_sim::{report, HarnessError};

#[derive(Parser)]
#[command(name = "vpp-sim", about = "Safe reinforcement-learning bidding of a virtual power plant")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMode {
    PriceTaker,
    NoVpp,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write its checkpoint and training logs.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed_set: Option<String>,
        #[arg(long, default_value = "results/train")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint greedily on held-out days.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value = "results/eval")]
        out: PathBuf,
    },
    /// Build summary tables from one or more results directories.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a fixed rule instead of an agent.
    Baseline {
        #[arg(long, value_enum)]
        mode: BaselineMode,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value = "results/baseline")]
        out: PathBuf,
    },
}

fn train(config: &Path, seed_set: Option<&str>, out: &Path) -> Result<(), HarnessError> {
    let mut cfg = ScenarioConfig::from_file(config)?;
    if let Some(name) = seed_set {
        cfg = cfg.with_seed_set(name)?;
    }
    let data = cfg.load_data()?;
    let label = cfg.label();
    let result = harness::train(&cfg, &data, |m, agent| {
        Checkpoint::new(label.clone(), m, agent.clone()).save(&output::periodic_checkpoint(out, m))
    })?;
    let mut manifest = Manifest::new("train", Policy::Agent.name(), cfg.episodes.train, &cfg, &data.load_label);
    let ck_path = out.join(output::CHECKPOINT_FILE);
    manifest.checkpoint = Some(ck_path.clone());
    manifest.write(out)?;
    output::write_run(out, &result.log)?;
    Checkpoint::new(label, cfg.episodes.train, result.agent).save(&ck_path)?;
    eprintln!(
        "trained {} episodes, {} updates ({} skipped), {} aborted",
        cfg.episodes.train,
        result.updates,
        result.skipped_updates,
        result.log.aborts().count()
    );
    result.log.check_aborts()
}

fn evaluate(
    config: &Path,
    policy: Policy,
    checkpoint: Option<&Path>,
    episodes: Option<usize>,
    threads: usize,
    out: &Path,
) -> Result<(), HarnessError> {
    let cfg = ScenarioConfig::from_file(config)?;
    let data = cfg.load_data()?;
    let ck = checkpoint.map(Checkpoint::load).transpose()?;
    if let Some(ck) = &ck {
        ck.check_dim(harness::build_env(&cfg, &data, cfg.env.variant)?.state_dim())?;
    }
    let episodes = episodes.unwrap_or(cfg.episodes.eval);
    let command = if policy == Policy::Agent { "eval" } else { "baseline" };
    let log = harness::evaluate(&cfg, &data, policy, ck.as_ref().map(|c| &c.agent), episodes, threads)?;
    let mut manifest = Manifest::new(command, policy.name(), episodes, &cfg, &data.load_label);
    manifest.checkpoint = checkpoint.map(Path::to_path_buf);
    manifest.write(out)?;
    output::write_run(out, &log)?;
    log.check_aborts()
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train { config, seed_set, out } => train(&config, seed_set.as_deref(), &out),
        Command::Eval { checkpoint, config, episodes, threads, out } => {
            evaluate(&config, Policy::Agent, Some(&checkpoint), episodes, threads, &out)
        }
        Command::Baseline { mode, config, episodes, threads, out } => {
            let policy = match mode {
                BaselineMode::PriceTaker => Policy::PriceTaker,
                BaselineMode::NoVpp => Policy::NoVpp,
            };
            evaluate(&config, policy, None, episodes, threads, &out)
        }
        Command::Report { input, out } => {
            let runs = report::discover(&input)?;
            report::write_report(&runs, out.as_deref().unwrap_or(&input))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
