use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pcmwrite::config::{MasterConfig, Profile};
use pcmwrite::pipeline::{Pipeline, Stage};
use pcmwrite::Error;

#[derive(Parser)]
#[command(name = "pcmwrite", version, about = "Adaptive PCM write-parameter pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Partial JSON config merged over the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Master seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "paper")]
    profile: Profile,
    /// Worker threads. Outputs are identical for any value.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the trace corpus.
    GenTraces,
    /// Simulate every grid point into dataset.csv.
    Sweep,
    /// Fit the three surrogate heads.
    TrainSurrogate,
    /// Held-out MAPE per target.
    EvalSurrogate,
    /// Train the PPO agent against the surrogate-rewarded environment.
    TrainAgent,
    /// Compare the agent, the baseline and the best fixed action on the device model.
    Evaluate,
    /// All stages in order.
    Pipeline,
}

impl Command {
    fn stages(self) -> Vec<Stage> {
        match self {
            Command::GenTraces => vec![Stage::GenTraces],
            Command::Sweep => vec![Stage::Sweep],
            Command::TrainSurrogate => vec![Stage::TrainSurrogate],
            Command::EvalSurrogate => vec![Stage::EvalSurrogate],
            Command::TrainAgent => vec![Stage::TrainAgent],
            Command::Evaluate => vec![Stage::Evaluate],
            Command::Pipeline => Stage::ALL.to_vec(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let cfg = MasterConfig::load(cli.profile, cli.config.as_deref(), cli.seed, cli.out_dir.as_deref());
    let pipeline = match cfg.and_then(|c| Pipeline::new(c, cli.jobs)) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: config: {e}");
            return ExitCode::from(1);
        }
    };
    for stage in cli.command.stages() {
        let started = std::time::Instant::now();
        if let Err(e) = pipeline.run(stage) {
            eprintln!("error: {}: {e}", stage.name());
            return match e {
                Error::MissingArtifact(_) => ExitCode::from(2),
                Error::Config { .. } => ExitCode::from(1),
                _ => ExitCode::from(3),
            };
        }
        eprintln!("{}: done in {:.1?}", stage.name(), started.elapsed());
    }
    ExitCode::SUCCESS
}
