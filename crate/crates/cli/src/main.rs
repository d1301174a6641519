//! `turbo-gep`: train, evaluate and sweep GEPNet/EP turbo receivers.
//!
//! Every flag can also be set through an environment variable named
//! `TURBO_GEP_<FLAG>` (e.g. `TURBO_GEP_THREADS=4`); flags win over the
//! environment.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use turbo_gep::experiment::{run, Command, ExperimentConfig, ExperimentError, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "turbo-gep", version, about = "MIMO turbo-receiver laboratory (EP, GEPNet, EXT-GEPNet)")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment file (TOML). Defaults apply when omitted.
    #[arg(long, env = "TURBO_GEP_CONFIG")]
    config: Option<PathBuf>,
    /// Root seed; overrides `system.seed` and `training.seed`.
    #[arg(long, env = "TURBO_GEP_SEED")]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, env = "TURBO_GEP_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "TURBO_GEP_THREADS")]
    threads: Option<usize>,
    /// Weight archive to read (or to write, for train-step1).
    #[arg(long, env = "TURBO_GEP_ARCHIVE")]
    archive: Option<PathBuf>,
    /// Per-epoch progress on stderr.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Step 1: train the a-posteriori model on mixed a-priori information.
    TrainStep1 {
        #[command(flatten)]
        common: Common,
        /// Train without a-priori information (I_A = 0 only).
        #[arg(long)]
        ia0: bool,
    },
    /// Step 2: generate extrinsic labels with the Step-1 model.
    GenExtLabels {
        #[command(flatten)]
        common: Common,
    },
    /// Step 3: fine-tune on extrinsic labels.
    TrainStep3 {
        #[command(flatten)]
        common: Common,
    },
    /// Uncoded detection error rates at each SNR.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Coded IDD error rates per SNR and turbo iteration.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Real-valued multiplication counts.
    Complexity {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig, ExperimentError> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", p.display())))?;
            ExperimentConfig::from_toml(&text)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common, ia_zero) = match cli.command {
        Cmd::TrainStep1 { common, ia0 } => (Command::TrainStep1, common, ia0),
        Cmd::GenExtLabels { common } => (Command::GenExtLabels, common, false),
        Cmd::TrainStep3 { common } => (Command::TrainStep3, common, false),
        Cmd::Evaluate { common } => (Command::Evaluate, common, false),
        Cmd::Sweep { common } => (Command::Sweep, common, false),
        Cmd::Complexity { common } => (Command::Complexity, common, false),
    };
    let opts = RunOptions {
        seed: common.seed,
        out_dir: common.out_dir.clone(),
        threads: common.threads,
        archive: common.archive.clone(),
        ia_zero,
        verbose: common.verbose,
    };
    let result = load_config(common.config.as_ref()).and_then(|cfg| run(cmd, cfg, &opts));
    match result {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("turbo-gep {}: {}", cmd.name(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
