use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qsynth_bench::commands::{self, Options, Suite};
use qsynth_bench::CliError;

#[derive(Parser)]
#[command(name = "qsynth", version, about = "Train and benchmark RL agents for quantum state synthesis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (`key = value` lines with [sections]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed; repetition k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single worker thread.
    #[arg(long)]
    deterministic: bool,
}

impl Common {
    fn options(&self) -> Options {
        Options { out: self.out.clone(), seed: self.seed, deterministic: self.deterministic }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train `repetitions` policies with seeds seed, seed+1, ...
    Train(Common),
    /// Fixed-target benchmark suites.
    Bench {
        #[arg(value_parser = ["basis", "bell"])]
        suite: String,
        #[command(flatten)]
        common: Common,
        /// Evaluate this checkpoint instead of training.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep over sweep.n_list x sweep.lambda_list (x sweep.lr_list for A2C).
    Landscape(Common),
    /// Hardware-efficient ansatz fitted with Adam on seeded random targets.
    Baseline(Common),
    /// Summaries, plot series and SVG charts from run directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Target corpus utilities.
    Targets {
        #[command(subcommand)]
        cmd: TargetsCmd,
    },
    /// Re-run a directory from its manifest and compare metrics byte for byte.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum TargetsCmd {
    /// Write generated targets to a corpus file.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Corpus file to write.
        #[arg(long)]
        file: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Train(c) => {
            let o = c.options();
            let out = commands::cmd_train(commands::load_config(c.config.as_deref(), &o)?, &o)?;
            println!("wrote {}", out.display());
        }
        Cmd::Bench { suite, common, checkpoint } => {
            let o = common.options();
            let suite = if suite == "basis" { Suite::Basis } else { Suite::Bell };
            let cfg = commands::load_config(common.config.as_deref(), &o)?;
            let (out, _) = commands::cmd_bench(suite, cfg, &o, checkpoint.as_deref())?;
            print!("{}", std::fs::read_to_string(out.join(format!("bench_{}.csv", suite.name())))?);
        }
        Cmd::Landscape(c) => {
            let o = c.options();
            let (out, _) = commands::cmd_landscape(commands::load_config(c.config.as_deref(), &o)?, &o)?;
            print!("{}", std::fs::read_to_string(out.join("landscape.csv"))?);
        }
        Cmd::Baseline(c) => {
            let o = c.options();
            let (out, rep) = commands::cmd_baseline(commands::load_config(c.config.as_deref(), &o)?, &o)?;
            println!("mean final fidelity {:.4}, min {:.3e} ({})", rep.mean(), rep.min(), out.display());
        }
        Cmd::Report { dirs, out } => {
            let r = commands::cmd_report(&dirs, &out)?;
            print!("{}", std::fs::read_to_string(r.out.join("summary.txt"))?);
        }
        Cmd::Targets { cmd: TargetsCmd::Export { common, count, file } } => {
            let o = common.options();
            commands::cmd_targets_export(&commands::load_config(common.config.as_deref(), &o)?, count, &file)?;
            println!("wrote {count} targets to {}", file.display());
        }
        Cmd::Replay { manifest, out } => {
            let r = commands::cmd_replay(&manifest, &out)?;
            if !r.mismatched.is_empty() {
                return Err(CliError::Runtime(format!("replay differs in {}", r.mismatched.join(", "))));
            }
            println!("replay identical ({} metric files)", r.compared.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qsynth: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
