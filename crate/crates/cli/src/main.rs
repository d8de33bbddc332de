use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use mdcoop_cli::commands::{self, EvaluateArgs, RunEnd, TranslateArgs};
use mdcoop_cli::CliError;
use mdcoop_core::eval::{ExtractorKind, StyleMode};

/// Progressive multi-domain cooperative image translation.
#[derive(Parser)]
#[command(name = "mdcoop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Diverse,
    Reference,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Diverse,
    Reference,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum Extractor {
    RandomProjection,
    TinyEncoder,
}

#[derive(Subcommand)]
enum Command {
    /// Train every stage of a run described by a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's output_dir.
        #[arg(long, env = "MDCOOP_OUT")]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Save a checkpoint and stop once this many steps are done.
        #[arg(long)]
        halt_after: Option<u64>,
    },
    /// Continue a run from a checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, env = "MDCOOP_OUT")]
        out: Option<PathBuf>,
        #[arg(long)]
        halt_after: Option<u64>,
    },
    /// Translate images with sampled or reference styles.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source images or directories of images.
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "diverse")]
        mode: Mode,
        /// Target domain (name or index) for diverse mode.
        #[arg(long)]
        target: Option<String>,
        /// Reference images for reference mode.
        #[arg(long = "ref", num_args = 1..)]
        references: Vec<PathBuf>,
        /// Domain of the references: one for all, or a comma-separated list.
        #[arg(long)]
        ref_label: Option<String>,
        #[arg(long, default_value_t = 4)]
        num_styles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "MDCOOP_OUT")]
        out: PathBuf,
    },
    /// FID and KID per ordered domain pair on held-out sources.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root; defaults to the one the run was trained on.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        extractor: Option<Extractor>,
        #[arg(long, value_enum, default_value = "both")]
        mode: EvalMode,
        /// Translations per source image.
        #[arg(long)]
        num_styles: Option<usize>,
        /// Score the untrained initialization grown to the checkpoint's level.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "MDCOOP_OUT")]
        out: PathBuf,
    },
    /// Translate held-out images away and back and report the L1 error.
    CycleCheck {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(short, long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "MDCOOP_OUT")]
        out: PathBuf,
    },
    /// Write the synthetic two-domain dataset.
    MakeToyData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        per_domain: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn report_run(end: RunEnd) {
    match end {
        RunEnd::Finished { final_checkpoint, steps } => println!("finished after {steps} steps; final checkpoint {}", final_checkpoint.display()),
        RunEnd::Halted { checkpoint, steps } => println!("halted after {steps} steps; checkpoint {}", checkpoint.display()),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, out, seed, halt_after } => {
            report_run(commands::train(&config, out, seed, halt_after).with_context(|| format!("training with {}", config.display()))?);
        }
        Command::Resume { checkpoint, out, halt_after } => {
            report_run(commands::resume(&checkpoint, out, halt_after).with_context(|| format!("resuming {}", checkpoint.display()))?);
        }
        Command::Translate { checkpoint, inputs, mode, target, references, ref_label, num_styles, seed, out } => {
            let mode = match mode {
                Mode::Diverse => StyleMode::Diverse,
                Mode::Reference => StyleMode::Reference,
            };
            let args = TranslateArgs { checkpoint, inputs, mode, target, references, ref_label, num_styles, seed, out };
            let written = commands::translate(&args)?;
            println!("wrote {} images to {}", written.len(), args.out.display());
        }
        Command::Evaluate { checkpoint, dataset, extractor, mode, num_styles, baseline, seed, out } => {
            let modes = match mode {
                EvalMode::Diverse => vec![StyleMode::Diverse],
                EvalMode::Reference => vec![StyleMode::Reference],
                EvalMode::Both => vec![StyleMode::Diverse, StyleMode::Reference],
            };
            let extractor = extractor.map(|e| match e {
                Extractor::RandomProjection => ExtractorKind::RandomProjection,
                Extractor::TinyEncoder => ExtractorKind::TinyEncoder,
            });
            let args = EvaluateArgs { checkpoint, dataset, extractor, modes, num_styles, baseline, seed, out };
            for r in commands::evaluate(&args)? {
                println!("{:<24} {:<40} {:>12.6}  n={} [{}]", r.metric, r.domain_pair, r.value, r.n, r.extractor_id);
            }
        }
        Command::CycleCheck { checkpoint, dataset, n, seed, out } => {
            for s in commands::cycle_check(&checkpoint, dataset.as_deref(), n, seed, &out)? {
                println!("{:<40} n={:<4} mean L1 {:.6}", s.pair, s.n, s.mean_l1);
            }
        }
        Command::MakeToyData { out, per_domain, seed } => {
            let m = commands::make_toy_data(&out, per_domain, seed)?;
            println!("wrote {} images in {} domains to {}", m.num_images(), m.num_domains(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map(CliError::exit_code).unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}
