use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gla::frames::{Label, Split};
use gla::reports::{
    cmd_ablate, cmd_eval, cmd_explain, cmd_synth, cmd_train, resolve_config, AblateArgs, EvalArgs, ExplainArgs,
    ExplainSettings, SynthArgs, TrainArgs, TrainOverrides, HELD_OUT,
};
use gla::rf_synth::SynthMode;

#[derive(Parser)]
#[command(name = "gla", version, about = "Text-anchored VAE and latent Grad-CAM for radar presence detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic RA dataset.
    Synth {
        #[arg(long, default_value_t = 200)]
        n_empty: usize,
        #[arg(long, default_value_t = 200)]
        n_person: usize,
        #[arg(long, default_value = "image")]
        mode: SynthMode,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// `64` or `64x48` (height x width).
        #[arg(long, default_value = "64", value_parser = parse_resolution)]
        resolution: [usize; 2],
    },
    /// Train the aligned VAE.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Render Grad-CAM panel figures and metric rows.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Frame ids; defaults to every held-out frame.
        #[arg(long = "frame", num_args = 1..)]
        frames: Vec<String>,
        /// Class to explain; defaults to each frame's label.
        #[arg(long)]
        target: Option<Label>,
        #[arg(long, default_value_t = 8)]
        n_perturbations: usize,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long, default_value_t = 0.15)]
        quantile: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare radar prompts against unrelated prompts.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse a trained baseline checkpoint.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, num_args = 2)]
        ablation_prompts: Option<Vec<String>>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Alignment accuracy and ELBO terms on dataset splits.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Defaults to val and test.
        #[arg(long = "split", num_args = 1..)]
        splits: Vec<Split>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainFlags {
    /// JSON file overriding any training configuration field.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    lambda_a: Option<f64>,
    #[arg(long)]
    lambda_k: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, num_args = 2)]
    prompts: Option<Vec<String>>,
}

impl TrainFlags {
    fn resolve(&self) -> gla::Result<gla::trainer::TrainConfig> {
        let o = TrainOverrides {
            max_epochs: self.max_epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            lambda_r: self.lambda_r,
            lambda_a: self.lambda_a,
            lambda_k: self.lambda_k,
            seed: self.seed,
            prompts: self.prompts.clone(),
        };
        resolve_config(self.config.as_deref(), &o)
    }
}

fn parse_resolution(s: &str) -> Result<[usize; 2], String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok([parse(h)?, parse(w)?]),
        None => {
            let n = parse(s)?;
            Ok([n, n])
        }
    }
}

fn run(cli: Cli) -> gla::Result<()> {
    match cli.command {
        Command::Synth { n_empty, n_person, mode, seed, out, resolution } => {
            cmd_synth(&SynthArgs { n_empty, n_person, mode, seed, out, resolution })?;
        }
        Command::Train { manifest, out, train } => {
            cmd_train(&TrainArgs { manifest, out, config: train.resolve()? })?;
        }
        Command::Explain { checkpoint, manifest, frames, target, n_perturbations, sigma, quantile, out } => {
            let settings = ExplainSettings { n_perturbations, sigma, quantile, target, render: true };
            cmd_explain(&ExplainArgs { checkpoint, manifest, frame_ids: frames, out, settings })?;
        }
        Command::Ablate { manifest, out, baseline, ablation_prompts, train } => {
            let mut args = AblateArgs { manifest, out, config: train.resolve()?, baseline_checkpoint: baseline, ..Default::default() };
            if let Some(p) = ablation_prompts {
                args.ablation_prompts = p;
            }
            cmd_ablate(&args)?;
        }
        Command::Eval { checkpoint, manifest, splits, out } => {
            let splits = if splits.is_empty() { HELD_OUT.to_vec() } else { splits };
            cmd_eval(&EvalArgs { checkpoint, manifest, splits, out })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
