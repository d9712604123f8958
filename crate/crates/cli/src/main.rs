use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crackprop_cli::commands::{self, Ctx};
use crackprop_cli::config::parse_list;
use crackprop_cli::{CliError, RunConfig};

#[derive(Parser)]
#[command(name = "crackprop", version, about = "Crack propagation measurement from speckle image pairs")]
struct Cli {
    /// `section.key = value` file applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic speckle sequences with exact ground truth.
    Synth {
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Label pairs by DIC with temporal correction.
    Label {
        #[arg(long)]
        manifest: PathBuf,
        /// Opening threshold in pixels.
        #[arg(long)]
        threshold: Option<f64>,
    },
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        channel_scale: Option<f64>,
        /// Initial weights instead of a fresh seeded init.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Edge probability maps for every pair.
    Infer {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        channel_scale: Option<f64>,
    },
    /// ODS/OIS and the precision-recall curve.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Re-evaluate under Gaussian image noise.
    Noise {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Comma-separated standard deviations in gray levels.
        #[arg(long)]
        sigma: Option<String>,
        #[arg(long)]
        channel_scale: Option<f64>,
    },
    /// Crack front speed per sequence.
    Speed {
        #[arg(long)]
        manifest: PathBuf,
        /// Use thresholded predictions instead of ground truth.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Write the effective configuration.
    Config,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.verbosity = cfg.verbosity.max(cli.verbose);
    match &cli.command {
        Command::Synth { frames, size } => {
            cfg.synth.frames = frames.unwrap_or(cfg.synth.frames);
            cfg.synth.size = size.unwrap_or(cfg.synth.size);
        }
        Command::Label { threshold, .. } => {
            cfg.label.threshold = threshold.unwrap_or(cfg.label.threshold);
        }
        Command::Train {
            epochs, channel_scale, ..
        } => {
            cfg.train.epochs = epochs.unwrap_or(cfg.train.epochs);
            cfg.network.channel_scale = channel_scale.unwrap_or(cfg.network.channel_scale);
        }
        Command::Infer { channel_scale, .. } => {
            cfg.network.channel_scale = channel_scale.unwrap_or(cfg.network.channel_scale);
        }
        Command::Noise {
            sigma, channel_scale, ..
        } => {
            if let Some(s) = sigma {
                cfg.noise_sigmas = parse_list(s).map_err(CliError::Usage)?;
            }
            cfg.network.channel_scale = channel_scale.unwrap_or(cfg.network.channel_scale);
        }
        Command::Speed { threshold, .. } => {
            cfg.speed.threshold = threshold.unwrap_or(cfg.speed.threshold);
        }
        Command::Eval { .. } | Command::Config => {}
    }
    let ctx = Ctx::new(&cli.out, cfg.verbosity)?;
    commands::record_config(&ctx, &cfg)?;
    match cli.command {
        Command::Synth { .. } => {
            let m = commands::cmd_synth(&ctx, &cfg)?;
            println!("{}", m.display());
        }
        Command::Label { manifest, .. } => {
            let m = commands::cmd_label(&ctx, &cfg, &manifest)?;
            println!("{}", m.display());
        }
        Command::Train { manifest, weights, .. } => {
            let w = commands::cmd_train(&ctx, &cfg, &manifest, weights.as_deref())?;
            println!("{}", w.display());
        }
        Command::Infer { manifest, weights, .. } => {
            let p = commands::cmd_infer(&ctx, &cfg, &manifest, &weights)?;
            println!("{}", p.display());
        }
        Command::Eval { manifest, predictions } => {
            let r = commands::cmd_eval(&ctx, &manifest, &predictions)?;
            println!("ods_f1 {:.6} ois_f1 {:.6}", r.ods, r.ois);
        }
        Command::Noise { manifest, weights, .. } => {
            for (sigma, ods, ois) in commands::cmd_noise(&ctx, &cfg, &manifest, &weights)? {
                println!("sigma {sigma} ods_f1 {ods:.6} ois_f1 {ois:.6}");
            }
        }
        Command::Speed {
            manifest, predictions, ..
        } => {
            for (id, mean) in commands::cmd_speed(&ctx, &cfg, &manifest, predictions.as_deref())? {
                println!("{id} {mean:.6} mm/s");
            }
        }
        Command::Config => print!("{}", cfg.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
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
