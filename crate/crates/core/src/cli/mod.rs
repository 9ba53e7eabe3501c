//! Command-line front end. Every subcommand is also callable as a function.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_enhance, cmd_gradcheck, cmd_report, cmd_spans, cmd_synth, cmd_train, ReportRow};

use crate::error::{Error, Result};
use crate::kv::KvConfig;
use crate::model::{ModelConfig, Variant};
use crate::train::TrainConfig;

#[derive(Debug, Parser)]
#[command(name = "dynspan", version, about = "Causal streaming echo cancellation and noise suppression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Model and training options shared by several subcommands. Flags
/// override values read from `--config`.
#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    /// Text config of `key = value` lines (model and training keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest attention span in frames.
    #[arg(long)]
    pub tw: Option<usize>,
    /// Mask ramp length in frames.
    #[arg(long)]
    pub ramp: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes (1:1:5 FST:NST:DT) as WAV triples plus labels.
    Synth {
        /// Scene spec (`key = value` lines); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Preset time-variance condition, or `all` for every preset.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a scene directory.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path; the report goes to `<out>.csv`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Continue from the checkpoint at `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Enhance a recording; without `--reference` only noise is suppressed.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mic: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Process frame by frame with bounded state.
        #[arg(long)]
        streaming: bool,
    },
    /// Dump attention spans and attention rows of selected frames.
    Spans {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mic: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Comma-separated frame indices.
        #[arg(long, value_delimiter = ',')]
        frames: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare checkpoints per scenario: ERLE, segmental SNR and MACs.
    Report {
        #[arg(long = "ckpt", required = true, num_args = 1..)]
        ckpts: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// CSV output; the text table is printed.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check analytic gradients against finite differences on a tiny model.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
    },
}

impl CommonArgs {
    fn kv(&self) -> Result<KvConfig> {
        let mut kv = match &self.config {
            Some(p) => {
                if !p.is_file() {
                    return Err(Error::Config(format!("config file {} not found", p.display())));
                }
                KvConfig::load(p)?
            }
            None => KvConfig::default(),
        };
        let allowed: Vec<&str> = ModelConfig::KEYS.iter().chain(&TrainConfig::KEYS).copied().collect();
        kv.reject_unknown(&allowed)?;
        if let Some(v) = &self.variant {
            kv.set("variant", v.parse::<Variant>()?);
        }
        if let Some(s) = self.seed {
            kv.set("seed", s);
        }
        if let Some(t) = self.tw {
            kv.set("tw", t);
        }
        if let Some(r) = self.ramp {
            kv.set("ramp", r);
        }
        Ok(kv)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::from_kv(&self.kv()?)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        TrainConfig::from_kv(&self.kv()?)
    }
}

fn require(path: &std::path::Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

/// Runs one parsed command, printing a short summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            spec,
            scenario,
            out,
            count,
            seed,
        } => {
            if let Some(p) = &spec {
                require(p, "scene spec")?;
            }
            let dirs = cmd_synth(spec.as_deref(), scenario.as_deref(), &out, count, seed)?;
            println!("wrote {} scenes to {}", dirs.len(), out.display());
        }
        Command::Train {
            common,
            data,
            out,
            epochs,
            batch_size,
            lr,
            resume,
        } => {
            require(&data, "data directory")?;
            if resume {
                require(&out, "checkpoint")?;
            }
            let model_cfg = common.model_config()?;
            let mut cfg = common.train_config()?;
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = b;
            }
            if let Some(l) = lr {
                cfg.learning_rate = l;
            }
            let report = cmd_train(model_cfg, &data, &out, cfg, resume)?;
            println!(
                "{}: loss {:.4} -> {:.4} over {} epochs; checkpoint {}",
                report.variant,
                report.initial_loss,
                report.final_loss,
                report.epoch_losses.len(),
                out.display()
            );
        }
        Command::Enhance {
            ckpt,
            mic,
            reference,
            out,
            streaming,
        } => {
            require(&ckpt, "checkpoint")?;
            require(&mic, "mic recording")?;
            if let Some(r) = &reference {
                require(r, "reference recording")?;
            }
            let w = cmd_enhance(&ckpt, &mic, reference.as_deref(), &out, streaming)?;
            println!("wrote {} samples to {}", w.len(), out.display());
        }
        Command::Spans {
            ckpt,
            mic,
            reference,
            frames,
            out,
        } => {
            require(&ckpt, "checkpoint")?;
            require(&mic, "mic recording")?;
            if let Some(r) = &reference {
                require(r, "reference recording")?;
            }
            let trace = cmd_spans(&ckpt, &mic, reference.as_deref(), &frames, &out)?;
            println!("{} frames, {} attention modules; wrote {}", trace.frames, trace.modules.len(), out.display());
        }
        Command::Report { ckpts, data, out } => {
            for c in &ckpts {
                require(c, "checkpoint")?;
            }
            require(&data, "data directory")?;
            let (_, table) = cmd_report(&ckpts, &data, &out)?;
            print!("{table}");
        }
        Command::Gradcheck { common } => {
            let report = cmd_gradcheck(&common)?;
            print!("{}", report.to_text());
            if !report.passed() {
                return Err(Error::Metric("gradient check failed".into()));
            }
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors go to stderr as `error: <message>`.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
