//! `lsvc`: synthesise data, train both stages, convert and evaluate.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lsvc_core::{Config, SvcError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] SvcError),
    #[error("stage ordering: {0}")]
    StageOrder(String),
    #[error("invalid usage: {0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => e.exit_code() as u8,
            CliError::StageOrder(_) => 3,
            CliError::Usage(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(SvcError::Io(e))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Default,
    Smoke,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScenarioArg {
    Seen,
    Unseen,
    Both,
}

#[derive(Debug, Parser)]
#[command(name = "lsvc", version, about = "Latent-diffusion singing voice conversion")]
pub struct Cli {
    /// TOML config file; missing keys take preset values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base values used when no config file is given.
    #[arg(long, global = true, value_enum, default_value = "default")]
    pub preset: Preset,
    /// Override a config key, e.g. `--set vae_train.steps=200`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output root. Defaults to `paths.out_dir`, or `$LSVC_OUT` when set.
    #[arg(long, global = true)]
    pub out_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic singer corpus and its manifest.
    SynthData {
        /// Output directory [default: <root>/data].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain the speaker encoder, then the VAE and content encoder.
    TrainVae {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Checkpoint path [default: <root>/vae.ckpt]. Resumes if it exists.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ignore an existing checkpoint and start over.
        #[arg(long)]
        fresh: bool,
        /// Save and exit after this many steps; rerun to continue.
        #[arg(long, value_name = "STEPS")]
        stop_after: Option<usize>,
    },
    /// Train the latent denoiser against a frozen VAE.
    TrainLdm {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        vae: Option<PathBuf>,
        /// Checkpoint path [default: <root>/ldm.ckpt]. Resumes if it exists.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        fresh: bool,
        #[arg(long, value_name = "STEPS")]
        stop_after: Option<usize>,
    },
    /// Convert a source clip to the singer of the reference clips.
    Convert {
        #[arg(long)]
        source: PathBuf,
        /// Target singer reference clip. Repeatable.
        #[arg(long = "ref", required = true)]
        refs: Vec<PathBuf>,
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long)]
        ldm: Option<PathBuf>,
        /// Guidance weight.
        #[arg(long, default_value_t = 0.3)]
        w: f64,
        /// Sampling seed [default: config seed].
        #[arg(long)]
        seed: Option<u64>,
        /// Output WAV; a `.json` sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Source F0 contour sidecar replacing extraction.
        #[arg(long)]
        f0: Option<PathBuf>,
        /// Content feature sidecar replacing the content encoder.
        #[arg(long)]
        content: Option<PathBuf>,
        /// Speaker embedding sidecar replacing the reference embedding.
        #[arg(long)]
        speaker: Option<PathBuf>,
    },
    /// Convert every held-out pair and report similarity and F0 metrics.
    Evaluate {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long)]
        ldm: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 0.3)]
        w: f64,
        /// Report directory [default: <root>/eval].
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Resolved configuration and output root.
pub struct Context {
    pub config: Config,
    pub root: PathBuf,
}

impl Context {
    fn from_cli(cli: &Cli) -> CliResult<Self> {
        let base = match (&cli.config, cli.preset) {
            (Some(p), _) => Config::load(p)?,
            (None, Preset::Default) => Config::default(),
            (None, Preset::Smoke) => Config::smoke(),
        };
        let config = base.with_overrides(&cli.overrides)?;
        config.validate()?;
        let root = cli
            .out_root
            .clone()
            .or_else(|| std::env::var_os("LSVC_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(&config.paths.out_dir));
        Ok(Self { config, root })
    }

    pub fn manifest(&self, p: &Option<PathBuf>) -> PathBuf {
        p.clone().unwrap_or_else(|| self.root.join("data").join("manifest.json"))
    }

    pub fn vae(&self, p: &Option<PathBuf>) -> PathBuf {
        p.clone().unwrap_or_else(|| self.root.join("vae.ckpt"))
    }

    pub fn ldm(&self, p: &Option<PathBuf>) -> PathBuf {
        p.clone().unwrap_or_else(|| self.root.join("ldm.ckpt"))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let ctx = Context::from_cli(&cli)?;
    match &cli.command {
        Command::SynthData { out } => commands::synth_data(&ctx, out),
        Command::TrainVae {
            manifest,
            out,
            fresh,
            stop_after,
        } => commands::train_vae(
            &ctx,
            &ctx.manifest(manifest),
            &ctx.vae(out),
            *fresh,
            *stop_after,
        ),
        Command::TrainLdm {
            manifest,
            vae,
            out,
            fresh,
            stop_after,
        } => commands::train_ldm(
            &ctx,
            &ctx.manifest(manifest),
            &ctx.vae(vae),
            &ctx.ldm(out),
            *fresh,
            *stop_after,
        ),
        Command::Convert {
            source,
            refs,
            vae,
            ldm,
            w,
            seed,
            out,
            f0,
            content,
            speaker,
        } => commands::convert(
            &ctx,
            &commands::ConvertArgs {
                source,
                refs,
                vae: &ctx.vae(vae),
                ldm: &ctx.ldm(ldm),
                w: *w,
                seed: seed.unwrap_or(ctx.config.seed),
                out,
                f0: f0.as_deref(),
                content: content.as_deref(),
                speaker: speaker.as_deref(),
            },
        ),
        Command::Evaluate {
            manifest,
            vae,
            ldm,
            scenario,
            w,
            out,
        } => commands::evaluate(
            &ctx,
            &ctx.manifest(manifest),
            &ctx.vae(vae),
            &ctx.ldm(ldm),
            *scenario,
            *w,
            &out.clone().unwrap_or_else(|| ctx.root.join("eval")),
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
