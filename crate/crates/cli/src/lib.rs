//! `makeup` command-line tool.
//!
//! Exit codes: 0 success, 1 usage, 2 bad or missing input, 3 runtime failure.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, CliResult, EXIT_INPUT, EXIT_RUNTIME, EXIT_USAGE};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "makeup", version, about = "Character makeup generation on a latent diffusion backend")]
pub struct Cli {
    /// Key-value config file; flags take precedence over its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed of the toy backend.
    #[arg(long, global = true)]
    pub backend_seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write procedural faces (with makeup, or bare with --bare).
    SynthFaces(SynthFacesArgs),
    /// Write reference images generated around a random planted style embedding.
    SynthRefs(SynthRefsArgs),
    /// Build pseudo pairs (makeup, bare face, mask) from a directory of makeup photos.
    PrepareData(PrepareDataArgs),
    /// Train the control branch on pseudo pairs.
    TrainMafor(TrainMaforArgs),
    /// Learn a style token from 3 to 5 reference images.
    LearnStyle(LearnStyleArgs),
    /// Apply a learned style to a bare face.
    Generate(GenerateArgs),
    /// Score generated images against references.
    Evaluate(EvaluateArgs),
    /// Generate over a list of values of one parameter with a shared seed.
    Sweep(SweepArgs),
    /// Re-run a command from its run manifest and check its outputs are identical.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SynthFacesArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Write the bare faces instead of the made-up ones.
    #[arg(long)]
    pub bare: bool,
}

#[derive(Debug, Args)]
pub struct SynthRefsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PrepareDataArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub blur_kernel: Option<usize>,
    #[arg(long)]
    pub blur_sigma: Option<f64>,
    /// Directory of precomputed face-parsing label maps ({id}.png).
    #[arg(long)]
    pub label_dir: Option<PathBuf>,
    /// Directory of precomputed bare faces ({id}.png).
    #[arg(long)]
    pub demakeup_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainMaforArgs {
    /// Pair manifest file or the directory containing it.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `full` or `toy` defaults.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub accum: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct LearnStyleArgs {
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `full` or `toy` defaults.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<String>,
    /// `uniform` or `stratified`.
    #[arg(long)]
    pub timesteps: Option<String>,
    #[arg(long)]
    pub init_word: Option<String>,
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub flip: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerationArgs {
    /// Bare face image.
    #[arg(long)]
    pub face: PathBuf,
    /// Style token file.
    #[arg(long)]
    pub style: Option<PathBuf>,
    /// Control branch checkpoint.
    #[arg(long)]
    pub branch: Option<PathBuf>,
    #[arg(short = 'g', long = "guidance")]
    pub guidance: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `ddim` or `ddpm`.
    #[arg(long)]
    pub sampler: Option<String>,
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub size: Option<usize>,
    /// Skip the final image-space blend with the input face.
    #[arg(long)]
    pub no_final_blend: bool,
    /// Skip the per-step latent replacement outside the face.
    #[arg(long)]
    pub no_mask_merge: bool,
    #[arg(long)]
    pub no_control: bool,
    /// Use the plain word "makeup" instead of the learned token.
    #[arg(long)]
    pub no_style: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub gen: GenerationArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the pre-blend image and the blurred mask.
    #[arg(long)]
    pub extras: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub embedder: Option<String>,
    /// `mean` or `max` over reference images.
    #[arg(long)]
    pub aggregate: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub style_name: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub gen: GenerationArgs,
    /// `guidance`, `steps` or `seed`.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let argv: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            let text = e.render().to_string();
            let text = text.trim_end();
            return Err(CliError::usage(text.strip_prefix("error: ").unwrap_or(text)));
        }
    };
    commands::dispatch(cli, argv.get(1..).unwrap_or_default().to_vec())
}
