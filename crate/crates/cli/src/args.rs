//! Flag definitions and the optional TOML run file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::exit::{Code, Coded};

#[derive(Debug, Parser)]
#[command(
    name = "caap",
    version,
    about = "Patch attribution for Vision Transformers by activation patching"
)]
pub struct Cli {
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true, env = "CAAP_THREADS")]
    pub threads: Option<usize>,

    /// TOML file with run settings; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded toy model as a VITW1 container.
    GenModel(GenModelArgs),
    /// Write a planted-signal image, its blank, and the signal mask.
    GenPlanted(GenPlantedArgs),
    /// Compute an attribution map.
    Attribute(AttributeArgs),
    /// Score a map with faithfulness, localization, and compactness metrics.
    Eval(EvalArgs),
    /// Sweep one design axis and score every setting.
    Ablate(AblateArgs),
    /// Per-layer attention grouping around object masks.
    AttnStats(AttnStatsArgs),
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 4)]
    pub grid: usize,
    #[arg(long, default_value_t = 4)]
    pub patch_px: usize,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 2.0)]
    pub mlp_ratio: f32,
    #[arg(long, default_value_t = 1.0)]
    pub weight_scale: f32,
}

#[derive(Debug, Args)]
pub struct GenModelArgs {
    #[command(flatten)]
    pub toy: ToyArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenPlantedArgs {
    #[command(flatten)]
    pub toy: ToyArgs,
    /// Patch index that receives the texture.
    #[arg(long)]
    pub patch: usize,
    /// Image with the planted patch (`.png`, otherwise P2).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub blank_out: Option<PathBuf>,
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlankKind {
    Black,
    White,
    Mean,
    Noisy,
    Blurnoisy,
}

/// Settings shared by every command that runs the model.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub blank: Option<BlankKind>,
    /// Target class; defaults to the model's top class on the image.
    #[arg(long)]
    pub class: Option<usize>,
    /// naive | parallel | approx | input-insert | input-delete
    #[arg(long)]
    pub mode: Option<String>,
    /// nopad | box<r> | manhattan<r>
    #[arg(long)]
    pub select: Option<String>,
    /// `auto` or `a..b`, 1-based and inclusive.
    #[arg(long)]
    pub layers: Option<String>,
    /// Seed for the noisy blanks.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Map file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional patch-constant heatmap (`.png`, otherwise P2).
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// Comma-separated subset of del,ins,aupr,pg,entropy,gini.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    /// Gray level that deleted patches are set to.
    #[arg(long)]
    pub reference: Option<f32>,
    /// Box-blur width for the insertion start image.
    #[arg(long)]
    pub blur_kernel: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Report file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for deletion.csv and insertion.csv.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Blank,
    Select,
    Layers,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub axis: Axis,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Table (CSV).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttnStatsArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// One object mask per flag.
    #[arg(long = "mask", required = true)]
    pub masks: Vec<PathBuf>,
    /// Table (CSV).
    #[arg(long)]
    pub out: PathBuf,
}

/// Keys accepted in `--config`. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    pub model: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub blank: Option<BlankKind>,
    pub class: Option<usize>,
    pub mode: Option<String>,
    pub select: Option<String>,
    pub layers: Option<String>,
    pub seed: Option<u64>,
    pub metrics: Option<Vec<String>>,
    pub reference: Option<f32>,
    pub blur_kernel: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Coded::new(Code::Io, format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| {
            let at = e.to_string().lines().next().unwrap_or_default().to_string();
            let what = e.message().trim().to_string();
            Coded::new(Code::Format, format!("{}: {at}: {what}", path.display())).into()
        })
    }
}
