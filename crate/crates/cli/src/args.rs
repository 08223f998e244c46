use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "inpaint", version, about = "Two-stage interactive image inpainting")]
pub struct Cli {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset directory (images/, labels/, palette.json).
    Prepare(PrepareArgs),
    /// Write PNG damage masks.
    Maskgen(MaskgenArgs),
    /// Run one training phase.
    Train(TrainArgs),
    /// Metric table over a labeled held-out set.
    Eval(EvalArgs),
    /// Run both stages on one image.
    Infer(InferArgs),
    /// Four-setting comparison table and image grid.
    Ablate(AblateArgs),
    /// Start the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(subcommand)]
    pub source: PrepareSource,
}

#[derive(Debug, Subcommand)]
pub enum PrepareSource {
    /// Procedural scenes with exact labels.
    Synthetic {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Copy an existing dataset directory, resizing every image and label map.
    Import {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskKind {
    Center,
    Rect,
    Irregular,
}

#[derive(Debug, Args)]
pub struct MaskgenArgs {
    #[arg(long, value_enum)]
    pub kind: MaskKind,
    /// Side length of the square masks.
    #[arg(long)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Hole side for `center`; defaults to half the size.
    #[arg(long)]
    pub hole: Option<usize>,
    /// Area fraction range for `rect`.
    #[arg(long, default_value_t = 0.1)]
    pub min_area: f64,
    #[arg(long, default_value_t = 0.5)]
    pub max_area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Stage1,
    Stage2,
    Joint,
    Segmenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

/// Every flag overrides the matching key of the TOML config.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub phase: Option<PhaseArg>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub plateau_iters: Option<u64>,
    #[arg(long)]
    pub total_iters: Option<u64>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[arg(long)]
    pub hole_l1_weight: Option<f64>,
    #[arg(long)]
    pub rec_weight: Option<f64>,
    #[arg(long)]
    pub per_weight: Option<f64>,
    #[arg(long)]
    pub adv_weight: Option<f64>,
    /// Train a stage-one model without the attention branch.
    #[arg(long)]
    pub no_espa: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated: coarse, fine_predicted, fine_ground_truth.
    #[arg(long, default_value = "coarse,fine_predicted,fine_ground_truth")]
    pub settings: String,
    /// Centered hole side; defaults to half the image side.
    #[arg(long)]
    pub hole: Option<usize>,
    /// Evaluate only the first N samples.
    #[arg(long)]
    pub count: Option<usize>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Grayscale PNG; values ≥ 128 are damaged.
    #[arg(long)]
    pub mask: PathBuf,
    /// Pseudo-color semantic mask; the predicted one is used when omitted.
    #[arg(long)]
    pub semantic_mask: Option<PathBuf>,
    /// Palette JSON; the built-in scene palette when omitted.
    #[arg(long)]
    pub palette: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Stage-one checkpoint trained without the attention branch.
    #[arg(long, required_unless_present = "plan")]
    pub plain: Option<PathBuf>,
    /// Stage-one checkpoint trained with the attention branch.
    #[arg(long, required_unless_present = "plan")]
    pub espa: Option<PathBuf>,
    /// Stage-two checkpoint with a trained segmenter.
    #[arg(long, required_unless_present = "plan")]
    pub refined: Option<PathBuf>,
    /// Labeled held-out dataset directory.
    #[arg(long, required_unless_present = "plan")]
    pub dataset: Option<PathBuf>,
    /// TOML plan: train every checkpoint on synthetic scenes first.
    #[arg(long, conflicts_with_all = ["plain", "espa", "refined", "dataset"])]
    pub plan: Option<PathBuf>,
    /// Where a plan keeps its checkpoints; defaults to OUT_DIR/checkpoints.
    #[arg(long, requires = "plan")]
    pub work_dir: Option<PathBuf>,
    #[arg(long)]
    pub hole: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub grid_samples: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "INPAINT_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "INPAINT_PALETTE")]
    pub palette: Option<PathBuf>,
    #[arg(long, env = "INPAINT_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "INPAINT_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "INPAINT_SESSION_DIR")]
    pub session_dir: PathBuf,
    #[arg(long, env = "INPAINT_TTL_HOURS", default_value_t = 24.0)]
    pub ttl_hours: f64,
    /// Per-channel tolerance (0..1) when matching mask colors to the palette.
    #[arg(long, env = "INPAINT_COLOR_TOLERANCE")]
    pub color_tolerance: Option<f32>,
}
