use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Detector kernel, FLOP accountant, box losses and detection evaluation.
#[derive(Debug, Parser)]
#[command(name = "aerodet", version)]
pub struct Cli {
    /// Directory for machine-readable reports and their run manifests.
    /// Nothing is written when neither this nor AERODET_OUT_DIR is set.
    #[arg(long, global = true, env = "AERODET_OUT_DIR")]
    pub out: Option<PathBuf>,

    /// Print the JSON report to stdout instead of the table.
    #[arg(long, global = true)]
    pub json: bool,

    /// Print nothing to stdout; reports still go to the output directory.
    #[arg(long, short, global = true, conflicts_with = "json")]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Network construction and accounting.
    #[command(subcommand)]
    Arch(ArchCommand),
    /// Box regression losses.
    #[command(subcommand)]
    Loss(LossCommand),
    /// Detection evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Annotation statistics.
    #[command(subcommand)]
    Stats(StatsCommand),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML network description; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Shorthand for `include_p5 = true` with the stride-32 head added.
    #[arg(long)]
    pub p5: bool,
}

#[derive(Debug, Subcommand)]
pub enum ArchCommand {
    /// Per-layer parameter and MAC table with totals.
    Summary {
        #[command(flatten)]
        config: ConfigArgs,
        /// Exit with status 1 when the totals miss the reference bands.
        #[arg(long)]
        check: bool,
    },
    /// Run the forward pass on a seeded input and record tap checksums.
    Forward {
        #[command(flatten)]
        config: ConfigArgs,
        /// Overrides the config seed for weights and input.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    PaperAlpha,
    ReferenceR,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Iou,
    Ciou,
    Wiou,
    All,
}

#[derive(Debug, Args)]
pub struct StateArgs {
    #[arg(long, default_value_t = 1.0)]
    pub running_mean: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::PaperAlpha)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 3.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.9)]
    pub gamma: f64,
}

#[derive(Debug, Subcommand)]
pub enum LossCommand {
    /// Evaluate IoU, CIoU and Wise-IoU on box pairs.
    Eval {
        /// JSON lines `{"pred": [cx, cy, w, h], "gt": [cx, cy, w, h]}`.
        #[arg(long, conflicts_with_all = ["pred", "gt"])]
        pairs: Option<PathBuf>,
        /// Single prediction `cx,cy,w,h`.
        #[arg(
            long,
            value_delimiter = ',',
            value_name = "CX,CY,W,H",
            allow_hyphen_values = true,
            requires = "gt"
        )]
        pred: Option<Vec<f64>>,
        /// Single target `cx,cy,w,h`.
        #[arg(
            long,
            value_delimiter = ',',
            value_name = "CX,CY,W,H",
            allow_hyphen_values = true,
            requires = "pred"
        )]
        gt: Option<Vec<f64>>,
        #[command(flatten)]
        state: StateArgs,
    },
    /// Compare analytic gradients with central differences on random pairs.
    GradCheck {
        #[arg(long, default_value_t = 500)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = KindArg::All)]
        kind: KindArg,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[command(flatten)]
        state: StateArgs,
    },
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// Ground-truth JSON lines.
    #[arg(long)]
    pub gt: PathBuf,
    /// Detection JSON lines.
    #[arg(long)]
    pub det: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// mAP@0.5, mAP@[.5,.95], per-class AP, precision and recall.
    Map {
        #[command(flatten)]
        files: PairArgs,
        #[arg(long, default_value_t = 0.25)]
        conf: f64,
    },
    /// Six-way error decomposition.
    Tide {
        #[command(flatten)]
        files: PairArgs,
        /// Foreground IoU threshold.
        #[arg(long, default_value_t = 0.5)]
        fg: f64,
        /// Background IoU threshold.
        #[arg(long, default_value_t = 0.1)]
        bg: f64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RuleArg {
    MaxSide,
    Area,
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    /// Small-object fractions, class counts and an area histogram.
    Annotations {
        #[arg(long)]
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = RuleArg::MaxSide)]
        rule: RuleArg,
        /// Side thresholds in pixels.
        #[arg(long, value_delimiter = ',', default_values_t = [32.0, 16.0, 8.0])]
        thresholds: Vec<f64>,
    },
}
