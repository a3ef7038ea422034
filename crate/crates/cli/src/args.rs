use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dvp_core::ToyConfig;

#[derive(Debug, Parser)]
#[command(name = "dvp", version, about = "Blind video temporal consistency with a deep video prior")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on one video pair and write the consistent output.
    Run(RunArgs),
    /// Write a synthetic clean/processed clip pair with ground-truth flows.
    Synth(SynthArgs),
    /// Warping error and fidelity of a clip.
    Metrics(MetricsArgs),
    /// Eight-frame toy experiment trace.
    Toy(ToyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataTermArg {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FrameOrderArg {
    Sequential,
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Unimodal,
    Multimodal,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Original frames.
    #[arg(long, required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    /// Per-frame processed frames.
    #[arg(long, required_unless_present = "manifest")]
    pub processed: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub output: Option<PathBuf>,
    /// Repeat the run recorded in a manifest; other flags are ignored.
    #[arg(long, conflicts_with_all = ["input", "processed"])]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Two-head iteratively reweighted training.
    #[arg(long)]
    pub irt: bool,
    #[arg(long, default_value_t = 0.02)]
    pub delta: f64,
    /// Anchoring iterations (default: one per frame).
    #[arg(long)]
    pub anchor: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub anchor_frame: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub snapshot_every: usize,
    /// Flow directory; enables E_warp in the trace.
    #[arg(long)]
    pub flow_dir: Option<PathBuf>,
    #[arg(long)]
    pub save_confidence: bool,
    #[arg(long, default_value_t = 32)]
    pub base_width: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, value_enum, default_value_t = DataTermArg::L1)]
    pub data_term: DataTermArg,
    #[arg(long, value_enum, default_value_t = FrameOrderArg::Sequential)]
    pub frame_order: FrameOrderArg,
    /// Fill the wall_seconds column of trace.csv.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Frame size as HxW.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    /// Per-frame motion as dx,dy.
    #[arg(long, default_value = "0,0", value_parser = parse_pair, allow_hyphen_values = true)]
    pub motion: (f32, f32),
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    /// JSON list of `{"gain": [[..]; 3], "bias": [..]}` mode transforms.
    #[arg(long)]
    pub modes: Option<PathBuf>,
    /// Comma-separated mode index per frame (default: alternating).
    #[arg(long, value_delimiter = ',')]
    pub pattern: Option<Vec<usize>>,
    /// Scalar gain jitter on top of each mode.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("flows").required(true).args(["flow_dir", "synthetic_flow"]))]
pub struct MetricsArgs {
    #[arg(long)]
    pub clip: PathBuf,
    #[arg(long)]
    pub flow_dir: Option<PathBuf>,
    /// Constant translation dx,dy per frame instead of flow files.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    pub synthetic_flow: Option<(f32, f32)>,
    /// Processed clip to measure fidelity against.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long, value_enum)]
    pub mode: KindArg,
    #[arg(long, default_value_t = ToyConfig::default().iterations)]
    pub iterations: usize,
    #[arg(long, default_value_t = ToyConfig::default().record_every)]
    pub record_every: usize,
    #[arg(long)]
    pub irt: bool,
    #[arg(long, default_value = "toy_trace.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = ToyConfig::default().size)]
    pub size: usize,
    #[arg(long, default_value_t = ToyConfig::default().sigma)]
    pub sigma: f64,
    /// Std of the per-frame noise that makes the toy inputs distinct.
    #[arg(long, default_value_t = ToyConfig::default().input_noise)]
    pub input_noise: f64,
    #[arg(long, default_value_t = ToyConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = ToyConfig::default().base_width)]
    pub base_width: usize,
    #[arg(long, default_value_t = ToyConfig::default().depth)]
    pub depth: usize,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|e| format!("bad height: {e}"))?;
    let w: usize = w.trim().parse().map_err(|e| format!("bad width: {e}"))?;
    if h == 0 || w == 0 {
        return Err("size must be positive".into());
    }
    Ok((h, w))
}

fn parse_pair(s: &str) -> Result<(f32, f32), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected dx,dy, got {s:?}"))?;
    let a: f32 = a.trim().parse().map_err(|e| format!("bad dx: {e}"))?;
    let b: f32 = b.trim().parse().map_err(|e| format!("bad dy: {e}"))?;
    if !a.is_finite() || !b.is_finite() {
        return Err("motion must be finite".into());
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_and_pair_parsing() {
        assert_eq!(parse_size("48x64"), Ok((48, 64)));
        assert!(parse_size("48").is_err());
        assert!(parse_size("0x4").is_err());
        assert_eq!(parse_pair("1,-0.5"), Ok((1.0, -0.5)));
        assert!(parse_pair("1").is_err());
        assert!(parse_pair("nan,0").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
