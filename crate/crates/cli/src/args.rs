use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "attnflow",
    version,
    about = "Attention flow analysis for Transformer attention bundles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a bundle's invariants; prints findings as JSON lines.
    Validate(ValidateArgs),
    /// Max-flow from a source token set to one target.
    Flow(CommonArgs),
    /// Flow heatmap over every source token and prediction step.
    Heatmap(CommonArgs),
    /// Shapley values of a player set.
    Shapley(CommonArgs),
    /// Flow computed separately for each attention head.
    Heads(CommonArgs),
    /// Graphviz rendering of one flow network.
    ExportDot(DotArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Allowed deviation of attention row sums from 1.
    #[arg(long, default_value_t = attnflow::bundle::DEFAULT_ROW_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Enc,
    Dec,
    Encdec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Uniform,
    Paper,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
    Svg,
    Dot,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Network construction; inferred from the bundle's tensors when omitted.
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// `all`, a comma list such as `0,3`, or `each` for a per-head sweep.
    #[arg(long, default_value = "all")]
    pub heads: String,
    /// Mix attention with the identity as 0.5A + 0.5I.
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub residual: OnOff,
    #[arg(long, value_enum, default_value_t = NormArg::Uniform)]
    pub norm: NormArg,
    /// Prediction step n (decoder kinds); defaults to the last token of the bundle.
    #[arg(long)]
    pub step: Option<usize>,
    /// Final-column positions wired to the terminal (encoder kind); defaults to all.
    #[arg(long)]
    pub terminal: Option<String>,
    /// Source token indices, e.g. `0,2-4`.
    #[arg(long)]
    pub sources: Option<String>,
    /// Layer runs to average, e.g. `0-5,6-11` or `enc:0-1,2;dec:0,1-3`.
    #[arg(long)]
    pub merge_layers: Option<String>,
    /// Token runs to contract, e.g. `0,1-2,3` or `enc:0-1,2;dec:0,1`.
    #[arg(long)]
    pub group_tokens: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Args)]
pub struct DotArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Annotate edges with the solved max-flow.
    #[arg(long)]
    pub with_flow: bool,
}
