use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use subsample_core::design::Protocol;
use subsample_core::legend::Legend;

use crate::config::{parse_legend, parse_protocol, GeneratorKind};

#[derive(Debug, Parser)]
#[command(name = "subsample-lab", version, about = "Response-design simulation and adaptive sub-sample labeling")]
pub struct Cli {
    /// Worker threads; defaults to every available core. Results do not
    /// depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic raster as an ASCII grid.
    Generate(GenerateArgs),
    /// Point and partition response-design experiments.
    Simulate(SimulateArgs),
    /// Adaptive stopping-rule experiment.
    Optimize(OptimizeArgs),
    /// Purity of units against unit size.
    Scalogram(ScalogramArgs),
    /// Run the labeling session service.
    Serve(ServeArgs),
    /// Run the adaptive rule on one unit and print its trace.
    Label(LabelArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (falls back to the config, then SUBSAMPLE_LAB_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the resolved config as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub kind: Option<GeneratorKind>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Patch sites per 10 000 cells.
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Box-filter radius in cells.
    #[arg(long)]
    pub radius: Option<usize>,
    /// Target share of class 1.
    #[arg(long)]
    pub cover: Option<f64>,
    /// Output `.asc` file.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DesignFamily {
    Points,
    Partition,
    All,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Reference raster (ASCII grid); replaces the config's raster.
    #[arg(long)]
    pub raster: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub design: Option<DesignFamily>,
    /// Point counts.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Partition counts per unit side.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_protocol)]
    pub protocols: Option<Vec<Protocol>>,
    /// `majority`, `binary:T` or `binary:T:C1+C2`; repeatable.
    #[arg(long, value_parser = parse_legend)]
    pub legend: Vec<Legend>,
    #[arg(long)]
    pub realizations: Option<usize>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub shifts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub scalogram_sides: Option<Vec<usize>>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RuleArgs {
    #[arg(long, value_parser = parse_legend)]
    pub legend: Option<Legend>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_init: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub increment: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub rule: RuleArgs,
    #[arg(long)]
    pub raster: Option<PathBuf>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScalogramArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub raster: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub sides: Option<Vec<usize>>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Append-only session journal; existing sessions in it are restored.
    #[arg(long)]
    pub journal: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub rule: RuleArgs,
    #[arg(long)]
    pub raster: Option<PathBuf>,
    #[arg(long)]
    pub side: Option<usize>,
    /// Unit origin row (cells).
    #[arg(long)]
    pub row: Option<usize>,
    /// Unit origin column (cells).
    #[arg(long)]
    pub col: Option<usize>,
    /// Print the outcome as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}
