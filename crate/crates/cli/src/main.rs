mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  verification failure (a tolerance was not met, or training diverged)
  2  usage error (unknown flag, bad argument value, mismatched input shapes)
  3  I/O error (unreadable or unwritable file, malformed PNM or HGT1 data)
  4  configuration file could not be parsed or failed validation";

/// Heterogeneous grid convolution: clustering, oracle checks, FLOPs
/// accounting and a small training demo.
#[derive(Parser, Debug)]
#[command(name = "hgconv", version, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cluster an image into pixel groups and write a visualization, the
    /// assignment tensor and a stats report.
    #[command(after_help = EXIT_CODES)]
    Cluster(ClusterArgs),
    /// Check the graph form of the 3×3 convolution against direct loops,
    /// and the HG module under identity grouping against the graph form.
    #[command(after_help = EXIT_CODES)]
    ConvCheck(ConvCheckArgs),
    /// Compare analytic gradients with central finite differences.
    #[command(after_help = EXIT_CODES)]
    Gradcheck(GradcheckArgs),
    /// Count FLOPs of the HG module against regular 3×3 convolutions.
    #[command(after_help = EXIT_CODES)]
    Flops(FlopsArgs),
    /// Train the synthetic rectangle-segmentation model.
    #[command(after_help = EXIT_CODES)]
    TrainDemo(TrainDemoArgs),
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// Binary PGM (P5) or PPM (P6) image, maxval 255.
    #[arg(long)]
    pub input: std::path::PathBuf,
    /// TOML run configuration; flags below override its values.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Output PPM colored by group with sampled centers marked.
    #[arg(long)]
    pub out_viz: std::path::PathBuf,
    /// Output HGT1 tensor holding the dense pixels × groups assignment.
    #[arg(long)]
    pub out_assign: std::path::PathBuf,
    /// Also write the stats report to this file.
    #[arg(long)]
    pub out_stats: Option<std::path::PathBuf>,
    /// HGT1 attention map in [0, 1], shaped [H, W], [N] or [N, 1].
    #[arg(long)]
    pub attention: Option<std::path::PathBuf>,
    /// Weight of the attention map when sampling centers.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fraction of pixels that become groups, as `1/64` or `0.015625`.
    #[arg(long)]
    pub ratio: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ConvCheckArgs {
    /// Comma-separated grid sizes such as `4x4,8x3`; defaults to every size
    /// from 1x1 to 8x8.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Random cases per size and channel count.
    #[arg(long, default_value_t = hgconv_core::verify::DEFAULT_SEEDS)]
    pub seeds: u64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// One of identity, dense, conv, hg, slic.
    #[arg(long, default_value = "hg")]
    pub pipeline: String,
    /// Central-difference step.
    #[arg(long, default_value_t = hgconv_core::autodiff::DEFAULT_STEP)]
    pub h: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    /// Fraction of pixels that become groups, as `1/64` or `0.015625`.
    #[arg(long, default_value = "1/64")]
    pub ratio: String,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 3)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainDemoArgs {
    #[arg(long, default_value_t = 15)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of generated images; the first 80% train, the rest validate.
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Write the per-epoch metric lines here as well as to stdout.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Cluster(a) => commands::cluster(&a),
        Command::ConvCheck(a) => commands::conv_check(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Flops(a) => commands::flops(&a),
        Command::TrainDemo(a) => commands::train_demo(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
