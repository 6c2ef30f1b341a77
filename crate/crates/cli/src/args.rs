use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use noma_core::{Ablation, Detector, Snr};

/// Hybrid linear + neural multi-user detection for uplink NOMA.
#[derive(Debug, Parser)]
#[command(name = "noma", version)]
pub struct Cli {
    /// Experiment configuration: a TOML file, or `default` for the built-in setup.
    #[arg(long, global = true, default_value = "default")]
    pub config: String,

    /// Overrides the master seed from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for artifacts whose path is not given explicitly.
    #[arg(long, global = true, env = "NOMA_OUT_DIR")]
    pub out_dir: Option<PathBuf>,

    /// Worker threads for parallel sections (defaults to all cores).
    #[arg(long, global = true, env = "NOMA_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one transmission and write it as a binary dataset.
    Simulate(SimulateArgs),
    /// Fit LLS and train hybrid detectors on a dataset's training phase.
    Train(TrainArgs),
    /// Run trained detectors on a dataset's data phase.
    Detect(DetectArgs),
    /// BER over an SNR grid, averaged over seeded trials.
    Sweep(SweepArgs),
    /// Time the fused inference path against the reference forward.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output dataset [default: <out-dir>/dataset.noma]
    #[arg(long, short)]
    pub output: Option<PathBuf>,

    /// Overrides the scenario SNR in dB (`inf` for noiseless).
    #[arg(long)]
    pub snr: Option<Snr>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset written by `simulate`.
    #[arg(long, short)]
    pub dataset: PathBuf,

    /// 1-based users to train, comma separated [default: every user]
    #[arg(long, value_delimiter = ',')]
    pub users: Vec<usize>,

    /// Trained detector file [default: <out-dir>/detectors.json]
    #[arg(long, short)]
    pub output: Option<PathBuf>,

    /// Loss trace CSV [default: <out-dir>/loss_trace.csv]
    #[arg(long)]
    pub loss_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Dataset written by `simulate`.
    #[arg(long, short)]
    pub dataset: PathBuf,

    /// Detector file written by `train`.
    #[arg(long, short)]
    pub params: PathBuf,

    /// Per-symbol decisions CSV [default: <out-dir>/decisions.csv]
    #[arg(long)]
    pub decisions: Option<PathBuf>,

    /// BER summary CSV [default: <out-dir>/ber_summary.csv]
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// SNR grid in dB: `start:stop:step` (inclusive) or a comma list; `inf` allowed in lists.
    #[arg(long)]
    pub snr: Option<String>,

    /// Trials per SNR point.
    #[arg(long)]
    pub trials: Option<u32>,

    /// 1-based users to evaluate, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub users: Vec<usize>,

    /// Detectors: lls, hybrid_nn.
    #[arg(long, value_delimiter = ',')]
    pub detectors: Vec<Detector>,

    /// Ablations: symmetry_on, symmetry_off, symmetry_on_half_data.
    #[arg(long, value_delimiter = ',')]
    pub ablations: Vec<Ablation>,

    /// Keep one channel draw across all trials.
    #[arg(long)]
    pub fixed_channel: bool,

    /// Receiver distortion gain (0.05 for the nonlinear experiments).
    #[arg(long)]
    pub gamma: Option<f64>,

    /// BER report CSV [default: <out-dir>/ber.csv]
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Layer widths, input first, e.g. `8x64x64x64`.
    #[arg(long, default_value = "8x64x64x64")]
    pub dims: String,

    /// Rows per forward call.
    #[arg(long, default_value_t = 3840)]
    pub batch: usize,

    /// Timed repeats; the median is reported.
    #[arg(long, default_value_t = 7)]
    pub repeats: usize,

    /// Benchmark CSV [default: <out-dir>/bench.csv]
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// Parses `start:stop:step` (inclusive of `stop`) or a comma separated list.
pub fn parse_snr_grid(text: &str) -> Result<Vec<Snr>, String> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("bad SNR grid `{text}`: {e}"));
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(start.is_finite() && stop.is_finite() && step.is_finite()) || step <= 0.0 || stop < start {
                return Err(format!("bad SNR grid `{text}`: need start <= stop and step > 0"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| Snr::Db(start + i as f64 * step)).collect())
        }
        [list] => list
            .split(',')
            .map(|s| s.trim().parse::<Snr>().map_err(|e| format!("bad SNR `{s}`: {e}")))
            .collect(),
        _ => Err(format!("bad SNR grid `{text}`: use start:stop:step or a comma list")),
    }
}

/// Parses `8x64x64` or `8,64,64`.
pub fn parse_dims(text: &str) -> Result<Vec<usize>, String> {
    text.split(['x', ','])
        .map(|s| s.trim().parse::<usize>().map_err(|e| format!("bad layer width `{s}`: {e}")))
        .collect()
}
