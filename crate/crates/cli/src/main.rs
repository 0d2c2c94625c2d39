use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod failure;

use failure::Failure;

const AFTER_HELP: &str = "\
Pipeline: scene-init -> generate -> train / train-baseline -> calibrate -> evaluate -> report.

Every command writes `<output>.manifest.json` next to its artifact (inside the
directory for evaluate and report). The manifest records the command, every
resolved non-path flag, the seed, the SHA-256 of each input and the tool
version; its hash is embedded as `producer` in the artifact. Downstream
commands recompute input hashes and refuse mismatched artifacts.

Exit codes: 0 success, 1 I/O error, 2 validation error, 3 numerical failure,
4 provenance mismatch.";

#[derive(Parser)]
#[command(name = "ris-lab", version, about = "RIS localization workbench", after_help = AFTER_HELP)]
struct Cli {
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true, env = "RIS_LAB_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Preset {
    /// 15 x 15 enclosure, 20 RIS elements, 64 frequencies.
    Reference,
    /// 8 x 8 enclosure, 12 frequencies; RIS size set by --n-ris.
    Desk,
}

#[derive(Subcommand)]
enum Command {
    /// Write a scene template file.
    ///
    /// Scene format: line-oriented text, `#` comments, whitespace-separated
    /// numbers under section headers:
    ///   [frequency] f_center half_band n_points
    ///   [bs] x y
    ///   [ue_grid] x0 y0 x1 y1 nx ny
    ///   [wall] one segment `x0 y0 x1 y1` per line (repeatable)
    ///   [ris] one element `x y` per line; order defines the bit index
    ///   [sense] indices of the sensing RIS elements
    ///   [object] `f_res chi gamma_l`, `offset dx dy`, optional `phase s`
    ///   [trajectory] closed polyline vertices `x y`
    /// Lengths are in wavelengths at the centre frequency.
    SceneInit(SceneInitArgs),
    /// Simulate a dataset of (configuration, object state, UE site) records.
    ///
    /// Dataset format (JSON lines): a header object with `format`, `version`,
    /// `F`, `S_RIS`, `N_RIS`, `K`, `n_obj`, `seed`, `scene_hash`, `configs`
    /// (bit strings indexed by class) and `producer`, followed by one record
    /// per line with `h_ue` (F x [re, im]), `h_sense` (S_RIS x F x [re, im]),
    /// `p`, `k_index`, `k_onehot` and `u` ([x, y]).
    Generate(GenerateArgs),
    /// Train the BiLSTM localizer/classifier.
    ///
    /// Checkpoint format: the line `RISLAB-CKPT 1`, one JSON header line
    /// (architecture, hyperparameters, split seed, dataset hash, validation
    /// loss, feature normalization, parameter count, producer), then the
    /// parameters as little-endian f64. A loss history CSV
    /// `epoch,train_loss,val_loss,val_coord,val_class,improved` is written
    /// alongside.
    Train(TrainArgs),
    /// Train the feed-forward baseline on the same split (same formats as train).
    TrainBaseline(TrainArgs),
    /// Build the object-state -> configuration codebook.
    ///
    /// Codebook format (JSON): resolution, object count, scene and checkpoint
    /// hashes, probe configuration, candidate configurations, one entry per
    /// bucket (key, chosen index, expected MSE, all candidate MSEs) and the
    /// sensing fingerprints as flattened [re, im] vectors. The scene text is
    /// embedded.
    Calibrate(CalibrateArgs),
    /// Score the optimized loop against the random-configuration baseline.
    ///
    /// Writes `series.csv` (`test_index,se_random,se_optimized`),
    /// `summary.csv` (`n_ris,k,baseline_mse,optimized_mse,sigma,pct_error_reduction`)
    /// and `table.txt` into the output directory.
    Evaluate(EvaluateArgs),
    /// Collect `summary.csv` files into one results table.
    ///
    /// Reads `<eval-dir>/summary.csv` and `<eval-dir>/*/summary.csv`; writes
    /// `table.csv` and `table.txt`, rows sorted by (N_RIS, K).
    Report(ReportArgs),
}

#[derive(Args)]
pub struct SceneInitArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing file.
    #[arg(long)]
    pub force: bool,
    #[arg(long, value_enum, default_value = "reference")]
    pub preset: Preset,
    /// RIS element count for the desk preset.
    #[arg(long, default_value_t = 16)]
    pub n_ris: usize,
    /// Keep only the first N scattering objects of the preset (1-4).
    #[arg(long)]
    pub objects: Option<usize>,
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Number of distinct random RIS configurations K.
    #[arg(long)]
    pub configs: usize,
    /// Object states per configuration.
    #[arg(long, default_value_t = 10)]
    pub so_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Measurement SNR in dB; noiseless when omitted.
    #[arg(long)]
    pub snr_db: Option<f64>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// L2 weight of the regularization term.
    #[arg(long, default_value_t = 1e-4)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV (default: `<out>.history.csv`).
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Disable global-norm gradient clipping.
    #[arg(long)]
    pub no_clip: bool,
    /// Learning rates to search (comma separated); the best grid point is
    /// then used for the final run. Results go to `<out>.grid.csv`.
    #[arg(long, value_delimiter = ',')]
    pub grid_lr: Vec<f64>,
    /// Regularization weights to search (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub grid_alpha: Vec<f64>,
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Quantization cells per object coordinate.
    #[arg(long, default_value_t = ris_lab_core::codebook::DEFAULT_RESOLUTION)]
    pub resolution: usize,
    /// UE site indices to average over (default: all sites).
    #[arg(long, value_delimiter = ',')]
    pub sites: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub baseline: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of test instances.
    #[arg(long, default_value_t = ris_lab_core::eval::TEST_INSTANCES)]
    pub instances: usize,
    /// Instance-selection seed (default: the dataset seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub eval_dir: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::Validation("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    pool.build_global()
        .map_err(|e| Failure::Validation(e.to_string()))?;
    match cli.command {
        Command::SceneInit(a) => commands::scene_init(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a, false),
        Command::TrainBaseline(a) => commands::train(&a, true),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Report(a) => commands::report(&a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ris-lab: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
