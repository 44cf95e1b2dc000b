use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vad::data::{
    gen_synthetic, load_dataset, read_csv_matrix, read_mask_csv, sample_block_masks, sample_mcar, write_csv_matrix,
    write_mask_csv, SplitFractions, SyntheticConfig,
};
use vad::engine::{
    decode_means, eval_mse, experiment1, experiment2, impute_rows, infer, load_checkpoint, read_posteriors,
    save_checkpoint, train, write_metrics_csv, write_posteriors, DataSource, Exp2Mode, ExperimentConfig,
    ExperimentData, HyperGrid, MetricsRecord, ModelKind, TrainConfig,
};
use vad::{Result, VadError};

#[derive(Parser)]
#[command(name = "vad", version, about = "Generative models of incomplete data: encoder-less VAD and a VAE baseline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV.
    GenData(GenData),
    /// Sample an observation mask (1 = observed) as CSV.
    Mask(MaskArgs),
    /// Train a model and save a checkpoint.
    Train(TrainArgs),
    /// Infer posteriors for new rows with a trained model.
    Infer(InferArgs),
    /// Fill missing entries from the decoded posterior means.
    Impute(ImputeArgs),
    /// Per-category MSE of decoded rows against ground truth, as JSON.
    Eval(EvalArgs),
    /// Run experiment 1 or 2 and write a metrics CSV.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 5000)]
    rows: usize,
    #[arg(long, default_value_t = 30)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    independent: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MaskArgs {
    /// Take the shape from this data CSV.
    #[arg(long, conflicts_with_all = ["rows", "cols"])]
    like: Option<PathBuf>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// MCAR missing rate.
    #[arg(long, conflicts_with = "blocks")]
    rate: Option<f64>,
    /// Number of missing square blocks per image.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long, default_value_t = 4)]
    block_size: usize,
    /// Image height for block masks; the width is cols / height.
    #[arg(long, default_value_t = 28)]
    image_rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    masks: Option<PathBuf>,
    /// TOML training config; unset keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Also write the trained VAD posteriors.
    #[arg(long)]
    posteriors_out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ImputeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    posteriors: PathBuf,
    /// Incomplete rows to complete; without it the decoded means are written.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    masks: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    decoded: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    masks: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_parser = ["1", "2"])]
    id: String,
    #[arg(long, value_enum, default_value_t = Mode::TestOnly)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = Source::Synthetic)]
    dataset: Source,
    /// Data file for `csv` and `idx` sources.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Separate IDX test file.
    #[arg(long)]
    test_data: Option<PathBuf>,
    /// Cap on rows per split.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 5000)]
    rows: usize,
    #[arg(long, default_value_t = 30)]
    dim: usize,
    /// Independent columns in the synthetic source.
    #[arg(long, default_value_t = 10)]
    independent: usize,
    /// Comma-separated missing rates.
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    rates: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Base TOML training config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// TOML hyperparameter grid; without it only the base config is trained.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Use the built-in 48-point grid.
    #[arg(long, conflicts_with = "grid")]
    full_grid: bool,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "vad,vae")]
    models: Vec<Model>,
    /// Fill the seconds column (makes the output non-reproducible).
    #[arg(long)]
    record_time: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Vad,
    Vae,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Vad => ModelKind::Vad,
            Model::Vae => ModelKind::Vae,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    TestOnly,
    TrainOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Synthetic,
    Csv,
    Idx,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn read_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_toml(&std::fs::read_to_string(p)?),
        None => Ok(TrainConfig::default()),
    }
}

fn gen_data(a: GenData) -> Result<()> {
    let s = gen_synthetic(&SyntheticConfig {
        n_rows: a.rows,
        dim: a.dim,
        n_independent: a.independent,
        seed: a.seed,
    })?;
    write_csv_matrix(&a.out, s.dataset.x())
}

fn mask(a: MaskArgs) -> Result<()> {
    let (rows, cols) = match (&a.like, a.rows, a.cols) {
        (Some(p), _, _) => read_csv_matrix(p)?.dims2(),
        (None, Some(r), Some(c)) => (r, c),
        _ => return Err(VadError::config("give --like or both --rows and --cols")),
    };
    let masks = match (a.rate, a.blocks) {
        (Some(rate), None) => sample_mcar(rows, cols, rate, a.seed)?,
        (None, blocks) => {
            let blocks = blocks.unwrap_or(4);
            if a.image_rows == 0 || cols % a.image_rows != 0 {
                return Err(VadError::config(format!(
                    "{cols} columns do not form images of height {}",
                    a.image_rows
                )));
            }
            sample_block_masks(rows, a.image_rows, cols / a.image_rows, a.block_size, blocks, a.seed)?
        }
        (Some(_), Some(_)) => unreachable!("clap rejects --rate with --blocks"),
    };
    write_mask_csv(&a.out, &masks)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = read_config(a.config.as_deref())?;
    if let Some(m) = a.model {
        cfg.model = m.into();
    }
    if let Some(e) = a.epochs {
        cfg.max_epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let ds = load_dataset(&a.data, a.masks.as_deref())?;
    let start = Instant::now();
    let out = train(&ds, None, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    save_checkpoint(&a.out, &out.bundle)?;
    let posteriors = match out.posteriors {
        Some(bank) => bank,
        None => infer(&out.bundle, &ds, cfg.seed)?.posteriors,
    };
    if let Some(p) = &a.posteriors_out {
        write_posteriors(p, &posteriors)?;
    }
    if let Some(p) = &a.metrics_out {
        let rate = 1.0 - ds.masks().observed_fraction();
        let mse = match ds.ground_truth() {
            Some(t) => eval_mse(&decode_means(&out.bundle, &posteriors)?, t, ds.masks())?,
            None => eval_mse(&decode_means(&out.bundle, &posteriors)?, &filled_truth(&ds), ds.masks())
                .map(|mut m| {
                    m.missing = None;
                    m.full = None;
                    m
                })?,
        };
        let rec = MetricsRecord {
            model: cfg.model,
            r_train: rate,
            r_test: rate,
            seed: cfg.seed,
            mse,
            lower_bound: out.final_lower_bound,
            seconds: Some(seconds),
            threshold: None,
        };
        write_metrics_csv(create(p)?, &[rec])?;
    }
    eprintln!(
        "trained {} for {} epochs, final lower bound {:.6}",
        cfg.model,
        out.curve.len(),
        out.final_lower_bound
    );
    Ok(())
}

/// Observed values with zeros elsewhere; only the observed category is meaningful.
fn filled_truth(ds: &vad::data::Dataset) -> vad::tensor::Tensor {
    let data = ds.x().data().iter().map(|v| if v.is_nan() { 0.0 } else { *v }).collect();
    vad::tensor::Tensor::matrix(ds.len(), ds.dim(), data).expect("same shape")
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    let bundle = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.data, a.masks.as_deref())?;
    let out = infer(&bundle, &ds, a.seed)?;
    write_posteriors(&a.out, &out.posteriors)?;
    eprintln!("lower bound {:.6} after {} steps", out.lower_bound, out.steps);
    Ok(())
}

fn impute_cmd(a: ImputeArgs) -> Result<()> {
    let _ = a.seed;
    let bundle = load_checkpoint(&a.checkpoint)?;
    let bank = read_posteriors(&a.posteriors, bundle.config.sigma)?;
    let out = match &a.data {
        Some(d) => impute_rows(&bundle, &bank, &load_dataset(d, a.masks.as_deref())?)?,
        None => decode_means(&bundle, &bank)?,
    };
    write_csv_matrix(&a.out, &out)
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let _ = a.seed;
    let decoded = read_csv_matrix(&a.decoded)?;
    let truth = read_csv_matrix(&a.truth)?;
    if truth.data().iter().any(|v| v.is_nan()) {
        return Err(VadError::parse(a.truth.display().to_string(), "ground truth has empty cells"));
    }
    let masks = read_mask_csv(&a.masks)?;
    let mse = eval_mse(&decoded, &truth, &masks)?;
    let json = serde_json::to_string_pretty(&mse).expect("serializable");
    match &a.out {
        Some(p) => writeln!(create(p)?, "{json}")?,
        None => println!("{json}"),
    }
    Ok(())
}

fn experiment_cmd(a: ExperimentArgs) -> Result<()> {
    let base = read_config(a.config.as_deref())?;
    let grid = match (&a.grid, a.full_grid) {
        (Some(p), _) => toml::from_str(&std::fs::read_to_string(p)?).map_err(|e| VadError::config(e.to_string()))?,
        (None, true) => HyperGrid::default(),
        (None, false) => HyperGrid::single(&base),
    };
    let source = match a.dataset {
        Source::Synthetic => DataSource::Synthetic(SyntheticConfig {
            n_rows: a.rows,
            dim: a.dim,
            n_independent: a.independent,
            seed: a.seed,
        }),
        Source::Csv => DataSource::Csv(a.data.clone().ok_or_else(|| VadError::config("--data is required for csv"))?),
        Source::Idx => DataSource::Idx {
            train: a.data.clone().ok_or_else(|| VadError::config("--data is required for idx"))?,
            test: a.test_data.clone(),
        },
    };
    let data = ExperimentData::load(&source, SplitFractions::default(), a.limit, a.seed)?;
    let exp = ExperimentConfig {
        rates: a.rates.clone(),
        n_test_runs: a.runs,
        grid,
        base,
        models: a.models.iter().map(|&m| m.into()).collect(),
        seed: a.seed,
        record_time: a.record_time,
    };
    let out = match (a.id.as_str(), a.mode) {
        ("1", _) => experiment1(&exp, &data)?,
        (_, Mode::TestOnly) => experiment2(&exp, Exp2Mode::TestOnly, &data)?,
        (_, Mode::TrainOnly) => experiment2(&exp, Exp2Mode::TrainOnly, &data)?,
    };
    write_metrics_csv(create(&a.out)?, &out.records)?;
    eprintln!("{} records, mean-baseline threshold {:.6}", out.records.len(), out.threshold);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Mask(a) => mask(a),
        Command::Train(a) => train_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Impute(a) => impute_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
