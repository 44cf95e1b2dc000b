//! Missing-data experiments.
//!
//! Experiment 1 trains and tests under the same missing rate. Experiment 2
//! applies missingness only at test time or only at training time.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    decode_means, derive_seed, eval_mse, infer, train, HyperGrid, MetricsRecord, ModelBundle, ModelKind, TrainConfig,
};
use crate::data::{
    gen_synthetic, load_dataset, load_idx, mean_baseline, sample_mcar, split, Dataset, SplitFractions, SyntheticConfig,
};
use crate::error::{Result, VadError};

mod seeds {
    pub const SPLIT: u64 = 101;
    pub const TRAIN_MASK: u64 = 102;
    pub const VAL_MASK: u64 = 103;
    pub const TEST_MASK: u64 = 104;
    pub const INFER: u64 = 105;
    pub const TRAIN: u64 = 106;
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    /// A complete CSV, split into train/val/test.
    Csv(PathBuf),
    /// IDX images; `test` replaces the held-out split when given.
    Idx { train: PathBuf, test: Option<PathBuf> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exp2Mode {
    /// Train on complete data, test at each rate.
    TestOnly,
    /// Train at each rate, test on complete data.
    TrainOnly,
}

impl std::str::FromStr for Exp2Mode {
    type Err = VadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test-only" | "test_only" => Ok(Exp2Mode::TestOnly),
            "train-only" | "train_only" => Ok(Exp2Mode::TrainOnly),
            other => Err(VadError::config(format!("unknown experiment-2 mode `{other}`"))),
        }
    }
}

/// Ground-truth train/val/test splits.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl ExperimentData {
    /// Loads and splits a source. `limit` caps the rows of every split.
    pub fn load(source: &DataSource, fractions: SplitFractions, limit: Option<usize>, seed: u64) -> Result<Self> {
        let split_seed = derive_seed(seed, seeds::SPLIT);
        let (train, val, test) = match source {
            DataSource::Synthetic(cfg) => split(&gen_synthetic(cfg)?.dataset, fractions, split_seed)?,
            DataSource::Csv(path) => {
                let ds = load_dataset(path, None)?;
                if ds.ground_truth().is_none() {
                    return Err(VadError::config(format!(
                        "{} has empty cells; experiments need complete data",
                        path.display()
                    )));
                }
                split(&ds, fractions, split_seed)?
            }
            DataSource::Idx { train, test } => {
                let (tr, va, te) = split(&load_idx(train)?, fractions, split_seed)?;
                match test {
                    Some(p) => (tr, va, load_idx(p)?),
                    None => (tr, va, te),
                }
            }
        };
        let cap = |ds: Dataset| match limit {
            Some(l) if l < ds.len() => ds.select(&(0..l).collect::<Vec<_>>()),
            _ => ds,
        };
        let data = ExperimentData {
            train: cap(train),
            val: cap(val),
            test: cap(test),
        };
        if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
            return Err(VadError::config("every split needs at least one row"));
        }
        Ok(data)
    }

    /// Mean-baseline MSE of the test split.
    pub fn threshold(&self) -> Result<f64> {
        mean_baseline(truth(&self.train)?, truth(&self.test)?)
    }
}

fn truth(ds: &Dataset) -> Result<&crate::tensor::Tensor> {
    ds.ground_truth()
        .ok_or_else(|| VadError::config("experiments need ground truth"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub rates: Vec<f64>,
    pub n_test_runs: usize,
    pub grid: HyperGrid,
    pub base: TrainConfig,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    /// Fill the `seconds` column; off by default so reruns are byte-identical.
    pub record_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            rates: (0..10).map(|i| f64::from(i) / 10.0).collect(),
            n_test_runs: 5,
            grid: HyperGrid::default(),
            base: TrainConfig::default(),
            models: vec![ModelKind::Vad, ModelKind::Vae],
            seed: 0,
            record_time: false,
        }
    }
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.rates.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(VadError::config("missing rates must lie in [0, 1)"));
        }
        if self.n_test_runs == 0 || self.models.is_empty() {
            return Err(VadError::config("need at least one test run and one model"));
        }
        if self.grid.expand(&self.base).is_empty() {
            return Err(VadError::config("hyperparameter grid is empty"));
        }
        self.base.validate()
    }
}

/// A model chosen by the grid search for one cell of an experiment.
#[derive(Clone, Debug)]
pub struct Selection {
    pub model: ModelKind,
    pub r_train: f64,
    pub config: TrainConfig,
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub records: Vec<MetricsRecord>,
    pub selections: Vec<Selection>,
    pub threshold: f64,
}

fn mask_seed(base: u64, stream: u64, rate: f64, run: u64) -> u64 {
    derive_seed(derive_seed(base ^ rate.to_bits(), stream), run)
}

fn mcar(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    ds.remask(sample_mcar(ds.len(), ds.dim(), rate, seed)?)
}

fn with_cell(r: f64, model: ModelKind, idx: usize) -> impl Fn(VadError) -> VadError {
    move |e| {
        let ctx = format!("r={r}, {model} config #{idx}");
        match e {
            VadError::Numeric(m) => VadError::Numeric(format!("{ctx}: {m}")),
            VadError::NonFinite { op } => VadError::Numeric(format!("{ctx}: non-finite value produced by {op}")),
            VadError::Config(m) => VadError::Config(format!("{ctx}: {m}")),
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Criterion {
    /// Highest validation lower bound.
    LowerBound,
    /// Lowest validation MSE on observed entries.
    IncompleteMse,
}

struct Trained {
    bundle: ModelBundle,
    config: TrainConfig,
    score: f64,
    seconds: f64,
}

/// Trains every grid point on `train` and keeps the best by `criterion`. Ties
/// go to the smaller model, then to the earlier grid point.
fn select(
    exp: &ExperimentConfig,
    model: ModelKind,
    r: f64,
    train_ds: &Dataset,
    val_ds: &Dataset,
    criterion: Criterion,
) -> Result<Trained> {
    let mut base = exp.base.clone();
    base.model = model;
    base.seed = derive_seed(exp.seed ^ r.to_bits(), seeds::TRAIN);
    let mut best: Option<(Trained, usize)> = None;
    for (idx, cfg) in exp.grid.expand(&base).into_iter().enumerate() {
        let ctx = with_cell(r, model, idx);
        let start = Instant::now();
        let out = train(train_ds, Some(val_ds), &cfg).map_err(&ctx)?;
        let score = match criterion {
            Criterion::LowerBound => out
                .curve
                .last()
                .and_then(|s| s.val_lower_bound)
                .expect("validation set given"),
            Criterion::IncompleteMse => {
                let q = infer(&out.bundle, val_ds, derive_seed(cfg.seed, seeds::INFER)).map_err(&ctx)?;
                let decoded = decode_means(&out.bundle, &q.posteriors)?;
                let mse = eval_mse(&decoded, truth(val_ds)?, val_ds.masks())?;
                // Maximized below, so negate.
                -mse.incomplete.unwrap_or(f64::INFINITY)
            }
        };
        let seconds = start.elapsed().as_secs_f64();
        let params = out.bundle.param_count();
        let better = match &best {
            None => true,
            Some((b, b_params)) => score > b.score || (score == b.score && params < *b_params),
        };
        if !score.is_nan() && better {
            best = Some((
                Trained {
                    bundle: out.bundle,
                    config: cfg,
                    score,
                    seconds,
                },
                params,
            ));
        }
    }
    let (t, _) = best.ok_or_else(|| VadError::Numeric(format!("r={r}, {model}: no grid point produced a score")))?;
    Ok(Trained {
        score: match criterion {
            Criterion::LowerBound => t.score,
            Criterion::IncompleteMse => -t.score,
        },
        ..t
    })
}

/// Test runs of one trained model on the test split masked at `r_test`.
#[allow(clippy::too_many_arguments)]
fn test_runs(
    exp: &ExperimentConfig,
    trained: &Trained,
    data: &ExperimentData,
    r_train: f64,
    r_test: f64,
    threshold: f64,
    out: &mut Vec<MetricsRecord>,
) -> Result<()> {
    for run in 0..exp.n_test_runs as u64 {
        let seed = exp.seed + run;
        let start = Instant::now();
        let test = mcar(&data.test, r_test, mask_seed(exp.seed, seeds::TEST_MASK, r_test, run))?;
        let q = infer(&trained.bundle, &test, derive_seed(seed, seeds::INFER))
            .map_err(with_cell(r_test, trained.config.model, run as usize))?;
        let decoded = decode_means(&trained.bundle, &q.posteriors)?;
        let mse = eval_mse(&decoded, truth(&test)?, test.masks())?;
        out.push(MetricsRecord {
            model: trained.config.model,
            r_train,
            r_test,
            seed,
            mse,
            lower_bound: q.lower_bound,
            seconds: exp
                .record_time
                .then(|| trained.seconds + start.elapsed().as_secs_f64()),
            threshold: Some(threshold),
        });
    }
    Ok(())
}

fn masked_splits(exp: &ExperimentConfig, data: &ExperimentData, r: f64) -> Result<(Dataset, Dataset)> {
    Ok((
        mcar(&data.train, r, mask_seed(exp.seed, seeds::TRAIN_MASK, r, 0))?,
        mcar(&data.val, r, mask_seed(exp.seed, seeds::VAL_MASK, r, 0))?,
    ))
}

/// Same missing rate for training, validation and test. Hyperparameters are
/// selected by validation lower bound.
pub fn experiment1(exp: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentOutput> {
    exp.validate()?;
    let threshold = data.threshold()?;
    let mut records = Vec::new();
    let mut selections = Vec::new();
    for &r in &exp.rates {
        let (train_ds, val_ds) = masked_splits(exp, data, r)?;
        for &model in &exp.models {
            let trained = select(exp, model, r, &train_ds, &val_ds, Criterion::LowerBound)?;
            test_runs(exp, &trained, data, r, r, threshold, &mut records)?;
            selections.push(Selection {
                model,
                r_train: r,
                config: trained.config,
                score: trained.score,
            });
        }
    }
    Ok(ExperimentOutput {
        records,
        selections,
        threshold,
    })
}

/// Missingness on one side only. Hyperparameters are selected by validation
/// MSE on observed entries.
pub fn experiment2(exp: &ExperimentConfig, mode: Exp2Mode, data: &ExperimentData) -> Result<ExperimentOutput> {
    exp.validate()?;
    let threshold = data.threshold()?;
    let mut records = Vec::new();
    let mut selections = Vec::new();
    match mode {
        Exp2Mode::TestOnly => {
            let (train_ds, val_ds) = masked_splits(exp, data, 0.0)?;
            for &model in &exp.models {
                let trained = select(exp, model, 0.0, &train_ds, &val_ds, Criterion::IncompleteMse)?;
                for &r in &exp.rates {
                    test_runs(exp, &trained, data, 0.0, r, threshold, &mut records)?;
                }
                selections.push(Selection {
                    model,
                    r_train: 0.0,
                    config: trained.config,
                    score: trained.score,
                });
            }
        }
        Exp2Mode::TrainOnly => {
            for &r in &exp.rates {
                let (train_ds, val_ds) = masked_splits(exp, data, r)?;
                for &model in &exp.models {
                    let trained = select(exp, model, r, &train_ds, &val_ds, Criterion::IncompleteMse)?;
                    test_runs(exp, &trained, data, r, 0.0, threshold, &mut records)?;
                    selections.push(Selection {
                        model,
                        r_train: r,
                        config: trained.config,
                        score: trained.score,
                    });
                }
            }
        }
    }
    Ok(ExperimentOutput {
        records,
        selections,
        threshold,
    })
}

/// Mean of a metric over the records of one model and cell.
pub fn cell_mean<F>(records: &[MetricsRecord], model: ModelKind, r_train: f64, r_test: f64, metric: F) -> Option<f64>
where
    F: Fn(&MetricsRecord) -> Option<f64>,
{
    let vals: Vec<f64> = records
        .iter()
        .filter(|m| m.model == model && m.r_train == r_train && m.r_test == r_test)
        .filter_map(metric)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (ExperimentConfig, ExperimentData) {
        let base = TrainConfig {
            latent_dim: 2,
            decoder_hidden: vec![6],
            encoder_hidden: vec![6],
            max_epochs: 3,
            batch_size: 16,
            infer_max_steps: 5,
            ..TrainConfig::default()
        };
        let exp = ExperimentConfig {
            rates: vec![0.0, 0.5],
            n_test_runs: 2,
            grid: HyperGrid::single(&base),
            base,
            ..ExperimentConfig::default()
        };
        let data = ExperimentData::load(
            &DataSource::Synthetic(SyntheticConfig {
                n_rows: 60,
                dim: 6,
                n_independent: 3,
                seed: 1,
            }),
            SplitFractions::default(),
            None,
            0,
        )
        .unwrap();
        (exp, data)
    }

    #[test]
    fn experiment1_bookkeeping() {
        let (exp, data) = tiny();
        let out = experiment1(&exp, &data).unwrap();
        assert_eq!(out.records.len(), 2 * 2 * 2);
        assert_eq!(out.selections.len(), 4);
        for rec in &out.records {
            assert_eq!(rec.r_train, rec.r_test);
            assert_eq!(rec.threshold, Some(out.threshold));
            assert!(rec.seconds.is_none());
        }
        let r0 = out.records.iter().filter(|m| m.r_test == 0.0);
        for rec in r0 {
            assert_eq!(rec.mse.missing, None);
            assert_eq!(rec.mse.full, rec.mse.incomplete);
        }
    }

    #[test]
    fn experiment2_modes() {
        let (exp, data) = tiny();
        let t = experiment2(&exp, Exp2Mode::TestOnly, &data).unwrap();
        assert!(t.records.iter().all(|m| m.r_train == 0.0));
        let t = experiment2(&exp, Exp2Mode::TrainOnly, &data).unwrap();
        assert!(t.records.iter().all(|m| m.r_test == 0.0));
    }

    #[test]
    fn rejects_bad_rates() {
        let (mut exp, data) = tiny();
        exp.rates = vec![1.0];
        assert!(matches!(experiment1(&exp, &data), Err(VadError::Config(_))));
    }
}
