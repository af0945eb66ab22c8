//! Sweeps over regularizers and penalty weights, and everything needed to
//! turn their results into tables and figures.

mod analysis;
mod report;
mod svg;

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{mpsc, Mutex};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Metadata};
use crate::data::{cifar10_paths, load_cifar10_bin, load_mnist_dir, split, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::{efficiency_report, EfficiencyMetrics};
use crate::model::{build, ModelKind, ModelSpec};
use crate::regularizer::{RegKind, RegSpec};
use crate::scalar::Scalar;
use crate::snn::{calibrate, convert, snn_report, DEFAULT_PERCENTILE};
use crate::train::{fit, Splits, TrainConfig};

pub use analysis::{
    auc, collapse_index, curve_points, select_best, smooth_curve, spearman, trend_correlation, CurvePoint,
};
pub use report::{emit_reports, format_auc_cell, sweep_curves, ReportFiles, SweepCurve, RESULTS_HEADER};
pub use svg::{contour_svg, line_plot_svg, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn default_timesteps(self) -> usize {
        match self {
            DatasetKind::Mnist => 100,
            DatasetKind::Cifar10 => 1000,
        }
    }

    pub fn default_budget(self) -> f64 {
        match self {
            DatasetKind::Mnist => 0.005,
            DatasetKind::Cifar10 => 0.05,
        }
    }

    pub fn sample_shape(self) -> [usize; 3] {
        match self {
            DatasetKind::Mnist => [1, 28, 28],
            DatasetKind::Cifar10 => [3, 32, 32],
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            _ => Err(Error::Usage(format!("unknown dataset '{s}'"))),
        }
    }
}

/// Mantissas {1, 3, 5, 7, 9} times every decade from 1e-5 to 1e0.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut grid = Vec::new();
    for e in -5..=0 {
        for m in [1.0, 3.0, 5.0, 7.0, 9.0] {
            // parse the decimal literal so grid values print exactly
            grid.push(format!("{m}e{e}").parse::<f64>().unwrap());
        }
    }
    grid
}

/// Train/validation/test data plus the calibration set for conversion.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub dataset: DatasetKind,
    pub splits: Splits,
}

impl DataBundle {
    /// Loads `data_dir/mnist` or `data_dir/cifar10`, holds out the
    /// validation split, then keeps the first `train_subset` training and
    /// `eval_subset` test samples when given.
    pub fn load(
        dataset: DatasetKind,
        data_dir: &Path,
        seed: u64,
        train_subset: Option<usize>,
        eval_subset: Option<usize>,
    ) -> Result<Self> {
        let (full_train, test) = match dataset {
            DatasetKind::Mnist => {
                let dir = data_dir.join("mnist");
                (load_mnist_dir(&dir, true)?, load_mnist_dir(&dir, false)?)
            }
            DatasetKind::Cifar10 => {
                let dir = data_dir.join("cifar10");
                (
                    load_cifar10_bin(&cifar10_paths(&dir, true))?,
                    load_cifar10_bin(&cifar10_paths(&dir, false))?,
                )
            }
        };
        Self::from_sets(dataset, full_train, test, seed, train_subset, eval_subset)
    }

    pub fn from_sets(
        dataset: DatasetKind,
        full_train: Dataset,
        test: Dataset,
        seed: u64,
        train_subset: Option<usize>,
        eval_subset: Option<usize>,
    ) -> Result<Self> {
        let validation = SplitSpec::new(seed).validation.min(full_train.len() / 10).max(1);
        let (mut train, val) = split(&full_train, &SplitSpec { validation, seed })?;
        if let Some(n) = train_subset {
            train = train.head(n);
        }
        let test = match eval_subset {
            Some(n) => test.head(n),
            None => test,
        };
        Ok(DataBundle {
            dataset,
            splits: Splits { train, val, test },
        })
    }
}

/// Everything a sweep needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub model: ModelKind,
    pub dataset: DatasetKind,
    pub regularizers: Vec<RegKind>,
    pub lambdas: Vec<f64>,
    pub timesteps: usize,
    pub seed: u64,
    /// Largest tolerated SNN accuracy drop, as a fraction.
    pub budget: f64,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    pub percentile: f64,
    pub workers: usize,
    /// Whether the unregularized reference run is part of the sweep.
    pub include_baseline: bool,
}

impl SweepConfig {
    pub fn new(model: ModelKind, dataset: DatasetKind, out_dir: impl Into<PathBuf>) -> Self {
        SweepConfig {
            model,
            dataset,
            regularizers: RegKind::sweep_kinds(),
            lambdas: default_lambda_grid(),
            timesteps: dataset.default_timesteps(),
            seed: 0,
            budget: dataset.default_budget(),
            out_dir: out_dir.into(),
            train: TrainConfig::default(),
            percentile: DEFAULT_PERCENTILE,
            workers: 1,
            include_baseline: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0) {
            return Err(Error::Usage("accuracy budget must be positive".into()));
        }
        if self.timesteps == 0 || self.workers == 0 {
            return Err(Error::Usage("timesteps and workers must be at least 1".into()));
        }
        if self.lambdas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Usage("lambda grid must be strictly ascending".into()));
        }
        if self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Usage("lambda values must be finite and non-negative".into()));
        }
        for k in &self.regularizers {
            k.validate()?;
        }
        self.train.validate()
    }

    /// Every `(regularizer, lambda)` pair in execution order.
    pub fn pairs(&self) -> Vec<(RegKind, f64)> {
        let mut pairs = Vec::new();
        if self.include_baseline {
            pairs.push((RegKind::None, 0.0));
        }
        for &k in &self.regularizers {
            for &l in &self.lambdas {
                let dup = pairs.iter().any(|&(pk, pl): &(RegKind, f64)| pk == k && pl == l);
                if !dup {
                    pairs.push((k, l));
                }
            }
        }
        pairs
    }

    pub fn ledger_path(&self) -> PathBuf {
        self.out_dir.join("runs.csv")
    }
}

mod reg_label {
    use super::RegKind;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &RegKind, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(k)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RegKind, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One row of the sweep ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(with = "reg_label")]
    pub reg: RegKind,
    pub lambda: f64,
    pub dnn_acc: f64,
    pub snn_acc: f64,
    pub spikes: f64,
    pub eflops: f64,
    pub synops: f64,
    pub input_synops: f64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub checkpoint: String,
    /// Empty for successful runs.
    pub error: String,
}

impl RunRecord {
    pub fn failed(reg: RegKind, lambda: f64, error: &Error) -> Self {
        RunRecord {
            reg,
            lambda,
            dnn_acc: 0.0,
            snn_acc: 0.0,
            spikes: 0.0,
            eflops: 0.0,
            synops: 0.0,
            input_synops: 0.0,
            epochs: 0,
            best_epoch: 0,
            checkpoint: String::new(),
            error: error.to_string().replace(['\n', '\r'], " "),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_empty()
    }

    pub fn is_baseline(&self) -> bool {
        self.reg == RegKind::None || self.lambda == 0.0
    }

    pub fn metrics(&self) -> EfficiencyMetrics {
        EfficiencyMetrics {
            spikes: self.spikes,
            eflops: self.eflops,
            synops: self.synops,
        }
    }

    fn key(&self) -> (String, u64) {
        (self.reg.to_string(), self.lambda.to_bits())
    }
}

/// Reads a ledger; a missing file is an empty ledger.
pub fn read_ledger(path: &Path) -> Result<Vec<RunRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

/// Appends records to a ledger, writing the header if the file is new.
pub struct LedgerWriter {
    path: PathBuf,
    inner: csv::Writer<fs::File>,
}

impl LedgerWriter {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let inner = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(LedgerWriter {
            path: path.to_path_buf(),
            inner,
        })
    }

    pub fn append(&mut self, record: &RunRecord) -> Result<()> {
        self.inner.serialize(record)?;
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn file_stem(model: ModelKind, reg: RegKind, lambda: f64) -> String {
    let model = match model {
        ModelKind::Mlp => "mlp",
        ModelKind::Lenet5 => "lenet5",
    };
    format!("{model}_{reg}_{lambda}")
}

/// Trains, measures, converts and simulates one `(regularizer, lambda)`
/// point. Checkpoints go to `out_dir/checkpoints`.
pub fn run_point<T: Scalar>(cfg: &SweepConfig, data: &DataBundle, reg: RegKind, lambda: f64) -> Result<RunRecord> {
    let spec = ModelSpec::for_kind(cfg.model, cfg.dataset.sample_shape());
    let reg_spec = if reg == RegKind::None {
        RegSpec::none()
    } else {
        RegSpec::new(reg, lambda)
    };
    let train_cfg = TrainConfig {
        reg: reg_spec,
        seed: cfg.seed,
        ..cfg.train
    };
    log::info!("run {} {reg} @ {lambda}", cfg.model);
    let init = build::<T>(&spec, cfg.seed)?;
    let (params, report) = fit(&spec, init, &data.splits, &train_cfg, |_| {})?;
    let eff = efficiency_report(&spec, &params, &data.splits.test, train_cfg.eval_batch_size)?;
    let stats = calibrate(&spec, &params, &data.splits.train, cfg.percentile, train_cfg.eval_batch_size)?;
    let snn = convert(&params, &spec, &stats)?;
    let sim = snn_report(&snn, &data.splits.test, cfg.timesteps, 1)?;

    let dir = cfg.out_dir.join("checkpoints");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let stem = file_stem(cfg.model, reg, lambda);
    let best = report.best();
    let meta = Metadata {
        reg: reg.to_string(),
        lambda,
        seed: cfg.seed,
        epochs: report.epochs.len(),
        best_epoch: report.best_epoch,
        train_loss: best.train_loss,
        val_loss: best.val_loss,
        extra: Default::default(),
    };
    let ckpt = dir.join(format!("{stem}.ckpt"));
    save_checkpoint(&ckpt, &params, &spec, &meta)?;
    snn.save(dir.join(format!("{stem}.snn")), &meta)?;
    report.write_csv(&dir.join(format!("{stem}_train.csv")))?;

    Ok(RunRecord {
        reg,
        lambda,
        dnn_acc: eff.accuracy,
        snn_acc: sim.accuracy,
        spikes: sim.spikes,
        eflops: eff.total_eflops,
        synops: sim.synops,
        input_synops: sim.input_synops,
        epochs: report.epochs.len(),
        best_epoch: report.best_epoch,
        checkpoint: ckpt.display().to_string(),
        error: String::new(),
    })
}

/// Runs every pair of the sweep not yet in the ledger, appending one record
/// per pair as it completes. A failing pair is recorded with its error and
/// the sweep continues. Returns the full ledger afterwards.
pub fn run_sweep<T: Scalar>(cfg: &SweepConfig, data: &DataBundle) -> Result<Vec<RunRecord>> {
    run_sweep_with(cfg, |reg, lambda| run_point::<T>(cfg, data, reg, lambda))
}

/// [`run_sweep`] with a custom per-pair runner.
pub fn run_sweep_with<F>(cfg: &SweepConfig, runner: F) -> Result<Vec<RunRecord>>
where
    F: Fn(RegKind, f64) -> Result<RunRecord> + Sync,
{
    cfg.validate()?;
    let ledger = cfg.ledger_path();
    let done: HashSet<(String, u64)> = read_ledger(&ledger)?.iter().map(RunRecord::key).collect();
    let todo: VecDeque<(RegKind, f64)> = cfg
        .pairs()
        .into_iter()
        .filter(|(k, l)| !done.contains(&(k.to_string(), l.to_bits())))
        .collect();
    log::info!("{} of {} sweep points pending", todo.len(), cfg.pairs().len());
    let mut writer = LedgerWriter::open(&ledger)?;
    let queue = Mutex::new(todo);
    let (tx, rx) = mpsc::channel::<RunRecord>();
    let runner = &runner;
    let queue = &queue;
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..cfg.workers {
            let tx = tx.clone();
            scope.spawn(move || loop {
                let next = queue.lock().unwrap().pop_front();
                let Some((reg, lambda)) = next else { break };
                let record = runner(reg, lambda).unwrap_or_else(|e| {
                    log::error!("{reg} @ {lambda} failed: {e}");
                    RunRecord::failed(reg, lambda, &e)
                });
                if tx.send(record).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for record in rx {
            writer.append(&record)?;
        }
        Ok(())
    })?;
    read_ledger(&ledger)
}
