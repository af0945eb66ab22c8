use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use spikesparse::checkpoint::{load_checkpoint, save_checkpoint, Metadata};
use spikesparse::data::{load_cifar10_bin, load_mnist_dir, cifar10_paths};
use spikesparse::experiment::{
    default_lambda_grid, emit_reports, read_ledger, run_sweep, DataBundle, DatasetKind, SweepConfig,
};
use spikesparse::metrics::efficiency_report;
use spikesparse::model::build;
use spikesparse::regularizer::{landscape_grid, LandscapeGrid};
use spikesparse::snn::{calibrate, convert, snn_report, SnnModel, DEFAULT_PERCENTILE};
use spikesparse::train::{fit, TrainConfig};
use spikesparse::{Error, ModelKind, ModelSpec, Real, RegKind, RegSpec, Result};

#[derive(Parser, Debug)]
#[command(name = "spikesparse", version, about = "Activity-sparse training and spiking conversion")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one network and save its checkpoint.
    Train(TrainArgs),
    /// Calibrate a checkpoint on the training set and convert it to an SNN.
    Convert(ConvertArgs),
    /// Simulate a converted network on the test set.
    Simulate(SimulateArgs),
    /// Run a resumable sweep over regularizers and lambdas, then write reports.
    Sweep(SweepArgs),
    /// Regenerate tables and figures from a sweep ledger.
    Report(ReportArgs),
    /// Sample penalty landscapes on a 2-D grid.
    Landscape(LandscapeArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long, default_value = "mlp")]
    model: ModelKind,
    #[arg(long, default_value = "mnist")]
    dataset: DatasetKind,
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep only the first N training samples (after the validation split).
    #[arg(long)]
    subset: Option<usize>,
    /// Keep only the first N test samples.
    #[arg(long)]
    eval_subset: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct TrainOpts {
    #[arg(long, default_value_t = 200)]
    max_epochs: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 1e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    opts: TrainOpts,
    /// l2, l1, lp, hoyer, hoyer-square or none.
    #[arg(long, default_value = "none")]
    reg: String,
    /// Exponent for `--reg lp`.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PERCENTILE)]
    percentile: f64,
    /// Output path; defaults to the checkpoint path with an `.snn` extension.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    snn: PathBuf,
    /// Defaults to 100 for MNIST and 1000 for CIFAR-10.
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    opts: TrainOpts,
    /// Regularizers to sweep; repeat or comma-separate. Defaults to the full set.
    #[arg(long, value_delimiter = ',')]
    reg: Vec<String>,
    /// Exponent used for every `lp` entry of `--reg`.
    #[arg(long)]
    p: Option<f64>,
    /// Lambda grid; defaults to {1,3,5,7,9} x 1e-5..1e0.
    #[arg(long = "lambda", value_delimiter = ',')]
    lambdas: Vec<f64>,
    #[arg(long)]
    timesteps: Option<usize>,
    /// Tolerated SNN accuracy drop as a fraction (0.005 MNIST, 0.05 CIFAR-10).
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    no_baseline: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long, default_value = "mlp")]
    model: ModelKind,
    #[arg(long, default_value = "mnist")]
    dataset: DatasetKind,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Ledger to read; defaults to `<out-dir>/runs.csv`.
    #[arg(long)]
    ledger: Option<PathBuf>,
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Args, Debug)]
struct LandscapeArgs {
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Penalties to sample; defaults to L2, L1, L0.5, H and Hs.
    #[arg(long, value_delimiter = ',')]
    reg: Vec<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    range: f64,
    #[arg(long, default_value_t = 101)]
    resolution: usize,
}

fn parse_reg(name: &str, p: Option<f64>) -> Result<RegKind> {
    match name.trim().to_ascii_lowercase().as_str() {
        "lp" => {
            let p = p.ok_or_else(|| Error::Usage("--reg lp needs --p".into()))?;
            let kind = RegKind::Lp(p);
            kind.validate()?;
            Ok(kind)
        }
        _ => name.parse(),
    }
}

fn model_label(model: ModelKind) -> &'static str {
    match model {
        ModelKind::Mlp => "mlp",
        ModelKind::Lenet5 => "lenet5",
    }
}

fn train_config(opts: &TrainOpts, seed: u64, reg: RegSpec) -> TrainConfig {
    TrainConfig {
        learning_rate: opts.learning_rate,
        batch_size: opts.batch_size,
        patience: opts.patience,
        max_epochs: opts.max_epochs,
        seed,
        reg,
        ..TrainConfig::default()
    }
}

fn load_bundle(c: &Common) -> Result<DataBundle> {
    DataBundle::load(c.dataset, &c.data_dir, c.seed, c.subset, c.eval_subset)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let kind = parse_reg(&a.reg, a.p)?;
    let reg = if kind == RegKind::None {
        RegSpec::none()
    } else {
        RegSpec::new(kind, a.lambda)
    };
    let cfg = train_config(&a.opts, a.common.seed, reg);
    cfg.validate()?;
    let data = load_bundle(&a.common)?;
    let spec = ModelSpec::for_kind(a.common.model, a.common.dataset.sample_shape());
    let init = build::<Real>(&spec, a.common.seed)?;
    let (params, report) = fit(&spec, init, &data.splits, &cfg, |_| {})?;
    create_dir(&a.common.out_dir)?;
    let stem = format!("{}_{}_{}", model_label(a.common.model), kind, reg.lambda);
    let best = report.best();
    let meta = Metadata {
        reg: kind.to_string(),
        lambda: reg.lambda,
        seed: a.common.seed,
        epochs: report.epochs.len(),
        best_epoch: report.best_epoch,
        train_loss: best.train_loss,
        val_loss: best.val_loss,
        extra: Default::default(),
    };
    let ckpt = a.common.out_dir.join(format!("{stem}.ckpt"));
    save_checkpoint(&ckpt, &params, &spec, &meta)?;
    report.write_csv(&a.common.out_dir.join(format!("{stem}_train.csv")))?;
    let eff = efficiency_report(&spec, &params, &data.splits.test, cfg.eval_batch_size)?;
    eff.write_csv(&a.common.out_dir.join(format!("{stem}_eflops.csv")))?;
    println!(
        "checkpoint {} | epochs {} (best {}) | test accuracy {:.4} | EFLOPS {:.0}",
        ckpt.display(),
        report.epochs.len(),
        report.best_epoch,
        eff.accuracy,
        eff.total_eflops
    );
    Ok(())
}

fn cmd_convert(a: ConvertArgs) -> Result<()> {
    let (params, spec, meta) = load_checkpoint::<Real>(&a.checkpoint)?;
    if spec.input_shape != a.common.dataset.sample_shape() {
        return Err(Error::Usage(format!(
            "checkpoint expects {:?} inputs, {} provides {:?}",
            spec.input_shape,
            a.common.dataset,
            a.common.dataset.sample_shape()
        )));
    }
    let data = load_bundle(&a.common)?;
    let stats = calibrate(&spec, &params, &data.splits.train, a.percentile, 500)?;
    let snn = convert(&params, &spec, &stats)?;
    let out = a.output.unwrap_or_else(|| a.checkpoint.with_extension("snn"));
    snn.save(&out, &meta)?;
    let scales: Vec<String> = stats.scales.iter().map(|s| format!("{s:.4}")).collect();
    println!("snn {} | scales [{}]", out.display(), scales.join(", "));
    Ok(())
}

fn load_test(c: &Common) -> Result<spikesparse::data::Dataset> {
    let test = match c.dataset {
        DatasetKind::Mnist => load_mnist_dir(c.data_dir.join("mnist"), false)?,
        DatasetKind::Cifar10 => load_cifar10_bin(&cifar10_paths(c.data_dir.join("cifar10"), false))?,
    };
    Ok(match c.eval_subset {
        Some(n) => test.head(n),
        None => test,
    })
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let (snn, _) = SnnModel::<Real>::load(&a.snn)?;
    let test = load_test(&a.common)?;
    if snn.input_len() != test.sample_len() {
        return Err(Error::Usage(format!(
            "network takes {} inputs, {} samples have {}",
            snn.input_len(),
            a.common.dataset,
            test.sample_len()
        )));
    }
    let t = a.timesteps.unwrap_or(a.common.dataset.default_timesteps());
    let report = snn_report(&snn, &test, t, a.workers)?;
    create_dir(&a.common.out_dir)?;
    let csv = a.common.out_dir.join(format!(
        "{}_snn.csv",
        a.snn.file_stem().and_then(|s| s.to_str()).unwrap_or("snn")
    ));
    report.write_csv(&csv)?;
    println!(
        "T {} | accuracy {:.4} | spikes {:.1} | SynOps {:.1} (input {:.1}) | {}",
        report.timesteps,
        report.accuracy,
        report.spikes,
        report.synops,
        report.input_synops,
        csv.display()
    );
    Ok(())
}

fn default_landscapes() -> Result<Vec<LandscapeGrid>> {
    [RegKind::L2, RegKind::L1, RegKind::Lp(0.5), RegKind::Hoyer, RegKind::HoyerSquare]
        .into_iter()
        .map(|k| landscape_grid(k, 1.0, 101))
        .collect()
}

fn write_reports(model: ModelKind, budget: f64, ledger: &Path, out_dir: &Path) -> Result<()> {
    let records = read_ledger(ledger)?;
    let landscapes = if records.is_empty() { Vec::new() } else { default_landscapes()? };
    let files = emit_reports(&records, model_label(model), budget, &landscapes, &out_dir.join("report"))?;
    println!(
        "{} records -> {} CSV and {} SVG files in {}",
        records.len(),
        files.csv.len(),
        files.svg.len(),
        out_dir.join("report").display()
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let c = &a.common;
    let mut cfg = SweepConfig::new(c.model, c.dataset, &c.out_dir);
    if !a.reg.is_empty() {
        cfg.regularizers = a.reg.iter().map(|r| parse_reg(r, a.p)).collect::<Result<_>>()?;
    }
    cfg.lambdas = if a.lambdas.is_empty() { default_lambda_grid() } else { a.lambdas.clone() };
    cfg.lambdas.sort_by(f64::total_cmp);
    cfg.lambdas.dedup();
    if let Some(t) = a.timesteps {
        cfg.timesteps = t;
    }
    if let Some(b) = a.budget {
        cfg.budget = b;
    }
    cfg.seed = c.seed;
    cfg.workers = a.workers;
    cfg.include_baseline = !a.no_baseline;
    cfg.train = train_config(&a.opts, c.seed, RegSpec::none());
    cfg.validate()?;
    let data = load_bundle(c)?;
    info!(
        "sweep: {} train / {} val / {} test samples",
        data.splits.train.len(),
        data.splits.val.len(),
        data.splits.test.len()
    );
    let records = run_sweep::<Real>(&cfg, &data)?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    println!("{} records in {} ({failed} failed)", records.len(), cfg.ledger_path().display());
    write_reports(c.model, cfg.budget, &cfg.ledger_path(), &c.out_dir)
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let ledger = a.ledger.unwrap_or_else(|| a.out_dir.join("runs.csv"));
    if !ledger.exists() {
        return Err(Error::io(&ledger, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    write_reports(a.model, a.budget.unwrap_or(a.dataset.default_budget()), &ledger, &a.out_dir)
}

fn cmd_landscape(a: LandscapeArgs) -> Result<()> {
    let kinds: Vec<RegKind> = if a.reg.is_empty() {
        vec![RegKind::L2, RegKind::L1, RegKind::Lp(0.5), RegKind::Hoyer, RegKind::HoyerSquare]
    } else {
        a.reg.iter().map(|r| parse_reg(r, a.p)).collect::<Result<_>>()?
    };
    create_dir(&a.out_dir)?;
    for k in kinds {
        let grid = landscape_grid(k, a.range, a.resolution)?;
        let csv = a.out_dir.join(format!("landscape_{k}.csv"));
        let svg = a.out_dir.join(format!("landscape_{k}.svg"));
        grid.write_csv(&csv)?;
        std::fs::write(&svg, spikesparse::experiment::contour_svg(&grid, 8)).map_err(|e| Error::io(&svg, e))?;
        println!("{} {}", csv.display(), svg.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Convert(a) => cmd_convert(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
        Command::Landscape(a) => cmd_landscape(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
