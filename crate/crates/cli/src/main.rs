use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gdsolver_core::data::{gen_regression, split, Dataset, RegressionKind, RegressionTask, Split};
use gdsolver_core::driver::{gdsolver, select_misclassified, solver_sweep, two_loop, DataSplits, Record, TrainingRun};
use gdsolver_core::encoder::{encode_classification, encode_regression, EncoderConfig};
use gdsolver_core::experiment::{
    run_experiment1, run_experiment2, write_csv, Experiment1Config, Experiment2Config, MetricsRow, HYBRID,
};
use gdsolver_core::milp::write_lp;
use gdsolver_core::optim::{Optimizer, OptimizerKind};
use gdsolver_core::{Activation, Dnn, Error, GdSolverConfig, MilpModel, SolverConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EXIT_ARGS: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "gdsolver", version, about = "Gradient descent with MILP final-layer sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a regression network with the GD/solver loop.
    Regress(RunArgs),
    /// Train a classifier with the two-loop protocol.
    Classify(RunArgs),
    /// Run one solver sweep on a saved network.
    SweepOnly(RunArgs),
    /// Write the sweep encoding of a saved network as an LP file.
    ExportLp(RunArgs),
    /// Epoch sweep on a regression task: four baselines and the hybrid.
    Experiment1(RunArgs),
    /// Data-efficiency grid on a classification task.
    Experiment2(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Identity,
    Affine,
    Poly4,
    Formula,
    Blobs,
    Mnist,
}

impl Task {
    fn regression(self) -> Option<RegressionKind> {
        match self {
            Task::Identity => Some(RegressionKind::Identity),
            Task::Affine => Some(RegressionKind::Affine),
            Task::Poly4 => Some(RegressionKind::Polynomial4),
            Task::Formula => Some(RegressionKind::Formula),
            Task::Blobs | Task::Mnist => None,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    task: Option<Task>,
    #[arg(long, default_value = "sgd")]
    optimizer: OptimizerKind,
    /// GD epochs (per phase for regress, total budget otherwise).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: Option<u64>,
    /// Points generated for regression tasks; training-set size for classification.
    #[arg(long = "train-size", value_parser = clap::value_parser!(u64).range(1..))]
    train_size: Option<u64>,
    #[arg(long, default_value_t = 0.1)]
    radius: f64,
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    #[arg(long = "big-m")]
    big_m: Option<f64>,
    /// Solver time limit in seconds per sweep.
    #[arg(long = "time-limit")]
    time_limit: Option<f64>,
    /// Leading training points per regression sweep.
    #[arg(long = "sweep-size", default_value_t = 32)]
    sweep_size: usize,
    /// Encode every training point in regression sweeps.
    #[arg(long = "full-sweep", conflicts_with = "sweep_size")]
    full_sweep: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "lp-out")]
    lp_out: Option<PathBuf>,
    #[arg(long = "mnist-dir")]
    mnist_dir: Option<PathBuf>,
    /// Network snapshot to load.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Where to save the resulting network.
    #[arg(long = "snapshot-out")]
    snapshot_out: Option<PathBuf>,
    #[arg(long = "retry-on-infeasible")]
    retry_on_infeasible: bool,
}

#[derive(Debug)]
struct ArgError(String);

impl std::fmt::Display for ArgError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ArgError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ArgError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ArgError>().is_some() {
        return EXIT_ARGS;
    }
    if err.downcast_ref::<io::Error>().is_some() {
        return EXIT_IO;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidInput(_) | Error::Config(_)) => EXIT_ARGS,
        Some(Error::Io { .. } | Error::Format(_)) => EXIT_IO,
        Some(Error::Numerical { .. } | Error::Internal(_)) | None => EXIT_NUMERICAL,
    }
}

impl RunArgs {
    fn solver_config(&self, default_limit: Duration) -> anyhow::Result<GdSolverConfig> {
        let time_limit = match self.time_limit {
            Some(t) if t > 0.0 && t.is_finite() => Duration::from_secs_f64(t),
            Some(_) => return Err(bad("--time-limit must be a positive number of seconds")),
            None => default_limit,
        };
        let mut cfg = GdSolverConfig {
            seed: self.seed,
            retry_on_infeasible: self.retry_on_infeasible,
            sweep_size: (!self.full_sweep).then_some(self.sweep_size),
            encoder: EncoderConfig {
                eps_margin: self.epsilon,
                big_m: self.big_m,
                ..EncoderConfig::with_radius(self.radius)
            },
            ..GdSolverConfig::default()
        };
        cfg.solver.time_limit = time_limit;
        cfg.validate()?;
        Ok(cfg)
    }

    fn task(&self) -> anyhow::Result<Task> {
        self.task.ok_or_else(|| bad("--task is required"))
    }

    fn regression_task(&self) -> anyhow::Result<RegressionKind> {
        self.task()?
            .regression()
            .ok_or_else(|| bad("this command needs a regression task (identity, affine, poly4, formula)"))
    }

    fn experiment2(&self) -> anyhow::Result<Experiment2Config> {
        let mut cfg = match self.task()? {
            Task::Blobs => Experiment2Config::blobs(self.seed),
            Task::Mnist => {
                let dir = self.mnist_dir.clone().ok_or_else(|| bad("--task mnist needs --mnist-dir"))?;
                Experiment2Config::mnist(dir, self.seed)
            }
            _ => return Err(bad("this command needs a classification task (blobs, mnist)")),
        };
        cfg.hybrid_optimizer = self.optimizer;
        if let Some(e) = self.epochs {
            cfg.epochs = e as usize;
        }
        if let Some(n) = self.train_size {
            cfg.n_grid = vec![n as usize];
        }
        cfg.solver = self.solver_config(cfg.solver.solver.time_limit)?;
        Ok(cfg)
    }

    /// Train/validation/test data for the selected task.
    fn data(&self) -> anyhow::Result<DataSplits> {
        match self.task()?.regression() {
            Some(kind) => {
                let n = self.train_size.unwrap_or(500) as usize;
                let ds = gen_regression(&RegressionTask::new(kind), n, self.seed)?;
                let (train, val, test) = split(&ds, &Split { seed: self.seed, ..Split::default() })?;
                Ok(DataSplits { train, val, test })
            }
            None => {
                let mut cfg = self.experiment2()?;
                let n = cfg.n_grid.iter().copied().min().unwrap_or(250);
                cfg.n_grid = vec![n];
                let (pool, val, test) = cfg.load()?;
                Ok(DataSplits {
                    train: pool.take(n),
                    val,
                    test,
                })
            }
        }
    }

    fn load_snapshot(&self) -> anyhow::Result<Dnn> {
        let path = self.snapshot.as_ref().ok_or_else(|| bad("--snapshot is required"))?;
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Dnn::from_json(&text)?)
    }
}

fn fresh_network(data: &DataSplits, hidden: &[usize], seed: u64) -> anyhow::Result<Dnn> {
    let mut dims = vec![data.train.input_dim()];
    dims.extend(hidden);
    dims.push(data.train.output_dim());
    Ok(Dnn::random(&dims, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(seed))?)
}

fn save_snapshot(path: Option<&Path>, dnn: &Dnn) -> anyhow::Result<()> {
    if let Some(p) = path {
        std::fs::write(p, dnn.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn emit_csv(path: Option<&Path>, manifest: &str, rows: &[MetricsRow]) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            write_csv(BufWriter::new(f), manifest, rows)?;
        }
        None => write_csv(io::stdout().lock(), manifest, rows)?,
    }
    Ok(())
}

fn record_rows(method: &str, run: &TrainingRun) -> Vec<MetricsRow> {
    let mut sweeps = run.sweeps.iter();
    run.records
        .iter()
        .map(|r: &Record| {
            let phase = match r.phase {
                gdsolver_core::driver::Phase::Gd => "gd".to_string(),
                gdsolver_core::driver::Phase::Sweep => {
                    format!("sweep:{}", sweeps.next().map_or("unknown", |s| s.outcome.label()))
                }
            };
            MetricsRow {
                method: method.to_string(),
                phase,
                epoch: r.index,
                train_loss: r.train_loss,
                val_loss: r.val_loss,
                test_loss: r.test_loss,
                test_accuracy: r.test_accuracy,
                elapsed_ms: r.elapsed.as_secs_f64() * 1e3,
            }
        })
        .collect()
}

fn run_manifest(command: &str, a: &RunArgs, cfg: &GdSolverConfig) -> String {
    format!(
        "{command} task={} optimizer={} epochs={:?} train_size={:?} radius={} bias_radius={:?} eps={} big_m={:?} sweep_size={:?} sweep_batch={} time_limit_s={} retry_on_infeasible={} seed={}",
        a.task.and_then(|t| t.to_possible_value()).map_or("none".into(), |v| v.get_name().to_string()),
        a.optimizer,
        a.epochs,
        a.train_size,
        cfg.encoder.radius_r,
        cfg.encoder.bias_radius,
        cfg.encoder.eps_margin,
        cfg.encoder.big_m,
        cfg.sweep_size,
        cfg.sweep_batch,
        cfg.solver.time_limit.as_secs_f64(),
        cfg.retry_on_infeasible,
        a.seed,
    )
}

fn finish_run(command: &str, a: &RunArgs, cfg: &GdSolverConfig, run: TrainingRun) -> anyhow::Result<()> {
    emit_csv(a.out.as_deref(), &run_manifest(command, a, cfg), &record_rows(HYBRID, &run))?;
    save_snapshot(a.snapshot_out.as_deref(), &run.final_dnn)?;
    match run.abort {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn regress(a: &RunArgs) -> anyhow::Result<()> {
    a.regression_task()?;
    let mut cfg = a.solver_config(SolverConfig::default().time_limit)?;
    if let Some(e) = a.epochs {
        cfg.max_epochs_per_gd_phase = e as usize;
    }
    let data = a.data()?;
    let dnn = match &a.snapshot {
        Some(_) => a.load_snapshot()?,
        None => fresh_network(&data, &[16, 16], a.seed)?,
    };
    let run = gdsolver(dnn, &data, &mut Optimizer::new(a.optimizer), &cfg)?;
    finish_run("regress", a, &cfg, run)
}

fn classify(a: &RunArgs) -> anyhow::Result<()> {
    let exp = a.experiment2()?;
    let data = a.data()?;
    let dnn = match &a.snapshot {
        Some(_) => a.load_snapshot()?,
        None => fresh_network(&data, &exp.hidden, a.seed)?,
    };
    let run = two_loop(dnn, &data, &mut Optimizer::new(a.optimizer), exp.epochs, &exp.solver)?;
    finish_run("classify", a, &exp.solver, run)
}

fn sweep_config(a: &RunArgs) -> anyhow::Result<GdSolverConfig> {
    if a.task()?.regression().is_some() {
        a.solver_config(SolverConfig::default().time_limit)
    } else {
        Ok(a.experiment2()?.solver)
    }
}

fn sweep_only(a: &RunArgs) -> anyhow::Result<()> {
    let cfg = sweep_config(a)?;
    let data = a.data()?;
    let mut dnn = a.load_snapshot()?;
    let rep = solver_sweep(&mut dnn, &data.train, &cfg)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "outcome={} encoded={} vars={} constraints={} nodes={} elapsed_ms={:.3}",
        rep.outcome.label(),
        rep.encoded.len(),
        rep.num_vars,
        rep.num_constraints,
        rep.nodes,
        rep.elapsed.as_secs_f64() * 1e3
    )?;
    save_snapshot(a.snapshot_out.as_deref(), &dnn)
}

/// The model a sweep on `train` would hand to the solver.
fn sweep_model(dnn: &Dnn, train: &Dataset, cfg: &GdSolverConfig) -> anyhow::Result<MilpModel> {
    let layer = dnn.final_layer();
    if let Some(labels) = train.labels() {
        let idx = select_misclassified(dnn, train, cfg.sweep_batch)?;
        if idx.is_empty() {
            return Err(anyhow!(Error::InvalidInput("no misclassified training points to encode".into())));
        }
        let xs: Vec<Vec<f64>> = idx.iter().map(|&t| train.x[t].clone()).collect();
        let lb: Vec<usize> = idx.iter().map(|&t| labels[t]).collect();
        let h = dnn.hidden_features(&xs)?;
        Ok(encode_classification(layer, &h, &lb, &cfg.encoder)?.model)
    } else {
        let ys = train.real_targets().expect("regression targets");
        let n = cfg.sweep_size.unwrap_or(train.len()).min(train.len());
        let h = dnn.hidden_features(&train.x[..n])?;
        Ok(encode_regression(layer, &h, &ys[..n], &cfg.encoder)?.model)
    }
}

fn export_lp(a: &RunArgs) -> anyhow::Result<()> {
    let path = a.lp_out.as_ref().ok_or_else(|| bad("--lp-out is required"))?;
    let cfg = sweep_config(a)?;
    let data = a.data()?;
    let dnn = a.load_snapshot()?;
    let model = sweep_model(&dnn, &data.train, &cfg)?;
    std::fs::write(path, write_lp(&model)).with_context(|| format!("writing {}", path.display()))?;
    println!("variables={} constraints={}", model.num_vars(), model.num_constraints());
    Ok(())
}

fn experiment1(a: &RunArgs) -> anyhow::Result<()> {
    let mut cfg = Experiment1Config::new(RegressionTask::new(a.regression_task()?), a.seed);
    if let Some(e) = a.epochs {
        cfg.max_epochs = e as usize;
    }
    if let Some(n) = a.train_size {
        cfg.n = n as usize;
    }
    cfg.solver = a.solver_config(SolverConfig::default().time_limit)?;
    let rows = run_experiment1(&cfg)?;
    emit_csv(a.out.as_deref(), &cfg.manifest(), &rows)
}

fn experiment2(a: &RunArgs) -> anyhow::Result<()> {
    let cfg = a.experiment2()?;
    let rows = run_experiment2(&cfg)?;
    emit_csv(a.out.as_deref(), &cfg.manifest(), &rows)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Regress(a) => regress(a),
        Command::Classify(a) => classify(a),
        Command::SweepOnly(a) => sweep_only(a),
        Command::ExportLp(a) => export_lp(a),
        Command::Experiment1(a) => experiment1(a),
        Command::Experiment2(a) => experiment2(a),
    }
}

/// The error chain, skipping causes already quoted by an outer message.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gdsolver: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
