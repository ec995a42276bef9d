//! Experiment harnesses.
//!
//! Experiment 1 trains each baseline for `max_epochs` epochs with a
//! checkpoint per epoch; the hybrid method at epoch `e` is the SGD
//! checkpoint at `e` plus one solver sweep, timed as SGD time plus sweep
//! time. Experiment 2 compares baselines trained for `e` epochs against the
//! two-loop protocol over a grid of training-set sizes.

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{gen_blobs, gen_regression, load_mnist, split, Dataset, MnistPart, RegressionTask, Split};
use crate::driver::{evaluate, solver_sweep, two_loop, DataSplits, GdSolverConfig, Trainer};
use crate::error::{Error, Result};
use crate::nn::{Activation, Dnn};
use crate::optim::{Optimizer, OptimizerKind, PlateauDetector};

pub const CSV_HEADER: [&str; 8] = [
    "method",
    "phase",
    "epoch",
    "train_loss",
    "val_loss",
    "test_loss",
    "test_accuracy",
    "elapsed_ms",
];

pub const HYBRID: &str = "gdsolver";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: String,
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: Option<f64>,
    pub elapsed_ms: f64,
}

/// Writes `# <manifest>` followed by the CSV header and rows.
pub fn write_csv<W: Write>(out: W, manifest: &str, rows: &[MetricsRow]) -> Result<()> {
    let mut out = out;
    let io = |e: std::io::Error| Error::io("csv output", e);
    for line in manifest.lines() {
        writeln!(out, "# {line}").map_err(io)?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.flush().map_err(io)
}

fn init(dims: &[usize], seed: u64) -> Result<Dnn> {
    Dnn::random(dims, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn optimizer(kind: OptimizerKind) -> Optimizer {
    Optimizer::new(kind)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment1Config {
    pub task: RegressionTask,
    pub n: usize,
    pub max_epochs: usize,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub split: Split,
    pub solver: GdSolverConfig,
}

impl Experiment1Config {
    pub fn new(task: RegressionTask, seed: u64) -> Self {
        Experiment1Config {
            task,
            n: 500,
            max_epochs: 20,
            hidden: vec![16, 16],
            batch_size: 32,
            seed,
            split: Split {
                seed,
                ..Split::default()
            },
            solver: GdSolverConfig {
                seed,
                ..GdSolverConfig::default()
            },
        }
    }

    /// One-line resolved configuration for the CSV header.
    pub fn manifest(&self) -> String {
        let s = &self.solver;
        format!(
            "experiment1 task={} n={} max_epochs={} hidden={:?} batch={} seed={} split=({},{},{}) radius={} bias_radius={:?} eps={} big_m={:?} sweep_size={:?} time_limit_s={} feasibility_only={}",
            self.task.kind,
            self.n,
            self.max_epochs,
            self.hidden,
            self.batch_size,
            self.seed,
            self.split.train,
            self.split.val,
            self.split.test,
            s.encoder.radius_r,
            s.encoder.bias_radius,
            s.encoder.eps_margin,
            s.encoder.big_m,
            s.sweep_size,
            s.solver.time_limit.as_secs_f64(),
            s.encoder.feasibility_only,
        )
    }
}

fn row(method: &str, phase: &str, epoch: usize, r: &crate::driver::Record) -> MetricsRow {
    MetricsRow {
        method: method.to_string(),
        phase: phase.to_string(),
        epoch,
        train_loss: r.train_loss,
        val_loss: r.val_loss,
        test_loss: r.test_loss,
        test_accuracy: r.test_accuracy,
        elapsed_ms: r.elapsed.as_secs_f64() * 1e3,
    }
}

/// Per-epoch rows for the four baselines and the hybrid method, ordered by
/// method then epoch.
pub fn run_experiment1(cfg: &Experiment1Config) -> Result<Vec<MetricsRow>> {
    if cfg.max_epochs == 0 {
        return Err(Error::Config("experiment 1 needs at least one epoch".into()));
    }
    cfg.solver.validate()?;
    let ds = gen_regression(&cfg.task, cfg.n, cfg.seed)?;
    let (train, val, test) = split(&ds, &cfg.split)?;
    let data = DataSplits { train, val, test };
    let mut dims = vec![ds.input_dim()];
    dims.extend(&cfg.hidden);
    dims.push(ds.output_dim());
    let dnn0 = init(&dims, cfg.seed)?;

    let mut rows = Vec::new();
    let mut hybrid = Vec::new();
    for kind in OptimizerKind::ALL {
        let mut dnn = dnn0.clone();
        let mut opt = optimizer(kind);
        let mut tr = Trainer::new(&data, cfg.batch_size, cfg.seed)?;
        let once = crate::driver::GdStop {
            max_epochs: 1,
            plateau: None,
        };
        for e in 1..=cfg.max_epochs {
            tr.gd_phase(&mut dnn, &mut opt, &once)?;
            let rec = tr.records().last().expect("one record per epoch").clone();
            rows.push(row(kind.as_str(), "gd", e, &rec));
            if kind == OptimizerKind::Sgd {
                let mut swept = dnn.clone();
                let rep = solver_sweep(&mut swept, &data.train, &cfg.solver)?;
                let (train_loss, _) = evaluate(&swept, &data.train)?;
                let (val_loss, _) = evaluate(&swept, &data.val)?;
                let (test_loss, _) = evaluate(&swept, &data.test)?;
                hybrid.push(MetricsRow {
                    method: HYBRID.to_string(),
                    phase: format!("sweep:{}", rep.outcome.label()),
                    epoch: e,
                    train_loss,
                    val_loss,
                    test_loss,
                    test_accuracy: None,
                    elapsed_ms: (rec.elapsed + rep.elapsed).as_secs_f64() * 1e3,
                });
            }
        }
    }
    rows.extend(hybrid);
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassificationSource {
    Blobs {
        classes: usize,
        d: usize,
        separation: f64,
    },
    Mnist {
        dir: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment2Config {
    pub source: ClassificationSource,
    pub n_grid: Vec<usize>,
    pub epochs: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub seed: u64,
    /// Optimizer for the two-loop GD phases.
    pub hybrid_optimizer: OptimizerKind,
    pub solver: GdSolverConfig,
}

impl Experiment2Config {
    pub fn blobs(seed: u64) -> Self {
        Experiment2Config {
            source: ClassificationSource::Blobs {
                classes: 4,
                d: 8,
                separation: 10.0,
            },
            n_grid: vec![250, 500, 1000, 2000],
            epochs: 10,
            val_size: 250,
            test_size: 1000,
            hidden: vec![32],
            batch_size: 32,
            seed,
            hybrid_optimizer: OptimizerKind::Sgd,
            solver: GdSolverConfig {
                seed,
                solver: crate::solver::SolverConfig {
                    time_limit: std::time::Duration::from_secs(10),
                    ..Default::default()
                },
                plateau: PlateauDetector::default(),
                ..GdSolverConfig::default()
            },
        }
    }

    pub fn mnist(dir: PathBuf, seed: u64) -> Self {
        Experiment2Config {
            source: ClassificationSource::Mnist { dir },
            ..Experiment2Config::blobs(seed)
        }
    }

    pub fn manifest(&self) -> String {
        let src = match &self.source {
            ClassificationSource::Blobs { classes, d, separation } => {
                format!("blobs(classes={classes},d={d},separation={separation})")
            }
            ClassificationSource::Mnist { dir } => format!("mnist({})", dir.display()),
        };
        let s = &self.solver;
        format!(
            "experiment2 source={src} n_grid={:?} epochs={} val={} test={} hidden={:?} batch={} seed={} hybrid_optimizer={} radius={} bias_radius={:?} eps={} big_m={:?} sweep_batch={} time_limit_s={}",
            self.n_grid,
            self.epochs,
            self.val_size,
            self.test_size,
            self.hidden,
            self.batch_size,
            self.seed,
            self.hybrid_optimizer,
            s.encoder.radius_r,
            s.encoder.bias_radius,
            s.encoder.eps_margin,
            s.encoder.big_m,
            s.sweep_batch,
            s.solver.time_limit.as_secs_f64(),
        )
    }

    /// Training pool (at least the largest grid value), validation and test
    /// sets for this seed.
    pub fn load(&self) -> Result<(Dataset, Dataset, Dataset)> {
        let max_n = self.n_grid.iter().copied().max().unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        match &self.source {
            ClassificationSource::Blobs { classes, d, separation } => {
                let total = max_n + self.val_size + self.test_size;
                let ds = gen_blobs(*classes, total.div_ceil(*classes), *d, *separation, self.seed)?;
                let mut perm: Vec<usize> = (0..ds.len()).collect();
                perm.shuffle(&mut rng);
                let test = ds.subset(&perm[..self.test_size]);
                let val = ds.subset(&perm[self.test_size..self.test_size + self.val_size]);
                let pool = ds.subset(&perm[self.test_size + self.val_size..]);
                Ok((pool, val, test))
            }
            ClassificationSource::Mnist { dir } => {
                let train = load_mnist(dir, MnistPart::Train)?;
                let test = load_mnist(dir, MnistPart::Test)?;
                if train.len() < max_n + self.val_size {
                    return Err(Error::invalid("MNIST training file too small for the grid"));
                }
                let mut perm: Vec<usize> = (0..train.len()).collect();
                perm.shuffle(&mut rng);
                let val = train.subset(&perm[..self.val_size]);
                let pool = train.subset(&perm[self.val_size..self.val_size + max_n]);
                Ok((pool, val, test.take(self.test_size)))
            }
        }
    }
}

/// One row per (n, method): baselines at `e` epochs, the two-loop method
/// with its GD epoch count in the `epoch` column. `phase` holds `n=<n>`.
pub fn run_experiment2(cfg: &Experiment2Config) -> Result<Vec<MetricsRow>> {
    if cfg.epochs < 2 {
        return Err(Error::Config("experiment 2 needs an epoch budget of at least 2".into()));
    }
    cfg.solver.validate()?;
    let (pool, val, test) = cfg.load()?;
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        if n == 0 || n > pool.len() {
            return Err(Error::invalid(format!("grid value {n} outside the training pool")));
        }
        let data = DataSplits {
            train: pool.take(n),
            val: val.clone(),
            test: test.clone(),
        };
        let mut dims = vec![pool.input_dim()];
        dims.extend(&cfg.hidden);
        dims.push(pool.output_dim());
        let dnn0 = init(&dims, cfg.seed)?;
        let phase = format!("n={n}");
        for kind in OptimizerKind::ALL {
            let run = crate::driver::train_gd(
                dnn0.clone(),
                &data,
                &mut optimizer(kind),
                cfg.epochs,
                None,
                cfg.batch_size,
                cfg.seed,
            )?;
            if let Some(e) = run.abort {
                return Err(e);
            }
            let last = run.records.last().expect("epochs >= 2");
            rows.push(row(kind.as_str(), &phase, cfg.epochs, last));
        }
        let solver = GdSolverConfig {
            batch_size: cfg.batch_size,
            ..cfg.solver
        };
        let run = two_loop(dnn0, &data, &mut optimizer(cfg.hybrid_optimizer), cfg.epochs, &solver)?;
        if let Some(e) = run.abort {
            return Err(e);
        }
        let last = run.records.last().expect("two-loop records");
        rows.push(row(HYBRID, &phase, run.gd_epochs, last));
    }
    Ok(rows)
}
