//! The GD/solver control loop, the two-loop classification protocol and the
//! single solver sweep they share.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Targets};
use crate::encoder::{
    apply_solution, count_correct, encode_classification, encode_regression, EncoderConfig, ParamVars,
};
use crate::error::{Error, Result};
use crate::nn::{argmax, backward, loss, Dnn, LossKind, Target};
use crate::optim::{Optimizer, PlateauDetector};
use crate::solver::{solve_milp, MilpOutcome, MilpStatus, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl DataSplits {
    pub fn loss_kind(&self) -> LossKind {
        if self.train.is_classification() {
            LossKind::SoftmaxCrossEntropy
        } else {
            LossKind::Mse
        }
    }
}

/// Mean loss over `ds`, plus accuracy for classification data.
pub fn evaluate(dnn: &Dnn, ds: &Dataset) -> Result<(f64, Option<f64>)> {
    if ds.is_empty() {
        return Ok((0.0, None));
    }
    let kind = if ds.is_classification() {
        LossKind::SoftmaxCrossEntropy
    } else {
        LossKind::Mse
    };
    let mut total = 0.0;
    let mut correct = 0usize;
    for t in 0..ds.len() {
        let out = dnn.forward(&ds.x[t])?;
        let target = ds.target(t);
        if let Target::Class(label) = target {
            correct += usize::from(argmax(&out) == label);
        }
        total += loss(&out, target, kind)?;
    }
    let n = ds.len() as f64;
    let acc = ds.is_classification().then(|| correct as f64 / n);
    Ok((total / n, acc))
}

/// Sum of `|o − y|` over the given regression rows.
pub fn l1_on(dnn: &Dnn, ds: &Dataset, idx: &[usize]) -> Result<f64> {
    let y = ds
        .real_targets()
        .ok_or_else(|| Error::invalid("L1 needs regression targets"))?;
    let mut total = 0.0;
    for &t in idx {
        total += loss(&dnn.forward(&ds.x[t])?, Target::Real(&y[t]), LossKind::L1)?;
    }
    Ok(total)
}

/// Number of the given rows classified correctly.
pub fn correct_on(dnn: &Dnn, ds: &Dataset, idx: &[usize]) -> Result<usize> {
    let labels = ds.labels().ok_or_else(|| Error::invalid("accuracy needs class labels"))?;
    let mut n = 0;
    for &t in idx {
        n += usize::from(argmax(&dnn.forward(&ds.x[t])?) == labels[t]);
    }
    Ok(n)
}

/// First `k` rows, in dataset order, whose prediction differs from the label.
pub fn select_misclassified(dnn: &Dnn, ds: &Dataset, k: usize) -> Result<Vec<usize>> {
    let labels = ds.labels().ok_or_else(|| Error::invalid("misclassified selection needs class labels"))?;
    let mut out = Vec::new();
    for (t, x) in ds.x.iter().enumerate() {
        if out.len() == k {
            break;
        }
        if argmax(&dnn.forward(x)?) != labels[t] {
            out.push(t);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdSolverConfig {
    pub desired_loss: f64,
    pub max_iter: usize,
    pub plateau: PlateauDetector,
    /// Misclassified points per classification sweep.
    pub sweep_batch: usize,
    /// Leading training points per regression sweep; `None` encodes them all.
    pub sweep_size: Option<usize>,
    pub encoder: EncoderConfig,
    pub solver: SolverConfig,
    pub max_epochs_per_gd_phase: usize,
    pub batch_size: usize,
    /// Keep looping after a sweep that finds nothing.
    pub retry_on_infeasible: bool,
    /// Seeds minibatch shuffling.
    pub seed: u64,
}

impl Default for GdSolverConfig {
    fn default() -> Self {
        GdSolverConfig {
            desired_loss: 0.0,
            max_iter: 5,
            plateau: PlateauDetector::default(),
            sweep_batch: 32,
            sweep_size: Some(32),
            encoder: EncoderConfig::default(),
            solver: SolverConfig::default(),
            max_epochs_per_gd_phase: 50,
            batch_size: 32,
            retry_on_infeasible: false,
            seed: 0,
        }
    }
}

impl GdSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.sweep_batch == 0 || self.batch_size == 0 {
            return Err(Error::Config("max_iter, sweep_batch and batch_size must be >= 1".into()));
        }
        if self.sweep_size == Some(0) {
            return Err(Error::Config("sweep size must be >= 1".into()));
        }
        if self.desired_loss.is_nan() {
            return Err(Error::Config("desired loss is NaN".into()));
        }
        self.encoder.validate()?;
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoImprovementReason {
    Infeasible,
    TimeLimit,
    Unbounded,
    /// The solver's point did not improve the network when re-evaluated.
    VerificationFailed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Improvement {
    /// Summed L1 over the encoded points.
    Regression { l1_before: f64, l1_after: f64 },
    /// Correct predictions within the encoded batch.
    Classification { correct_before: usize, correct_after: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepOutcome {
    Improved(Improvement),
    NoImprovement(NoImprovementReason),
    /// Nothing to encode.
    Skipped,
}

impl SweepOutcome {
    pub fn improved(&self) -> bool {
        matches!(self, SweepOutcome::Improved(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            SweepOutcome::Improved(_) => "improved",
            SweepOutcome::NoImprovement(NoImprovementReason::Infeasible) => "infeasible",
            SweepOutcome::NoImprovement(NoImprovementReason::TimeLimit) => "time-limit",
            SweepOutcome::NoImprovement(NoImprovementReason::Unbounded) => "unbounded",
            SweepOutcome::NoImprovement(NoImprovementReason::VerificationFailed) => "verification-failed",
            SweepOutcome::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub outcome: SweepOutcome,
    /// Training-set indices of the encoded points.
    pub encoded: Vec<usize>,
    pub num_vars: usize,
    pub num_constraints: usize,
    pub nodes: usize,
    /// Encode, solve, apply and verification time.
    pub elapsed: Duration,
}

/// One solver sweep over the final layer. `dnn` changes only when the
/// outcome is `Improved`.
pub fn solver_sweep(dnn: &mut Dnn, train: &Dataset, cfg: &GdSolverConfig) -> Result<SweepReport> {
    let start = Instant::now();
    let mut report = SweepReport {
        outcome: SweepOutcome::Skipped,
        encoded: Vec::new(),
        num_vars: 0,
        num_constraints: 0,
        nodes: 0,
        elapsed: Duration::ZERO,
    };
    let layer = dnn.final_layer().clone();
    match &train.y {
        Targets::Real(y) => {
            let n = cfg.sweep_size.unwrap_or(train.len()).min(train.len());
            let idx: Vec<usize> = (0..n).collect();
            let xs: Vec<Vec<f64>> = idx.iter().map(|&t| train.x[t].clone()).collect();
            let ys: Vec<Vec<f64>> = idx.iter().map(|&t| y[t].clone()).collect();
            let h = dnn.hidden_features(&xs)?;
            let mut enc = encode_regression(&layer, &h, &ys, &cfg.encoder)?;
            enc.datapoint_ids = idx.clone();
            report.encoded = idx;
            report.num_vars = enc.model.num_vars();
            report.num_constraints = enc.model.num_constraints();
            if enc.tightened > 0 {
                let out = solve_milp(&enc.model, &cfg.solver)?;
                report.nodes = out.nodes_explored;
                report.outcome = finish_regression(dnn, train, &report.encoded, &enc.params, &out)?;
            }
        }
        Targets::Class { labels, .. } => {
            let idx = select_misclassified(dnn, train, cfg.sweep_batch)?;
            if !idx.is_empty() {
                let xs: Vec<Vec<f64>> = idx.iter().map(|&t| train.x[t].clone()).collect();
                let lb: Vec<usize> = idx.iter().map(|&t| labels[t]).collect();
                let h = dnn.hidden_features(&xs)?;
                let mut enc = encode_classification(&layer, &h, &lb, &cfg.encoder)?;
                enc.datapoint_ids = idx.clone();
                debug_assert_eq!(count_correct(&layer, &h, &lb)?, enc.current_correct);
                report.encoded = idx;
                report.num_vars = enc.model.num_vars();
                report.num_constraints = enc.model.num_constraints();
                let out = solve_milp(&enc.model, &cfg.solver)?;
                report.nodes = out.nodes_explored;
                report.outcome =
                    finish_classification(dnn, train, &report.encoded, &enc.params, enc.current_correct, &out)?;
            }
        }
    }
    report.elapsed = start.elapsed();
    Ok(report)
}

fn failed(out: &MilpOutcome) -> Option<SweepOutcome> {
    let reason = match out.status {
        MilpStatus::Optimal | MilpStatus::FeasibleIncumbent => return None,
        MilpStatus::Infeasible => NoImprovementReason::Infeasible,
        MilpStatus::TimeLimitNoIncumbent => NoImprovementReason::TimeLimit,
        MilpStatus::Unbounded => NoImprovementReason::Unbounded,
    };
    Some(SweepOutcome::NoImprovement(reason))
}

fn candidate(dnn: &Dnn, params: &ParamVars, out: &MilpOutcome) -> Result<Dnn> {
    let inc = out
        .incumbent
        .as_ref()
        .ok_or_else(|| Error::Internal("solver reported success without an incumbent".into()))?;
    let mut next = dnn.clone();
    apply_solution(&mut next, params, &inc.values)?;
    Ok(next)
}

fn finish_regression(
    dnn: &mut Dnn,
    train: &Dataset,
    idx: &[usize],
    params: &ParamVars,
    out: &MilpOutcome,
) -> Result<SweepOutcome> {
    if let Some(f) = failed(out) {
        return Ok(f);
    }
    let next = candidate(dnn, params, out)?;
    let l1_before = l1_on(dnn, train, idx)?;
    let l1_after = l1_on(&next, train, idx)?;
    if !(l1_after < l1_before) {
        return Ok(SweepOutcome::NoImprovement(NoImprovementReason::VerificationFailed));
    }
    *dnn = next;
    Ok(SweepOutcome::Improved(Improvement::Regression { l1_before, l1_after }))
}

fn finish_classification(
    dnn: &mut Dnn,
    train: &Dataset,
    idx: &[usize],
    params: &ParamVars,
    current_correct: usize,
    out: &MilpOutcome,
) -> Result<SweepOutcome> {
    if let Some(f) = failed(out) {
        return Ok(f);
    }
    let next = candidate(dnn, params, out)?;
    let correct_after = correct_on(&next, train, idx)?;
    if correct_after < current_correct + 1 {
        return Ok(SweepOutcome::NoImprovement(NoImprovementReason::VerificationFailed));
    }
    *dnn = next;
    Ok(SweepOutcome::Improved(Improvement::Classification {
        correct_before: current_correct,
        correct_after,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Gd,
    Sweep,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Gd => "gd",
            Phase::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub phase: Phase,
    /// Cumulative GD epoch for `Gd`, sweep number for `Sweep`.
    pub index: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_loss: f64,
    pub test_accuracy: Option<f64>,
    /// Training time so far; metric evaluation is not counted.
    pub elapsed: Duration,
}

#[derive(Debug)]
pub struct TrainingRun {
    pub records: Vec<Record>,
    pub sweeps: Vec<SweepReport>,
    pub gd_epochs: usize,
    pub final_dnn: Dnn,
    /// Error that ended the run early, if any.
    pub abort: Option<Error>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdStop {
    pub max_epochs: usize,
    pub plateau: Option<PlateauDetector>,
}

#[derive(Debug, Default, Clone, Copy)]
struct Stopwatch {
    total: Duration,
    since: Option<Instant>,
}

impl Stopwatch {
    fn resume(&mut self) {
        self.since.get_or_insert_with(Instant::now);
    }

    fn pause(&mut self) {
        if let Some(s) = self.since.take() {
            self.total += s.elapsed();
        }
    }

    fn read(&self) -> Duration {
        self.total + self.since.map_or(Duration::ZERO, |s| s.elapsed())
    }
}

/// Shared state of one training run: minibatch RNG, the training clock and
/// the record log.
#[derive(Debug)]
pub struct Trainer<'a> {
    data: &'a DataSplits,
    batch_size: usize,
    rng: ChaCha8Rng,
    clock: Stopwatch,
    records: Vec<Record>,
    sweeps: Vec<SweepReport>,
    gd_epochs: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a DataSplits, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if data.train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        Ok(Trainer {
            data,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            clock: Stopwatch::default(),
            records: Vec::new(),
            sweeps: Vec::new(),
            gd_epochs: 0,
        })
    }

    pub fn gd_epochs(&self) -> usize {
        self.gd_epochs
    }

    pub fn elapsed(&self) -> Duration {
        self.clock.read()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    fn record(&mut self, dnn: &Dnn, phase: Phase, index: usize, val_loss: f64) -> Result<()> {
        self.clock.pause();
        let elapsed = self.clock.read();
        let (train_loss, _) = evaluate(dnn, &self.data.train)?;
        let (test_loss, test_accuracy) = evaluate(dnn, &self.data.test)?;
        self.records.push(Record {
            phase,
            index,
            train_loss,
            val_loss,
            test_loss,
            test_accuracy,
            elapsed,
        });
        Ok(())
    }

    fn epoch(&mut self, dnn: &mut Dnn, opt: &mut Optimizer) -> Result<f64> {
        let kind = self.data.loss_kind();
        let train = &self.data.train;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        for chunk in order.chunks(self.batch_size) {
            let batch: Vec<(&[f64], Target<'_>)> =
                chunk.iter().map(|&t| (train.x[t].as_slice(), train.target(t))).collect();
            let grads = backward(dnn, &batch, kind)?;
            opt.step(dnn, &grads)?;
        }
        opt.finish_epoch();
        let (val, _) = evaluate(dnn, &self.data.val)?;
        if !val.is_finite() {
            return Err(Error::numerical("gradient descent", format!("validation loss became {val}")));
        }
        Ok(val)
    }

    /// Runs GD epochs until `stop` fires. Returns the epochs run and the
    /// last validation loss.
    pub fn gd_phase(&mut self, dnn: &mut Dnn, opt: &mut Optimizer, stop: &GdStop) -> Result<(usize, Option<f64>)> {
        let mut history = Vec::new();
        while history.len() < stop.max_epochs {
            self.clock.resume();
            let val = self.epoch(dnn, opt);
            self.clock.pause();
            let val = val?;
            history.push(val);
            self.gd_epochs += 1;
            self.record(dnn, Phase::Gd, self.gd_epochs, val)?;
            if stop.plateau.is_some_and(|p| p.plateau(&history)) {
                break;
            }
        }
        Ok((history.len(), history.last().copied()))
    }

    pub fn sweep(&mut self, dnn: &mut Dnn, cfg: &GdSolverConfig) -> Result<SweepOutcome> {
        self.clock.resume();
        let report = solver_sweep(dnn, &self.data.train, cfg);
        self.clock.pause();
        let report = report?;
        let outcome = report.outcome;
        self.sweeps.push(report);
        let (val, _) = evaluate(dnn, &self.data.val)?;
        self.record(dnn, Phase::Sweep, self.sweeps.len(), val)?;
        Ok(outcome)
    }

    pub fn finish(self, dnn: Dnn, abort: Option<Error>) -> TrainingRun {
        TrainingRun {
            records: self.records,
            sweeps: self.sweeps,
            gd_epochs: self.gd_epochs,
            final_dnn: dnn,
            abort,
        }
    }
}

/// Plain gradient descent for `epochs` epochs (stopping early only if
/// `plateau` is given and fires).
pub fn train_gd(
    mut dnn: Dnn,
    data: &DataSplits,
    opt: &mut Optimizer,
    epochs: usize,
    plateau: Option<PlateauDetector>,
    batch_size: usize,
    seed: u64,
) -> Result<TrainingRun> {
    let mut tr = Trainer::new(data, batch_size, seed)?;
    let stop = GdStop {
        max_epochs: epochs,
        plateau,
    };
    let abort = tr.gd_phase(&mut dnn, opt, &stop).err();
    Ok(tr.finish(dnn, abort))
}

/// Alternates GD-to-plateau with solver sweeps until validation loss
/// reaches `desired_loss`, `max_iter` sweeps have run, or a sweep finds no
/// improvement.
pub fn gdsolver(mut dnn: Dnn, data: &DataSplits, opt: &mut Optimizer, cfg: &GdSolverConfig) -> Result<TrainingRun> {
    cfg.validate()?;
    let mut tr = Trainer::new(data, cfg.batch_size, cfg.seed)?;
    let stop = GdStop {
        max_epochs: cfg.max_epochs_per_gd_phase,
        plateau: Some(cfg.plateau),
    };
    let mut val = evaluate(&dnn, &data.val)?.0;
    let mut iter = 0;
    let abort = loop {
        if !(val > cfg.desired_loss) || iter >= cfg.max_iter {
            break None;
        }
        match tr.gd_phase(&mut dnn, opt, &stop) {
            Ok((_, Some(v))) => val = v,
            Ok((_, None)) => {}
            Err(e) => break Some(e),
        }
        if !(val > cfg.desired_loss) {
            break None;
        }
        let outcome = match tr.sweep(&mut dnn, cfg) {
            Ok(o) => o,
            Err(e) => break Some(e),
        };
        iter += 1;
        if let Some(r) = tr.records.last() {
            val = r.val_loss;
        }
        if !outcome.improved() && !cfg.retry_on_infeasible {
            break None;
        }
    };
    Ok(tr.finish(dnn, abort))
}

/// Two rounds of (at most `⌈e/2⌉` GD epochs with plateau stopping, then one
/// classification sweep), never exceeding `e` GD epochs in total.
pub fn two_loop(mut dnn: Dnn, data: &DataSplits, opt: &mut Optimizer, e: usize, cfg: &GdSolverConfig) -> Result<TrainingRun> {
    cfg.validate()?;
    if e < 2 {
        return Err(Error::Config("two-loop needs an epoch budget of at least 2".into()));
    }
    let mut tr = Trainer::new(data, cfg.batch_size, cfg.seed)?;
    let half = e.div_ceil(2);
    let mut abort = None;
    for _ in 0..2 {
        let stop = GdStop {
            max_epochs: half.min(e - tr.gd_epochs()),
            plateau: Some(cfg.plateau),
        };
        if let Err(err) = tr.gd_phase(&mut dnn, opt, &stop) {
            abort = Some(err);
            break;
        }
        if let Err(err) = tr.sweep(&mut dnn, cfg) {
            abort = Some(err);
            break;
        }
    }
    assert!(tr.gd_epochs() <= e, "two-loop exceeded its epoch budget");
    Ok(tr.finish(dnn, abort))
}
