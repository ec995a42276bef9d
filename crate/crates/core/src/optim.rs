//! Gradient-descent baselines (SGD and Adam, each with or without step-decay
//! learning-rate scheduling) and the validation-loss plateau detector.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Dnn, Gradients};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("adam learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("adam eps must be positive".into()));
        }
        Ok(())
    }
}

/// First/second moment estimates and step counter for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    None,
    StepDecay { gamma: f64, period_epochs: usize },
}

impl LrSchedule {
    /// Halve every five epochs.
    pub fn default_step_decay() -> Self {
        LrSchedule::StepDecay {
            gamma: 0.5,
            period_epochs: 5,
        }
    }
}

/// Validation-loss plateau rule: fires once the relative improvement over the
/// last `window` epochs drops below `rel_tolerance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauDetector {
    pub window: usize,
    pub rel_tolerance: f64,
}

impl Default for PlateauDetector {
    fn default() -> Self {
        PlateauDetector {
            window: 3,
            rel_tolerance: 0.01,
        }
    }
}

impl PlateauDetector {
    pub fn new(window: usize, rel_tolerance: f64) -> Result<Self> {
        if window < 2 {
            return Err(Error::Config("plateau window must be at least 2".into()));
        }
        if !(rel_tolerance >= 0.0) {
            return Err(Error::Config("plateau tolerance must be non-negative".into()));
        }
        Ok(PlateauDetector {
            window,
            rel_tolerance,
        })
    }

    pub fn plateau(&self, history: &[f64]) -> bool {
        plateau(history, self)
    }
}

fn check_aligned(params: &[f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::invalid(format!(
            "{} parameters but {} gradient components",
            params.len(),
            grads.len()
        )));
    }
    Ok(())
}

/// `p ← p − lr·g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    check_aligned(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// Bias-corrected Adam update using `cfg.learning_rate`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    check_aligned(params, grads)?;
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::invalid("adam state does not match parameter count"));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// `base_lr · gamma^⌊epoch / period⌋` for step decay, `base_lr` otherwise.
pub fn scheduled_lr(base_lr: f64, epoch: usize, schedule: LrSchedule) -> f64 {
    match schedule {
        LrSchedule::None => base_lr,
        LrSchedule::StepDecay {
            gamma,
            period_epochs,
        } => base_lr * gamma.powi((epoch / period_epochs.max(1)) as i32),
    }
}

pub fn plateau(history: &[f64], det: &PlateauDetector) -> bool {
    if history.len() < det.window {
        return false;
    }
    let oldest = history[history.len() - det.window];
    let newest = history[history.len() - 1];
    (oldest - newest) / oldest.max(1e-12) < det.rel_tolerance
}

/// The four baselines, named as on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OptimizerKind {
    Sgd,
    SgdLrs,
    Adam,
    AdamLrs,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Sgd,
        OptimizerKind::SgdLrs,
        OptimizerKind::Adam,
        OptimizerKind::AdamLrs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::SgdLrs => "sgd-lrs",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamLrs => "adam-lrs",
        }
    }

    fn uses_adam(self) -> bool {
        matches!(self, OptimizerKind::Adam | OptimizerKind::AdamLrs)
    }

    fn schedule(self) -> LrSchedule {
        match self {
            OptimizerKind::Sgd | OptimizerKind::Adam => LrSchedule::None,
            OptimizerKind::SgdLrs | OptimizerKind::AdamLrs => LrSchedule::default_step_decay(),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown optimizer {s:?} (expected sgd, sgd-lrs, adam or adam-lrs)"
                ))
            })
    }
}

/// Stateful optimizer bound to one training loop. The epoch counter drives
/// the learning-rate schedule and persists across GD phases.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    sgd: SgdConfig,
    adam: AdamConfig,
    schedule: LrSchedule,
    adam_state: Option<AdamState>,
    epoch: usize,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Optimizer {
            kind,
            sgd: SgdConfig::default(),
            adam: AdamConfig::default(),
            schedule: kind.schedule(),
            adam_state: None,
            epoch: 0,
        }
    }

    pub fn with_sgd(mut self, cfg: SgdConfig) -> Result<Self> {
        if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
            return Err(Error::Config("sgd learning rate must be positive".into()));
        }
        self.sgd = cfg;
        Ok(self)
    }

    pub fn with_adam(mut self, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        self.adam = cfg;
        Ok(self)
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> Result<Self> {
        if let LrSchedule::StepDecay {
            gamma,
            period_epochs,
        } = schedule
        {
            if !(gamma > 0.0 && gamma <= 1.0) || period_epochs == 0 {
                return Err(Error::Config(
                    "step decay needs gamma in (0, 1] and period >= 1".into(),
                ));
            }
        }
        self.schedule = schedule;
        Ok(self)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn current_lr(&self) -> f64 {
        let base = if self.kind.uses_adam() {
            self.adam.learning_rate
        } else {
            self.sgd.learning_rate
        };
        scheduled_lr(base, self.epoch, self.schedule)
    }

    pub fn step(&mut self, dnn: &mut Dnn, grads: &Gradients) -> Result<()> {
        let mut params = dnn.flat_parameters();
        let g = grads.flatten();
        let lr = self.current_lr();
        if self.kind.uses_adam() {
            let state = self
                .adam_state
                .get_or_insert_with(|| AdamState::new(params.len()));
            let cfg = AdamConfig {
                learning_rate: lr,
                ..self.adam
            };
            adam_step(&mut params, &g, state, &cfg)?;
        } else {
            sgd_step(&mut params, &g, lr)?;
        }
        dnn.load_flat_parameters(&params)
    }

    pub fn finish_epoch(&mut self) {
        self.epoch += 1;
    }
}
