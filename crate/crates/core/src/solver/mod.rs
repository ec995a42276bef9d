//! Exact solver for small MILPs: a bounded-variable simplex for the LP
//! relaxation and depth-first branch-and-bound over the binaries.

mod branch;
mod simplex;

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::milp::MilpModel;

pub use branch::solve_milp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub time_limit: Duration,
    pub feas_tol: f64,
    pub int_tol: f64,
    pub max_nodes: usize,
    pub gap_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            time_limit: Duration::from_secs(30),
            feas_tol: 1e-7,
            int_tol: 1e-6,
            max_nodes: 200_000,
            gap_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.feas_tol > 0.0 && self.int_tol > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if !(self.gap_tol >= 0.0) {
            return Err(Error::Config("gap tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective: f64,
}

impl LpSolution {
    pub(crate) fn infeasible(n: usize) -> Self {
        LpSolution {
            status: LpStatus::Infeasible,
            values: vec![0.0; n],
            objective: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    /// Proven optimal within `gap_tol` (or, without an objective, feasible).
    Optimal,
    /// Stopped on a time or node limit holding an incumbent.
    FeasibleIncumbent,
    Infeasible,
    /// Stopped on a limit before any integral point was found.
    TimeLimitNoIncumbent,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub values: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpOutcome {
    pub status: MilpStatus,
    pub incumbent: Option<Incumbent>,
    pub nodes_explored: usize,
    pub wall_time: Duration,
}

/// Solves the LP relaxation of `model`, binaries relaxed to `[0, 1]`.
pub fn solve_lp(model: &MilpModel, cfg: &SolverConfig) -> Result<LpSolution> {
    cfg.validate()?;
    let bounds: Vec<(f64, f64)> = model.variables().iter().map(|v| v.kind.bounds()).collect();
    let deadline = Instant::now() + cfg.time_limit;
    simplex::solve_relaxation(model, &bounds, cfg.feas_tol, Some(deadline)).map_err(|e| match e {
        simplex::LpFailure::Numerical(d) => Error::numerical("lp relaxation", d),
        simplex::LpFailure::Deadline => Error::numerical("lp relaxation", "time limit reached"),
    })
}
