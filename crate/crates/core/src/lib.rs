//! Hybrid training of dense feed-forward networks: gradient descent runs
//! until validation loss plateaus, then the final layer is re-encoded as a
//! mixed-integer linear program over a box around its current weights and
//! solved for a strictly better assignment.
//!
//! Module map:
//! - [`nn`]: networks, losses, backprop
//! - [`optim`]: SGD/Adam baselines, LR schedules, plateau detection
//! - [`milp`]: MILP models and LP-format export
//! - [`solver`]: bounded simplex + branch-and-bound
//! - [`encoder`]: final-layer regression/classification encodings
//! - [`driver`]: the GD/solver control loop and the two-loop protocol
//! - [`data`]: synthetic tasks, IDX (MNIST) parsing, splits
//! - [`experiment`]: the epoch-sweep and data-efficiency harnesses

pub mod data;
pub mod driver;
pub mod encoder;
pub mod experiment;
pub mod error;
pub mod milp;
pub mod nn;
pub mod optim;
pub mod solver;

pub use data::{Dataset, RegressionKind, RegressionTask, Split, Targets};
pub use driver::{gdsolver, solver_sweep, train_gd, two_loop, DataSplits, GdSolverConfig, SweepOutcome, TrainingRun};
pub use encoder::{EncoderConfig, ParamVars};
pub use error::{Error, Result};
pub use milp::{MilpModel, VarId};
pub use nn::{Activation, Dnn, Layer, LossKind, Matrix};
pub use solver::{solve_lp, solve_milp, MilpOutcome, MilpStatus, SolverConfig};
