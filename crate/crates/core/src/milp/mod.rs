//! MILP instances and their CPLEX LP-format export.

mod lp_format;
mod model;

pub use lp_format::{format_g17, write_lp};
pub use model::{Cmp, Constraint, LinExpr, MilpModel, ObjSense, Objective, VarId, VarKind, Variable};
