#![allow(dead_code)]

use std::path::PathBuf;

use gdsolver_core::milp::{Cmp, Constraint, LinExpr, MilpModel, ObjSense, VarId, VarKind, Variable};
use gdsolver_core::solver::{solve_lp, LpStatus, SolverConfig};
use serde::Deserialize;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[derive(Debug, Deserialize)]
pub struct OracleFile {
    pub instances: Vec<OracleInstance>,
}

#[derive(Debug, Deserialize)]
pub struct OracleInstance {
    pub id: usize,
    pub sense: String,
    pub vars: Vec<OracleVar>,
    pub constraints: Vec<OracleConstraint>,
    pub objective: Vec<(usize, f64)>,
    pub status: String,
    pub objective_value: Option<f64>,
}

#[derive(Debug, Deserialize)]
pub struct OracleVar {
    pub name: String,
    pub binary: bool,
    pub lb: f64,
    pub ub: f64,
}

#[derive(Debug, Deserialize)]
pub struct OracleConstraint {
    pub terms: Vec<(usize, f64)>,
    pub sense: String,
    pub rhs: f64,
}

pub fn load_oracle() -> OracleFile {
    let text = std::fs::read_to_string(fixture("milp_oracle.json")).expect("oracle fixture");
    serde_json::from_str(&text).expect("oracle fixture parses")
}

pub fn build_model(inst: &OracleInstance) -> MilpModel {
    let mut m = MilpModel::new();
    let ids: Vec<VarId> = inst
        .vars
        .iter()
        .map(|v| {
            let kind = if v.binary {
                VarKind::Binary
            } else {
                VarKind::bounded(v.lb, v.ub)
            };
            m.add_variable(Variable::new(v.name.clone(), kind)).unwrap()
        })
        .collect();
    for c in &inst.constraints {
        let mut e = LinExpr::new();
        for &(v, a) in &c.terms {
            e.push(a, ids[v]);
        }
        let sense = match c.sense.as_str() {
            "<=" => Cmp::Le,
            ">=" => Cmp::Ge,
            _ => Cmp::Eq,
        };
        m.add_constraint(Constraint::new(e, sense, c.rhs)).unwrap();
    }
    let mut obj = LinExpr::new();
    for &(v, a) in &inst.objective {
        obj.push(a, ids[v]);
    }
    let sense = if inst.sense == "max" { ObjSense::Max } else { ObjSense::Min };
    m.set_objective(sense, obj).unwrap();
    m
}

/// Copy of `model` with each binary pinned to the matching entry of `assign`.
pub fn fix_binaries(model: &MilpModel, assign: &[f64]) -> MilpModel {
    let mut out = MilpModel::new();
    let mut k = 0;
    for v in model.variables() {
        let kind = if v.kind.is_binary() {
            k += 1;
            VarKind::bounded(assign[k - 1], assign[k - 1])
        } else {
            v.kind
        };
        out.add_variable(Variable::new(v.name.clone(), kind)).unwrap();
    }
    for c in model.constraints() {
        out.add_constraint(c.clone()).unwrap();
    }
    if let Some(o) = model.objective() {
        out.set_objective(o.sense, o.expr.clone()).unwrap();
    }
    out
}

/// All 0/1 vectors of length `n`, in counting order.
pub fn assignments(n: usize) -> impl Iterator<Item = Vec<f64>> {
    (0..1u64 << n).map(move |mask| (0..n).map(|i| ((mask >> i) & 1) as f64).collect())
}

/// Brute force over binaries with an LP per assignment. `None` if
/// infeasible.
pub fn enumerate_optimum(model: &MilpModel) -> Option<f64> {
    let nb = model.binaries().count();
    let sense = model.objective().map_or(ObjSense::Min, |o| o.sense);
    let mut best: Option<f64> = None;
    for a in assignments(nb) {
        let sol = solve_lp(&fix_binaries(model, &a), &SolverConfig::default()).unwrap();
        if sol.status != LpStatus::Optimal {
            continue;
        }
        let better = match (best, sense) {
            (None, _) => true,
            (Some(b), ObjSense::Max) => sol.objective > b,
            (Some(b), ObjSense::Min) => sol.objective < b,
        };
        if better {
            best = Some(sol.objective);
        }
    }
    best
}

/// Range of `var` over the LP feasible set of `model`, or `None` if empty.
pub fn lp_range(model: &MilpModel, var: VarId) -> Option<(f64, f64)> {
    let mut lo_model = model.clone();
    lo_model.set_objective(ObjSense::Min, LinExpr::new().term(1.0, var)).unwrap();
    let lo = solve_lp(&lo_model, &SolverConfig::default()).unwrap();
    if lo.status != LpStatus::Optimal {
        return None;
    }
    let mut hi_model = model.clone();
    hi_model.set_objective(ObjSense::Max, LinExpr::new().term(1.0, var)).unwrap();
    let hi = solve_lp(&hi_model, &SolverConfig::default()).unwrap();
    Some((lo.objective, hi.objective))
}
