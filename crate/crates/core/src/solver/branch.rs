//! Depth-first branch-and-bound over binary variables.
//!
//! Nodes are explored by diving: the child whose fixing agrees with the
//! rounded relaxation value is visited first. Branching picks the most
//! fractional binary, lowest id on ties. Integral relaxation points are
//! polished by re-solving with all binaries fixed, then re-checked against
//! the original model before becoming the incumbent.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::milp::{MilpModel, ObjSense, VarId};

use super::simplex::{solve_relaxation, LpFailure};
use super::{Incumbent, LpStatus, MilpOutcome, MilpStatus, SolverConfig};

struct Node {
    fixings: Vec<(VarId, f64)>,
    /// Relaxation bound of the parent, in minimization sense.
    parent_bound: f64,
}

/// Minimization-sense view of the model's objective.
struct Sense {
    sign: f64,
    has_objective: bool,
    /// All objective terms are integer multiples of binaries.
    integral: bool,
}

impl Sense {
    fn of(model: &MilpModel) -> Self {
        match model.objective() {
            None => Sense {
                sign: 1.0,
                has_objective: false,
                integral: false,
            },
            Some(obj) => Sense {
                sign: match obj.sense {
                    ObjSense::Min => 1.0,
                    ObjSense::Max => -1.0,
                },
                has_objective: true,
                integral: obj.expr.constant.fract() == 0.0
                    && obj.expr.terms.iter().all(|&(c, v)| {
                        c.fract() == 0.0 && model.variable(v).kind.is_binary()
                    }),
            },
        }
    }

    /// Whether a node with relaxation bound `bound` cannot beat `best`.
    fn dominated(&self, bound: f64, best: f64, gap_tol: f64) -> bool {
        if self.integral {
            // Objective values are integers: a node must reach best - 1.
            bound > best - 1.0 + 1e-6
        } else {
            bound >= best - gap_tol
        }
    }
}

/// Runs branch-and-bound on `model` within the limits of `cfg`.
pub fn solve_milp(model: &MilpModel, cfg: &SolverConfig) -> Result<MilpOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let deadline = start + cfg.time_limit;
    let sense = Sense::of(model);
    let base: Vec<(f64, f64)> = model.variables().iter().map(|v| v.kind.bounds()).collect();
    let binaries: Vec<VarId> = model.binaries().collect();

    let mut stack = vec![Node {
        fixings: Vec::new(),
        parent_bound: f64::NEG_INFINITY,
    }];
    let mut best: Option<Incumbent> = None;
    let mut best_min = f64::INFINITY;
    let mut root_bound = f64::NEG_INFINITY;
    let mut nodes = 0usize;
    let mut incomplete = false;
    let mut hit_limit = false;

    let finish = |status, incumbent, nodes| MilpOutcome {
        status,
        incumbent,
        nodes_explored: nodes,
        wall_time: start.elapsed(),
    };

    while let Some(node) = stack.pop() {
        if nodes >= cfg.max_nodes || Instant::now() >= deadline {
            hit_limit = true;
            break;
        }
        if best.is_some() && sense.dominated(node.parent_bound, best_min, cfg.gap_tol) {
            debug_assert!(root_bound <= best_min + 1e-6 * (1.0 + best_min.abs()));
            continue;
        }
        nodes += 1;

        let mut bounds = base.clone();
        for &(v, val) in &node.fixings {
            bounds[v.index()] = (val, val);
        }
        let lp = match solve_relaxation(model, &bounds, cfg.feas_tol, Some(deadline)) {
            Ok(lp) => lp,
            Err(LpFailure::Deadline) => {
                hit_limit = true;
                break;
            }
            Err(LpFailure::Numerical(d)) => {
                if nodes == 1 {
                    return Err(Error::numerical("branch-and-bound root", d));
                }
                incomplete = true;
                continue;
            }
        };

        match lp.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                if nodes == 1 {
                    return Ok(finish(MilpStatus::Unbounded, None, nodes));
                }
                incomplete = true;
                continue;
            }
            LpStatus::Optimal => {}
        }

        let bound = sense.sign * lp.objective;
        if nodes == 1 {
            root_bound = bound;
        }
        if best.is_some() && sense.dominated(bound, best_min, cfg.gap_tol) {
            debug_assert!(root_bound <= best_min + 1e-6 * (1.0 + best_min.abs()));
            continue;
        }

        // Most fractional binary; strict comparison keeps the lowest id on ties.
        let mut branch: Option<(VarId, f64)> = None;
        let mut best_frac = cfg.int_tol;
        for &v in &binaries {
            let x = lp.values[v.index()];
            let frac = x.min(1.0 - x);
            if frac > best_frac {
                best_frac = frac;
                branch = Some((v, x));
            }
        }

        match branch {
            None => {
                let Some(inc) = polish(model, &base, &binaries, &lp.values, cfg, deadline) else {
                    incomplete = true;
                    continue;
                };
                let val = sense.sign * inc.objective;
                if best.is_none() || val < best_min {
                    best_min = val;
                    best = Some(inc);
                }
                if !sense.has_objective {
                    return Ok(finish(MilpStatus::Optimal, best, nodes));
                }
            }
            Some((v, x)) => {
                let preferred = if x >= 0.5 { 1.0 } else { 0.0 };
                for val in [1.0 - preferred, preferred] {
                    let mut fixings = node.fixings.clone();
                    fixings.push((v, val));
                    stack.push(Node {
                        fixings,
                        parent_bound: bound,
                    });
                }
            }
        }
    }

    let status = match (&best, hit_limit || incomplete) {
        (Some(_), false) => MilpStatus::Optimal,
        (Some(_), true) => MilpStatus::FeasibleIncumbent,
        (None, false) => MilpStatus::Infeasible,
        (None, true) => MilpStatus::TimeLimitNoIncumbent,
    };
    Ok(finish(status, best, nodes))
}

/// Fixes every binary at its rounded value and re-solves for the continuous
/// part; returns the point only if it passes the model's own check.
fn polish(
    model: &MilpModel,
    base: &[(f64, f64)],
    binaries: &[VarId],
    relaxed: &[f64],
    cfg: &SolverConfig,
    deadline: Instant,
) -> Option<Incumbent> {
    let mut bounds = base.to_vec();
    for &v in binaries {
        let r = relaxed[v.index()].round();
        bounds[v.index()] = (r, r);
    }
    let lp = solve_relaxation(model, &bounds, cfg.feas_tol, Some(deadline)).ok()?;
    if lp.status != LpStatus::Optimal {
        return None;
    }
    let mut values = lp.values;
    for &v in binaries {
        values[v.index()] = values[v.index()].round();
    }
    if model.max_violation(&values) > cfg.feas_tol {
        return None;
    }
    Some(Incumbent {
        objective: model.objective_value(&values),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{Constraint, LinExpr, VarKind, Variable};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_binary_max() {
        let mut m = MilpModel::new();
        let x = m.add_variable(Variable::new("x", VarKind::Binary)).unwrap();
        let y = m.add_variable(Variable::new("y", VarKind::Binary)).unwrap();
        m.add_constraint(Constraint::le(LinExpr::new().term(1.0, x).term(1.0, y), 1.0)).unwrap();
        m.set_objective(ObjSense::Max, LinExpr::new().term(1.0, x).term(2.0, y)).unwrap();
        let out = solve_milp(&m, &SolverConfig::default()).unwrap();
        assert_eq!(out.status, MilpStatus::Optimal);
        let inc = out.incumbent.unwrap();
        assert_eq!(inc.values, vec![0.0, 1.0]);
        assert_eq!(inc.objective, 2.0);
    }

    #[test]
    fn big_m_relu_feasibility() {
        // ReLU of a = -1 with M = 100: z = 1 needs o >= 99 and o <= -1, so
        // only z = 0, o = 0 survives.
        let mut m = MilpModel::new();
        let z = m.add_variable(Variable::new("z", VarKind::Binary)).unwrap();
        let o = m.add_variable(Variable::new("o", VarKind::bounded(0.0, f64::INFINITY))).unwrap();
        m.add_constraint(Constraint::ge(LinExpr::new().term(1.0, o).term(-100.0, z), -1.0)).unwrap();
        m.add_constraint(Constraint::le(LinExpr::new().term(1.0, o).term(-100.0, z), 0.0)).unwrap();
        m.add_constraint(Constraint::le(LinExpr::new().term(1.0, o), 99.0)).unwrap();
        m.add_constraint(Constraint::le(LinExpr::new().term(1.0, o).term(100.0, z), 99.0)).unwrap();
        let out = solve_milp(&m, &SolverConfig::default()).unwrap();
        assert_eq!(out.status, MilpStatus::Optimal);
        let inc = out.incumbent.unwrap();
        assert!(inc.values[o.index()].abs() < 1e-9);
        assert_eq!(inc.values[z.index()], 0.0);
    }

    fn brute_force_knapsack(values: &[f64], weights: &[f64], cap: f64) -> f64 {
        let n = values.len();
        (0u32..1 << n)
            .filter_map(|mask| {
                let (mut v, mut w) = (0.0, 0.0);
                for i in 0..n {
                    if mask >> i & 1 == 1 {
                        v += values[i];
                        w += weights[i];
                    }
                }
                (w <= cap).then_some(v)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn knapsack_matches_enumeration() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..6).map(|_| rng.random_range(1..20) as f64).collect();
            let weights: Vec<f64> = (0..6).map(|_| rng.random_range(1..15) as f64).collect();
            let cap = rng.random_range(5..30) as f64;
            let mut m = MilpModel::new();
            let vars: Vec<VarId> = (0..6)
                .map(|i| m.add_variable(Variable::new(format!("x{i}"), VarKind::Binary)).unwrap())
                .collect();
            let mut w = LinExpr::new();
            let mut obj = LinExpr::new();
            for i in 0..6 {
                w.push(weights[i], vars[i]);
                obj.push(values[i], vars[i]);
            }
            m.add_constraint(Constraint::le(w, cap)).unwrap();
            m.set_objective(ObjSense::Max, obj).unwrap();
            let out = solve_milp(&m, &SolverConfig::default()).unwrap();
            assert_eq!(out.status, MilpStatus::Optimal, "seed {seed}");
            let expect = brute_force_knapsack(&values, &weights, cap);
            assert!((out.incumbent.unwrap().objective - expect).abs() < 1e-6, "seed {seed}");
        }
    }

    #[test]
    fn infeasible_binaries() {
        let mut m = MilpModel::new();
        let x = m.add_variable(Variable::new("x", VarKind::Binary)).unwrap();
        m.add_constraint(Constraint::eq(LinExpr::new().term(2.0, x), 1.0)).unwrap();
        let out = solve_milp(&m, &SolverConfig::default()).unwrap();
        assert_eq!(out.status, MilpStatus::Infeasible);
        assert!(out.incumbent.is_none());
    }

    #[test]
    fn node_limit_reports_incumbent_or_none() {
        let mut m = MilpModel::new();
        let mut e = LinExpr::new();
        let mut obj = LinExpr::new();
        for i in 0..12 {
            let v = m.add_variable(Variable::new(format!("x{i}"), VarKind::Binary)).unwrap();
            e.push(2.0 + (i % 3) as f64, v);
            obj.push(1.0 + (i % 5) as f64 * 0.37, v);
        }
        m.add_constraint(Constraint::le(e, 11.5)).unwrap();
        m.set_objective(ObjSense::Max, obj).unwrap();
        let cfg = SolverConfig {
            max_nodes: 1,
            ..SolverConfig::default()
        };
        let out = solve_milp(&m, &cfg).unwrap();
        assert!(matches!(
            out.status,
            MilpStatus::FeasibleIncumbent | MilpStatus::TimeLimitNoIncumbent | MilpStatus::Optimal
        ));
        assert!(out.nodes_explored <= 1);
    }
}
