use std::collections::HashMap;

use crate::error::{Error, Result};

/// Dense index into a model's variable table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarKind {
    /// Bounds may be infinite.
    Continuous { lb: f64, ub: f64 },
    Binary,
}

impl VarKind {
    pub fn free() -> Self {
        VarKind::Continuous {
            lb: f64::NEG_INFINITY,
            ub: f64::INFINITY,
        }
    }

    pub fn bounded(lb: f64, ub: f64) -> Self {
        VarKind::Continuous { lb, ub }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            VarKind::Continuous { lb, ub } => (lb, ub),
            VarKind::Binary => (0.0, 1.0),
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, VarKind::Binary)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
}

impl Variable {
    pub fn new(name: impl Into<String>, kind: VarKind) -> Self {
        Variable {
            name: name.into(),
            kind,
        }
    }
}

/// Linear combination of variables plus a constant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    pub terms: Vec<(f64, VarId)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        LinExpr::default()
    }

    pub fn term(mut self, coef: f64, var: VarId) -> Self {
        self.terms.push((coef, var));
        self
    }

    pub fn push(&mut self, coef: f64, var: VarId) {
        self.terms.push((coef, var));
    }

    pub fn plus_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    /// Merges repeated variables, drops zero coefficients and orders terms by
    /// variable id.
    pub fn normalized(&self) -> LinExpr {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|&(_, v)| v);
        let mut out: Vec<(f64, VarId)> = Vec::with_capacity(terms.len());
        for (c, v) in terms {
            match out.last_mut() {
                Some((acc, last)) if *last == v => *acc += c,
                _ => out.push((c, v)),
            }
        }
        out.retain(|&(c, _)| c != 0.0);
        LinExpr {
            terms: out,
            constant: self.constant,
        }
    }

    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|&(c, v)| c * values[v.0])
            .sum::<f64>()
            + self.constant
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub lhs: LinExpr,
    pub sense: Cmp,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(lhs: LinExpr, sense: Cmp, rhs: f64) -> Self {
        Constraint { lhs, sense, rhs }
    }

    pub fn le(lhs: LinExpr, rhs: f64) -> Self {
        Constraint::new(lhs, Cmp::Le, rhs)
    }

    pub fn ge(lhs: LinExpr, rhs: f64) -> Self {
        Constraint::new(lhs, Cmp::Ge, rhs)
    }

    pub fn eq(lhs: LinExpr, rhs: f64) -> Self {
        Constraint::new(lhs, Cmp::Eq, rhs)
    }

    /// Violation of this row at `values`, divided by the row's largest
    /// absolute coefficient (at least 1).
    pub fn scaled_violation(&self, values: &[f64]) -> f64 {
        let act = self.lhs.evaluate(values);
        let raw = match self.sense {
            Cmp::Le => act - self.rhs,
            Cmp::Ge => self.rhs - act,
            Cmp::Eq => (act - self.rhs).abs(),
        };
        let norm = self
            .lhs
            .terms
            .iter()
            .fold(1.0f64, |m, &(c, _)| m.max(c.abs()));
        raw.max(0.0) / norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjSense {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub sense: ObjSense,
    pub expr: LinExpr,
}

/// A mixed-integer linear program over continuous and binary variables.
#[derive(Debug, Clone, Default)]
pub struct MilpModel {
    variables: Vec<Variable>,
    names: HashMap<String, VarId>,
    constraints: Vec<Constraint>,
    objective: Option<Objective>,
}

impl MilpModel {
    pub fn new() -> Self {
        MilpModel::default()
    }

    pub fn add_variable(&mut self, var: Variable) -> Result<VarId> {
        if self.names.contains_key(&var.name) {
            return Err(Error::invalid(format!("duplicate variable name {:?}", var.name)));
        }
        if var.name.is_empty() || var.name.contains(char::is_whitespace) {
            return Err(Error::invalid(format!("bad variable name {:?}", var.name)));
        }
        if let VarKind::Continuous { lb, ub } = var.kind {
            if lb.is_nan() || ub.is_nan() || lb > ub || lb == f64::INFINITY || ub == f64::NEG_INFINITY {
                return Err(Error::invalid(format!(
                    "variable {:?} has invalid bounds [{lb}, {ub}]",
                    var.name
                )));
            }
        }
        let id = VarId(self.variables.len());
        self.names.insert(var.name.clone(), id);
        self.variables.push(var);
        Ok(id)
    }

    fn check_expr(&self, expr: &LinExpr) -> Result<()> {
        for &(c, v) in &expr.terms {
            if v.0 >= self.variables.len() {
                return Err(Error::invalid(format!(
                    "variable id {} out of range ({} variables)",
                    v.0,
                    self.variables.len()
                )));
            }
            if !c.is_finite() {
                return Err(Error::invalid(format!("non-finite coefficient {c}")));
            }
        }
        if !expr.constant.is_finite() {
            return Err(Error::invalid("non-finite constant"));
        }
        Ok(())
    }

    /// Appends a constraint after normalizing its terms; any constant on the
    /// left-hand side is moved to the right.
    pub fn add_constraint(&mut self, c: Constraint) -> Result<usize> {
        self.check_expr(&c.lhs)?;
        if !c.rhs.is_finite() {
            return Err(Error::invalid(format!("non-finite right-hand side {}", c.rhs)));
        }
        let mut lhs = c.lhs.normalized();
        let rhs = c.rhs - lhs.constant;
        lhs.constant = 0.0;
        self.constraints.push(Constraint {
            lhs,
            sense: c.sense,
            rhs,
        });
        Ok(self.constraints.len() - 1)
    }

    pub fn set_objective(&mut self, sense: ObjSense, expr: LinExpr) -> Result<()> {
        self.check_expr(&expr)?;
        self.objective = Some(Objective {
            sense,
            expr: expr.normalized(),
        });
        Ok(())
    }

    pub fn clear_objective(&mut self) {
        self.objective = None;
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, id: VarId) -> &Variable {
        &self.variables[id.0]
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.names.get(name).copied()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> Option<&Objective> {
        self.objective.as_ref()
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn binaries(&self) -> impl Iterator<Item = VarId> + '_ {
        self.variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind.is_binary())
            .map(|(i, _)| VarId(i))
    }

    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective
            .as_ref()
            .map_or(0.0, |o| o.expr.evaluate(values))
    }

    /// Largest scaled violation over rows, bounds and binary integrality.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            worst = worst.max(c.scaled_violation(values));
        }
        for (v, x) in self.variables.iter().zip(values) {
            let (lb, ub) = v.kind.bounds();
            worst = worst.max(lb - x).max(x - ub);
            if v.kind.is_binary() {
                worst = worst.max(x.min(1.0 - x).max(0.0));
            }
        }
        worst
    }
}
