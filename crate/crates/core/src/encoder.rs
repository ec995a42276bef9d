//! Final-layer MILP encodings.
//!
//! Both encodings fix the hidden features `h_t` and optimise only the final
//! layer's weights and biases inside a box around their current values. A
//! ReLU output is linearised with one binary per unit and datapoint.

use crate::error::{Error, Result};
use crate::milp::{Constraint, LinExpr, MilpModel, ObjSense, VarId, VarKind, Variable};
use crate::nn::{argmax, Activation, Dnn, Layer, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    /// Half-width of the box around each weight.
    pub radius_r: f64,
    /// Half-width of the box around each bias; `None` leaves biases free.
    pub bias_radius: Option<f64>,
    /// Margin standing in for strict inequalities.
    pub eps_margin: f64,
    /// Big-M override; `None` derives it from the data.
    pub big_m: Option<f64>,
    /// Regression only: drop the `Min Σu` objective.
    pub feasibility_only: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::with_radius(0.1)
    }
}

impl EncoderConfig {
    /// Weight radius `r` with the bias box at `10 r`.
    pub fn with_radius(r: f64) -> Self {
        EncoderConfig {
            radius_r: r,
            bias_radius: Some(10.0 * r),
            eps_margin: 1e-4,
            big_m: None,
            feasibility_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_r >= 0.0 && self.radius_r.is_finite()) {
            return Err(Error::Config("weight radius must be finite and >= 0".into()));
        }
        if let Some(br) = self.bias_radius {
            if !(br >= 0.0 && br.is_finite()) {
                return Err(Error::Config("bias radius must be finite and >= 0".into()));
            }
        }
        if !(self.eps_margin > 0.0 && self.eps_margin.is_finite()) {
            return Err(Error::Config("epsilon margin must be positive".into()));
        }
        if let Some(m) = self.big_m {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::Config("big-M must be positive".into()));
            }
        }
        Ok(())
    }
}

/// MILP variables holding the final layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVars {
    /// `w[i][j]`: input `i` to output `j`.
    pub w: Vec<Vec<VarId>>,
    pub b: Vec<VarId>,
}

#[derive(Debug, Clone)]
pub struct RegressionEncoding {
    pub model: MilpModel,
    pub params: ParamVars,
    pub a: Vec<Vec<VarId>>,
    pub o: Vec<Vec<VarId>>,
    pub u: Vec<Vec<VarId>>,
    /// Present iff the final layer is ReLU.
    pub z: Option<Vec<Vec<VarId>>>,
    pub max_loss: Vec<Vec<f64>>,
    /// Cap on each `u_{t,j}` actually imposed.
    pub caps: Vec<Vec<f64>>,
    /// Number of `(t, j)` entries whose cap was tightened below `max_loss`.
    pub tightened: usize,
    /// Indices of the encoded points in the caller's dataset.
    pub datapoint_ids: Vec<usize>,
    pub big_m: f64,
}

#[derive(Debug, Clone)]
pub struct ClassificationEncoding {
    pub model: MilpModel,
    pub params: ParamVars,
    pub a: Vec<Vec<VarId>>,
    pub o: Vec<Vec<VarId>>,
    pub z: Option<Vec<Vec<VarId>>>,
    pub c: Vec<VarId>,
    /// `s[t][j]`, `None` at the label position.
    pub s: Vec<Vec<Option<VarId>>>,
    pub labels: Vec<usize>,
    pub current_correct: usize,
    /// Lower bound imposed on `Σ c_t`.
    pub floor: usize,
    pub datapoint_ids: Vec<usize>,
    pub big_m: f64,
}

/// `|o − y|` entrywise.
pub fn max_loss_table(current: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if current.len() != targets.len() {
        return Err(Error::invalid("output and target tables differ in length"));
    }
    current
        .iter()
        .zip(targets)
        .map(|(o, y)| {
            if o.len() != y.len() {
                return Err(Error::invalid("output and target rows differ in width"));
            }
            Ok(o.iter().zip(y).map(|(a, b)| (a - b).abs()).collect())
        })
        .collect()
}

fn check_features(layer: &Layer, h: &[Vec<f64>]) -> Result<()> {
    for (t, row) in h.iter().enumerate() {
        if row.len() != layer.inputs() {
            return Err(Error::invalid(format!(
                "feature row {t} has {} entries, final layer expects {}",
                row.len(),
                layer.inputs()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature row {t} is not finite")));
        }
    }
    Ok(())
}

/// Largest `|a_{t,j}|` reachable inside the parameter box, or `None` when
/// the bias is unbounded.
fn activation_bound(layer: &Layer, h: &[Vec<f64>], cfg: &EncoderConfig) -> Option<f64> {
    let br = cfg.bias_radius?;
    let mut best = 0.0f64;
    for row in h {
        for j in 0..layer.outputs() {
            let w = layer.weights.row(j);
            let s: f64 = row.iter().zip(w).map(|(x, wv)| x.abs() * (wv.abs() + cfg.radius_r)).sum();
            best = best.max(s + layer.bias[j].abs() + br);
        }
    }
    Some(best)
}

/// `2·(max_t ‖h_t‖₁·(‖w̄‖∞ + r) + |b̄|max + bias_radius)`, with an unbounded
/// bias counted as `10 r`.
pub fn default_big_m(layer: &Layer, h: &[Vec<f64>], cfg: &EncoderConfig) -> f64 {
    let h1 = h.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let w_inf = layer.weights.max_abs();
    let b_max = layer.bias.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let br = cfg.bias_radius.unwrap_or(10.0 * cfg.radius_r);
    (2.0 * (h1 * (w_inf + cfg.radius_r) + b_max + br)).max(1.0)
}

fn resolve_big_m(layer: &Layer, h: &[Vec<f64>], cfg: &EncoderConfig) -> Result<f64> {
    let m = cfg.big_m.unwrap_or_else(|| default_big_m(layer, h, cfg));
    if let Some(bound) = activation_bound(layer, h, cfg) {
        if bound > 0.5 * m * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "big-M {m} too small: activations can reach {bound}, need at most big_m/2"
            )));
        }
    }
    Ok(m)
}

/// Shared part of both encodings: parameter boxes, affine rows and the
/// output activation. Returns `(params, a, o, z)`.
#[allow(clippy::type_complexity)]
fn encode_layer(
    model: &mut MilpModel,
    layer: &Layer,
    h: &[Vec<f64>],
    cfg: &EncoderConfig,
    big_m: f64,
) -> Result<(ParamVars, Vec<Vec<VarId>>, Vec<Vec<VarId>>, Option<Vec<Vec<VarId>>>)> {
    let (n, m) = (layer.inputs(), layer.outputs());
    let r = cfg.radius_r;
    let mut w = vec![Vec::with_capacity(m); n];
    for (i, wi) in w.iter_mut().enumerate() {
        for j in 0..m {
            let wb = layer.weights.get(j, i);
            wi.push(model.add_variable(Variable::new(format!("w_{i}_{j}"), VarKind::bounded(wb - r, wb + r)))?);
        }
    }
    let mut b = Vec::with_capacity(m);
    for j in 0..m {
        let bb = layer.bias[j];
        let kind = match cfg.bias_radius {
            Some(br) => VarKind::bounded(bb - br, bb + br),
            None => VarKind::free(),
        };
        b.push(model.add_variable(Variable::new(format!("b_{j}"), kind))?);
    }

    let relu = layer.activation == Activation::Relu;
    let half = 0.5 * big_m;
    let (mut a, mut o) = (Vec::with_capacity(h.len()), Vec::with_capacity(h.len()));
    let mut z = relu.then(|| Vec::with_capacity(h.len()));
    for (t, ht) in h.iter().enumerate() {
        let (mut at, mut ot, mut zt) = (Vec::with_capacity(m), Vec::with_capacity(m), Vec::with_capacity(m));
        for j in 0..m {
            let av = model.add_variable(Variable::new(format!("a_{t}_{j}"), VarKind::bounded(-half, half)))?;
            let mut expr = LinExpr::new().term(1.0, av).term(-1.0, b[j]);
            for (i, &x) in ht.iter().enumerate() {
                expr.push(-x, w[i][j]);
            }
            model.add_constraint(Constraint::eq(expr, 0.0))?;

            let ov = if relu {
                let ov = model.add_variable(Variable::new(format!("o_{t}_{j}"), VarKind::bounded(0.0, half)))?;
                let zv = model.add_variable(Variable::new(format!("z_{t}_{j}"), VarKind::Binary))?;
                // o >= a; o <= a + M(1 - z); o <= M z
                model.add_constraint(Constraint::ge(LinExpr::new().term(1.0, ov).term(-1.0, av), 0.0))?;
                model.add_constraint(Constraint::le(
                    LinExpr::new().term(1.0, ov).term(-1.0, av).term(big_m, zv),
                    big_m,
                ))?;
                model.add_constraint(Constraint::le(LinExpr::new().term(1.0, ov).term(-big_m, zv), 0.0))?;
                zt.push(zv);
                ov
            } else {
                let ov = model.add_variable(Variable::new(format!("o_{t}_{j}"), VarKind::free()))?;
                model.add_constraint(Constraint::eq(LinExpr::new().term(1.0, ov).term(-1.0, av), 0.0))?;
                ov
            };
            at.push(av);
            ot.push(ov);
        }
        a.push(at);
        o.push(ot);
        if let Some(z) = z.as_mut() {
            z.push(zt);
        }
    }
    Ok((ParamVars { w, b }, a, o, z))
}

fn final_outputs(layer: &Layer, h: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    h.iter().map(|row| layer.apply(row)).collect()
}

/// Regression encoding with the L1 cap of each point set to its current
/// error, tightened by `eps_margin` wherever that error exceeds the margin.
pub fn encode_regression(
    layer: &Layer,
    h: &[Vec<f64>],
    y: &[Vec<f64>],
    cfg: &EncoderConfig,
) -> Result<RegressionEncoding> {
    cfg.validate()?;
    check_features(layer, h)?;
    check_targets(layer, h, y)?;
    let current = final_outputs(layer, h)?;
    let max_loss = max_loss_table(&current, y)?;
    let eps = cfg.eps_margin;
    let mut tightened = 0;
    let caps = max_loss
        .iter()
        .map(|row| {
            row.iter()
                .map(|&ml| {
                    if ml > eps {
                        tightened += 1;
                        ml - eps
                    } else {
                        ml
                    }
                })
                .collect()
        })
        .collect();
    let mut enc = encode_regression_with_caps(layer, h, y, caps, cfg)?;
    enc.max_loss = max_loss;
    enc.tightened = tightened;
    Ok(enc)
}

fn check_targets(layer: &Layer, h: &[Vec<f64>], y: &[Vec<f64>]) -> Result<()> {
    if y.len() != h.len() {
        return Err(Error::invalid(format!("{} feature rows but {} targets", h.len(), y.len())));
    }
    for (t, row) in y.iter().enumerate() {
        if row.len() != layer.outputs() {
            return Err(Error::invalid(format!(
                "target row {t} has {} entries, final layer has {} outputs",
                row.len(),
                layer.outputs()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("target row {t} is not finite")));
        }
    }
    Ok(())
}

/// Regression encoding with caller-chosen caps `u_{t,j} <= caps[t][j]`.
pub fn encode_regression_with_caps(
    layer: &Layer,
    h: &[Vec<f64>],
    y: &[Vec<f64>],
    caps: Vec<Vec<f64>>,
    cfg: &EncoderConfig,
) -> Result<RegressionEncoding> {
    cfg.validate()?;
    check_features(layer, h)?;
    check_targets(layer, h, y)?;
    if caps.len() != h.len() || caps.iter().any(|r| r.len() != layer.outputs()) {
        return Err(Error::invalid("cap table shape does not match the targets"));
    }
    if caps.iter().flatten().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::invalid("caps must be finite and non-negative"));
    }
    let big_m = resolve_big_m(layer, h, cfg)?;
    let mut model = MilpModel::new();
    let (params, a, o, z) = encode_layer(&mut model, layer, h, cfg, big_m)?;

    let mut u = Vec::with_capacity(h.len());
    let mut objective = LinExpr::new();
    for (t, yt) in y.iter().enumerate() {
        let mut ut = Vec::with_capacity(yt.len());
        for (j, &target) in yt.iter().enumerate() {
            let uv = model.add_variable(Variable::new(
                format!("u_{t}_{j}"),
                VarKind::bounded(0.0, f64::INFINITY),
            ))?;
            let ov = o[t][j];
            model.add_constraint(Constraint::le(LinExpr::new().term(1.0, ov).term(-1.0, uv), target))?;
            model.add_constraint(Constraint::ge(LinExpr::new().term(1.0, ov).term(1.0, uv), target))?;
            model.add_constraint(Constraint::le(LinExpr::new().term(1.0, uv), caps[t][j]))?;
            objective.push(1.0, uv);
            ut.push(uv);
        }
        u.push(ut);
    }
    if !cfg.feasibility_only {
        model.set_objective(ObjSense::Min, objective)?;
    }
    let current = final_outputs(layer, h)?;
    let max_loss = max_loss_table(&current, y)?;
    Ok(RegressionEncoding {
        model,
        params,
        a,
        o,
        u,
        z,
        max_loss,
        caps,
        tightened: 0,
        datapoint_ids: (0..h.len()).collect(),
        big_m,
    })
}

/// Number of rows of `h` that `layer` classifies correctly by argmax.
pub fn count_correct(layer: &Layer, h: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    let mut n = 0;
    for (row, &label) in h.iter().zip(labels) {
        if argmax(&layer.apply(row)?) == label {
            n += 1;
        }
    }
    Ok(n)
}

/// Classification encoding demanding at least one more correct point than
/// the current layer achieves.
pub fn encode_classification(
    layer: &Layer,
    h: &[Vec<f64>],
    labels: &[usize],
    cfg: &EncoderConfig,
) -> Result<ClassificationEncoding> {
    check_features(layer, h)?;
    check_labels(layer, h, labels)?;
    let current = count_correct(layer, h, labels)?;
    let mut enc = encode_classification_with_floor(layer, h, labels, current + 1, cfg)?;
    enc.current_correct = current;
    Ok(enc)
}

fn check_labels(layer: &Layer, h: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if layer.outputs() < 2 {
        return Err(Error::invalid("classification needs at least two classes"));
    }
    if labels.len() != h.len() {
        return Err(Error::invalid(format!("{} feature rows but {} labels", h.len(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= layer.outputs()) {
        return Err(Error::invalid(format!("label {bad} out of range for {} classes", layer.outputs())));
    }
    Ok(())
}

/// Classification encoding with the accuracy floor `Σ c_t >= floor`.
pub fn encode_classification_with_floor(
    layer: &Layer,
    h: &[Vec<f64>],
    labels: &[usize],
    floor: usize,
    cfg: &EncoderConfig,
) -> Result<ClassificationEncoding> {
    cfg.validate()?;
    check_features(layer, h)?;
    check_labels(layer, h, labels)?;
    let big_m = resolve_big_m(layer, h, cfg)?;
    let eps = cfg.eps_margin;
    // Output differences lie in [-M, M]; the indicator rows need M + eps.
    let m_ind = big_m + eps;
    let classes = layer.outputs();

    let mut model = MilpModel::new();
    let (params, a, o, z) = encode_layer(&mut model, layer, h, cfg, big_m)?;

    let mut c = Vec::with_capacity(h.len());
    let mut s = Vec::with_capacity(h.len());
    let mut total = LinExpr::new();
    for (t, &label) in labels.iter().enumerate() {
        let ct = model.add_variable(Variable::new(format!("c_{t}"), VarKind::Binary))?;
        let mut st = vec![None; classes];
        // Σ_{j≠ŷ} s_{t,j} - (M-1) c_t >= 0
        let mut all = LinExpr::new().term(-((classes - 1) as f64), ct);
        for (j, slot) in st.iter_mut().enumerate() {
            if j == label {
                continue;
            }
            let sv = model.add_variable(Variable::new(format!("s_{t}_{j}"), VarKind::Binary))?;
            // o_ŷ - o_j - m_ind s >= eps - m_ind
            model.add_constraint(Constraint::ge(
                LinExpr::new().term(1.0, o[t][label]).term(-1.0, o[t][j]).term(-m_ind, sv),
                eps - m_ind,
            ))?;
            all.push(1.0, sv);
            *slot = Some(sv);
        }
        model.add_constraint(Constraint::ge(all, 0.0))?;
        total.push(1.0, ct);
        c.push(ct);
        s.push(st);
    }
    model.add_constraint(Constraint::ge(total.clone(), floor as f64))?;
    model.set_objective(ObjSense::Max, total)?;

    Ok(ClassificationEncoding {
        model,
        params,
        a,
        o,
        z,
        c,
        s,
        labels: labels.to_vec(),
        current_correct: count_correct(layer, h, labels)?,
        floor,
        datapoint_ids: (0..h.len()).collect(),
        big_m,
    })
}

/// Final-layer weights and bias read from a solution.
pub fn extract_parameters(params: &ParamVars, values: &[f64]) -> Result<(Matrix, Vec<f64>)> {
    let n = params.w.len();
    let m = params.b.len();
    let get = |v: VarId| {
        values
            .get(v.index())
            .copied()
            .ok_or_else(|| Error::Internal(format!("solution has no value for variable {}", v.index())))
    };
    let mut weights = Matrix::zeros(m, n);
    for (i, row) in params.w.iter().enumerate() {
        if row.len() != m {
            return Err(Error::Internal("ragged weight variable map".into()));
        }
        for (j, &v) in row.iter().enumerate() {
            weights.set(j, i, get(v)?);
        }
    }
    let bias = params.b.iter().map(|&v| get(v)).collect::<Result<Vec<_>>>()?;
    if weights.as_slice().iter().chain(&bias).any(|v| !v.is_finite()) {
        return Err(Error::Internal("solution holds non-finite parameters".into()));
    }
    Ok((weights, bias))
}

/// Overwrites the final layer of `dnn` with the solved parameters
/// (`W[j][i] = w_{i,j}`). Earlier layers are never touched.
pub fn apply_solution(dnn: &mut Dnn, params: &ParamVars, values: &[f64]) -> Result<()> {
    let last = dnn.final_layer();
    if params.w.len() != last.inputs() || params.b.len() != last.outputs() {
        return Err(Error::Internal("variable map does not match the final layer".into()));
    }
    let (weights, bias) = extract_parameters(params, values)?;
    dnn.set_final_parameters(weights, bias)
}
