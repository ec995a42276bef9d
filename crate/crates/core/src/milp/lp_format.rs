//! CPLEX LP-format writer.
//!
//! Output is fully deterministic: variables and rows appear in insertion
//! order and every coefficient is printed like C's `%.17g`, which is enough
//! digits to round-trip an `f64` exactly.

use std::fmt::Write;

use super::model::{Cmp, LinExpr, MilpModel, ObjSense, VarKind};

const WRAP_AT: usize = 200;

/// `%.17g` formatting: 17 significant digits, trailing zeros stripped.
pub fn format_g17(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.16e}", v.abs());
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mant.chars().filter(|c| *c != '.').collect();
    let sign = if v < 0.0 { "-" } else { "" };

    if !(-5..17).contains(&exp) {
        let mut m = format!("{}.{}", &digits[..1], &digits[1..]);
        trim_fraction(&mut m);
        let esign = if exp < 0 { '-' } else { '+' };
        return format!("{sign}{m}e{esign}{:02}", exp.abs());
    }
    let mut s = if exp >= 0 {
        let split = exp as usize + 1;
        format!("{}.{}", &digits[..split], &digits[split..])
    } else {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    };
    trim_fraction(&mut s);
    format!("{sign}{s}")
}

fn trim_fraction(s: &mut String) {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
}

fn push_wrapped(out: &mut String, line: &mut String, piece: &str) {
    if line.len() + piece.len() > WRAP_AT {
        out.push_str(line);
        out.push('\n');
        line.clear();
    }
    line.push_str(piece);
}

/// Renders `expr`'s terms as ` c x + d y ...` onto `line`, wrapping long rows.
fn write_terms(out: &mut String, line: &mut String, expr: &LinExpr, model: &MilpModel) {
    if expr.terms.is_empty() {
        let filler = model
            .variables()
            .first()
            .map_or_else(|| " 0".to_string(), |v| format!(" 0 {}", v.name));
        push_wrapped(out, line, &filler);
        return;
    }
    for (k, &(c, v)) in expr.terms.iter().enumerate() {
        let name = &model.variable(v).name;
        let op = if c < 0.0 {
            "-"
        } else if k == 0 {
            ""
        } else {
            "+"
        };
        let mag = c.abs();
        let mut piece = String::from(" ");
        if !op.is_empty() {
            piece.push_str(op);
            piece.push(' ');
        }
        if mag != 1.0 {
            piece.push_str(&format_g17(mag));
            piece.push(' ');
        }
        piece.push_str(name);
        push_wrapped(out, line, &piece);
    }
}

/// Writes `model` as CPLEX LP text.
pub fn write_lp(model: &MilpModel) -> String {
    let mut out = String::new();

    match model.objective() {
        None => out.push_str("Minimize\n 0\n"),
        Some(obj) => {
            out.push_str(match obj.sense {
                ObjSense::Max => "Maximize\n",
                ObjSense::Min => "Minimize\n",
            });
            if obj.expr.constant != 0.0 {
                let _ = writeln!(out, "\\ objective constant: {}", format_g17(obj.expr.constant));
            }
            let mut line = String::from(" obj:");
            write_terms(&mut out, &mut line, &obj.expr, model);
            out.push_str(&line);
            out.push('\n');
        }
    }

    out.push_str("Subject To\n");
    for (i, c) in model.constraints().iter().enumerate() {
        let mut line = format!(" r{i}:");
        write_terms(&mut out, &mut line, &c.lhs, model);
        let op = match c.sense {
            Cmp::Le => "<=",
            Cmp::Eq => "=",
            Cmp::Ge => ">=",
        };
        push_wrapped(&mut out, &mut line, &format!(" {op} {}", format_g17(c.rhs)));
        out.push_str(&line);
        out.push('\n');
    }

    out.push_str("Bounds\n");
    for v in model.variables() {
        let VarKind::Continuous { lb, ub } = v.kind else {
            continue;
        };
        let name = &v.name;
        let _ = match (lb.is_finite(), ub.is_finite()) {
            (false, false) => writeln!(out, " {name} free"),
            (true, false) => writeln!(out, " {name} >= {}", format_g17(lb)),
            (false, true) => writeln!(out, " -inf <= {name} <= {}", format_g17(ub)),
            (true, true) if lb == ub => writeln!(out, " {name} = {}", format_g17(lb)),
            (true, true) => writeln!(out, " {} <= {name} <= {}", format_g17(lb), format_g17(ub)),
        };
    }

    let binaries: Vec<&str> = model
        .variables()
        .iter()
        .filter(|v| v.kind.is_binary())
        .map(|v| v.name.as_str())
        .collect();
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        let mut line = String::new();
        for name in binaries {
            push_wrapped(&mut out, &mut line, &format!(" {name}"));
        }
        out.push_str(&line);
        out.push('\n');
    }

    out.push_str("End\n");
    out
}
