use std::fmt::Write;

use super::{LinearModel, Relation, Sense, VarId};

fn terms(out: &mut String, model: &LinearModel, coeffs: &[(VarId, f64)]) {
    if coeffs.is_empty() {
        out.push_str(" 0");
        return;
    }
    for (k, &(v, c)) in coeffs.iter().enumerate() {
        let name = &model.variable(v).name;
        if k == 0 {
            let _ = write!(out, " {c} {name}");
        } else if c < 0.0 {
            let _ = write!(out, " - {} {name}", -c);
        } else {
            let _ = write!(out, " + {c} {name}");
        }
    }
}

fn bound(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

/// Renders the model in CPLEX LP text form, for inspection with external
/// tools. Variables listed in `binaries` go to a `Binaries` section.
pub fn write_lp_format(model: &LinearModel, binaries: &[VarId]) -> String {
    let mut out = String::new();
    let obj = model.objective();
    out.push_str(match obj.sense {
        Sense::Minimize => "Minimize\n",
        Sense::Maximize => "Maximize\n",
    });
    out.push_str(" obj:");
    terms(&mut out, model, &obj.coeffs);
    out.push('\n');
    if obj.constant != 0.0 {
        let _ = writeln!(out, "\\ objective constant {}", obj.constant);
    }
    out.push_str("Subject To\n");
    for (i, c) in model.constraints().iter().enumerate() {
        let _ = write!(out, " c{i}:");
        terms(&mut out, model, &c.coeffs);
        let rel = match c.relation {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        };
        let _ = writeln!(out, " {rel} {}", c.rhs);
    }
    out.push_str("Bounds\n");
    for v in model.variables() {
        if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            let _ = writeln!(out, " {} free", v.name);
        } else if v.lower == v.upper {
            let _ = writeln!(out, " {} = {}", v.name, v.lower);
        } else {
            let _ = writeln!(out, " {} <= {} <= {}", bound(v.lower), v.name, bound(v.upper));
        }
    }
    if !binaries.is_empty() {
        out.push_str("Binaries\n");
        for &b in binaries {
            let _ = writeln!(out, " {}", model.variable(b).name);
        }
    }
    out.push_str("End\n");
    out
}
