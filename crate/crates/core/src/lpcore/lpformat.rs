use std::fmt::Write;

use super::LpProblem;

/// Render the problem in CPLEX LP text format for cross-checking with
/// external solvers.
pub fn write_lp_format(p: &LpProblem) -> String {
    let name = |j: usize| -> String {
        match p.names.get(j) {
            Some(s) if !s.is_empty() => sanitize(s),
            _ => format!("x{j}"),
        }
    };
    let expr = |coefs: &[f64]| -> String {
        let mut out = String::new();
        for (j, &a) in coefs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let sign = if a < 0.0 { "-" } else { "+" };
            let _ = write!(out, " {sign} {} {}", a.abs(), name(j));
        }
        if out.is_empty() {
            out.push_str(" 0 x0");
        }
        out
    };

    let mut s = String::new();
    s.push_str("\\ gridmpc LP dump\nMinimize\n obj:");
    s.push_str(&expr(&p.cost));
    s.push_str("\nSubject To\n");
    for (i, (row, b)) in p.a_eq.iter().zip(&p.b_eq).enumerate() {
        let _ = writeln!(s, " e{i}:{} = {b}", expr(row));
    }
    for (i, (row, b)) in p.a_ub.iter().zip(&p.b_ub).enumerate() {
        let _ = writeln!(s, " u{i}:{} <= {b}", expr(row));
    }
    s.push_str("Bounds\n");
    for j in 0..p.num_vars() {
        let (l, u) = (p.lb[j], p.ub[j]);
        let n = name(j);
        match (l.is_finite(), u.is_finite()) {
            (true, true) if l == u => {
                let _ = writeln!(s, " {n} = {l}");
            }
            (true, true) => {
                let _ = writeln!(s, " {l} <= {n} <= {u}");
            }
            (true, false) => {
                let _ = writeln!(s, " {n} >= {l}");
            }
            (false, true) => {
                let _ = writeln!(s, " -inf <= {n} <= {u}");
            }
            (false, false) => {
                let _ = writeln!(s, " {n} free");
            }
        }
    }
    s.push_str("End\n");
    s
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpcore::LpBuilder;

    #[test]
    fn renders_sections() {
        let mut b = LpBuilder::new();
        let x = b.add_var("p_grid[0]", 0.0, f64::INFINITY, 1.0);
        let y = b.add_var("theta", f64::NEG_INFINITY, f64::INFINITY, 0.0);
        b.add_eq(vec![(x, 1.0), (y, -2.0)], 3.0);
        let text = write_lp_format(&b.build());
        assert!(text.contains("obj: + 1 p_grid_0_"));
        assert!(text.contains(" e0: + 1 p_grid_0_ - 2 theta = 3"));
        assert!(text.contains(" theta free"));
        assert!(text.trim_end().ends_with("End"));
    }
}
