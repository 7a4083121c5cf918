use nalgebra::{DMatrix, DVector};

use super::{LpError, LpProblem, LpSolution, LpStatus};

/// Variables plus constraints allowed in an oracle call.
pub const ORACLE_LIMIT: usize = 20;

const ORACLE_FEAS: f64 = 1e-9;

/// Exact optimum by enumerating basic feasible solutions.
///
/// The problem is first rewritten over nonnegative variables (shifting
/// finite lower bounds, reflecting upper-only bounds, splitting free
/// variables), which makes the feasible set pointed: it is nonempty iff it
/// has a vertex, and the LP is unbounded iff some extreme ray of the
/// recession cone has negative cost. Both are found by brute force.
pub fn enumerate_vertices_oracle(p: &LpProblem) -> Result<LpSolution, LpError> {
    p.validate()?;
    let n = p.num_vars();
    if n + p.num_constraints() > ORACLE_LIMIT {
        return Err(LpError::OracleTooLarge {
            vars: n,
            cons: p.num_constraints(),
            limit: ORACLE_LIMIT,
        });
    }
    let infeasible = LpSolution {
        status: LpStatus::Infeasible,
        x: vec![f64::NAN; n],
        objective: f64::NAN,
        iterations: 0,
    };
    if (0..n).any(|j| p.lb[j] > p.ub[j]) {
        return Ok(infeasible);
    }

    // x = offset + M y, y >= 0.
    let mut offset = vec![0.0; n];
    let mut map: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut ycount = 0;
    // Upper-bound rows on shifted variables: y_k <= width.
    let mut width_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (l, u) = (p.lb[j], p.ub[j]);
        if l.is_finite() {
            offset[j] = l;
            map[j].push((ycount, 1.0));
            if u.is_finite() {
                width_rows.push((ycount, u - l));
            }
            ycount += 1;
        } else if u.is_finite() {
            offset[j] = u;
            map[j].push((ycount, -1.0));
            ycount += 1;
        } else {
            map[j].push((ycount, 1.0));
            map[j].push((ycount + 1, -1.0));
            ycount += 2;
        }
    }
    let py = ycount;
    let lift = |row: &[f64]| {
        let mut out = vec![0.0; py];
        for (j, a) in row.iter().enumerate() {
            for &(k, s) in &map[j] {
                out[k] += a * s;
            }
        }
        out
    };
    let shift = |row: &[f64]| row.iter().zip(&offset).map(|(a, o)| a * o).sum::<f64>();

    let mut eq_rows: Vec<(Vec<f64>, f64)> = p
        .a_eq
        .iter()
        .zip(&p.b_eq)
        .map(|(r, b)| (lift(r), b - shift(r)))
        .collect();
    let mut le_rows: Vec<(Vec<f64>, f64)> = p
        .a_ub
        .iter()
        .zip(&p.b_ub)
        .map(|(r, b)| (lift(r), b - shift(r)))
        .collect();
    for &(k, w) in &width_rows {
        let mut r = vec![0.0; py];
        r[k] = 1.0;
        le_rows.push((r, w));
    }
    for k in 0..py {
        let mut r = vec![0.0; py];
        r[k] = -1.0;
        le_rows.push((r, 0.0));
    }
    let cy = lift(&p.cost);
    let c0 = shift(&p.cost);

    let points = vertices(&eq_rows, &le_rows, py);
    let Some(best) = points.iter().min_by(|a, b| {
        let fa = dot(&cy, a);
        let fb = dot(&cy, b);
        fa.partial_cmp(&fb).unwrap()
    }) else {
        return Ok(infeasible);
    };

    // Recession cone, normalized to the simplex sum(d) = 1.
    for (_, b) in eq_rows.iter_mut().chain(le_rows.iter_mut()) {
        *b = 0.0;
    }
    eq_rows.push((vec![1.0; py], 1.0));
    let rays = vertices(&eq_rows, &le_rows, py);
    if rays.iter().any(|d| dot(&cy, d) < -ORACLE_FEAS) {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: vec![f64::NAN; n],
            objective: f64::NEG_INFINITY,
            iterations: 0,
        });
    }

    let x: Vec<f64> = (0..n)
        .map(|j| offset[j] + map[j].iter().map(|&(k, s)| s * best[k]).sum::<f64>())
        .collect();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: dot(&cy, best) + c0,
        x,
        iterations: points.len(),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// All points of {E y = e, G y <= g} in R^p at which p linearly independent
/// constraints are active.
fn vertices(eq: &[(Vec<f64>, f64)], le: &[(Vec<f64>, f64)], p: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    if p == 0 {
        return out;
    }
    let m = le.len();
    let rank_eq = if eq.is_empty() {
        0
    } else {
        let e = DMatrix::from_fn(eq.len(), p, |i, j| eq[i].0[j]);
        numeric_rank(&e)
    };
    let need = p.saturating_sub(rank_eq);
    let mut pick: Vec<usize> = Vec::new();
    // Every subset of inequalities with |S| <= p, stacked under all
    // equalities; a subset is a vertex candidate when the stacked system has
    // full column rank and a consistent unique solution.
    #[allow(clippy::too_many_arguments)]
    fn rec(
        start: usize,
        m: usize,
        p: usize,
        need: usize,
        pick: &mut Vec<usize>,
        eq: &[(Vec<f64>, f64)],
        le: &[(Vec<f64>, f64)],
        out: &mut Vec<Vec<f64>>,
    ) {
        if pick.len() >= need {
            if let Some(y) = solve_active(eq, le, pick, p) {
                let feasible = eq
                    .iter()
                    .all(|(r, b)| (dot(r, &y) - b).abs() <= ORACLE_FEAS * (1.0 + b.abs()))
                    && le.iter().all(|(r, b)| dot(r, &y) <= b + ORACLE_FEAS * (1.0 + b.abs()));
                if feasible {
                    out.push(y);
                }
            }
            return;
        }
        for i in start..m {
            pick.push(i);
            rec(i + 1, m, p, need, pick, eq, le, out);
            pick.pop();
        }
    }
    rec(0, m, p, need, &mut pick, eq, le, &mut out);
    out
}

fn solve_active(
    eq: &[(Vec<f64>, f64)],
    le: &[(Vec<f64>, f64)],
    pick: &[usize],
    p: usize,
) -> Option<Vec<f64>> {
    let rows: Vec<&(Vec<f64>, f64)> = eq.iter().chain(pick.iter().map(|&i| &le[i])).collect();
    let k = rows.len();
    let a = DMatrix::from_fn(k, p, |i, j| rows[i].0[j]);
    let b = DVector::from_fn(k, |i, _| rows[i].1);
    let y = if k == p {
        // Hadamard ratio |det| / prod(row norms) flags near-singular systems.
        let norms: f64 = a.row_iter().map(|r| r.norm().max(1e-300)).product();
        if a.determinant().abs() / norms < 1e-10 {
            return None;
        }
        a.clone().full_piv_lu().solve(&b)?
    } else {
        if numeric_rank(&a) < p {
            return None;
        }
        a.clone().svd(true, true).solve(&b, 1e-12).ok()?
    };
    let r = &a * &y - &b;
    if r.amax() > 1e-9 * (1.0 + b.amax()) {
        return None;
    }
    Some(y.iter().copied().collect())
}

fn numeric_rank(a: &DMatrix<f64>) -> usize {
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    sv.iter().filter(|&&s| s > 1e-10 * smax.max(1.0)).count()
}
