use nalgebra::{DMatrix, DVector};

use super::{LpError, LpProblem, LpSolution, LpStatus, PivotRule, SolverOptions, Tolerances};

const PIVOT_TOL: f64 = 1e-9;
/// Pivot candidates smaller than this fraction of the column's largest entry
/// are treated as zero.
const PIVOT_REL: f64 = 1e-12;
const RATIO_TIE: f64 = 1e-12;
const DEGENERATE_STREAK: usize = 30;
const MAX_REFRESH: usize = 6;

/// Solve with default options (Bland's rule) and the given tolerances.
pub fn solve(p: &LpProblem, tol: Tolerances) -> Result<LpSolution, LpError> {
    solve_with(
        p,
        &SolverOptions {
            tol,
            ..SolverOptions::default()
        },
    )
}

pub fn solve_with(p: &LpProblem, opts: &SolverOptions) -> Result<LpSolution, LpError> {
    p.validate()?;
    let n = p.num_vars();
    if (0..n).any(|j| p.lb[j] > p.ub[j]) {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: vec![f64::NAN; n],
            objective: f64::NAN,
            iterations: 0,
        });
    }
    let mut tab = Tableau::new(p);
    tab.run(p, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable parked at zero.
    Free,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

struct Tableau {
    m: usize,
    cols: usize,
    n_struct: usize,
    first_art: usize,
    /// Standardized constraint matrix (row-major, m x cols), kept for refreshes.
    a: Vec<f64>,
    b: Vec<f64>,
    /// Current B^-1 A (row-major, m x cols).
    t: Vec<f64>,
    x: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    state: Vec<State>,
    basis: Vec<usize>,
    cost: Vec<f64>,
    d: Vec<f64>,
    blocked: Vec<bool>,
    iterations: usize,
    bscale: f64,
}

impl Tableau {
    fn new(p: &LpProblem) -> Self {
        let n = p.num_vars();
        let m_eq = p.a_eq.len();
        let m_ub = p.a_ub.len();
        let m = m_eq + m_ub;

        // Nonbasic starting values for structural columns.
        let mut xs = Vec::with_capacity(n);
        let mut st = Vec::with_capacity(n);
        for j in 0..n {
            let (l, u) = (p.lb[j], p.ub[j]);
            if l.is_finite() {
                xs.push(l);
                st.push(State::AtLower);
            } else if u.is_finite() {
                xs.push(u);
                st.push(State::AtUpper);
            } else {
                xs.push(0.0);
                st.push(State::Free);
            }
        }

        let rows: Vec<&Vec<f64>> = p.a_eq.iter().chain(&p.a_ub).collect();
        let rhs: Vec<f64> = p.b_eq.iter().chain(&p.b_ub).copied().collect();
        let resid: Vec<f64> = rows
            .iter()
            .zip(&rhs)
            .map(|(row, b)| b - row.iter().zip(&xs).map(|(a, v)| a * v).sum::<f64>())
            .collect();

        // Rows that need an artificial: every equality, and inequalities whose
        // slack would start negative.
        let mut art_rows = Vec::new();
        for i in 0..m {
            if i < m_eq || resid[i] < 0.0 {
                art_rows.push(i);
            }
        }
        let first_art = n + m_ub;
        let cols = first_art + art_rows.len();

        let mut a = vec![0.0; m * cols];
        for (i, row) in rows.iter().enumerate() {
            a[i * cols..i * cols + n].copy_from_slice(row);
            if i >= m_eq {
                a[i * cols + n + (i - m_eq)] = 1.0;
            }
        }
        let mut x = xs;
        x.extend(std::iter::repeat(0.0).take(cols - n));
        let mut state = st;
        state.extend(std::iter::repeat(State::AtLower).take(cols - n));
        let mut lb = p.lb.clone();
        let mut ub = p.ub.clone();
        lb.extend(std::iter::repeat(0.0).take(cols - n));
        ub.extend(std::iter::repeat(f64::INFINITY).take(cols - n));

        let mut basis = vec![usize::MAX; m];
        let mut diag = vec![1.0; m];
        for i in m_eq..m {
            if resid[i] >= 0.0 {
                let s = n + (i - m_eq);
                basis[i] = s;
                state[s] = State::Basic;
                x[s] = resid[i];
            }
        }
        for (k, &i) in art_rows.iter().enumerate() {
            let c = first_art + k;
            let sign = if resid[i] >= 0.0 { 1.0 } else { -1.0 };
            a[i * cols + c] = sign;
            diag[i] = sign;
            basis[i] = c;
            state[c] = State::Basic;
            x[c] = resid[i].abs();
        }

        let mut t = a.clone();
        for i in 0..m {
            if diag[i] < 0.0 {
                for v in &mut t[i * cols..(i + 1) * cols] {
                    *v = -*v;
                }
            }
        }

        let mut cost = vec![0.0; cols];
        for c in cost.iter_mut().skip(first_art) {
            *c = 1.0;
        }
        let bscale = 1.0 + rhs.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let mut tab = Self {
            m,
            cols,
            n_struct: n,
            first_art,
            a,
            b: rhs,
            t,
            x,
            lb,
            ub,
            state,
            basis,
            cost,
            d: vec![0.0; cols],
            blocked: vec![false; cols],
            iterations: 0,
            bscale,
        };
        tab.recompute_reduced_costs();
        tab
    }

    fn recompute_reduced_costs(&mut self) {
        let cols = self.cols;
        self.d.copy_from_slice(&self.cost);
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * cols..(i + 1) * cols];
                for (dj, tij) in self.d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
    }

    fn run(&mut self, p: &LpProblem, opts: &SolverOptions) -> Result<LpSolution, LpError> {
        let tol = opts.tol;
        if self.first_art < self.cols {
            if let Step::Unbounded = self.optimize(opts)? {
                return Err(self.breakdown("phase one reported an unbounded ray"));
            }
            let infeas: f64 = (self.first_art..self.cols).map(|j| self.x[j]).sum();
            if infeas > tol.feas * self.bscale {
                return Ok(self.finish(p, LpStatus::Infeasible));
            }
            self.retire_artificials();
        }

        self.cost = vec![0.0; self.cols];
        self.cost[..self.n_struct].copy_from_slice(&p.cost);
        self.recompute_reduced_costs();

        let mut refreshes = 0;
        loop {
            if let Step::Unbounded = self.optimize(opts)? {
                return Ok(self.finish(p, LpStatus::Unbounded));
            }
            // Re-derive the primal and dual from a fresh factorization of the
            // final basis and keep pivoting if either drifted.
            let clean = self.refresh(tol)?;
            if clean {
                break;
            }
            refreshes += 1;
            if refreshes > MAX_REFRESH {
                return Err(self.breakdown("basis refresh did not converge"));
            }
        }
        Ok(self.finish(p, LpStatus::Optimal))
    }

    fn breakdown(&self, reason: &str) -> LpError {
        LpError::Numerical {
            iterations: self.iterations,
            reason: reason.to_string(),
        }
    }

    fn finish(&self, p: &LpProblem, status: LpStatus) -> LpSolution {
        let n = self.n_struct;
        let mut x = self.x[..n].to_vec();
        if status == LpStatus::Optimal {
            for j in 0..n {
                x[j] = x[j].clamp(self.lb[j], self.ub[j]);
            }
        }
        let objective = match status {
            LpStatus::Optimal => p.objective_at(&x),
            LpStatus::Unbounded => f64::NEG_INFINITY,
            LpStatus::Infeasible => f64::NAN,
        };
        LpSolution {
            status,
            x,
            objective,
            iterations: self.iterations,
        }
    }

    /// Fix artificials at zero and pivot any that remain basic out of the
    /// basis where a structural or slack column allows it.
    fn retire_artificials(&mut self) {
        for j in self.first_art..self.cols {
            self.lb[j] = 0.0;
            self.ub[j] = 0.0;
            self.blocked[j] = true;
            if self.state[j] != State::Basic {
                self.x[j] = 0.0;
                self.state[j] = State::AtLower;
            }
        }
        let cols = self.cols;
        for r in 0..self.m {
            if self.basis[r] < self.first_art {
                continue;
            }
            let row = &self.t[r * cols..r * cols + self.first_art];
            let mut best: Option<(usize, f64)> = None;
            for (j, &v) in row.iter().enumerate() {
                if self.state[j] == State::Basic || self.lb[j] == self.ub[j] {
                    continue;
                }
                if v.abs() > 1e-7 && best.map_or(true, |(_, bv)| v.abs() > bv) {
                    best = Some((j, v.abs()));
                }
            }
            if let Some((q, _)) = best {
                let leaving = self.basis[r];
                self.x[leaving] = 0.0;
                self.state[leaving] = State::AtLower;
                self.pivot(r, q);
                self.state[q] = State::Basic;
            }
        }
    }

    fn optimize(&mut self, opts: &SolverOptions) -> Result<Step, LpError> {
        let mut streak = 0usize;
        loop {
            if self.iterations >= opts.max_iterations {
                return Err(LpError::IterationLimit(opts.max_iterations));
            }
            let bland = match opts.pivot_rule {
                PivotRule::Bland => true,
                PivotRule::Dantzig => streak >= DEGENERATE_STREAK,
            };
            let Some((q, dir)) = self.entering(opts.tol.opt, bland) else {
                return Ok(Step::Optimal);
            };
            match self.step(q, dir, bland) {
                (Step::Unbounded, _) => return Ok(Step::Unbounded),
                (_, theta) => {
                    self.iterations += 1;
                    if theta <= RATIO_TIE {
                        streak += 1;
                    } else {
                        streak = 0;
                    }
                }
            }
        }
    }

    fn entering(&self, opt_tol: f64, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.cols {
            if self.blocked[j] || self.lb[j] == self.ub[j] {
                continue;
            }
            let dj = self.d[j];
            let dir = match self.state[j] {
                State::Basic => continue,
                State::AtLower if dj < -opt_tol => 1.0,
                State::AtUpper if dj > opt_tol => -1.0,
                State::Free if dj.abs() > opt_tol => -dj.signum(),
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            if best.map_or(true, |(_, _, s)| dj.abs() > s) {
                best = Some((j, dir, dj.abs()));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Ratio test and update for entering column `q` moving in direction
    /// `dir`. Returns the step taken.
    fn step(&mut self, q: usize, dir: f64, bland: bool) -> (Step, f64) {
        let cols = self.cols;
        let mut theta = if self.lb[q].is_finite() && self.ub[q].is_finite() {
            self.ub[q] - self.lb[q]
        } else {
            f64::INFINITY
        };
        let mut leave: Option<(usize, f64)> = None;
        let col_max = (0..self.m).fold(0.0_f64, |acc, i| acc.max(self.t[i * cols + q].abs()));
        let piv_tol = PIVOT_TOL.max(PIVOT_REL * col_max);
        for i in 0..self.m {
            let alpha = dir * self.t[i * cols + q];
            let bvar = self.basis[i];
            let limit = if alpha > piv_tol {
                if !self.lb[bvar].is_finite() {
                    continue;
                }
                ((self.x[bvar] - self.lb[bvar]) / alpha).max(0.0)
            } else if alpha < -piv_tol {
                if !self.ub[bvar].is_finite() {
                    continue;
                }
                ((self.ub[bvar] - self.x[bvar]) / -alpha).max(0.0)
            } else {
                continue;
            };
            match leave {
                _ if limit < theta - RATIO_TIE => {
                    theta = limit;
                    leave = Some((i, alpha));
                }
                // A tie with the entering variable's own range keeps the flip.
                None => {}
                Some((r, _)) if limit <= theta + RATIO_TIE => {
                    let wins = if bland {
                        bvar < self.basis[r]
                    } else {
                        alpha.abs() > (dir * self.t[r * cols + q]).abs()
                    };
                    if wins {
                        theta = theta.min(limit);
                        leave = Some((i, alpha));
                    }
                }
                Some(_) => {}
            }
        }
        if !theta.is_finite() {
            return (Step::Unbounded, theta);
        }

        // Move the basic variables.
        if theta > 0.0 {
            for i in 0..self.m {
                let tiq = self.t[i * cols + q];
                if tiq != 0.0 {
                    self.x[self.basis[i]] -= dir * theta * tiq;
                }
            }
        }
        self.x[q] += dir * theta;

        match leave {
            None => {
                // Bound flip.
                if dir > 0.0 {
                    self.x[q] = self.ub[q];
                    self.state[q] = State::AtUpper;
                } else {
                    self.x[q] = self.lb[q];
                    self.state[q] = State::AtLower;
                }
            }
            Some((r, alpha)) => {
                let leaving = self.basis[r];
                if alpha > 0.0 {
                    self.x[leaving] = self.lb[leaving];
                    self.state[leaving] = State::AtLower;
                } else {
                    self.x[leaving] = self.ub[leaving];
                    self.state[leaving] = State::AtUpper;
                }
                self.pivot(r, q);
                self.state[q] = State::Basic;
            }
        }
        (Step::Moved, theta)
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let cols = self.cols;
        let piv = self.t[r * cols + q];
        let mut prow: Vec<f64> = self.t[r * cols..(r + 1) * cols].to_vec();
        for v in &mut prow {
            *v /= piv;
        }
        prow[q] = 1.0;
        let nz: Vec<usize> = (0..cols).filter(|&j| prow[j] != 0.0).collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * cols + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * cols..(i + 1) * cols];
            for &j in &nz {
                row[j] -= f * prow[j];
            }
            row[q] = 0.0;
        }
        let dq = self.d[q];
        if dq != 0.0 {
            for &j in &nz {
                self.d[j] -= dq * prow[j];
            }
            self.d[q] = 0.0;
        }
        self.t[r * cols..(r + 1) * cols].copy_from_slice(&prow);
        self.basis[r] = q;
    }

    /// Refactor the basis from the original columns. Returns `true` when the
    /// refreshed point is primal feasible and dual optimal.
    fn refresh(&mut self, tol: Tolerances) -> Result<bool, LpError> {
        let (m, cols) = (self.m, self.cols);
        if m == 0 {
            return Ok(true);
        }
        let bmat = DMatrix::from_fn(m, m, |i, k| self.a[i * cols + self.basis[k]]);
        let lu = bmat.clone().lu();
        let mut rhs = DVector::from_column_slice(&self.b);
        for j in 0..cols {
            if self.state[j] != State::Basic && self.x[j] != 0.0 {
                for i in 0..m {
                    rhs[i] -= self.a[i * cols + j] * self.x[j];
                }
            }
        }
        let xb = lu
            .solve(&rhs)
            .ok_or_else(|| self.breakdown("singular basis"))?;
        let mut primal_ok = true;
        for i in 0..m {
            let v = self.basis[i];
            self.x[v] = xb[i];
            let scale = 1.0 + xb[i].abs();
            if xb[i] < self.lb[v] - tol.feas * scale || xb[i] > self.ub[v] + tol.feas * scale {
                primal_ok = false;
            }
        }
        let cb = DVector::from_fn(m, |k, _| self.cost[self.basis[k]]);
        let y = bmat
            .transpose()
            .lu()
            .solve(&cb)
            .ok_or_else(|| self.breakdown("singular basis transpose"))?;
        let mut dual_ok = true;
        for j in 0..cols {
            if self.state[j] == State::Basic || self.blocked[j] || self.lb[j] == self.ub[j] {
                continue;
            }
            let dj = self.cost[j] - (0..m).map(|i| y[i] * self.a[i * cols + j]).sum::<f64>();
            let bad = match self.state[j] {
                State::AtLower => dj < -tol.opt * 10.0,
                State::AtUpper => dj > tol.opt * 10.0,
                State::Free => dj.abs() > tol.opt * 10.0,
                State::Basic => false,
            };
            if bad {
                dual_ok = false;
            }
        }
        if primal_ok && dual_ok {
            return Ok(true);
        }
        // Rebuild the tableau so further pivots start from clean numbers.
        let amat = DMatrix::from_fn(m, cols, |i, j| self.a[i * cols + j]);
        let tm = lu
            .solve(&amat)
            .ok_or_else(|| self.breakdown("singular basis"))?;
        for i in 0..m {
            for j in 0..cols {
                self.t[i * cols + j] = tm[(i, j)];
            }
        }
        if !primal_ok {
            // Drifted past a bound: restart from a feasible point by pulling
            // violating basics back with a short phase-one style repair.
            for i in 0..m {
                let v = self.basis[i];
                self.x[v] = self.x[v].clamp(self.lb[v], self.ub[v]);
            }
        }
        self.recompute_reduced_costs();
        Ok(false)
    }
}
