//! Dense linear programming.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    c·x
//! subject to  A_eq x  = b_eq
//!             A_ub x <= b_ub
//!             lb <= x <= ub      (infinite bounds allowed)
//! ```
//!
//! and solved by a bounded-variable two-phase primal simplex on a dense
//! tableau ([`solve`]). [`enumerate_vertices_oracle`] is an exhaustive
//! reference used by the test suites.

mod lpformat;
mod oracle;
mod simplex;

pub use lpformat::write_lp_format;
pub use oracle::enumerate_vertices_oracle;
pub use simplex::{solve, solve_with};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("malformed problem: {0}")]
    Build(String),
    #[error("simplex breakdown after {iterations} iterations: {reason}")]
    Numerical { iterations: usize, reason: String },
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("oracle size guard: {vars} variables + {cons} constraints exceeds {limit}")]
    OracleTooLarge {
        vars: usize,
        cons: usize,
        limit: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Primal feasibility tolerance.
    pub feas: f64,
    /// Reduced-cost optimality tolerance.
    pub opt: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feas: 1e-8,
            opt: 1e-9,
        }
    }
}

/// Entering-variable selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PivotRule {
    /// Smallest-index rule throughout. Never cycles, can be slow.
    #[default]
    Bland,
    /// Most negative reduced cost, falling back to Bland's rule while the
    /// objective stalls on degenerate pivots.
    Dantzig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tol: Tolerances,
    pub pivot_rule: PivotRule,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances::default(),
            pivot_rule: PivotRule::Bland,
            max_iterations: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal values of the structural variables. Meaningful only when
    /// `status` is [`LpStatus::Optimal`].
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// An LP in the form documented at the module level. Constraint rows are
/// dense.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpProblem {
    pub cost: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub names: Vec<String>,
}

impl LpProblem {
    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.a_eq.len() + self.a_ub.len()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.cost.len();
        let bad = |what: &str| Err(LpError::Build(what.to_string()));
        if self.lb.len() != n || self.ub.len() != n {
            return bad("bound vectors do not match the cost vector length");
        }
        if !self.names.is_empty() && self.names.len() != n {
            return bad("name table does not match the variable count");
        }
        if self.a_eq.len() != self.b_eq.len() || self.a_ub.len() != self.b_ub.len() {
            return bad("row count does not match right-hand side length");
        }
        for row in self.a_eq.iter().chain(&self.a_ub) {
            if row.len() != n {
                return bad("constraint row length does not match the variable count");
            }
            if row.iter().any(|v| !v.is_finite()) {
                return bad("non-finite constraint coefficient");
            }
        }
        if self.cost.iter().any(|v| !v.is_finite())
            || self.b_eq.iter().chain(&self.b_ub).any(|v| !v.is_finite())
        {
            return bad("non-finite cost or right-hand side");
        }
        for j in 0..n {
            if self.lb[j].is_nan() || self.ub[j].is_nan() {
                return bad("NaN bound");
            }
            if self.lb[j] == f64::INFINITY || self.ub[j] == f64::NEG_INFINITY {
                return bad("lower bound +inf or upper bound -inf");
            }
        }
        Ok(())
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let dot = |row: &[f64]| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        let mut worst = 0.0_f64;
        for (row, b) in self.a_eq.iter().zip(&self.b_eq) {
            worst = worst.max((dot(row) - b).abs());
        }
        for (row, b) in self.a_ub.iter().zip(&self.b_ub) {
            worst = worst.max(dot(row) - b);
        }
        for (j, v) in x.iter().enumerate() {
            worst = worst.max(self.lb[j] - v).max(v - self.ub[j]);
        }
        worst
    }
}

/// Index of a variable inside an [`LpBuilder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

/// Incremental construction of an [`LpProblem`] from sparse terms.
#[derive(Debug, Default, Clone)]
pub struct LpBuilder {
    cost: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    names: Vec<String>,
    eq: Vec<(Vec<(Var, f64)>, f64)>,
    le: Vec<(Vec<(Var, f64)>, f64)>,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lb: f64, ub: f64, cost: f64) -> Var {
        self.cost.push(cost);
        self.lb.push(lb);
        self.ub.push(ub);
        self.names.push(name.into());
        Var(self.cost.len() - 1)
    }

    pub fn add_eq(&mut self, terms: Vec<(Var, f64)>, rhs: f64) {
        self.eq.push((terms, rhs));
    }

    pub fn add_le(&mut self, terms: Vec<(Var, f64)>, rhs: f64) {
        self.le.push((terms, rhs));
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn build(self) -> LpProblem {
        let n = self.cost.len();
        let densify = |rows: Vec<(Vec<(Var, f64)>, f64)>| {
            let mut a = Vec::with_capacity(rows.len());
            let mut b = Vec::with_capacity(rows.len());
            for (terms, rhs) in rows {
                let mut row = vec![0.0; n];
                for (Var(j), v) in terms {
                    row[j] += v;
                }
                a.push(row);
                b.push(rhs);
            }
            (a, b)
        };
        let (a_eq, b_eq) = densify(self.eq);
        let (a_ub, b_ub) = densify(self.le);
        LpProblem {
            cost: self.cost,
            a_eq,
            b_eq,
            a_ub,
            b_ub,
            lb: self.lb,
            ub: self.ub,
            names: self.names,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_densifies_and_accumulates_terms() {
        let mut b = LpBuilder::new();
        let x = b.add_var("x", 0.0, 1.0, 2.0);
        let y = b.add_var("y", 0.0, f64::INFINITY, -1.0);
        b.add_eq(vec![(x, 1.0), (y, 1.0), (x, 0.5)], 3.0);
        b.add_le(vec![(y, 2.0)], 4.0);
        let p = b.build();
        assert_eq!(p.a_eq, vec![vec![1.5, 1.0]]);
        assert_eq!(p.a_ub, vec![vec![0.0, 2.0]]);
        assert_eq!(p.names, vec!["x", "y"]);
        p.validate().unwrap();
    }

    #[test]
    fn validate_rejects_ragged_rows() {
        let p = LpProblem {
            cost: vec![1.0, 1.0],
            a_eq: vec![vec![1.0]],
            b_eq: vec![1.0],
            lb: vec![0.0; 2],
            ub: vec![1.0; 2],
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(LpError::Build(_))));
    }
}
