//! Identification of the renewable-availability dynamics
//! `x(t+1) = A x(t) + B u(t)` where `x = [pv_max, wind_max]` and
//! `u = [pv, wind]` (dispatched output).
//!
//! The state is measured directly, so the prediction error of the model is
//! the one-step residual `e(t) = x(t+1) - A x(t) - B u(t)` and minimizing
//! `V_N = sum |e(t)|^2` is an ordinary least-squares problem on the stacked
//! regressor `[x(t); u(t)]`. Rank-deficient histories get the minimum-norm
//! solution.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dispatch::{self, DispatchParams};
use crate::tscore::Dataset;

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SysIdError {
    #[error("need at least {need} consecutive samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("non-finite value in history at hour {0}")]
    NonFinite(usize),
    #[error("window [{from}, {to}] is outside the log hours [{first}, {last}]")]
    BadWindow {
        from: usize,
        to: usize,
        first: usize,
        last: usize,
    },
    #[error("bootstrap dispatch failed at hour {hour}: {reason}")]
    Bootstrap { hour: usize, reason: String },
    #[error("model file line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Minimum number of logged samples (giving four regression rows).
pub const MIN_SAMPLES: usize = 5;

/// One logged hour: availability caps and dispatched renewable output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub x: Vec2,
    pub u: Vec2,
}

/// Consecutive hourly `(x(t), u(t))` pairs starting at `start_hour`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HistoryLog {
    pub start_hour: usize,
    pub entries: Vec<HistoryEntry>,
}

impl HistoryLog {
    pub fn new(start_hour: usize) -> Self {
        Self {
            start_hour,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, x: Vec2, u: Vec2) {
        self.entries.push(HistoryEntry { x, u });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Hour of the last entry, or `None` when empty.
    pub fn last_hour(&self) -> Option<usize> {
        self.entries.len().checked_sub(1).map(|i| self.start_hour + i)
    }

    /// Entries for hours `[from, to]` (inclusive).
    pub fn window(&self, from: usize, to: usize) -> Result<HistoryLog, SysIdError> {
        let last = self.last_hour().unwrap_or(self.start_hour);
        if self.is_empty() || from > to || from < self.start_hour || to > last {
            return Err(SysIdError::BadWindow {
                from,
                to,
                first: self.start_hour,
                last,
            });
        }
        Ok(HistoryLog {
            start_hour: from,
            entries: self.entries[from - self.start_hour..=to - self.start_hour].to_vec(),
        })
    }

    /// The last `n` entries (or all of them when shorter).
    pub fn tail(&self, n: usize) -> HistoryLog {
        let skip = self.entries.len().saturating_sub(n);
        HistoryLog {
            start_hour: self.start_hour + skip,
            entries: self.entries[skip..].to_vec(),
        }
    }

    /// Both state and control rescaled componentwise.
    pub fn scaled(&self, s: Vec2) -> HistoryLog {
        HistoryLog {
            start_hour: self.start_hour,
            entries: self
                .entries
                .iter()
                .map(|e| HistoryEntry {
                    x: [e.x[0] * s[0], e.x[1] * s[1]],
                    u: [e.u[0] * s[0], e.u[1] * s[1]],
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("hour,pv_max,wind_max,pv,wind\n");
        for (i, e) in self.entries.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.start_hour + i,
                e.x[0],
                e.x[1],
                e.u[0],
                e.u[1]
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<HistoryLog, SysIdError> {
        let mut log = HistoryLog::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if idx == 0 {
                if line != "hour,pv_max,wind_max,pv,wind" {
                    return Err(SysIdError::Parse {
                        line: 1,
                        msg: format!("unexpected header {line:?}"),
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| SysIdError::Parse { line: idx + 1, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", f.len())));
            }
            let hour: usize = f[0].trim().parse().map_err(|e| err(format!("{e}")))?;
            if log.entries.is_empty() {
                log.start_hour = hour;
            } else if hour != log.start_hour + log.entries.len() {
                return Err(err(format!("hour {hour} out of sequence")));
            }
            let v: Result<Vec<f64>, _> = f[1..].iter().map(|s| s.trim().parse::<f64>()).collect();
            let v = v.map_err(|e| err(format!("{e}")))?;
            log.push([v[0], v[1]], [v[2], v[3]]);
        }
        Ok(log)
    }
}

/// Fitted linear availability dynamics with fit-time residual statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: Mat2,
    pub b: Mat2,
    /// Mean of `|e(t)|` over the fitting transitions.
    pub residual_mean: f64,
    /// Max of `|e(t)|` over the fitting transitions.
    pub residual_max: f64,
    /// `V_N`, the summed squared one-step error.
    pub cost: f64,
    pub transitions: usize,
}

impl StateSpaceModel {
    pub fn new(a: Mat2, b: Mat2) -> Self {
        Self {
            a,
            b,
            residual_mean: 0.0,
            residual_max: 0.0,
            cost: 0.0,
            transitions: 0,
        }
    }

    /// `A = I`, `B = 0`: availability persists unchanged.
    pub fn persistence() -> Self {
        Self::new([[1.0, 0.0], [0.0, 1.0]], [[0.0; 2]; 2])
    }

    pub fn step(&self, x: Vec2, u: Vec2) -> Vec2 {
        let (a, b) = (&self.a, &self.b);
        [
            a[0][0] * x[0] + a[0][1] * x[1] + b[0][0] * u[0] + b[0][1] * u[1],
            a[1][0] * x[0] + a[1][1] * x[1] + b[1][0] * u[0] + b[1][1] * u[1],
        ]
    }

    /// Largest eigenvalue modulus of `A`.
    pub fn spectral_radius(&self) -> f64 {
        let a = &self.a;
        let tr = a[0][0] + a[1][1];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let disc = tr * tr / 4.0 - det;
        if disc >= 0.0 {
            let r = disc.sqrt();
            (tr / 2.0 + r).abs().max((tr / 2.0 - r).abs())
        } else {
            det.sqrt()
        }
    }

    /// The same dynamics expressed in rescaled coordinates
    /// `x' = S x`, `u' = S u` with `S = diag(s)`.
    pub fn scaled(&self, s: Vec2) -> StateSpaceModel {
        let conj = |m: &Mat2| -> Mat2 {
            let mut out = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    out[i][j] = s[i] * m[i][j] / s[j];
                }
            }
            out
        };
        StateSpaceModel {
            a: conj(&self.a),
            b: conj(&self.b),
            ..self.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# gridmpc state-space model v1\n");
        for (name, m) in [("A", &self.a), ("B", &self.b)] {
            for row in m {
                let _ = writeln!(s, "{name} {} {}", row[0], row[1]);
            }
        }
        let _ = writeln!(s, "residual_mean {}", self.residual_mean);
        let _ = writeln!(s, "residual_max {}", self.residual_max);
        let _ = writeln!(s, "cost {}", self.cost);
        let _ = writeln!(s, "transitions {}", self.transitions);
        let _ = writeln!(s, "spectral_radius {}", self.spectral_radius());
        s
    }

    pub fn from_text(text: &str) -> Result<StateSpaceModel, SysIdError> {
        let mut m = StateSpaceModel::new([[0.0; 2]; 2], [[0.0; 2]; 2]);
        let (mut arow, mut brow) = (0, 0);
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| SysIdError::Parse { line: idx + 1, msg };
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let nums: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let nums = nums.map_err(|e| err(format!("{e}")))?;
            let want = |k: usize| {
                if nums.len() == k {
                    Ok(())
                } else {
                    Err(err(format!("{key} expects {k} values")))
                }
            };
            match key {
                "A" | "B" => {
                    want(2)?;
                    let (mat, row) = if key == "A" {
                        (&mut m.a, &mut arow)
                    } else {
                        (&mut m.b, &mut brow)
                    };
                    if *row > 1 {
                        return Err(err(format!("too many {key} rows")));
                    }
                    mat[*row] = [nums[0], nums[1]];
                    *row += 1;
                }
                "residual_mean" => {
                    want(1)?;
                    m.residual_mean = nums[0];
                }
                "residual_max" => {
                    want(1)?;
                    m.residual_max = nums[0];
                }
                "cost" => {
                    want(1)?;
                    m.cost = nums[0];
                }
                "transitions" => {
                    want(1)?;
                    m.transitions = nums[0] as usize;
                }
                "spectral_radius" => {}
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        if arow != 2 || brow != 2 {
            return Err(SysIdError::Parse {
                line: 0,
                msg: "model needs two A rows and two B rows".into(),
            });
        }
        Ok(m)
    }
}

/// Least-squares fit of `(A, B)` over every consecutive pair in the log.
pub fn fit_state_space(h: &HistoryLog) -> Result<StateSpaceModel, SysIdError> {
    if h.len() < MIN_SAMPLES {
        return Err(SysIdError::TooFewSamples {
            need: MIN_SAMPLES,
            got: h.len(),
        });
    }
    for (i, e) in h.entries.iter().enumerate() {
        if e.x.iter().chain(&e.u).any(|v| !v.is_finite()) {
            return Err(SysIdError::NonFinite(h.start_hour + i));
        }
    }
    let rows = h.len() - 1;
    let phi = DMatrix::from_fn(rows, 4, |t, j| {
        let e = &h.entries[t];
        if j < 2 {
            e.x[j]
        } else {
            e.u[j - 2]
        }
    });
    let y = DMatrix::from_fn(rows, 2, |t, j| h.entries[t + 1].x[j]);

    // Minimum-norm least squares through the SVD with a relative cutoff.
    let svd = phi.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-10 * rows.max(4) as f64;
    let theta = svd
        .solve(&y, eps.max(f64::MIN_POSITIVE))
        .expect("both SVD factors were computed");

    let mut a = [[0.0; 2]; 2];
    let mut b = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            a[i][j] = theta[(j, i)];
            b[i][j] = theta[(j + 2, i)];
        }
    }
    let mut model = StateSpaceModel::new(a, b);
    let res = one_step_residuals(&model, h);
    model.transitions = res.len();
    model.cost = res.iter().map(|r| r * r).sum();
    model.residual_mean = res.iter().sum::<f64>() / res.len() as f64;
    model.residual_max = res.iter().copied().fold(0.0, f64::max);
    Ok(model)
}

/// `|x(t+1) - A x(t) - B u(t)|` for each consecutive pair.
pub fn one_step_residuals(m: &StateSpaceModel, h: &HistoryLog) -> Vec<f64> {
    h.entries
        .windows(2)
        .map(|w| {
            let p = m.step(w[0].x, w[0].u);
            ((w[1].x[0] - p[0]).powi(2) + (w[1].x[1] - p[1]).powi(2)).sqrt()
        })
        .collect()
}

/// `V_N` of an arbitrary model over a log.
pub fn prediction_cost(m: &StateSpaceModel, h: &HistoryLog) -> f64 {
    one_step_residuals(m, h).iter().map(|r| r * r).sum()
}

/// Fit restricted to the entries for hours `[from, to]`.
pub fn refit_window(h: &HistoryLog, from: usize, to: usize) -> Result<StateSpaceModel, SysIdError> {
    fit_state_space(&h.window(from, to)?)
}

/// Iterate the dynamics from `x0`; returns `len(u_seq) + 1` states.
pub fn simulate(m: &StateSpaceModel, x0: Vec2, u_seq: &[Vec2]) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(u_seq.len() + 1);
    out.push(x0);
    let mut x = x0;
    for &u in u_seq {
        x = m.step(x, u);
        out.push(x);
    }
    out
}

/// Manufacture an identification history by solving the cap-fixed (no
/// state equation) dispatch for each day of `ds` in turn, carrying the
/// battery state of charge across days.
pub fn bootstrap_history(ds: &Dataset, params: &DispatchParams) -> Result<HistoryLog, SysIdError> {
    params.validate().map_err(|e| SysIdError::Bootstrap {
        hour: ds.start_hour(),
        reason: e.to_string(),
    })?;
    let mut log = HistoryLog::new(ds.start_hour());
    let mut soc = params.soc0;
    let n = ds.len();
    let mut start = 0;
    while start < n {
        let end = (start + 24).min(n);
        let caps: Vec<Vec2> = (start..end)
            .map(|t| [ds.pv_max.values()[t], ds.wind_max.values()[t]])
            .collect();
        let load = &ds.load.values()[start..end];
        let plan = dispatch::solve_fixed_caps(load, &caps, soc, params).map_err(|e| {
            SysIdError::Bootstrap {
                hour: ds.start_hour() + start + e.hour_offset().unwrap_or(0),
                reason: e.to_string(),
            }
        })?;
        for (t, d) in plan.iter().enumerate() {
            log.push(caps[t], [d.pv, d.wind]);
        }
        soc = plan.last().map_or(soc, |d| d.soc);
        start = end;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, scale: f64) -> Mat2 {
        [
            [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)],
            [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)],
        ]
    }

    #[test]
    fn persistence_and_feedthrough_simulation() {
        let id = StateSpaceModel::persistence();
        let traj = simulate(&id, [3.0, 4.0], &[[1.0, 2.0]; 5]);
        assert_eq!(traj.len(), 6);
        assert!(traj.iter().all(|x| *x == [3.0, 4.0]));

        let ff = StateSpaceModel::new([[0.0; 2]; 2], [[1.0, 0.0], [0.0, 1.0]]);
        let us = [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(simulate(&ff, [9.0, 9.0], &us), vec![[9.0, 9.0], us[0], us[1], us[2]]);
    }

    #[test]
    fn simulate_matches_hand_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = StateSpaceModel::new(rand_mat(&mut rng, 1.0), rand_mat(&mut rng, 1.0));
        let us: Vec<Vec2> = (0..6).map(|_| [rng.gen(), rng.gen()]).collect();
        let traj = simulate(&m, [1.0, -1.0], &us);
        let mut x = [1.0, -1.0];
        for (t, u) in us.iter().enumerate() {
            let (a, b) = (m.a, m.b);
            x = [
                a[0][0] * x[0] + a[0][1] * x[1] + b[0][0] * u[0] + b[0][1] * u[1],
                a[1][0] * x[0] + a[1][1] * x[1] + b[1][0] * u[0] + b[1][1] * u[1],
            ];
            assert_eq!(traj[t + 1], x);
        }
    }

    #[test]
    fn halving_decay_with_zero_control() {
        // A single autonomous chain stays on the ray through x0, so the
        // regressor has rank one. The pseudoinverse solution is
        // A = 0.5 x0 x0^T / |x0|^2, which acts as 0.5 I along the data.
        let x0 = [100.0, 40.0];
        let mut log = HistoryLog::new(0);
        let mut x = x0;
        for _ in 0..12 {
            log.push(x, [0.0, 0.0]);
            x = [0.5 * x[0], 0.5 * x[1]];
        }
        let m = fit_state_space(&log).unwrap();
        let nn = x0[0] * x0[0] + x0[1] * x0[1];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.a[i][j] - 0.5 * x0[i] * x0[j] / nn).abs() < 1e-12);
            }
        }
        assert_eq!(m.b, [[0.0; 2]; 2]);
        assert!(m.residual_max < 1e-9);
        let p = m.step(x0, [0.0, 0.0]);
        assert!((p[0] - 50.0).abs() < 1e-9 && (p[1] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn halving_decay_per_component_with_excitation() {
        // Exciting each component through its own control makes the
        // regressor full rank and recovers A = 0.5 I, B = I exactly.
        let m_true = StateSpaceModel::new([[0.5, 0.0], [0.0, 0.5]], [[1.0, 0.0], [0.0, 1.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut log = HistoryLog::new(0);
        let mut x = [10.0, 3.0];
        for _ in 0..20 {
            let u = [rng.gen_range(0.0..5.0), rng.gen_range(0.0..5.0)];
            log.push(x, u);
            x = m_true.step(x, u);
        }
        let m = fit_state_space(&log).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.a[i][j] - m_true.a[i][j]).abs() < 1e-10);
                assert!((m.b[i][j] - m_true.b[i][j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_history_min_norm() {
        let c = [3.0, 4.0];
        let mut log = HistoryLog::new(0);
        for _ in 0..10 {
            log.push(c, [0.0, 0.0]);
        }
        let m = fit_state_space(&log).unwrap();
        // Pseudoinverse oracle: A = c c^T / (c^T c), B = 0.
        let cc = c[0] * c[0] + c[1] * c[1];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.a[i][j] - c[i] * c[j] / cc).abs() < 1e-12);
                assert!(m.b[i][j].abs() < 1e-12);
            }
        }
        let ac = m.step(c, [0.0, 0.0]);
        assert!((ac[0] - c[0]).abs() < 1e-12 && (ac[1] - c[1]).abs() < 1e-12);
    }

    #[test]
    fn too_few_and_empty_window() {
        let mut log = HistoryLog::new(10);
        for _ in 0..4 {
            log.push([1.0, 1.0], [0.0, 0.0]);
        }
        assert!(matches!(fit_state_space(&log), Err(SysIdError::TooFewSamples { .. })));
        log.push([1.0, 1.0], [0.0, 0.0]);
        assert!(matches!(refit_window(&log, 12, 11), Err(SysIdError::BadWindow { .. })));
        assert!(matches!(refit_window(&log, 0, 3), Err(SysIdError::BadWindow { .. })));
        assert!(matches!(refit_window(&log, 11, 12), Err(SysIdError::TooFewSamples { .. })));
    }

    #[test]
    fn rejects_non_finite() {
        let mut log = HistoryLog::new(0);
        for i in 0..6 {
            log.push([i as f64, 1.0], [0.0, if i == 3 { f64::NAN } else { 0.0 }]);
        }
        assert_eq!(fit_state_space(&log), Err(SysIdError::NonFinite(3)));
    }

    #[test]
    fn scaled_model_conjugates() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = StateSpaceModel::new(rand_mat(&mut rng, 1.0), rand_mat(&mut rng, 1.0));
        let s = [2.0, 0.25];
        let ms = m.scaled(s);
        let x = [1.5, -0.5];
        let u = [0.3, 0.7];
        let p = m.step(x, u);
        let ps = ms.step([x[0] * s[0], x[1] * s[1]], [u[0] * s[0], u[1] * s[1]]);
        assert!((ps[0] - p[0] * s[0]).abs() < 1e-12);
        assert!((ps[1] - p[1] * s[1]).abs() < 1e-12);
    }

    #[test]
    fn text_and_csv_formats_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut log = HistoryLog::new(7);
        for _ in 0..12 {
            log.push([rng.gen(), rng.gen()], [rng.gen(), rng.gen()]);
        }
        assert_eq!(HistoryLog::from_csv(&log.to_csv()).unwrap(), log);
        let m = fit_state_space(&log).unwrap();
        assert_eq!(StateSpaceModel::from_text(&m.to_text()).unwrap(), m);
        assert!(StateSpaceModel::from_text("A 1 2\n").is_err());
    }

    #[test]
    fn spectral_radius_cases() {
        let m = StateSpaceModel::new([[0.5, 0.0], [0.0, -0.9]], [[0.0; 2]; 2]);
        assert!((m.spectral_radius() - 0.9).abs() < 1e-15);
        // rotation by 90 degrees scaled by 0.8: complex pair of modulus 0.8
        let r = StateSpaceModel::new([[0.0, -0.8], [0.8, 0.0]], [[0.0; 2]; 2]);
        assert!((r.spectral_radius() - 0.8).abs() < 1e-15);
    }
}
