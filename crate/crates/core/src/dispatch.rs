//! Rolling-horizon (MPC) dispatch of a grid/PV/wind/battery park.
//!
//! Each hour `k` an `N`-hour linear program is built and solved:
//!
//! * cost `c_grid P_grid + c_pv P_pv + c_wind P_wind + c_bat (P_ch + P_dis)`
//!   (the battery's `|P_bat|` split into charge and discharge parts),
//! * power balance `P_load = P_grid + P_pv + P_wind + P_dis - P_ch`,
//! * state of charge `SOC(t) = SOC(t-1) + eta_cha P_ch / E - P_dis / (eta_dis E)`,
//! * bounds on grid import, SOC, battery power and renewable output,
//! * availability caps either following the identified dynamics
//!   `x(t) = A x(t-1) + B u(t-1)` from the current state (MPC modes) or frozen
//!   at their initial values (benchmark).
//!
//! Only the first hour of each plan is committed. Positive battery prices
//! make simultaneous charge and discharge suboptimal, so no integer
//! variables are needed; [`check_hour`] verifies it afterwards.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::lpcore::{self, LpBuilder, LpError, LpProblem, LpSolution, LpStatus, SolverOptions};
use crate::sysid::{self, HistoryLog, StateSpaceModel, SysIdError, Vec2};

pub const DAY_HOURS: usize = 24;

const INF: f64 = f64::INFINITY;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispatchError {
    #[error("invalid dispatch input: {0}")]
    InvalidInput(String),
    #[error("subproblem at hour {hour} is infeasible even with load-shedding slack")]
    Infeasible { hour: usize },
    #[error("subproblem at hour {hour} is unbounded")]
    Unbounded { hour: usize },
    #[error("LP solver failed at hour {hour}: {source}")]
    Solver { hour: usize, source: LpError },
    #[error("model re-identification failed at hour {hour}: {source}")]
    Refit { hour: usize, source: SysIdError },
    #[error("schedule has {got} hours, expected {expected}")]
    IncompleteSchedule { got: usize, expected: usize },
}

impl DispatchError {
    /// Hour the failure refers to, when there is one.
    pub fn hour_offset(&self) -> Option<usize> {
        match self {
            DispatchError::Infeasible { hour }
            | DispatchError::Unbounded { hour }
            | DispatchError::Solver { hour, .. }
            | DispatchError::Refit { hour, .. } => Some(*hour),
            _ => None,
        }
    }
}

/// Prices ($/kWh), battery and plant ratings (kW, kWh) and the MPC horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchParams {
    pub horizon: usize,
    pub c_grid: f64,
    pub c_pv: f64,
    pub c_wind: f64,
    pub c_bat: f64,
    pub eta_cha: f64,
    pub eta_dis: f64,
    pub e_max: f64,
    pub p_bat_max: f64,
    pub soc0: f64,
    pub pv_capacity: f64,
    pub wind_capacity: f64,
    /// Price of unserved load as a multiple of `c_grid`.
    pub slack_penalty: f64,
}

impl Default for DispatchParams {
    fn default() -> Self {
        Self {
            horizon: 8,
            c_grid: 1.0,
            c_pv: 0.4,
            c_wind: 0.5,
            c_bat: 1.0,
            eta_cha: 0.95,
            eta_dis: 0.99,
            e_max: 100.0,
            p_bat_max: 50.0,
            soc0: 0.5,
            pv_capacity: 600.0,
            wind_capacity: 500.0,
            slack_penalty: 10.0,
        }
    }
}

impl DispatchParams {
    pub fn validate(&self) -> Result<(), DispatchError> {
        let bad = |m: String| Err(DispatchError::InvalidInput(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        for (name, v) in [
            ("c_grid", self.c_grid),
            ("c_pv", self.c_pv),
            ("c_wind", self.c_wind),
            ("c_bat", self.c_bat),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("price {name} = {v} must be non-negative"));
            }
        }
        for (name, v) in [("eta_cha", self.eta_cha), ("eta_dis", self.eta_dis)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} = {v} must lie in (0, 1]"));
            }
        }
        if !(self.e_max > 0.0) || !(self.p_bat_max >= 0.0) {
            return bad("battery energy must be positive and power non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.soc0) {
            return bad(format!("soc0 = {} outside [0, 1]", self.soc0));
        }
        if !(self.pv_capacity >= 0.0) || !(self.wind_capacity >= 0.0) {
            return bad("plant capacities must be non-negative".into());
        }
        if !(self.slack_penalty > 0.0) {
            return bad("slack penalty must be positive".into());
        }
        Ok(())
    }

    pub fn capacities(&self) -> Vec2 {
        [self.pv_capacity, self.wind_capacity]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Mode {
    #[serde(rename = "benchmark")]
    Benchmark,
    #[serde(rename = "mpc")]
    MpcFixed,
    #[serde(rename = "mpc-dynamic")]
    MpcDynamic,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Benchmark, Mode::MpcFixed, Mode::MpcDynamic];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Benchmark => "benchmark",
            Mode::MpcFixed => "mpc",
            Mode::MpcDynamic => "mpc-dynamic",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benchmark" => Ok(Mode::Benchmark),
            "mpc" | "mpc-fixed" | "mpc_fixed" => Ok(Mode::MpcFixed),
            "mpc-dynamic" | "mpc_dynamic" => Ok(Mode::MpcDynamic),
            other => Err(format!("unknown mode {other:?} (benchmark, mpc, mpc-dynamic)")),
        }
    }
}

/// How availability caps evolve inside one subproblem.
#[derive(Debug, Clone, Copy)]
pub enum CapsPlan<'a> {
    /// Caps follow the identified dynamics from the current state `x0`.
    Dynamics {
        model: &'a StateSpaceModel,
        x0: Vec2,
    },
    /// One fixed `[pv_max, wind_max]` per horizon hour.
    Fixed(&'a [Vec2]),
}

/// One committed (or planned) hour. Powers in kW, SOC as a fraction.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct HourDecision {
    pub hour: usize,
    pub load: f64,
    pub grid: f64,
    pub pv: f64,
    pub wind: f64,
    pub charge: f64,
    pub discharge: f64,
    pub soc: f64,
    pub pv_max: f64,
    pub wind_max: f64,
    /// Unserved load (kW); nonzero only when the penalized slack was needed.
    pub slack: f64,
}

impl HourDecision {
    pub fn p_bat(&self) -> f64 {
        self.discharge - self.charge
    }

    /// Cost of this hour under the dispatch prices (1 h steps, so kW = kWh).
    pub fn cost(&self, p: &DispatchParams) -> f64 {
        p.c_grid * self.grid
            + p.c_pv * self.pv
            + p.c_wind * self.wind
            + p.c_bat * (self.charge + self.discharge)
    }

    pub fn balance_residual(&self) -> f64 {
        self.load - (self.grid + self.pv + self.wind + self.p_bat() + self.slack)
    }
}

/// Invariant violations of one hour (empty when all hold).
pub fn check_hour(d: &HourDecision, p: &DispatchParams, tol: f64) -> Vec<String> {
    let mut v = Vec::new();
    let mut need = |ok: bool, what: String| {
        if !ok {
            v.push(format!("hour {}: {what}", d.hour));
        }
    };
    need(d.balance_residual().abs() <= tol, format!("balance residual {}", d.balance_residual()));
    need(d.grid >= -tol, format!("grid import {}", d.grid));
    need((-tol..=1.0 + tol).contains(&d.soc), format!("soc {}", d.soc));
    need(d.p_bat().abs() <= p.p_bat_max + tol, format!("battery power {}", d.p_bat()));
    need(d.charge >= -tol && d.discharge >= -tol, "negative battery flow".into());
    need(d.pv >= -tol && d.pv <= d.pv_max + tol, format!("pv {} cap {}", d.pv, d.pv_max));
    need(
        d.wind >= -tol && d.wind <= d.wind_max + tol,
        format!("wind {} cap {}", d.wind, d.wind_max),
    );
    need(
        d.charge * d.discharge <= tol,
        format!("simultaneous charge {} and discharge {}", d.charge, d.discharge),
    );
    v
}

/// Build-time switches shared by the park and network builders.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BuildOpts {
    /// Add penalized load-shedding slack.
    pub slack: bool,
    /// Pin the first hour's (charge, discharge).
    pub storage_fixed: Option<(f64, f64)>,
}

/// Variables per horizon hour in the park formulation.
pub const PARK_VARS_PER_HOUR: usize = 8;

/// Column offsets of one hour's block.
pub mod col {
    pub const GRID: usize = 0;
    pub const PV: usize = 1;
    pub const WIND: usize = 2;
    pub const CHARGE: usize = 3;
    pub const DISCHARGE: usize = 4;
    pub const SOC: usize = 5;
    pub const PV_MAX: usize = 6;
    pub const WIND_MAX: usize = 7;
}

pub(crate) fn validate_inputs(
    forecast: &[f64],
    caps: &CapsPlan<'_>,
    soc_k: f64,
    p: &DispatchParams,
) -> Result<(), DispatchError> {
    p.validate()?;
    let bad = |m: String| Err(DispatchError::InvalidInput(m));
    if forecast.is_empty() {
        return bad("empty load forecast".into());
    }
    if let Some(v) = forecast.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return bad(format!("load forecast value {v} must be finite and non-negative"));
    }
    if !(0.0..=1.0).contains(&soc_k) {
        return bad(format!("initial soc {soc_k} outside [0, 1]"));
    }
    match caps {
        CapsPlan::Dynamics { model, x0 } => {
            let caps = p.capacities();
            for i in 0..2 {
                if !(x0[i] >= 0.0 && x0[i] <= caps[i] * (1.0 + 1e-12)) {
                    return bad(format!("state {x0:?} outside [0, capacity]"));
                }
            }
            let all = model.a.iter().chain(&model.b).flatten();
            if all.into_iter().any(|v| !v.is_finite()) {
                return bad("non-finite model matrix".into());
            }
        }
        CapsPlan::Fixed(c) => {
            if c.len() < forecast.len() {
                return bad(format!("{} fixed caps for a {}-hour horizon", c.len(), forecast.len()));
            }
            if c.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad("fixed caps must be finite and non-negative".into());
            }
        }
    }
    Ok(())
}

/// The horizon LP in the park formulation
/// (eight variables per hour, balance/SOC/state equalities) and no slack.
pub fn build_subproblem(
    k: usize,
    load_forecast: &[f64],
    x_k: Vec2,
    model: &StateSpaceModel,
    soc_k: f64,
    params: &DispatchParams,
) -> Result<LpProblem, DispatchError> {
    build_park_lp(
        k,
        load_forecast,
        &CapsPlan::Dynamics { model, x0: x_k },
        soc_k,
        params,
        BuildOpts::default(),
    )
}

/// General park builder.
///
/// Column layout: hour `t` occupies `[8t, 8t + 8)` in the order of [`col`];
/// slack columns (if any) follow all hour blocks. Equality rows per hour:
/// balance, SOC, then (dynamics only) the two state rows. Inequality rows per
/// hour: `pv <= pv_max`, `wind <= wind_max`.
pub fn build_park_lp(
    k: usize,
    forecast: &[f64],
    caps: &CapsPlan<'_>,
    soc_k: f64,
    p: &DispatchParams,
    opts: BuildOpts,
) -> Result<LpProblem, DispatchError> {
    validate_inputs(forecast, caps, soc_k, p)?;
    let n = forecast.len();
    let mut b = LpBuilder::new();
    let mut cols = Vec::with_capacity(n);
    for t in 0..n {
        let h = k + t;
        let grid = b.add_var(format!("p_grid[{h}]"), 0.0, INF, p.c_grid);
        let pv = b.add_var(format!("p_pv[{h}]"), 0.0, p.pv_capacity, p.c_pv);
        let wind = b.add_var(format!("p_wind[{h}]"), 0.0, p.wind_capacity, p.c_wind);
        let (ch_lo, ch_hi, dis_lo, dis_hi) = match (t, opts.storage_fixed) {
            (0, Some((c, d))) => (c, c, d, d),
            _ => (0.0, p.p_bat_max, 0.0, p.p_bat_max),
        };
        let ch = b.add_var(format!("p_charge[{h}]"), ch_lo, ch_hi, p.c_bat);
        let dis = b.add_var(format!("p_discharge[{h}]"), dis_lo, dis_hi, p.c_bat);
        let soc = b.add_var(format!("soc[{h}]"), 0.0, 1.0, 0.0);
        let (pv_lo, pv_hi, w_lo, w_hi) = match caps {
            CapsPlan::Dynamics { .. } => (-INF, INF, -INF, INF),
            CapsPlan::Fixed(c) => (c[t][0], c[t][0], c[t][1], c[t][1]),
        };
        let pv_max = b.add_var(format!("pv_max[{h}]"), pv_lo, pv_hi, 0.0);
        let wind_max = b.add_var(format!("wind_max[{h}]"), w_lo, w_hi, 0.0);
        cols.push([grid, pv, wind, ch, dis, soc, pv_max, wind_max]);
    }
    let slack: Vec<_> = if opts.slack {
        (0..n)
            .map(|t| b.add_var(format!("slack[{}]", k + t), 0.0, INF, p.slack_penalty * p.c_grid))
            .collect()
    } else {
        Vec::new()
    };

    let soc_in = 1.0 / (p.eta_dis * p.e_max);
    for t in 0..n {
        let c = &cols[t];
        let mut bal = vec![
            (c[col::GRID], 1.0),
            (c[col::PV], 1.0),
            (c[col::WIND], 1.0),
            (c[col::DISCHARGE], 1.0),
            (c[col::CHARGE], -1.0),
        ];
        if let Some(s) = slack.get(t) {
            bal.push((*s, 1.0));
        }
        b.add_eq(bal, forecast[t]);

        let mut soc_row = vec![
            (c[col::SOC], 1.0),
            (c[col::CHARGE], -p.eta_cha / p.e_max),
            (c[col::DISCHARGE], soc_in),
        ];
        let rhs = if t == 0 {
            soc_k
        } else {
            soc_row.push((cols[t - 1][col::SOC], -1.0));
            0.0
        };
        b.add_eq(soc_row, rhs);

        if let CapsPlan::Dynamics { model, x0 } = caps {
            let targets = [c[col::PV_MAX], c[col::WIND_MAX]];
            for i in 0..2 {
                if t == 0 {
                    b.add_eq(vec![(targets[i], 1.0)], x0[i]);
                } else {
                    let prev = &cols[t - 1];
                    b.add_eq(
                        vec![
                            (targets[i], 1.0),
                            (prev[col::PV_MAX], -model.a[i][0]),
                            (prev[col::WIND_MAX], -model.a[i][1]),
                            (prev[col::PV], -model.b[i][0]),
                            (prev[col::WIND], -model.b[i][1]),
                        ],
                        0.0,
                    );
                }
            }
        }
        b.add_le(vec![(c[col::PV], 1.0), (c[col::PV_MAX], -1.0)], 0.0);
        b.add_le(vec![(c[col::WIND], 1.0), (c[col::WIND_MAX], -1.0)], 0.0);
    }
    Ok(b.build())
}

/// Decode hour `t` of a park solution.
pub fn park_hour(x: &[f64], t: usize, n: usize, hour: usize, load: f64, with_slack: bool) -> HourDecision {
    let o = t * PARK_VARS_PER_HOUR;
    HourDecision {
        hour,
        load,
        grid: x[o + col::GRID],
        pv: x[o + col::PV],
        wind: x[o + col::WIND],
        charge: x[o + col::CHARGE],
        discharge: x[o + col::DISCHARGE],
        soc: x[o + col::SOC],
        pv_max: x[o + col::PV_MAX],
        wind_max: x[o + col::WIND_MAX],
        slack: if with_slack { x[n * PARK_VARS_PER_HOUR + t] } else { 0.0 },
    }
}

/// Solve, retrying with slack when the plain problem is infeasible.
pub(crate) fn solve_with_fallback<F>(
    hour: usize,
    solver: &SolverOptions,
    mut build: F,
) -> Result<(LpSolution, bool), DispatchError>
where
    F: FnMut(bool) -> Result<LpProblem, DispatchError>,
{
    for slack in [false, true] {
        let lp = build(slack)?;
        let sol = lpcore::solve_with(&lp, solver).map_err(|source| DispatchError::Solver { hour, source })?;
        match sol.status {
            LpStatus::Optimal => return Ok((sol, slack)),
            LpStatus::Unbounded => return Err(DispatchError::Unbounded { hour }),
            LpStatus::Infeasible => continue,
        }
    }
    Err(DispatchError::Infeasible { hour })
}

/// Result of planning one horizon: the first hour plus solver details.
#[derive(Debug, Clone, PartialEq)]
pub struct HourOutcome<E> {
    pub decision: HourDecision,
    pub extra: E,
    /// Objective of the horizon subproblem ($).
    pub objective: f64,
    pub slack_used: bool,
}

/// A system that can plan a horizon and re-dispatch the committed hour.
pub trait HorizonSolver {
    type Extra: Clone + fmt::Debug;

    fn params(&self) -> &DispatchParams;

    /// Plan hours `k..k+forecast.len()` and return hour `k`.
    fn plan(
        &self,
        k: usize,
        forecast: &[f64],
        caps: CapsPlan<'_>,
        soc: f64,
    ) -> Result<HourOutcome<Self::Extra>, DispatchError>;

    /// Single-hour re-dispatch for the realized load with the planned
    /// battery action pinned where possible.
    fn redispatch(
        &self,
        k: usize,
        load: f64,
        caps: Vec2,
        soc: f64,
        storage: (f64, f64),
    ) -> Result<HourOutcome<Self::Extra>, DispatchError>;
}

/// The single-node park.
#[derive(Debug, Clone)]
pub struct Park {
    pub params: DispatchParams,
    pub solver: SolverOptions,
}

impl Park {
    pub fn new(params: DispatchParams) -> Self {
        Self {
            params,
            solver: SolverOptions::default(),
        }
    }

    fn solve_first(
        &self,
        k: usize,
        forecast: &[f64],
        caps: CapsPlan<'_>,
        soc: f64,
        storage: Option<(f64, f64)>,
    ) -> Result<HourOutcome<()>, DispatchError> {
        let (sol, slack) = solve_with_fallback(k, &self.solver, |slack| {
            build_park_lp(
                k,
                forecast,
                &caps,
                soc,
                &self.params,
                BuildOpts {
                    slack,
                    storage_fixed: storage,
                },
            )
        })?;
        Ok(HourOutcome {
            decision: park_hour(&sol.x, 0, forecast.len(), k, forecast[0], slack),
            extra: (),
            objective: sol.objective,
            slack_used: slack,
        })
    }
}

impl HorizonSolver for Park {
    type Extra = ();

    fn params(&self) -> &DispatchParams {
        &self.params
    }

    fn plan(
        &self,
        k: usize,
        forecast: &[f64],
        caps: CapsPlan<'_>,
        soc: f64,
    ) -> Result<HourOutcome<()>, DispatchError> {
        self.solve_first(k, forecast, caps, soc, None)
    }

    fn redispatch(
        &self,
        k: usize,
        load: f64,
        caps: Vec2,
        soc: f64,
        storage: (f64, f64),
    ) -> Result<HourOutcome<()>, DispatchError> {
        let fixed = [caps];
        self.solve_first(k, &[load], CapsPlan::Fixed(&fixed), soc, Some(storage))
            .or_else(|_| self.solve_first(k, &[load], CapsPlan::Fixed(&fixed), soc, None))
    }
}

/// Non-rolling dispatch of a whole block with caps fixed per hour (the
/// bootstrap problem: no state equation).
pub fn solve_fixed_caps(
    load: &[f64],
    caps: &[Vec2],
    soc0: f64,
    params: &DispatchParams,
) -> Result<Vec<HourDecision>, DispatchError> {
    let solver = SolverOptions::default();
    let (sol, slack) = solve_with_fallback(0, &solver, |slack| {
        build_park_lp(0, load, &CapsPlan::Fixed(caps), soc0, params, BuildOpts { slack, storage_fixed: None })
    })?;
    Ok((0..load.len())
        .map(|t| park_hour(&sol.x, t, load.len(), t, load[t], slack))
        .collect())
}

/// Supplier of load forecasts for the rolling loop.
pub trait ForecastSource {
    /// Forecast day hours `k..k+n` given the realized loads `observed`
    /// (hours `0..k` of the day). Hours past the end of the day belong to
    /// the following day.
    fn forecast(&self, k: usize, n: usize, observed: &[f64]) -> Vec<f64>;
}

/// Exact knowledge of the day's load; hours past the day wrap around.
#[derive(Debug, Clone, Copy)]
pub struct PerfectForesight<'a>(pub &'a [f64]);

impl ForecastSource for PerfectForesight<'_> {
    fn forecast(&self, k: usize, n: usize, _observed: &[f64]) -> Vec<f64> {
        (k..k + n).map(|h| self.0[h % self.0.len()]).collect()
    }
}

/// A fixed 24-value day forecast, wrapped past the end of the day.
#[derive(Debug, Clone)]
pub struct DayForecast(pub Vec<f64>);

impl ForecastSource for DayForecast {
    fn forecast(&self, k: usize, n: usize, _observed: &[f64]) -> Vec<f64> {
        (k..k + n).map(|h| self.0[h % self.0.len()]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefitWindow {
    /// Refit on the most recent `n` logged hours.
    Sliding(usize),
    /// Refit on the whole accumulated log.
    All,
}

/// Which load the committed hour must balance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitLoad {
    /// Plan on the forecast, then re-dispatch the committed hour against the
    /// realized load (genuine cost uses realized load).
    Forecast,
    /// Use the realized load for the committed hour inside the subproblem.
    Realized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpcConfig {
    pub mode: Mode,
    /// Hours between re-identifications in dynamic mode.
    pub refit_every: usize,
    pub refit_window: RefitWindow,
    pub commit_load: CommitLoad,
}

impl MpcConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            refit_every: 8,
            refit_window: RefitWindow::All,
            commit_load: CommitLoad::Forecast,
        }
    }
}

/// A committed day.
#[derive(Debug, Clone, PartialEq)]
pub struct DaySchedule {
    pub mode: Mode,
    pub hours: Vec<HourDecision>,
    /// Horizon objective of each hour's subproblem ($).
    pub subproblem_objectives: Vec<f64>,
    pub genuine_cost: f64,
    /// Day hours at which (A, B) were re-identified.
    pub refit_hours: Vec<usize>,
    /// Models in force at each hour (empty for the benchmark).
    pub models: Vec<StateSpaceModel>,
    pub initial_soc: f64,
    pub slack_hours: Vec<usize>,
}

impl DaySchedule {
    pub fn to_csv(&self, p: &DispatchParams) -> String {
        let mut s = String::from("hour,load,grid,pv,wind,charge,discharge,soc,cost\n");
        for d in &self.hours {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.9},{:.6}",
                d.hour,
                d.load,
                d.grid,
                d.pv,
                d.wind,
                d.charge,
                d.discharge,
                d.soc,
                d.cost(p)
            );
        }
        s
    }

    pub fn summary_json(&self) -> String {
        let v = serde_json::json!({
            "mode": self.mode,
            "genuine_cost": round6(self.genuine_cost),
            "hours": self.hours.len(),
            "refit_hours": self.refit_hours,
            "slack_hours": self.slack_hours,
            "initial_soc": self.initial_soc,
            "final_soc": self.hours.last().map(|d| round6(d.soc)),
        });
        serde_json::to_string_pretty(&v).expect("plain json value")
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Sum of the cost items over the committed hours of a full day.
pub fn genuine_cost(s: &DaySchedule, params: &DispatchParams) -> Result<f64, DispatchError> {
    if s.hours.len() != DAY_HOURS {
        return Err(DispatchError::IncompleteSchedule {
            got: s.hours.len(),
            expected: DAY_HOURS,
        });
    }
    Ok(s.hours.iter().map(|d| d.cost(params)).sum())
}

/// Inputs describing the day to operate.
#[derive(Clone, Copy)]
pub struct DayInputs<'a> {
    /// Realized hourly load of the day (24 values).
    pub realized: &'a [f64],
    pub source: &'a dyn ForecastSource,
    /// Availability caps at the first hour of the day.
    pub x0: Vec2,
}

/// The rolling loop shared by every mode and system.
///
/// MPC modes advance the state with the model in force and the committed
/// controls, clipped to `[0, capacity]`; the benchmark keeps `x0` all day.
/// `history` seeds the log used by dynamic re-identification and must end
/// immediately before the day.
pub fn run_rolling<S: HorizonSolver>(
    system: &S,
    day: DayInputs<'_>,
    model0: Option<&StateSpaceModel>,
    history: Option<&HistoryLog>,
    cfg: &MpcConfig,
) -> Result<(DaySchedule, Vec<S::Extra>), DispatchError> {
    let p = system.params();
    p.validate()?;
    let hours = day.realized.len();
    if hours == 0 {
        return Err(DispatchError::InvalidInput("empty day".into()));
    }
    let needs_model = cfg.mode != Mode::Benchmark;
    let mut model = match (needs_model, model0) {
        (true, Some(m)) => Some(m.clone()),
        (true, None) => {
            return Err(DispatchError::InvalidInput(format!("mode {} needs a fitted model", cfg.mode)))
        }
        (false, _) => None,
    };
    if cfg.mode == Mode::MpcDynamic && cfg.refit_every == 0 {
        return Err(DispatchError::InvalidInput("refit period must be positive".into()));
    }
    let mut log = history.cloned().unwrap_or_default();
    let caps_limit = p.capacities();

    let mut x = day.x0;
    let mut soc = p.soc0;
    let frozen = vec![day.x0; p.horizon];
    let mut out = DaySchedule {
        mode: cfg.mode,
        hours: Vec::with_capacity(hours),
        subproblem_objectives: Vec::with_capacity(hours),
        genuine_cost: 0.0,
        refit_hours: Vec::new(),
        models: Vec::new(),
        initial_soc: soc,
        slack_hours: Vec::new(),
    };
    let mut extras = Vec::with_capacity(hours);

    for k in 0..hours {
        if cfg.mode == Mode::MpcDynamic && k > 0 && k % cfg.refit_every == 0 {
            let window = match cfg.refit_window {
                RefitWindow::Sliding(n) => log.tail(n),
                RefitWindow::All => log.clone(),
            };
            let m = sysid::fit_state_space(&window).map_err(|source| DispatchError::Refit { hour: k, source })?;
            model = Some(m);
            out.refit_hours.push(k);
        }

        let mut forecast = day.source.forecast(k, p.horizon, &day.realized[..k]);
        if cfg.commit_load == CommitLoad::Realized {
            forecast[0] = day.realized[k];
        }
        let caps = match &model {
            Some(m) => CapsPlan::Dynamics { model: m, x0: x },
            None => CapsPlan::Fixed(&frozen),
        };
        let planned = system.plan(k, &forecast, caps, soc)?;
        let objective = planned.objective;
        let mut committed = planned;
        if day.realized[k] != forecast[0] {
            let d = &committed.decision;
            committed = system.redispatch(k, day.realized[k], x, soc, (d.charge, d.discharge))?;
        }
        let mut d = committed.decision;
        d.hour = k;
        d.load = day.realized[k];
        d.pv_max = x[0];
        d.wind_max = x[1];

        let next_soc = soc + p.eta_cha * d.charge / p.e_max - d.discharge / (p.eta_dis * p.e_max);
        soc = if (-1e-9..0.0).contains(&next_soc) {
            0.0
        } else if (1.0..1.0 + 1e-9).contains(&next_soc) {
            1.0
        } else {
            next_soc
        };
        d.soc = soc;

        if d.slack > 0.0 || committed.slack_used {
            out.slack_hours.push(k);
        }
        log.push(x, [d.pv, d.wind]);
        if let Some(m) = &model {
            out.models.push(m.clone());
            let nx = m.step(x, [d.pv, d.wind]);
            x = [nx[0].clamp(0.0, caps_limit[0]), nx[1].clamp(0.0, caps_limit[1])];
        }
        out.subproblem_objectives.push(objective);
        out.hours.push(d);
        extras.push(committed.extra);
    }
    out.genuine_cost = out.hours.iter().map(|d| d.cost(p)).sum();
    Ok((out, extras))
}

/// Rolling MPC on the park with fixed or dynamically re-identified dynamics.
pub fn run_mpc(
    day: DayInputs<'_>,
    m0: &StateSpaceModel,
    history: &HistoryLog,
    params: &DispatchParams,
    cfg: &MpcConfig,
) -> Result<DaySchedule, DispatchError> {
    if cfg.mode == Mode::Benchmark {
        return Err(DispatchError::InvalidInput("use run_benchmark for the benchmark mode".into()));
    }
    let park = Park::new(params.clone());
    Ok(run_rolling(&park, day, Some(m0), Some(history), cfg)?.0)
}

/// Same rolling loop without the state equation and with caps frozen at
/// `day.x0`.
pub fn run_benchmark(day: DayInputs<'_>, params: &DispatchParams, cfg: &MpcConfig) -> Result<DaySchedule, DispatchError> {
    let park = Park::new(params.clone());
    let cfg = MpcConfig {
        mode: Mode::Benchmark,
        ..*cfg
    };
    Ok(run_rolling(&park, day, None, None, &cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpcore::{enumerate_vertices_oracle, Tolerances};

    fn zero_day() -> Vec<f64> {
        vec![0.0; DAY_HOURS]
    }

    #[test]
    fn subproblem_dimensions() {
        let p = DispatchParams::default();
        let lp = build_subproblem(0, &[100.0; 8], [300.0, 200.0], &StateSpaceModel::persistence(), 0.5, &p).unwrap();
        assert_eq!(lp.num_vars(), 64);
        // 8 balance + 8 SOC + 16 state rows
        assert_eq!(lp.a_eq.len(), 32);
        assert_eq!(lp.a_ub.len(), 16);
    }

    #[test]
    fn zero_load_zero_state_costs_nothing() {
        let p = DispatchParams::default();
        let lp = build_subproblem(0, &[0.0; 8], [0.0, 0.0], &StateSpaceModel::persistence(), 0.5, &p).unwrap();
        let s = lpcore::solve(&lp, Tolerances::default()).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.objective, 0.0);
        for t in 0..8 {
            let d = park_hour(&s.x, t, 8, t, 0.0, false);
            assert_eq!((d.grid, d.pv, d.wind, d.charge, d.discharge), (0.0, 0.0, 0.0, 0.0, 0.0));
            assert!((d.soc - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn ample_pv_is_dispatched_first() {
        let p = DispatchParams::default();
        let lp = build_subproblem(0, &[100.0; 8], [300.0, 200.0], &StateSpaceModel::persistence(), 0.5, &p).unwrap();
        let s = lpcore::solve(&lp, Tolerances::default()).unwrap();
        assert!((s.objective - 320.0).abs() < 1e-9, "{}", s.objective);
        for t in 0..8 {
            let d = park_hour(&s.x, t, 8, t, 100.0, false);
            assert!((d.pv - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn small_subproblem_matches_vertex_oracle() {
        // Two-hour fixed-cap problem stays under the oracle's size guard
        // once the fixed cap columns are folded into bounds.
        let p = DispatchParams::default();
        let caps = [[30.0, 40.0]];
        let lp = build_park_lp(0, &[80.0], &CapsPlan::Fixed(&caps), 0.5, &p, BuildOpts::default()).unwrap();
        let s = lpcore::solve(&lp, Tolerances::default()).unwrap();
        let o = enumerate_vertices_oracle(&lp).unwrap();
        assert_eq!(s.status, o.status);
        assert!((s.objective - o.objective).abs() < 1e-8);
        // pv 30 at 0.4, wind 40 at 0.5, grid 10 at 1.0
        assert!((s.objective - (12.0 + 20.0 + 10.0)).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = DispatchParams::default();
        let m = StateSpaceModel::persistence();
        assert!(build_subproblem(0, &[1.0; 8], [0.0, 0.0], &m, 1.5, &p).is_err());
        assert!(build_subproblem(0, &[-1.0; 8], [0.0, 0.0], &m, 0.5, &p).is_err());
        assert!(build_subproblem(0, &[1.0; 8], [700.0, 0.0], &m, 0.5, &p).is_err());
        let bad = DispatchParams { eta_cha: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn genuine_cost_examples() {
        let p = DispatchParams::default();
        let mut s = DaySchedule {
            mode: Mode::Benchmark,
            hours: (0..24).map(|h| HourDecision { hour: h, ..Default::default() }).collect(),
            subproblem_objectives: vec![0.0; 24],
            genuine_cost: 0.0,
            refit_hours: vec![],
            models: vec![],
            initial_soc: 0.5,
            slack_hours: vec![],
        };
        assert_eq!(genuine_cost(&s, &p).unwrap(), 0.0);
        s.hours[3].grid = 10.0;
        assert_eq!(genuine_cost(&s, &p).unwrap(), 10.0);
        s.hours[3].grid = 0.0;
        s.hours[5].charge = 10.0;
        assert_eq!(genuine_cost(&s, &p).unwrap(), 10.0);
        s.hours.pop();
        assert!(matches!(genuine_cost(&s, &p), Err(DispatchError::IncompleteSchedule { .. })));
    }

    #[test]
    fn benchmark_without_renewables_buys_everything() {
        let p = DispatchParams::default();
        let load: Vec<f64> = (0..24).map(|h| 100.0 + 5.0 * h as f64).collect();
        let src = PerfectForesight(&load);
        let day = DayInputs { realized: &load, source: &src, x0: [0.0, 0.0] };
        let s = run_benchmark(day, &p, &MpcConfig::new(Mode::Benchmark)).unwrap();
        let total: f64 = load.iter().sum();
        assert!((s.genuine_cost - total * p.c_grid).abs() < 1e-6);
    }

    #[test]
    fn benchmark_with_ample_renewables_buys_nothing() {
        let p = DispatchParams::default();
        let load: Vec<f64> = (0..24).map(|h| 50.0 + 3.0 * h as f64).collect();
        let src = PerfectForesight(&load);
        let day = DayInputs { realized: &load, source: &src, x0: [200.0, 150.0] };
        let s = run_benchmark(day, &p, &MpcConfig::new(Mode::Benchmark)).unwrap();
        assert!(s.hours.iter().all(|d| d.grid.abs() < 1e-9));
    }

    #[test]
    fn zero_day_is_free() {
        let p = DispatchParams::default();
        let load = zero_day();
        let src = PerfectForesight(&load);
        let day = DayInputs { realized: &load, source: &src, x0: [100.0, 100.0] };
        let hist = HistoryLog::new(0);
        let s = run_mpc(day, &StateSpaceModel::persistence(), &hist, &p, &MpcConfig::new(Mode::MpcFixed)).unwrap();
        assert_eq!(s.genuine_cost, 0.0);
    }

    #[test]
    fn forecast_error_is_settled_against_realized_load() {
        let p = DispatchParams::default();
        let realized: Vec<f64> = (0..24).map(|h| 120.0 + 10.0 * (h % 5) as f64).collect();
        let wrong = DayForecast(vec![100.0; 24]);
        let day = DayInputs { realized: &realized, source: &wrong, x0: [50.0, 30.0] };
        let s = run_mpc(day, &StateSpaceModel::persistence(), &HistoryLog::new(0), &p, &MpcConfig::new(Mode::MpcFixed))
            .unwrap();
        for d in &s.hours {
            assert!(check_hour(d, &p, 1e-6).is_empty(), "{:?}", check_hour(d, &p, 1e-6));
            assert_eq!(d.load, realized[d.hour]);
        }
    }

    #[test]
    fn mode_parsing() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("fast".parse::<Mode>().is_err());
    }
}
