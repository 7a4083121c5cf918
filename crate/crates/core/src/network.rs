//! DC-power-flow variant of the dispatch problem on a meshed network.
//!
//! Per hour the park formulation is extended with conventional generators
//! priced at `c_grid`, bus angles and branch flows:
//!
//! * `P_ij = B_ij (delta_i - delta_j)` with `B_ij = 1 / x_ij` (p.u.),
//! * `|P_ij| <= rate_ij`,
//! * nodal balance: injections minus load equal the net branch outflow,
//! * `delta_ref = 0` (the reference angle is not a variable).
//!
//! Everything is in kW. Angle columns hold `delta * base_kw`, which keeps the
//! flow equation coefficients at `B_ij` instead of `B_ij * base_kw`.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

use crate::dispatch::{
    self, col, BuildOpts, CapsPlan, DayInputs, DaySchedule, DispatchError, DispatchParams, ForecastSource, HorizonSolver,
    HourDecision, HourOutcome, MpcConfig, Mode,
};
use crate::lpcore::{LpBuilder, LpProblem, SolverOptions};
use crate::sysid::{HistoryLog, StateSpaceModel, Vec2};

const INF: f64 = f64::INFINITY;

/// The bundled standard 30-bus case.
pub const IEEE30_CASE: &str = include_str!("../data/case30.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid case: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenKind {
    Conventional,
    Wind,
    Pv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub nominal_load_mw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// Bus indices (positions in `GridCase::buses`).
    pub from: usize,
    pub to: usize,
    /// Susceptance in p.u.
    pub b_pu: f64,
    /// Thermal limit in MW; `INF` when unlimited.
    pub rate_mw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    pub kind: GenKind,
    pub pmin_mw: f64,
    pub pmax_mw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub reference: usize,
    pub storage_bus: usize,
}

impl GridCase {
    pub fn base_kw(&self) -> f64 {
        self.base_mva * 1000.0
    }

    pub fn total_nominal_load_mw(&self) -> f64 {
        self.buses.iter().map(|b| b.nominal_load_mw).sum()
    }

    /// Fraction of the aggregate load drawn at each bus.
    pub fn load_shares(&self) -> Vec<f64> {
        let total = self.total_nominal_load_mw();
        self.buses.iter().map(|b| b.nominal_load_mw / total).collect()
    }

    pub fn unit(&self, kind: GenKind) -> Option<&Generator> {
        self.generators.iter().find(|g| g.kind == kind)
    }

    fn conventional(&self) -> impl Iterator<Item = &Generator> {
        self.generators.iter().filter(|g| g.kind == GenKind::Conventional)
    }

    pub fn validate(&self) -> Result<(), CaseError> {
        let bad = |m: String| Err(CaseError::Invalid(m));
        let nb = self.buses.len();
        if nb == 0 {
            return bad("no buses".into());
        }
        if !(self.base_mva > 0.0) {
            return bad(format!("base power {} must be positive", self.base_mva));
        }
        if self.reference >= nb || self.storage_bus >= nb {
            return bad("reference or storage bus out of range".into());
        }
        if self.buses.iter().any(|b| !(b.nominal_load_mw >= 0.0)) {
            return bad("bus loads must be non-negative".into());
        }
        if !(self.total_nominal_load_mw() > 0.0) {
            return bad("total nominal load must be positive".into());
        }
        for (i, br) in self.branches.iter().enumerate() {
            if br.from >= nb || br.to >= nb || br.from == br.to {
                return bad(format!("branch {} has invalid endpoints", i + 1));
            }
            if !(br.b_pu > 0.0 && br.b_pu.is_finite()) {
                return bad(format!("branch {} susceptance must be positive", i + 1));
            }
            if !(br.rate_mw > 0.0) {
                return bad(format!("branch {} rate must be positive", i + 1));
            }
        }
        for g in &self.generators {
            if g.bus >= nb || !(g.pmin_mw >= 0.0 && g.pmin_mw <= g.pmax_mw) {
                return bad(format!("generator at bus index {} has invalid limits", g.bus));
            }
        }
        for kind in [GenKind::Wind, GenKind::Pv] {
            let n = self.generators.iter().filter(|g| g.kind == kind).count();
            if n != 1 {
                return bad(format!("expected exactly one {kind:?} unit, found {n}"));
            }
            if !self.unit(kind).map_or(false, |g| g.pmax_mw.is_finite()) {
                return bad(format!("{kind:?} unit needs a finite rating"));
            }
        }
        let mut seen = vec![false; nb];
        let mut adj = vec![Vec::new(); nb];
        for br in &self.branches {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
        let mut queue = VecDeque::from([self.reference]);
        seen[self.reference] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return bad(format!("bus {} is not connected to the reference bus", self.buses[i].id));
        }
        Ok(())
    }

    /// Write the case in the plain-text format read by [`parse_case`].
    pub fn to_text(&self) -> String {
        let mut s = format!("BASE\nmva\n{}\nBUS\nid type pd_mw\n", self.base_mva);
        for (i, b) in self.buses.iter().enumerate() {
            let t = if i == self.reference { 3 } else { 1 };
            let _ = writeln!(s, "{} {} {}", b.id, t, b.nominal_load_mw);
        }
        s.push_str("BRANCH\nfrom to x_pu rate_mw\n");
        for br in &self.branches {
            let rate = if br.rate_mw.is_finite() { br.rate_mw } else { 0.0 };
            let _ = writeln!(s, "{} {} {} {}", self.buses[br.from].id, self.buses[br.to].id, 1.0 / br.b_pu, rate);
        }
        s.push_str("GEN\nbus kind pmin_mw pmax_mw\n");
        for g in &self.generators {
            let kind = match g.kind {
                GenKind::Conventional => 0,
                GenKind::Wind => 1,
                GenKind::Pv => 2,
            };
            let _ = writeln!(s, "{} {} {} {}", self.buses[g.bus].id, kind, g.pmin_mw, g.pmax_mw);
        }
        let _ = write!(s, "STORAGE\nbus\n{}\n", self.buses[self.storage_bus].id);
        s
    }
}

/// Parse a case file (see `data/case30.txt` for the format).
pub fn parse_case(text: &str) -> Result<GridCase, CaseError> {
    const SECTIONS: [&str; 5] = ["BASE", "BUS", "BRANCH", "GEN", "STORAGE"];
    let mut rows: HashMap<&str, Vec<(usize, Vec<f64>)>> = HashMap::new();
    let mut section: Option<&str> = None;
    let mut expect_header = false;
    let mut widths: HashMap<&str, usize> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = SECTIONS.iter().find(|s| **s == line) {
            if rows.contains_key(name) {
                return Err(CaseError::Parse { line: line_no, msg: format!("duplicate section {name}") });
            }
            rows.insert(name, Vec::new());
            section = Some(name);
            expect_header = true;
            continue;
        }
        let Some(name) = section else {
            return Err(CaseError::Parse { line: line_no, msg: format!("data before any section: {line:?}") });
        };
        if expect_header {
            widths.insert(name, line.split_whitespace().count());
            expect_header = false;
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| CaseError::Parse { line: line_no, msg: format!("{e}: {line:?}") })?;
        if vals.len() != widths[name] || vals.iter().any(|v| v.is_nan()) {
            return Err(CaseError::Parse {
                line: line_no,
                msg: format!("{name} row needs {} numeric columns", widths[name]),
            });
        }
        rows.get_mut(name).expect("section registered").push((line_no, vals));
    }
    for name in SECTIONS {
        if !rows.contains_key(name) {
            return Err(CaseError::Invalid(format!("missing section {name}")));
        }
    }
    let one = |name: &str| -> Result<(usize, f64), CaseError> {
        match rows[name].as_slice() {
            [(l, v)] => Ok((*l, v[0])),
            _ => Err(CaseError::Invalid(format!("section {name} needs exactly one row"))),
        }
    };
    let as_id = |line: usize, v: f64| -> Result<usize, CaseError> {
        if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
            Ok(v as usize)
        } else {
            Err(CaseError::Parse { line, msg: format!("{v} is not a positive integer id") })
        }
    };

    let base_mva = one("BASE")?.1;
    let mut index = HashMap::new();
    let mut buses = Vec::new();
    let mut reference = None;
    for (line, v) in &rows["BUS"] {
        let id = as_id(*line, v[0])?;
        if index.insert(id, buses.len()).is_some() {
            return Err(CaseError::Parse { line: *line, msg: format!("duplicate bus {id}") });
        }
        if v[1] == 3.0 {
            if reference.is_some() {
                return Err(CaseError::Parse { line: *line, msg: "second reference bus".into() });
            }
            reference = Some(buses.len());
        }
        buses.push(Bus { id, nominal_load_mw: v[2] });
    }
    let reference = reference.ok_or_else(|| CaseError::Invalid("no reference bus (type 3)".into()))?;
    let bus_at = |line: usize, v: f64| -> Result<usize, CaseError> {
        let id = as_id(line, v)?;
        index
            .get(&id)
            .copied()
            .ok_or(CaseError::Parse { line, msg: format!("unknown bus {id}") })
    };
    let mut branches = Vec::new();
    for (line, v) in &rows["BRANCH"] {
        if !(v[2] > 0.0) {
            return Err(CaseError::Parse { line: *line, msg: format!("reactance {} must be positive", v[2]) });
        }
        branches.push(Branch {
            from: bus_at(*line, v[0])?,
            to: bus_at(*line, v[1])?,
            b_pu: 1.0 / v[2],
            rate_mw: if v[3] == 0.0 { INF } else { v[3] },
        });
    }
    let mut generators = Vec::new();
    for (line, v) in &rows["GEN"] {
        let kind = match v[1] {
            k if k == 0.0 => GenKind::Conventional,
            k if k == 1.0 => GenKind::Wind,
            k if k == 2.0 => GenKind::Pv,
            k => return Err(CaseError::Parse { line: *line, msg: format!("unknown generator kind {k}") }),
        };
        generators.push(Generator {
            bus: bus_at(*line, v[0])?,
            kind,
            pmin_mw: v[2],
            pmax_mw: v[3],
        });
    }
    let (sl, sv) = one("STORAGE")?;
    let case = GridCase {
        base_mva,
        buses,
        branches,
        generators,
        reference,
        storage_bus: bus_at(sl, sv)?,
    };
    case.validate()?;
    Ok(case)
}

/// Column positions of one horizon hour.
#[derive(Debug, Clone, PartialEq)]
pub struct NetLayout {
    pub hours: usize,
    pub conventional: usize,
    pub buses: usize,
    pub branches: usize,
    /// Bus indices carrying a load-shedding slack when slack is enabled.
    pub slack_buses: Vec<usize>,
    pub with_slack: bool,
}

impl NetLayout {
    pub fn per_hour(&self) -> usize {
        self.conventional + 7 + (self.buses - 1) + self.branches
    }

    pub fn base(&self, t: usize) -> usize {
        t * self.per_hour()
    }

    /// Column of a park quantity (see [`dispatch::col`]) in hour `t`.
    /// Conventional units take the slots before `col::PV`.
    pub fn park(&self, t: usize, c: usize) -> usize {
        debug_assert!(c != col::GRID);
        self.base(t) + self.conventional - 1 + c
    }

    pub fn generator(&self, t: usize, g: usize) -> usize {
        self.base(t) + g
    }

    /// Angle column of bus `i` (not the reference) given its position among
    /// non-reference buses.
    pub fn angle(&self, t: usize, pos: usize) -> usize {
        self.base(t) + self.conventional + 7 + pos
    }

    pub fn flow(&self, t: usize, l: usize) -> usize {
        self.base(t) + self.conventional + 7 + self.buses - 1 + l
    }

    pub fn slack(&self, t: usize, s: usize) -> usize {
        self.hours * self.per_hour() + t * self.slack_buses.len() + s
    }
}

/// Build the network horizon LP.
///
/// `bus_loads[t][i]` is the load (kW) of bus `i` in horizon hour `t`. Column
/// layout per hour: conventional units, then `pv, wind, charge, discharge,
/// soc, pv_max, wind_max`, then angles of non-reference buses and branch
/// flows; slack columns (hour-major) follow all hours. Equality rows per
/// hour: nodal balances, SOC, state rows (dynamics only), flow definitions.
/// With one bus, one conventional unit and no branches this is exactly the
/// park problem of [`dispatch::build_park_lp`].
pub fn build_network_lp(
    k: usize,
    case: &GridCase,
    bus_loads: &[Vec<f64>],
    caps: &CapsPlan<'_>,
    soc_k: f64,
    p: &DispatchParams,
    opts: BuildOpts,
) -> Result<(LpProblem, NetLayout), DispatchError> {
    case.validate().map_err(|e| DispatchError::InvalidInput(e.to_string()))?;
    let nb = case.buses.len();
    if bus_loads.iter().any(|r| r.len() != nb) {
        return Err(DispatchError::InvalidInput(format!("bus load rows must have {nb} entries")));
    }
    let totals: Vec<f64> = bus_loads.iter().map(|r| r.iter().sum()).collect();
    dispatch::validate_inputs(&totals, caps, soc_k, p)?;
    if bus_loads.iter().flatten().any(|v| !(*v >= 0.0)) {
        return Err(DispatchError::InvalidInput("bus loads must be non-negative".into()));
    }
    let shares = case.load_shares();
    let layout = NetLayout {
        hours: bus_loads.len(),
        conventional: case.conventional().count(),
        buses: nb,
        branches: case.branches.len(),
        slack_buses: (0..nb).filter(|&i| shares[i] > 0.0).collect(),
        with_slack: opts.slack,
    };
    let n = layout.hours;
    let kw = 1000.0;
    let pv_bus = case.unit(GenKind::Pv).expect("validated").bus;
    let wind_bus = case.unit(GenKind::Wind).expect("validated").bus;
    let non_ref: Vec<usize> = (0..nb).filter(|&i| i != case.reference).collect();
    let mut angle_pos = vec![None; nb];
    for (pos, &i) in non_ref.iter().enumerate() {
        angle_pos[i] = Some(pos);
    }

    let mut b = LpBuilder::new();
    for t in 0..n {
        let h = k + t;
        for (g, gen) in case.conventional().enumerate() {
            let name = if layout.conventional == 1 {
                format!("p_grid[{h}]")
            } else {
                format!("p_g{}[{h}]", g + 1)
            };
            b.add_var(name, gen.pmin_mw * kw, gen.pmax_mw * kw, p.c_grid);
        }
        b.add_var(format!("p_pv[{h}]"), 0.0, p.pv_capacity, p.c_pv);
        b.add_var(format!("p_wind[{h}]"), 0.0, p.wind_capacity, p.c_wind);
        let (ch_lo, ch_hi, dis_lo, dis_hi) = match (t, opts.storage_fixed) {
            (0, Some((c, d))) => (c, c, d, d),
            _ => (0.0, p.p_bat_max, 0.0, p.p_bat_max),
        };
        b.add_var(format!("p_charge[{h}]"), ch_lo, ch_hi, p.c_bat);
        b.add_var(format!("p_discharge[{h}]"), dis_lo, dis_hi, p.c_bat);
        b.add_var(format!("soc[{h}]"), 0.0, 1.0, 0.0);
        let (pv_lo, pv_hi, w_lo, w_hi) = match caps {
            CapsPlan::Dynamics { .. } => (-INF, INF, -INF, INF),
            CapsPlan::Fixed(c) => (c[t][0], c[t][0], c[t][1], c[t][1]),
        };
        b.add_var(format!("pv_max[{h}]"), pv_lo, pv_hi, 0.0);
        b.add_var(format!("wind_max[{h}]"), w_lo, w_hi, 0.0);
        for &i in &non_ref {
            b.add_var(format!("theta{}[{h}]", case.buses[i].id), -INF, INF, 0.0);
        }
        for (l, br) in case.branches.iter().enumerate() {
            let lim = br.rate_mw * kw;
            b.add_var(format!("flow{}[{h}]", l + 1), -lim, lim, 0.0);
        }
    }
    if opts.slack {
        for t in 0..n {
            for &i in &layout.slack_buses {
                b.add_var(
                    format!("slack{}[{}]", case.buses[i].id, k + t),
                    0.0,
                    INF,
                    p.slack_penalty * p.c_grid,
                );
            }
        }
    }
    let v = |c: usize| crate::lpcore::Var(c);

    let soc_in = 1.0 / (p.eta_dis * p.e_max);
    for t in 0..n {
        let mut rows: Vec<Vec<(crate::lpcore::Var, f64)>> = vec![Vec::new(); nb];
        for (g, gen) in case.conventional().enumerate() {
            rows[gen.bus].push((v(layout.generator(t, g)), 1.0));
        }
        rows[pv_bus].push((v(layout.park(t, col::PV)), 1.0));
        rows[wind_bus].push((v(layout.park(t, col::WIND)), 1.0));
        rows[case.storage_bus].push((v(layout.park(t, col::DISCHARGE)), 1.0));
        rows[case.storage_bus].push((v(layout.park(t, col::CHARGE)), -1.0));
        for (l, br) in case.branches.iter().enumerate() {
            rows[br.from].push((v(layout.flow(t, l)), -1.0));
            rows[br.to].push((v(layout.flow(t, l)), 1.0));
        }
        if opts.slack {
            for (s, &i) in layout.slack_buses.iter().enumerate() {
                rows[i].push((v(layout.slack(t, s)), 1.0));
            }
        }
        for (i, row) in rows.into_iter().enumerate() {
            b.add_eq(row, bus_loads[t][i]);
        }

        let mut soc_row = vec![
            (v(layout.park(t, col::SOC)), 1.0),
            (v(layout.park(t, col::CHARGE)), -p.eta_cha / p.e_max),
            (v(layout.park(t, col::DISCHARGE)), soc_in),
        ];
        let rhs = if t == 0 {
            soc_k
        } else {
            soc_row.push((v(layout.park(t - 1, col::SOC)), -1.0));
            0.0
        };
        b.add_eq(soc_row, rhs);

        if let CapsPlan::Dynamics { model, x0 } = caps {
            let targets = [layout.park(t, col::PV_MAX), layout.park(t, col::WIND_MAX)];
            for i in 0..2 {
                if t == 0 {
                    b.add_eq(vec![(v(targets[i]), 1.0)], x0[i]);
                } else {
                    b.add_eq(
                        vec![
                            (v(targets[i]), 1.0),
                            (v(layout.park(t - 1, col::PV_MAX)), -model.a[i][0]),
                            (v(layout.park(t - 1, col::WIND_MAX)), -model.a[i][1]),
                            (v(layout.park(t - 1, col::PV)), -model.b[i][0]),
                            (v(layout.park(t - 1, col::WIND)), -model.b[i][1]),
                        ],
                        0.0,
                    );
                }
            }
        }

        for (l, br) in case.branches.iter().enumerate() {
            let mut row = vec![(v(layout.flow(t, l)), 1.0)];
            if let Some(pos) = angle_pos[br.from] {
                row.push((v(layout.angle(t, pos)), -br.b_pu));
            }
            if let Some(pos) = angle_pos[br.to] {
                row.push((v(layout.angle(t, pos)), br.b_pu));
            }
            b.add_eq(row, 0.0);
        }

        b.add_le(
            vec![(v(layout.park(t, col::PV)), 1.0), (v(layout.park(t, col::PV_MAX)), -1.0)],
            0.0,
        );
        b.add_le(
            vec![(v(layout.park(t, col::WIND)), 1.0), (v(layout.park(t, col::WIND_MAX)), -1.0)],
            0.0,
        );
    }
    Ok((b.build(), layout))
}

/// Plain entry point: dynamics from `x_k` under `model`, no slack.
pub fn build_network_subproblem(
    k: usize,
    case: &GridCase,
    bus_loads: &[Vec<f64>],
    x_k: Vec2,
    model: &StateSpaceModel,
    soc_k: f64,
    params: &DispatchParams,
) -> Result<LpProblem, DispatchError> {
    Ok(build_network_lp(k, case, bus_loads, &CapsPlan::Dynamics { model, x0: x_k }, soc_k, params, BuildOpts::default())?.0)
}

/// Network quantities of one committed hour.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NetworkHour {
    /// Conventional unit outputs (kW), in case order.
    pub generators: Vec<f64>,
    /// Bus angles in radians; the reference bus is 0.
    pub angles: Vec<f64>,
    /// Branch flows (kW), positive from `from` to `to`.
    pub flows: Vec<f64>,
    pub bus_loads: Vec<f64>,
    pub bus_slack: Vec<f64>,
    /// Largest |flow| / rate over limited branches.
    pub max_loading: f64,
}

/// Decode hour `t` of a network solution.
pub fn decode_hour(case: &GridCase, layout: &NetLayout, x: &[f64], t: usize, hour: usize, bus_loads: &[f64]) -> (HourDecision, NetworkHour) {
    let generators: Vec<f64> = (0..layout.conventional).map(|g| x[layout.generator(t, g)]).collect();
    let base_kw = case.base_kw();
    let mut angles = vec![0.0; layout.buses];
    let mut pos = 0;
    for (i, a) in angles.iter_mut().enumerate() {
        if i != case.reference {
            *a = x[layout.angle(t, pos)] / base_kw;
            pos += 1;
        }
    }
    let flows: Vec<f64> = (0..layout.branches).map(|l| x[layout.flow(t, l)]).collect();
    let max_loading = case
        .branches
        .iter()
        .zip(&flows)
        .filter(|(br, _)| br.rate_mw.is_finite())
        .map(|(br, f)| f.abs() / (br.rate_mw * 1000.0))
        .fold(0.0, f64::max);
    let mut bus_slack = vec![0.0; layout.buses];
    if layout.with_slack {
        for (s, &i) in layout.slack_buses.iter().enumerate() {
            bus_slack[i] = x[layout.slack(t, s)];
        }
    }
    let d = HourDecision {
        hour,
        load: bus_loads.iter().sum(),
        grid: generators.iter().sum(),
        pv: x[layout.park(t, col::PV)],
        wind: x[layout.park(t, col::WIND)],
        charge: x[layout.park(t, col::CHARGE)],
        discharge: x[layout.park(t, col::DISCHARGE)],
        soc: x[layout.park(t, col::SOC)],
        pv_max: x[layout.park(t, col::PV_MAX)],
        wind_max: x[layout.park(t, col::WIND_MAX)],
        slack: bus_slack.iter().sum(),
    };
    let net = NetworkHour {
        generators,
        angles,
        flows,
        bus_loads: bus_loads.to_vec(),
        bus_slack,
        max_loading,
    };
    (d, net)
}

/// Largest flow-definition residual in p.u.
pub fn flow_residual_pu(case: &GridCase, h: &NetworkHour) -> f64 {
    let base = case.base_kw();
    case.branches
        .iter()
        .zip(&h.flows)
        .map(|(br, f)| (f / base - br.b_pu * (h.angles[br.from] - h.angles[br.to])).abs())
        .fold(0.0, f64::max)
}

/// Nodal balance residuals (kW): injection minus load minus net outflow.
pub fn nodal_residuals(case: &GridCase, d: &HourDecision, h: &NetworkHour) -> Vec<f64> {
    let mut r: Vec<f64> = h.bus_slack.iter().zip(&h.bus_loads).map(|(s, l)| s - l).collect();
    for (g, gen) in case.conventional().enumerate() {
        r[gen.bus] += h.generators[g];
    }
    r[case.unit(GenKind::Pv).expect("validated").bus] += d.pv;
    r[case.unit(GenKind::Wind).expect("validated").bus] += d.wind;
    r[case.storage_bus] += d.discharge - d.charge;
    for (br, f) in case.branches.iter().zip(&h.flows) {
        r[br.from] -= f;
        r[br.to] += f;
    }
    r
}

/// A network operated by the rolling loop. The aggregate load forecast is
/// split across buses by the case's nominal load shares.
#[derive(Debug, Clone)]
pub struct NetworkSystem {
    pub case: GridCase,
    pub params: DispatchParams,
    pub solver: SolverOptions,
    shares: Vec<f64>,
}

impl NetworkSystem {
    pub fn new(case: GridCase, params: DispatchParams) -> Result<Self, DispatchError> {
        case.validate().map_err(|e| DispatchError::InvalidInput(e.to_string()))?;
        params.validate()?;
        let shares = case.load_shares();
        Ok(Self {
            case,
            params,
            solver: SolverOptions::default(),
            shares,
        })
    }

    pub fn split_load(&self, total: f64) -> Vec<f64> {
        self.shares.iter().map(|s| s * total).collect()
    }

    fn solve_first(
        &self,
        k: usize,
        forecast: &[f64],
        caps: CapsPlan<'_>,
        soc: f64,
        storage: Option<(f64, f64)>,
    ) -> Result<HourOutcome<NetworkHour>, DispatchError> {
        let loads: Vec<Vec<f64>> = forecast.iter().map(|&v| self.split_load(v)).collect();
        let mut layout = None;
        let (sol, slack) = dispatch::solve_with_fallback(k, &self.solver, |slack| {
            let (lp, l) = build_network_lp(
                k,
                &self.case,
                &loads,
                &caps,
                soc,
                &self.params,
                BuildOpts {
                    slack,
                    storage_fixed: storage,
                },
            )?;
            layout = Some(l);
            Ok(lp)
        })?;
        let layout = layout.expect("built at least once");
        let (decision, extra) = decode_hour(&self.case, &layout, &sol.x, 0, k, &loads[0]);
        Ok(HourOutcome {
            decision,
            extra,
            objective: sol.objective,
            slack_used: slack,
        })
    }
}

impl HorizonSolver for NetworkSystem {
    type Extra = NetworkHour;

    fn params(&self) -> &DispatchParams {
        &self.params
    }

    fn plan(
        &self,
        k: usize,
        forecast: &[f64],
        caps: CapsPlan<'_>,
        soc: f64,
    ) -> Result<HourOutcome<NetworkHour>, DispatchError> {
        self.solve_first(k, forecast, caps, soc, None)
    }

    fn redispatch(
        &self,
        k: usize,
        load: f64,
        caps: Vec2,
        soc: f64,
        storage: (f64, f64),
    ) -> Result<HourOutcome<NetworkHour>, DispatchError> {
        let fixed = [caps];
        self.solve_first(k, &[load], CapsPlan::Fixed(&fixed), soc, Some(storage))
            .or_else(|_| self.solve_first(k, &[load], CapsPlan::Fixed(&fixed), soc, None))
    }
}

/// Factors mapping the park instance onto a network case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    /// Multiplies park loads and battery ratings.
    pub load: f64,
    /// Multiplies `[pv, wind]` availability, outputs and capacities.
    pub caps: Vec2,
}

impl Scaling {
    /// Scale so that `reference_load_kw` maps to the case's nominal total
    /// load and the park's plant capacities map to the renewable units'
    /// ratings.
    pub fn for_case(case: &GridCase, park: &DispatchParams, reference_load_kw: f64) -> Result<Self, DispatchError> {
        if !(reference_load_kw > 0.0) {
            return Err(DispatchError::InvalidInput("reference load must be positive".into()));
        }
        if !(park.pv_capacity > 0.0 && park.wind_capacity > 0.0) {
            return Err(DispatchError::InvalidInput("park capacities must be positive".into()));
        }
        let pv = case.unit(GenKind::Pv).ok_or(DispatchError::InvalidInput("case has no pv unit".into()))?;
        let wind = case.unit(GenKind::Wind).ok_or(DispatchError::InvalidInput("case has no wind unit".into()))?;
        Ok(Self {
            load: case.total_nominal_load_mw() * 1000.0 / reference_load_kw,
            caps: [pv.pmax_mw * 1000.0 / park.pv_capacity, wind.pmax_mw * 1000.0 / park.wind_capacity],
        })
    }

    pub fn params(&self, park: &DispatchParams) -> DispatchParams {
        DispatchParams {
            e_max: park.e_max * self.load,
            p_bat_max: park.p_bat_max * self.load,
            pv_capacity: park.pv_capacity * self.caps[0],
            wind_capacity: park.wind_capacity * self.caps[1],
            ..park.clone()
        }
    }

    pub fn state(&self, x: Vec2) -> Vec2 {
        [x[0] * self.caps[0], x[1] * self.caps[1]]
    }

    pub fn model(&self, m: &StateSpaceModel) -> StateSpaceModel {
        m.scaled(self.caps)
    }

    pub fn history(&self, h: &HistoryLog) -> HistoryLog {
        h.scaled(self.caps)
    }
}

/// A park-level forecast source rescaled to network load.
pub struct ScaledForecast<'a> {
    pub inner: &'a dyn ForecastSource,
    pub factor: f64,
}

impl ForecastSource for ScaledForecast<'_> {
    fn forecast(&self, k: usize, n: usize, observed: &[f64]) -> Vec<f64> {
        let park: Vec<f64> = observed.iter().map(|v| v / self.factor).collect();
        self.inner.forecast(k, n, &park).into_iter().map(|v| v * self.factor).collect()
    }
}

/// A committed day on the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSchedule {
    pub day: DaySchedule,
    pub network: Vec<NetworkHour>,
}

impl NetworkSchedule {
    pub fn to_csv(&self, p: &DispatchParams) -> String {
        let mut s = String::from("hour,load,grid,pv,wind,charge,discharge,soc,cost,max_branch_loading\n");
        for (d, n) in self.day.hours.iter().zip(&self.network) {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.9},{:.6},{:.6}",
                d.hour,
                d.load,
                d.grid,
                d.pv,
                d.wind,
                d.charge,
                d.discharge,
                d.soc,
                d.cost(p),
                n.max_loading
            );
        }
        s
    }
}

/// Rolling dispatch on the network; same semantics as the park loop.
pub fn run_network_mpc(
    system: &NetworkSystem,
    day: DayInputs<'_>,
    m0: Option<&StateSpaceModel>,
    history: Option<&HistoryLog>,
    cfg: &MpcConfig,
) -> Result<NetworkSchedule, DispatchError> {
    let model = if cfg.mode == Mode::Benchmark { None } else { m0 };
    let (day, network) = dispatch::run_rolling(system, day, model, history, cfg)?;
    Ok(NetworkSchedule { day, network })
}
