//! The artifact chain behind each subcommand.
//!
//! Every stage reads its inputs from the output directory and fails with a
//! [`MissingArtifact`] error naming the command that produces a missing file.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use gridmpc_core::diffusion::{DiffusionModel, SampleOptions};
use gridmpc_core::dispatch::{self, DayInputs, DaySchedule, ForecastSource, Mode, PerfectForesight};
use gridmpc_core::exec::{self, Execution};
use gridmpc_core::forecaster::{self, Augmentation, Forest, ProtocolReport, RecursiveForecaster};
use gridmpc_core::network::{self, NetworkSchedule, NetworkSystem, ScaledForecast, Scaling};
use gridmpc_core::sysid::{self, HistoryLog, StateSpaceModel};
use gridmpc_core::tscore::{self, Dataset};

use crate::config::Config;

pub const DATA: &str = "data.csv";
pub const CHECKPOINT: &str = "diffusion.txt";
pub const GENERATED: &str = "generated.csv";
pub const PROVENANCE: &str = "generated_provenance.txt";
pub const FORECAST_TABLE: &str = "forecast_table.csv";
pub const FORECAST_PREDICTIONS: &str = "forecast_predictions.csv";
pub const FOREST: &str = "forest.json";
pub const HISTORY: &str = "history.csv";
pub const MODEL: &str = "model.txt";
pub const COST_TABLE: &str = "cost_table.csv";

/// Stream indices for [`exec::derive_seed`]; the dataset uses the seed itself.
const STAGE_TRAIN: u64 = 1;
const STAGE_GENERATE: u64 = 2;
const STAGE_FOREST: u64 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingArtifact {
    pub file: PathBuf,
    pub command: &'static str,
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing {}: run `gridmpc {}` first", self.file.display(), self.command)
    }
}

impl std::error::Error for MissingArtifact {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum System {
    Park,
    Ieee30,
}

impl System {
    pub fn as_str(self) -> &'static str {
        match self {
            System::Park => "park",
            System::Ieee30 => "ieee30",
        }
    }

    pub fn schedule_file(self, mode: Mode) -> String {
        match self {
            System::Park => format!("schedule_{mode}.csv"),
            System::Ieee30 => format!("schedule30_{mode}.csv"),
        }
    }

    pub fn summary_file(self, mode: Mode) -> String {
        match self {
            System::Park => format!("summary_{mode}.json"),
            System::Ieee30 => format!("summary30_{mode}.json"),
        }
    }
}

/// One committed day of one mode on one system.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub system: System,
    pub schedule: DaySchedule,
    pub network: Option<NetworkSchedule>,
}

pub struct Pipeline {
    pub cfg: Config,
    pub out: PathBuf,
    exec: Execution,
}

impl Pipeline {
    pub fn new(cfg: Config, out: impl Into<PathBuf>) -> Result<Self> {
        let out = out.into();
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        let exec = exec::with_jobs(cfg.jobs);
        Ok(Self { cfg, out, exec })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn read(&self, name: &str, command: &'static str) -> Result<String> {
        let file = self.path(name);
        if !file.exists() {
            return Err(MissingArtifact { file, command }.into());
        }
        fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let file = self.path(name);
        fs::write(&file, text).with_context(|| format!("writing {}", file.display()))
    }

    fn dataset(&self) -> Result<(Dataset, Dataset, Dataset)> {
        let ds = Dataset::from_csv(&self.read(DATA, "gen-data")?).context(DATA)?;
        let (train, test) = tscore::split(&ds, self.cfg.split)?;
        Ok((ds, train, test))
    }

    pub fn gen_data(&self) -> Result<String> {
        let ds = match &self.cfg.data {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Dataset::from_csv(&text).with_context(|| p.display().to_string())?
            }
            None => tscore::gen_synthetic(self.cfg.seed, self.cfg.days, self.cfg.capacities())?,
        };
        ds.check_capacities(self.cfg.dispatch.pv_capacity, self.cfg.dispatch.wind_capacity)?;
        tscore::split(&ds, self.cfg.split)?;
        self.write(DATA, &ds.to_csv())?;
        Ok(format!("wrote {} hours to {DATA}", ds.len()))
    }

    pub fn augment(&self) -> Result<String> {
        let (_, train, _) = self.dataset()?;
        let c = &self.cfg;
        let tc = c.train_config(exec::derive_seed(c.seed, STAGE_TRAIN));
        let (model, report) = DiffusionModel::fit(train.load.values(), train.start_hour(), c.shape, c.schedule, &tc)?;
        let opts = SampleOptions {
            rule: c.reverse_rule,
            exec: self.exec,
            ..Default::default()
        };
        let windows = model.generate(c.generated_windows, exec::derive_seed(c.seed, STAGE_GENERATE), &opts)?;
        let mut csv = String::from("window,hour,load\n");
        for (i, w) in windows.iter().enumerate() {
            for (h, v) in w.iter().enumerate() {
                let _ = writeln!(csv, "{i},{h},{v:.6}");
            }
        }
        self.write(CHECKPOINT, &model.to_text())?;
        self.write(GENERATED, &csv)?;
        let (from, to) = (train.start_hour(), train.start_hour() + train.len());
        self.write(PROVENANCE, &format!("trained_on {from} {to}\n"))?;
        Ok(format!(
            "trained {} updates (final loss {:.5}), generated {} windows",
            report.updates,
            report.epoch_losses.last().copied().unwrap_or(f64::NAN),
            windows.len()
        ))
    }

    fn augmentation(&self) -> Result<Augmentation> {
        let prov = self.read(PROVENANCE, "augment")?;
        let span: Vec<usize> = prov
            .strip_prefix("trained_on ")
            .map(|r| r.split_whitespace().filter_map(|v| v.parse().ok()).collect())
            .unwrap_or_default();
        let [from, to] = span[..] else {
            bail!("{PROVENANCE}: expected `trained_on <from> <to>`");
        };
        let mut windows: Vec<Vec<f64>> = Vec::new();
        for (n, line) in self.read(GENERATED, "augment")?.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            let parsed = (f.len() == 3)
                .then(|| Some((f[0].parse::<usize>().ok()?, f[2].parse::<f64>().ok()?)))
                .flatten();
            let Some((w, v)) = parsed else {
                bail!("{GENERATED} line {}: malformed row", n + 1);
            };
            if w == windows.len() {
                windows.push(Vec::new());
            }
            match windows.get_mut(w) {
                Some(win) => win.push(v),
                None => bail!("{GENERATED} line {}: windows out of order", n + 1),
            }
        }
        Ok(Augmentation {
            windows,
            trained_on: (from, to),
        })
    }

    fn forest_config(&self) -> forecaster::ForestConfig {
        forecaster::ForestConfig {
            seed: exec::derive_seed(self.cfg.seed, STAGE_FOREST),
            ..self.cfg.forest
        }
    }

    pub fn forecast(&self) -> Result<ProtocolReport> {
        let (ds, train, _) = self.dataset()?;
        let aug = self.augmentation()?;
        let fc = self.forest_config();
        let report = forecaster::run_protocol(&ds, self.cfg.split, &aug, &fc, self.cfg.features, self.exec)?;
        let (x, y) =
            forecaster::augmented_rows(train.load.values(), train.start_hour(), &aug.windows, self.cfg.features)?;
        let forest = forecaster::fit(&x, &y, &fc, self.exec)?;
        self.write(FORECAST_TABLE, &report.to_csv())?;
        self.write(FORECAST_PREDICTIONS, &report.predictions_csv(self.cfg.split.train_len))?;
        self.write(FOREST, &forest.to_json())?;
        Ok(report)
    }

    pub fn identify(&self) -> Result<StateSpaceModel> {
        let (_, train, _) = self.dataset()?;
        let hist = sysid::bootstrap_history(&train, &self.cfg.dispatch)?;
        let model = sysid::fit_state_space(&hist)?;
        self.write(HISTORY, &hist.to_csv())?;
        self.write(MODEL, &model.to_text())?;
        Ok(model)
    }

    fn identified(&self) -> Result<(StateSpaceModel, HistoryLog)> {
        let model = StateSpaceModel::from_text(&self.read(MODEL, "identify")?).context(MODEL)?;
        let hist = HistoryLog::from_csv(&self.read(HISTORY, "identify")?).context(HISTORY)?;
        Ok((model, hist))
    }

    fn forest(&self) -> Result<Option<Forest>> {
        if self.cfg.perfect_foresight {
            return Ok(None);
        }
        Ok(Some(Forest::from_json(&self.read(FOREST, "forecast")?).context(FOREST)?))
    }

    /// Run `modes` on the park or the 30-bus case and write per-hour CSVs.
    pub fn dispatch(&self, system: System, modes: &[Mode]) -> Result<Vec<RunOutcome>> {
        let (_, train, test) = self.dataset()?;
        let (model, hist) = self.identified()?;
        let forest = self.forest()?;
        let p = &self.cfg.dispatch;
        let realized = test.load.values();
        let x0 = [test.pv_max.values()[0], test.wind_max.values()[0]];
        let perfect = PerfectForesight(realized);
        let recursive = forest.as_ref().map(|f| RecursiveForecaster {
            forest: f,
            spec: self.cfg.features,
            history: train.load.values(),
            day_start_hour: test.start_hour() % 24,
        });
        let source: &dyn ForecastSource = match &recursive {
            Some(r) => r,
            None => &perfect,
        };

        let mut out = Vec::with_capacity(modes.len());
        match system {
            System::Park => {
                let day = DayInputs { realized, source, x0 };
                for &mode in modes {
                    let mpc = self.cfg.mpc(mode);
                    let s = match mode {
                        Mode::Benchmark => dispatch::run_benchmark(day, p, &mpc)?,
                        _ => dispatch::run_mpc(day, &model, &hist, p, &mpc)?,
                    };
                    self.write(&system.schedule_file(mode), &s.to_csv(p))?;
                    self.write(&system.summary_file(mode), &s.summary_json())?;
                    out.push(RunOutcome {
                        system,
                        schedule: s,
                        network: None,
                    });
                }
            }
            System::Ieee30 => {
                let case = network::parse_case(network::IEEE30_CASE)?;
                let sc = Scaling::for_case(&case, p, train.load.max())?;
                let np = sc.params(p);
                let sys = NetworkSystem::new(case, np.clone())?;
                let load: Vec<f64> = realized.iter().map(|v| v * sc.load).collect();
                let scaled_perfect = PerfectForesight(&load);
                let scaled_recursive = ScaledForecast {
                    inner: source,
                    factor: sc.load,
                };
                let source: &dyn ForecastSource = if recursive.is_some() {
                    &scaled_recursive
                } else {
                    &scaled_perfect
                };
                let day = DayInputs {
                    realized: &load,
                    source,
                    x0: sc.state(x0),
                };
                let (ms, hs) = (sc.model(&model), sc.history(&hist));
                for &mode in modes {
                    let s = network::run_network_mpc(&sys, day, Some(&ms), Some(&hs), &self.cfg.mpc(mode))?;
                    self.write(&system.schedule_file(mode), &s.to_csv(&np))?;
                    self.write(&system.summary_file(mode), &s.day.summary_json())?;
                    out.push(RunOutcome {
                        system,
                        schedule: s.day.clone(),
                        network: Some(s),
                    });
                }
            }
        }
        Ok(out)
    }

    /// Forecast table plus a cost table over every mode on both systems.
    pub fn report(&self) -> Result<Vec<RunOutcome>> {
        let table = self.read(FORECAST_TABLE, "forecast")?;
        let mut runs = self.dispatch(System::Park, &Mode::ALL)?;
        runs.extend(self.dispatch(System::Ieee30, &Mode::ALL)?);
        let mut csv = String::from("system,mode,genuine_cost,slack_hours,refits\n");
        for r in &runs {
            let s = &r.schedule;
            let _ = writeln!(
                csv,
                "{},{},{:.6},{},{}",
                r.system.as_str(),
                s.mode,
                s.genuine_cost,
                s.slack_hours.len(),
                s.refit_hours.len()
            );
        }
        self.write("report_forecast_table.csv", &table)?;
        self.write(COST_TABLE, &csv)?;
        Ok(runs)
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<Vec<RunOutcome>> {
        self.gen_data()?;
        self.augment()?;
        self.forecast()?;
        self.identify()?;
        self.report()
    }
}

/// Names of the CSV files a report run writes.
pub fn report_csvs() -> Vec<String> {
    let mut v = vec![
        FORECAST_TABLE.to_string(),
        FORECAST_PREDICTIONS.to_string(),
        COST_TABLE.to_string(),
        "report_forecast_table.csv".to_string(),
    ];
    for s in [System::Park, System::Ieee30] {
        v.extend(Mode::ALL.iter().map(|&m| s.schedule_file(m)));
    }
    v
}

pub fn missing_command(err: &anyhow::Error) -> Option<&'static str> {
    err.downcast_ref::<MissingArtifact>().map(|m| m.command)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn quick(dir: &Path) -> Pipeline {
        let mut cfg = Config::default();
        cfg.train.epochs = 2;
        cfg.generated_windows = 2;
        cfg.forest.trees = 4;
        cfg.jobs = 1;
        Pipeline::new(cfg, dir).unwrap()
    }

    #[test]
    fn stages_name_their_missing_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = quick(dir.path());
        assert_eq!(missing_command(&p.augment().unwrap_err()), Some("gen-data"));
        p.gen_data().unwrap();
        assert_eq!(missing_command(&p.forecast().unwrap_err()), Some("augment"));
        assert_eq!(missing_command(&p.dispatch(System::Park, &[Mode::Benchmark]).unwrap_err()), Some("identify"));
        p.identify().unwrap();
        assert_eq!(missing_command(&p.dispatch(System::Park, &[Mode::Benchmark]).unwrap_err()), Some("forecast"));
        assert_eq!(missing_command(&p.report().unwrap_err()), Some("forecast"));
        let msg = p.report().unwrap_err().to_string();
        assert!(msg.contains("forecast_table.csv") && msg.contains("gridmpc forecast"), "{msg}");
    }

    #[test]
    fn perfect_foresight_skips_the_forest() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = quick(dir.path());
        p.cfg.perfect_foresight = true;
        p.gen_data().unwrap();
        p.identify().unwrap();
        let r = p.dispatch(System::Park, &[Mode::MpcFixed]).unwrap();
        assert_eq!(r[0].schedule.hours.len(), 24);
        assert!(p.path("schedule_mpc.csv").exists());
    }
}
