//! Plain-text `key = value` run configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use gridmpc_core::diffusion::{DenoiserShape, ReverseRule, ScheduleSpec, TrainConfig};
use gridmpc_core::dispatch::{CommitLoad, DispatchParams, Mode, MpcConfig, RefitWindow};
use gridmpc_core::forecaster::{FeatureSpec, ForestConfig};
use gridmpc_core::tscore::{Capacities, SplitSpec};

/// Every tunable of a pipeline run. Defaults describe the reference instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    /// Load the dataset from this CSV instead of generating it.
    pub data: Option<PathBuf>,
    pub days: usize,
    pub load_peak: f64,
    pub split: SplitSpec,

    pub schedule: ScheduleSpec,
    pub shape: DenoiserShape,
    pub train: TrainConfig,
    pub reverse_rule: ReverseRule,
    pub generated_windows: usize,

    pub features: FeatureSpec,
    pub forest: ForestConfig,

    pub dispatch: DispatchParams,
    pub modes: Vec<Mode>,
    pub refit_hours: usize,
    pub refit_window: RefitWindow,
    pub commit_load: CommitLoad,
    pub perfect_foresight: bool,

    /// 0 = all cores, 1 = sequential.
    pub jobs: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 1,
            data: None,
            days: 7,
            load_peak: Capacities::default().load_peak,
            split: SplitSpec::default(),
            schedule: ScheduleSpec::default(),
            shape: DenoiserShape::default(),
            train: TrainConfig::default(),
            reverse_rule: ReverseRule::Posterior,
            generated_windows: 24,
            features: FeatureSpec::default(),
            forest: ForestConfig::default(),
            dispatch: DispatchParams::default(),
            modes: Mode::ALL.to_vec(),
            refit_hours: 8,
            refit_window: RefitWindow::All,
            commit_load: CommitLoad::Forecast,
            perfect_foresight: false,
            jobs: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("{key}: cannot parse {v:?}: {e}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("{key}: expected true or false, got {v:?}"),
    }
}

pub fn parse_modes(v: &str) -> Result<Vec<Mode>> {
    if v == "all" {
        return Ok(Mode::ALL.to_vec());
    }
    v.split(',')
        .map(|m| m.trim().parse::<Mode>().map_err(|e| anyhow!(e)))
        .collect()
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            cfg.set(k.trim(), v.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn set(&mut self, k: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let d = &mut self.dispatch;
        match k {
            "seed" => self.seed = parse(k, v)?,
            "data" => self.data = Some(PathBuf::from(v)),
            "days" => self.days = parse(k, v)?,
            "load_peak" => self.load_peak = parse(k, v)?,
            "train_hours" => self.split.train_len = parse(k, v)?,
            "test_hours" => self.split.test_len = parse(k, v)?,

            "diffusion_steps" => self.schedule.steps = parse(k, v)?,
            "beta_min" => self.schedule.beta_min = parse(k, v)?,
            "beta_max" => self.schedule.beta_max = parse(k, v)?,
            "window" => self.shape.window = parse(k, v)?,
            "hidden" => self.shape.hidden = parse(k, v)?,
            "blocks" => self.shape.blocks = parse(k, v)?,
            "epochs" => t.epochs = parse(k, v)?,
            "draws" => t.draws = parse(k, v)?,
            "batch_size" => t.batch_size = parse(k, v)?,
            "accumulation" => t.accumulation = parse(k, v)?,
            "learning_rate" => t.lr = parse(k, v)?,
            "lambda" => t.lambda = parse(k, v)?,
            "lambda1" => t.lambda1 = parse(k, v)?,
            "lambda2" => t.lambda2 = parse(k, v)?,
            "clip_norm" => {
                let c: f64 = parse(k, v)?;
                t.clip_norm = (c > 0.0).then_some(c);
            }
            "precondition" => t.precondition = parse_bool(k, v)?,
            "plateau_threshold" => t.plateau.threshold = parse(k, v)?,
            "plateau_patience" => t.plateau.patience = parse(k, v)?,
            "plateau_factor" => t.plateau.factor = parse(k, v)?,
            "min_learning_rate" => t.plateau.min_lr = parse(k, v)?,
            "reverse_rule" => {
                self.reverse_rule = match v {
                    "posterior" => ReverseRule::Posterior,
                    "printed" => ReverseRule::Printed,
                    _ => bail!("reverse_rule: expected posterior or printed"),
                }
            }
            "generated_windows" => self.generated_windows = parse(k, v)?,

            "lags" => self.features.lags = parse(k, v)?,
            "hour_of_day" => self.features.hour_of_day = parse_bool(k, v)?,
            "trees" => self.forest.trees = parse(k, v)?,
            "features_per_node" => {
                let n: usize = parse(k, v)?;
                self.forest.k = (n > 0).then_some(n);
            }
            "min_split_samples" => self.forest.n_min = parse(k, v)?,

            "horizon" => d.horizon = parse(k, v)?,
            "c_grid" => d.c_grid = parse(k, v)?,
            "c_pv" => d.c_pv = parse(k, v)?,
            "c_wind" => d.c_wind = parse(k, v)?,
            "c_bat" => d.c_bat = parse(k, v)?,
            "eta_cha" => d.eta_cha = parse(k, v)?,
            "eta_dis" => d.eta_dis = parse(k, v)?,
            "e_max" => d.e_max = parse(k, v)?,
            "p_bat_max" => d.p_bat_max = parse(k, v)?,
            "soc0" => d.soc0 = parse(k, v)?,
            "pv_capacity" => d.pv_capacity = parse(k, v)?,
            "wind_capacity" => d.wind_capacity = parse(k, v)?,
            "slack_penalty" => d.slack_penalty = parse(k, v)?,
            "mode" => self.modes = parse_modes(v)?,
            "refit_hours" => self.refit_hours = parse(k, v)?,
            "refit_window" => {
                self.refit_window = if v == "all" {
                    RefitWindow::All
                } else {
                    RefitWindow::Sliding(parse(k, v)?)
                }
            }
            "commit_load" => {
                self.commit_load = match v {
                    "forecast" => CommitLoad::Forecast,
                    "realized" => CommitLoad::Realized,
                    _ => bail!("commit_load: expected forecast or realized"),
                }
            }
            "perfect_foresight" => self.perfect_foresight = parse_bool(k, v)?,
            "jobs" => self.jobs = parse(k, v)?,
            _ => bail!("unknown key {k:?}"),
        }
        Ok(())
    }

    pub fn capacities(&self) -> Capacities {
        Capacities {
            pv: self.dispatch.pv_capacity,
            wind: self.dispatch.wind_capacity,
            load_peak: self.load_peak,
        }
    }

    pub fn mpc(&self, mode: Mode) -> MpcConfig {
        MpcConfig {
            mode,
            refit_every: self.refit_hours,
            refit_window: self.refit_window,
            commit_load: self.commit_load,
        }
    }

    /// Training settings with the stage seed filled in.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_overrides() {
        let c = Config::parse(
            "# reference run\nseed = 9\nmode = benchmark, mpc\nrefit_window = 24\nclip_norm = 0\nhour_of_day = no # inline\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.modes, vec![Mode::Benchmark, Mode::MpcFixed]);
        assert_eq!(c.refit_window, RefitWindow::Sliding(24));
        assert_eq!(c.train.clip_norm, None);
        assert!(!c.features.hour_of_day);
        assert_eq!(c.dispatch, DispatchParams::default());
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let e = Config::parse("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(format!("{e:#}").contains("line 2"));
        assert!(Config::parse("seed 1").is_err());
        assert!(Config::parse("horizon = eight").is_err());
        assert!(Config::parse("mode = fast").is_err());
    }
}
