//! Hourly time series, the load/renewable dataset, chronological splitting,
//! error metrics, and a synthetic week generator.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TsError {
    #[error("time series must contain at least one value")]
    Empty,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("negative value {value} at index {index} in {series}")]
    Negative {
        series: &'static str,
        index: usize,
        value: f64,
    },
    #[error("series lengths differ: load {load}, pv {pv}, wind {wind}")]
    LengthMismatch { load: usize, pv: usize, wind: usize },
    #[error("{series} value {value} at index {index} exceeds capacity {cap}")]
    OverCapacity {
        series: &'static str,
        index: usize,
        value: f64,
        cap: f64,
    },
    #[error("invalid split: train {train} + test {test} for a dataset of {len} hours")]
    InvalidSplit { train: usize, test: usize, len: usize },
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("metric inputs: {0}")]
    Metric(String),
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Hourly real-valued series (kW).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    start_hour: usize,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, start_hour: usize) -> Result<Self, TsError> {
        if values.is_empty() {
            return Err(TsError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TsError::NonFinite(i));
        }
        Ok(Self { values, start_hour })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn start_hour(&self) -> usize {
        self.start_hour
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn slice(&self, from: usize, to: usize) -> Self {
        Self {
            values: self.values[from..to].to_vec(),
            start_hour: self.start_hour + from,
        }
    }
}

/// Load demand plus PV and wind availability caps over the same hours.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub load: TimeSeries,
    pub pv_max: TimeSeries,
    pub wind_max: TimeSeries,
}

impl Dataset {
    pub fn new(load: TimeSeries, pv_max: TimeSeries, wind_max: TimeSeries) -> Result<Self, TsError> {
        if load.len() != pv_max.len() || load.len() != wind_max.len() {
            return Err(TsError::LengthMismatch {
                load: load.len(),
                pv: pv_max.len(),
                wind: wind_max.len(),
            });
        }
        for (name, s) in [("load", &load), ("pv_max", &pv_max), ("wind_max", &wind_max)] {
            if let Some((index, &value)) = s.values.iter().enumerate().find(|(_, v)| **v < 0.0) {
                return Err(TsError::Negative {
                    series: name,
                    index,
                    value,
                });
            }
        }
        Ok(Self {
            load,
            pv_max,
            wind_max,
        })
    }

    pub fn len(&self) -> usize {
        self.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty()
    }

    pub fn start_hour(&self) -> usize {
        self.load.start_hour
    }

    /// Check availability against installed capacities.
    pub fn check_capacities(&self, pv_cap: f64, wind_cap: f64) -> Result<(), TsError> {
        for (name, s, cap) in [("pv_max", &self.pv_max, pv_cap), ("wind_max", &self.wind_max, wind_cap)] {
            if let Some((index, &value)) = s.values.iter().enumerate().find(|(_, v)| **v > cap) {
                return Err(TsError::OverCapacity {
                    series: name,
                    index,
                    value,
                    cap,
                });
            }
        }
        Ok(())
    }

    /// Hours `[from, to)` relative to the start of this dataset.
    pub fn slice(&self, from: usize, to: usize) -> Dataset {
        Dataset {
            load: self.load.slice(from, to),
            pv_max: self.pv_max.slice(from, to),
            wind_max: self.wind_max.slice(from, to),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("hour,load_kw,pv_max_kw,wind_max_kw\n");
        for i in 0..self.len() {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                self.start_hour() + i,
                self.load.values[i],
                self.pv_max.values[i],
                self.wind_max.values[i]
            );
        }
        s
    }

    /// Parse the `hour,load_kw,pv_max_kw,wind_max_kw` format. Hours must
    /// start at 0 and increase by one per row.
    pub fn from_csv(text: &str) -> Result<Dataset, TsError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(TsError::Csv {
            line: 1,
            msg: "missing header".into(),
        })?;
        if header.trim() != "hour,load_kw,pv_max_kw,wind_max_kw" {
            return Err(TsError::Csv {
                line: 1,
                msg: format!("unexpected header {header:?}"),
            });
        }
        let (mut load, mut pv, mut wind) = (Vec::new(), Vec::new(), Vec::new());
        for (idx, line) in lines {
            let err = |msg: String| TsError::Csv { line: idx + 1, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", fields.len())));
            }
            let hour: usize = fields[0].parse().map_err(|e| err(format!("hour: {e}")))?;
            if hour != load.len() {
                return Err(err(format!("hour {hour} out of sequence, expected {}", load.len())));
            }
            let num = |k: usize| -> Result<f64, TsError> {
                fields[k].parse::<f64>().map_err(|e| err(format!("field {k}: {e}")))
            };
            load.push(num(1)?);
            pv.push(num(2)?);
            wind.push(num(3)?);
        }
        Dataset::new(
            TimeSeries::new(load, 0)?,
            TimeSeries::new(pv, 0)?,
            TimeSeries::new(wind, 0)?,
        )
    }
}

/// Chronological train/test lengths in hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_len: usize,
    pub test_len: usize,
}

impl Default for SplitSpec {
    /// Six training days and a final 24 h test day.
    fn default() -> Self {
        Self {
            train_len: 144,
            test_len: 24,
        }
    }
}

/// Train = prefix, test = suffix.
pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset), TsError> {
    let len = ds.len();
    if spec.train_len == 0 || spec.test_len == 0 || spec.train_len + spec.test_len != len {
        return Err(TsError::InvalidSplit {
            train: spec.train_len,
            test: spec.test_len,
            len,
        });
    }
    Ok((ds.slice(0, spec.train_len), ds.slice(spec.train_len, len)))
}

/// Installed capacities and load scale for the synthetic generator (kW).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capacities {
    pub pv: f64,
    pub wind: f64,
    pub load_peak: f64,
}

impl Default for Capacities {
    fn default() -> Self {
        Self {
            pv: 600.0,
            wind: 500.0,
            load_peak: 400.0,
        }
    }
}

/// Normalized solar elevation proxy for an hour of day: positive between
/// 06:00 and 18:00, non-positive otherwise.
pub fn sun_elevation(hour_of_day: usize) -> f64 {
    (PI * (hour_of_day as f64 - 6.0) / 12.0).sin()
}

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    // circular distance on the 24 h clock
    let d = (hour - center).rem_euclid(24.0);
    let d = d.min(24.0 - d);
    (-(d * d) / (2.0 * width * width)).exp()
}

/// Deterministic synthetic dataset of `days` x 24 hourly samples.
///
/// * load: double-peak daily profile (09:00 and 19:00), weekend dip,
///   bounded uniform noise;
/// * pv_max: clear-sky bell between 06:00 and 18:00 times a daily cloud
///   factor, zero at night;
/// * wind_max: mean-reverting random walk clipped to `[0, wind]`.
pub fn gen_synthetic(seed: u64, days: usize, caps: Capacities) -> Result<Dataset, TsError> {
    if days == 0 {
        return Err(TsError::InvalidConfig("days must be at least 1".into()));
    }
    if !(caps.pv > 0.0 && caps.wind > 0.0 && caps.load_peak > 0.0) {
        return Err(TsError::InvalidConfig(format!(
            "capacities must be positive, got {caps:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = days * 24;
    let mut load = Vec::with_capacity(n);
    let mut pv = Vec::with_capacity(n);
    let mut wind = Vec::with_capacity(n);

    let wind_mean = 0.45 * caps.wind;
    let step = Normal::new(0.0, 0.08 * caps.wind).expect("positive std");
    let mut w = wind_mean + rng.gen_range(-0.2..0.2) * caps.wind;
    let mut cloud = 1.0;
    for h in 0..n {
        let hod = h % 24;
        let day = h / 24;
        if hod == 0 {
            cloud = rng.gen_range(0.55..1.0);
        }
        let weekly = if day % 7 >= 5 { 0.85 } else { 1.0 };
        let shape = 0.45 + 0.3 * bump(hod as f64, 9.0, 2.0) + 0.4 * bump(hod as f64, 19.0, 2.5);
        let noise = rng.gen_range(-0.04..0.04);
        load.push((caps.load_peak * (shape * weekly / 1.15 + noise)).max(0.0));

        let elev = sun_elevation(hod);
        let jitter = rng.gen_range(0.9..1.0);
        pv.push(if elev > 0.0 {
            (caps.pv * elev * cloud * jitter).min(caps.pv)
        } else {
            0.0
        });

        wind.push(w);
        w = (w + 0.15 * (wind_mean - w) + step.sample(&mut rng)).clamp(0.0, caps.wind);
    }
    Dataset::new(
        TimeSeries::new(load, 0)?,
        TimeSeries::new(pv, 0)?,
        TimeSeries::new(wind, 0)?,
    )
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<(), TsError> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(TsError::Metric(format!(
            "lengths {} and {} must be equal and non-zero",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, TsError> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, TsError> {
    check_pair(pred, truth)?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Per-series min-max scaling to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { min, max }
    }

    fn span(&self) -> f64 {
        let s = self.max - self.min;
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.min) / self.span()
    }

    pub fn inverse(&self, v: f64) -> f64 {
        self.min + v * self.span()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn week() -> Dataset {
        gen_synthetic(1, 7, Capacities::default()).unwrap()
    }

    #[test]
    fn split_week_into_six_days_and_one() {
        let ds = week();
        let (train, test) = split(&ds, SplitSpec::default()).unwrap();
        assert_eq!(train.len(), 144);
        assert_eq!(test.len(), 24);
        assert_eq!(train.start_hour(), 0);
        assert_eq!(test.start_hour(), 144);
        assert_eq!(test.load.values()[0], ds.load.values()[144]);
    }

    #[test]
    fn split_rejects_empty_train() {
        let ds = week();
        let e = split(&ds, SplitSpec { train_len: 0, test_len: 168 });
        assert!(matches!(e, Err(TsError::InvalidSplit { .. })));
        let e = split(&ds, SplitSpec { train_len: 100, test_len: 24 });
        assert!(matches!(e, Err(TsError::InvalidSplit { .. })));
    }

    #[test]
    fn split_single_test_sample() {
        let (_, test) = split(&week(), SplitSpec { train_len: 167, test_len: 1 }).unwrap();
        assert_eq!(test.len(), 1);
    }

    #[test]
    fn synthetic_week_shape() {
        let caps = Capacities::default();
        let ds = week();
        assert_eq!(ds.len(), 168);
        ds.check_capacities(caps.pv, caps.wind).unwrap();
        for (h, &v) in ds.pv_max.values().iter().enumerate() {
            if sun_elevation(h % 24) <= 0.0 {
                assert_eq!(v, 0.0, "hour {h}");
            }
        }
        assert!(ds.load.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn synthetic_is_seeded() {
        let caps = Capacities::default();
        assert_eq!(gen_synthetic(1, 7, caps).unwrap(), gen_synthetic(1, 7, caps).unwrap());
        assert_ne!(gen_synthetic(1, 7, caps).unwrap(), gen_synthetic(2, 7, caps).unwrap());
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        let caps = Capacities { pv: 0.0, ..Default::default() };
        assert!(matches!(gen_synthetic(1, 7, caps), Err(TsError::InvalidConfig(_))));
        assert!(gen_synthetic(1, 0, Capacities::default()).is_err());
    }

    #[test]
    fn metric_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mae(&[0.0, 3.0], &[1.0, 1.0]).unwrap(), 1.5);
        assert!((rmse(&[0.0, 3.0], &[1.0, 1.0]).unwrap() - 2.5_f64.sqrt()).abs() < 1e-15);
        assert!(mae(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let ds = week();
        assert_eq!(Dataset::from_csv(&ds.to_csv()).unwrap(), ds);
        let bad = "hour,load_kw,pv_max_kw,wind_max_kw\n0,1,2,3\n2,1,2,3\n";
        assert!(matches!(Dataset::from_csv(bad), Err(TsError::Csv { line: 3, .. })));
        assert!(Dataset::from_csv("h,l\n").is_err());
    }

    #[test]
    fn rejects_non_finite_and_negative() {
        assert!(matches!(TimeSeries::new(vec![1.0, f64::NAN], 0), Err(TsError::NonFinite(1))));
        assert!(matches!(TimeSeries::new(vec![], 0), Err(TsError::Empty)));
        let s = |v: Vec<f64>| TimeSeries::new(v, 0).unwrap();
        assert!(Dataset::new(s(vec![1.0]), s(vec![-1.0]), s(vec![0.0])).is_err());
        assert!(Dataset::new(s(vec![1.0]), s(vec![1.0, 2.0]), s(vec![0.0])).is_err());
    }

    proptest::proptest! {
        #[test]
        fn rmse_dominates_mae(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50)) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = mae(&p, &t).unwrap();
            let r = rmse(&p, &t).unwrap();
            proptest::prop_assert!(r >= a - 1e-9 * (1.0 + a));
        }

        #[test]
        fn split_round_trips(seed in 0u64..500, train in 1usize..168) {
            let ds = gen_synthetic(seed, 7, Capacities::default()).unwrap();
            let (a, b) = split(&ds, SplitSpec { train_len: train, test_len: 168 - train }).unwrap();
            let mut load = a.load.values().to_vec();
            load.extend_from_slice(b.load.values());
            proptest::prop_assert_eq!(&load[..], ds.load.values());
            let mut pv = a.pv_max.values().to_vec();
            pv.extend_from_slice(b.pv_max.values());
            proptest::prop_assert_eq!(&pv[..], ds.pv_max.values());
        }
    }
}
