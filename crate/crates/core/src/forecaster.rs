//! Extremely randomized trees for hourly load forecasting, and the
//! original / replicated / augmented training protocol.
//!
//! Tree growth: at each node draw `K` of the non-constant features, one
//! uniform cut in `(lo, hi)` of each drawn feature's range (`hi` itself when
//! no float lies strictly between), and keep the cut with the largest
//! relative variance reduction. Nodes with fewer than
//! `n_min` samples or a constant target become leaves holding the mean.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::ForecastSource;
use crate::exec::{self, Execution};
use crate::tscore::{self, Dataset, MinMax, SplitSpec, TimeSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForecastError {
    #[error("series of length {len} is too short for {lags} lags")]
    TooShort { len: usize, lags: usize },
    #[error("invalid forest config: {0}")]
    InvalidConfig(String),
    #[error("cannot fit: {0}")]
    Fit(String),
    #[error("feature row has {got} values, forest expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("augmentation provenance violation: {0}")]
    Provenance(String),
    #[error("forest file: {0}")]
    Format(String),
    #[error(transparent)]
    Series(#[from] tscore::TsError),
}

type Result<T> = std::result::Result<T, ForecastError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub lags: usize,
    pub hour_of_day: bool,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            lags: 24,
            hour_of_day: true,
        }
    }
}

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        self.lags + usize::from(self.hour_of_day)
    }

    pub fn row(&self, lags: &[f64], hour: usize) -> Vec<f64> {
        let mut r = lags.to_vec();
        if self.hour_of_day {
            r.push((hour % 24) as f64);
        }
        r
    }
}

/// Lagged rows of `values`, where `hours[i]` is the hour of day of `values[i]`.
pub fn featurize_with_hours(values: &[f64], hours: &[usize], spec: FeatureSpec) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if spec.lags == 0 {
        return Err(ForecastError::InvalidConfig("at least one lag required".into()));
    }
    if values.len() <= spec.lags {
        return Err(ForecastError::TooShort {
            len: values.len(),
            lags: spec.lags,
        });
    }
    let rows = (spec.lags..values.len())
        .map(|i| spec.row(&values[i - spec.lags..i], hours[i]))
        .collect();
    Ok((rows, values[spec.lags..].to_vec()))
}

/// Row `i` is `[load(i-L) .. load(i-1), hour_of_day(i)]` with target `load(i)`.
pub fn featurize(load: &TimeSeries, spec: FeatureSpec) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let hours: Vec<usize> = (0..load.len()).map(|i| (load.start_hour() + i) % 24).collect();
    featurize_with_hours(load.values(), &hours, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub trees: usize,
    /// Features drawn per node; `None` means `ceil(sqrt(d))`.
    pub k: Option<usize>,
    pub n_min: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            k: None,
            n_min: 2,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn features_per_node(&self, dim: usize) -> usize {
        self.k.unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.trees == 0 {
            return Err(ForecastError::InvalidConfig("need at least one tree".into()));
        }
        if self.n_min < 2 {
            return Err(ForecastError::InvalidConfig("n_min must be at least 2".into()));
        }
        let k = self.features_per_node(dim);
        if k == 0 || k > dim {
            return Err(ForecastError::InvalidConfig(format!("K = {k} outside 1..={dim}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64, samples: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes in depth-first order; the root is node 0. Samples with
/// `x[feature] < threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }
}

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub version: u32,
    pub dim: usize,
    pub config: ForestConfig,
    pub trees: Vec<Tree>,
}

fn mean_var(y: &[f64], idx: &[usize]) -> (f64, f64) {
    let n = idx.len() as f64;
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n;
    let var = idx.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    k: usize,
    n_min: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn grow(&mut self, idx: Vec<usize>) -> usize {
        let at = self.nodes.len();
        let (mean, var) = mean_var(self.y, &idx);
        self.nodes.push(Node::Leaf {
            value: mean,
            samples: idx.len(),
        });
        if idx.len() < self.n_min || var <= 0.0 {
            return at;
        }
        let dim = self.x[0].len();
        let mut ranges: Vec<(usize, f64, f64)> = (0..dim)
            .filter_map(|f| {
                let (lo, hi) = idx
                    .iter()
                    .map(|&i| self.x[i][f])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                (lo < hi).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return at;
        }
        let draws = self.k.min(ranges.len());
        let mut best: Option<(f64, usize, f64)> = None;
        for d in 0..draws {
            let pick = self.rng.gen_range(d..ranges.len());
            ranges.swap(d, pick);
            let (f, lo, hi) = ranges[d];
            let mut cut = self.rng.gen_range(lo..hi);
            if cut <= lo {
                cut = hi;
            }
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][f] < cut);
            let (_, vl) = mean_var(self.y, &l);
            let (_, vr) = mean_var(self.y, &r);
            let n = idx.len() as f64;
            let score = (var - (l.len() as f64 * vl + r.len() as f64 * vr) / n) / var;
            if best.map_or(true, |(s, _, _)| score > s) {
                best = Some((score, f, cut));
            }
        }
        let (_, feature, threshold) = best.expect("at least one draw");
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] < threshold);
        let left = self.grow(l);
        let right = self.grow(r);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

fn grow_tree(x: &[Vec<f64>], y: &[f64], k: usize, n_min: usize, seed: u64) -> Tree {
    let mut g = Grower {
        x,
        y,
        k,
        n_min,
        rng: ChaCha8Rng::seed_from_u64(seed),
        nodes: Vec::new(),
    };
    g.grow((0..y.len()).collect());
    Tree { nodes: g.nodes }
}

/// Fit a forest; tree `m` is grown from seed `derive_seed(cfg.seed, m)`.
pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig, exec: Execution) -> Result<Forest> {
    if x.is_empty() || x.len() != y.len() {
        return Err(ForecastError::Fit(format!("{} rows for {} targets", x.len(), y.len())));
    }
    let dim = x[0].len();
    if dim == 0 || x.iter().any(|r| r.len() != dim) {
        return Err(ForecastError::Fit("ragged or empty feature rows".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(ForecastError::Fit("non-finite data".into()));
    }
    cfg.validate(dim)?;
    let k = cfg.features_per_node(dim);
    let trees = exec::map_indexed(exec, cfg.trees, |m| {
        grow_tree(x, y, k, cfg.n_min, exec::derive_seed(cfg.seed, m as u64))
    });
    Ok(Forest {
        version: FOREST_FORMAT_VERSION,
        dim,
        config: *cfg,
        trees,
    })
}

impl Forest {
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.dim {
            return Err(ForecastError::Dimension {
                expected: self.dim,
                got: row.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: Forest = serde_json::from_str(text).map_err(|e| ForecastError::Format(e.to_string()))?;
        if f.version != FOREST_FORMAT_VERSION {
            return Err(ForecastError::Format(format!("unsupported version {}", f.version)));
        }
        Ok(f)
    }
}

pub fn predict(f: &Forest, row: &[f64]) -> Result<f64> {
    f.predict(row)
}

/// Recursive one-step forecasting from a fixed history.
#[derive(Debug, Clone)]
pub struct RecursiveForecaster<'a> {
    pub forest: &'a Forest,
    pub spec: FeatureSpec,
    /// Realized load before the operated day.
    pub history: &'a [f64],
    /// Hour of day of the day's first hour.
    pub day_start_hour: usize,
}

impl RecursiveForecaster<'_> {
    /// Predict `n` hours following `known`, whose next value falls at
    /// hour-of-day `hour`.
    pub fn extend(&self, known: &[f64], hour: usize, n: usize) -> Vec<f64> {
        let l = self.spec.lags;
        let mut buf = known[known.len().saturating_sub(l)..].to_vec();
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let row = self.spec.row(&buf[buf.len() - l..], hour + j);
            let v = self.forest.predict(&row).expect("row built to the forest's dimension");
            out.push(v);
            buf.push(v);
        }
        out
    }
}

impl ForecastSource for RecursiveForecaster<'_> {
    fn forecast(&self, k: usize, n: usize, observed: &[f64]) -> Vec<f64> {
        let mut known = self.history.to_vec();
        known.extend_from_slice(&observed[..k]);
        self.extend(&known, self.day_start_hour + k, n)
    }
}

/// Generated windows plus the hour span of the data their generator saw.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    pub windows: Vec<Vec<f64>>,
    /// `[from, to)` in dataset hours.
    pub trained_on: (usize, usize),
}

impl Augmentation {
    pub fn none(train_len: usize) -> Self {
        Self {
            windows: Vec::new(),
            trained_on: (0, train_len),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    #[serde(rename = "original")]
    Original,
    #[serde(rename = "replicated")]
    Replicated,
    #[serde(rename = "augmented")]
    Augmented,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::Replicated => "replicated",
            Variant::Augmented => "augmented",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolRow {
    pub variant: Variant,
    /// Errors on the min-max scale of the training split.
    pub mae: f64,
    pub rmse: f64,
    pub train_size: usize,
    /// Test-split predictions in kW.
    pub predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolReport {
    pub rows: Vec<ProtocolRow>,
    pub truth: Vec<f64>,
}

impl ProtocolReport {
    pub fn row(&self, v: Variant) -> &ProtocolRow {
        self.rows.iter().find(|r| r.variant == v).expect("all variants present")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,mae,rmse,train_size\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.9},{:.9},{}", r.variant.as_str(), r.mae, r.rmse, r.train_size);
        }
        s
    }

    pub fn predictions_csv(&self, first_hour: usize) -> String {
        let mut s = String::from("hour,actual,original,replicated,augmented\n");
        for (i, t) in self.truth.iter().enumerate() {
            let _ = write!(s, "{},{:.6}", first_hour + i, t);
            for r in &self.rows {
                let _ = write!(s, ",{:.6}", r.predictions[i]);
            }
            s.push('\n');
        }
        s
    }
}

/// The augmented training set: the training series followed by the
/// generated day windows (each starting at midnight).
pub fn augmented_rows(
    train: &[f64],
    train_start_hour: usize,
    windows: &[Vec<f64>],
    spec: FeatureSpec,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut values = train.to_vec();
    let mut hours: Vec<usize> = (0..train.len()).map(|i| (train_start_hour + i) % 24).collect();
    for w in windows {
        values.extend_from_slice(w);
        hours.extend((0..w.len()).map(|i| i % 24));
    }
    featurize_with_hours(&values, &hours, spec)
}

/// Train one forest per variant and score one-step forecasts on the test
/// split (lags taken from the realized series).
pub fn run_protocol(
    ds: &Dataset,
    split: SplitSpec,
    aug: &Augmentation,
    cfg: &ForestConfig,
    spec: FeatureSpec,
    exec: Execution,
) -> Result<ProtocolReport> {
    let (train, _) = tscore::split(ds, split)?;
    let (from, to) = aug.trained_on;
    if from > to || to > split.train_len {
        return Err(ForecastError::Provenance(format!(
            "generator saw hours {from}..{to}, training split ends at {}",
            split.train_len
        )));
    }
    let train_vals = train.load.values();
    let (x0, y0) = featurize(&train.load, spec)?;
    let (xa, ya) = augmented_rows(train_vals, train.start_hour(), &aug.windows, spec)?;
    let n = xa.len();
    let xr: Vec<Vec<f64>> = x0.iter().cycle().take(n).cloned().collect();
    let yr: Vec<f64> = y0.iter().copied().cycle().take(n).collect();

    let (xall, yall) = featurize(&ds.load, spec)?;
    let first = split.train_len - spec.lags;
    let (xt, truth) = (&xall[first..], &yall[first..]);
    let scale = MinMax::fit(train_vals);
    let norm = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| scale.forward(*x)).collect() };

    let mut rows = Vec::new();
    for (variant, x, y) in [
        (Variant::Original, &x0, &y0),
        (Variant::Replicated, &xr, &yr),
        (Variant::Augmented, &xa, &ya),
    ] {
        let forest = fit(x, y, cfg, exec)?;
        let predictions: Vec<f64> = xt.iter().map(|r| forest.predict(r)).collect::<Result<_>>()?;
        let (p, t) = (norm(&predictions), norm(truth));
        rows.push(ProtocolRow {
            variant,
            mae: tscore::mae(&p, &t)?,
            rmse: tscore::rmse(&p, &t)?,
            train_size: y.len(),
            predictions,
        });
    }
    Ok(ProtocolReport {
        rows,
        truth: truth.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn featurize_examples() {
        let s = TimeSeries::new(vec![1.0, 2.0, 3.0, 4.0], 0).unwrap();
        let spec = FeatureSpec { lags: 2, hour_of_day: false };
        let (x, y) = featurize(&s, spec).unwrap();
        assert_eq!(x, vec![vec![1.0, 2.0], vec![2.0, 3.0]]);
        assert_eq!(y, vec![3.0, 4.0]);
        let s = TimeSeries::new(vec![5.0; 3], 22).unwrap();
        let (x, y) = featurize(&s, FeatureSpec { lags: 2, hour_of_day: true }).unwrap();
        assert_eq!(x, vec![vec![5.0, 5.0, 0.0]]);
        assert_eq!(y, vec![5.0]);
        assert!(featurize(&s, FeatureSpec { lags: 3, hour_of_day: true }).is_err());
    }

    #[test]
    fn constant_target_predicts_constant() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i * 7 % 5) as f64]).collect();
        let y = vec![3.5; 20];
        let f = fit(&x, &y, &ForestConfig { trees: 5, ..Default::default() }, Execution::Sequential).unwrap();
        assert_eq!(f.predict(&[100.0, -3.0]).unwrap(), 3.5);
        assert!(f.predict(&[1.0]).is_err());
    }

    #[test]
    fn one_ulp_range_splits_at_upper_end() {
        let lo: f64 = 0.3;
        let hi = f64::from_bits(lo.to_bits() + 1);
        let x = vec![vec![lo], vec![hi], vec![lo], vec![hi]];
        let y = vec![1.0, 2.0, 1.0, 2.0];
        let f = fit(&x, &y, &ForestConfig { trees: 3, ..Default::default() }, Execution::Sequential).unwrap();
        assert_eq!(f.predict(&[lo]).unwrap(), 1.0);
        assert_eq!(f.predict(&[hi]).unwrap(), 2.0);
    }

    #[test]
    fn thresholds_lie_strictly_inside_node_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.gen(), rng.gen_range(0..4) as f64, rng.gen()]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 3.0 + r[1]).collect();
        let f = fit(&x, &y, &ForestConfig { trees: 8, seed: 4, ..Default::default() }, Execution::Sequential).unwrap();
        fn walk(t: &Tree, node: usize, idx: Vec<usize>, x: &[Vec<f64>]) {
            match &t.nodes[node] {
                Node::Leaf { samples, .. } => assert_eq!(*samples, idx.len()),
                Node::Split { feature, threshold, left, right } => {
                    let vals: Vec<f64> = idx.iter().map(|&i| x[i][*feature]).collect();
                    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    assert!(lo < *threshold && *threshold < hi);
                    let (l, r) = idx.iter().partition(|&&i| x[i][*feature] < *threshold);
                    walk(t, *left, l, x);
                    walk(t, *right, r, x);
                }
            }
        }
        for t in &f.trees {
            walk(t, 0, (0..x.len()).collect(), &x);
        }
    }

    #[test]
    fn micro_instance_matches_hand_trace() {
        // One feature, K = 1, n_min = 2: each node draws the feature slot
        // (gen_range(0..1)) then a cut in [lo, hi), depth first, left first.
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![10.0, 20.0, 40.0, 80.0];
        let cfg = ForestConfig { trees: 1, k: Some(1), n_min: 2, seed: 21 };
        let f = fit(&x, &y, &cfg, Execution::Sequential).unwrap();

        let rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(21, 0));
        fn trace(idx: &[usize], x: &[f64], y: &[f64], rng: &mut ChaCha8Rng, query: f64) -> f64 {
            let lo = idx.iter().map(|&i| x[i]).fold(f64::INFINITY, f64::min);
            let hi = idx.iter().map(|&i| x[i]).fold(f64::NEG_INFINITY, f64::max);
            if idx.len() < 2 || lo == hi {
                return idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
            }
            let _slot: usize = rng.gen_range(0..1);
            let mut cut = rng.gen_range(lo..hi);
            if cut <= lo {
                cut = hi;
            }
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i] < cut);
            // Grow both children so the RNG advances as in the real build.
            let vl = trace(&l, x, y, rng, query);
            let vr = trace(&r, x, y, rng, query);
            if query < cut {
                vl
            } else {
                vr
            }
        }
        let xs = [0.0, 1.0, 2.0, 3.0];
        for q in [0.0, 0.5, 1.5, 2.5, 3.0] {
            let mut r = rng.clone();
            let want = trace(&[0, 1, 2, 3], &xs, &y, &mut r, q);
            assert_eq!(f.predict(&[q]).unwrap(), want, "query {q}");
        }
        // Distinct feature values with n_min = 2 isolate every sample.
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(f.predict(xi).unwrap(), *yi);
        }
    }

    #[test]
    fn fit_is_deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..80).map(|_| (0..4).map(|_| rng.gen()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r.iter().sum::<f64>() + rng.gen::<f64>()).collect();
        let cfg = ForestConfig { trees: 20, seed: 7, ..Default::default() };
        let a = fit(&x, &y, &cfg, Execution::Sequential).unwrap();
        let b = fit(&x, &y, &cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let (lo, hi) = (y.iter().copied().fold(f64::INFINITY, f64::min), y.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        for _ in 0..50 {
            let q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let p = a.predict(&q).unwrap();
            assert!(lo <= p && p <= hi);
        }
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let mae_forest: f64 = x.iter().zip(&y).map(|(r, t)| (a.predict(r).unwrap() - t).abs()).sum();
        let mae_mean: f64 = y.iter().map(|t| (mean - t).abs()).sum();
        assert!(mae_forest <= mae_mean);
        assert_eq!(Forest::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn rejects_bad_configs() {
        let x = vec![vec![1.0], vec![2.0]];
        let y = vec![1.0, 2.0];
        for cfg in [
            ForestConfig { trees: 0, ..Default::default() },
            ForestConfig { n_min: 1, ..Default::default() },
            ForestConfig { k: Some(2), ..Default::default() },
        ] {
            assert!(fit(&x, &y, &cfg, Execution::Sequential).is_err());
        }
        assert!(fit(&[], &[], &ForestConfig::default(), Execution::Sequential).is_err());
    }

    #[test]
    fn protocol_without_augmentation() {
        let ds = tscore::gen_synthetic(3, 7, tscore::Capacities::default()).unwrap();
        let split = SplitSpec::default();
        let cfg = ForestConfig { trees: 10, seed: 1, ..Default::default() };
        let r = run_protocol(&ds, split, &Augmentation::none(144), &cfg, FeatureSpec::default(), Execution::default()).unwrap();
        let (o, a) = (r.row(Variant::Original), r.row(Variant::Augmented));
        assert_eq!(o.mae, a.mae);
        assert_eq!(o.train_size, r.row(Variant::Replicated).train_size);
        assert!(r.rows.iter().all(|row| row.rmse >= row.mae));
        let leak = Augmentation { windows: vec![], trained_on: (0, 150) };
        assert!(matches!(
            run_protocol(&ds, split, &leak, &cfg, FeatureSpec::default(), Execution::default()),
            Err(ForecastError::Provenance(_))
        ));
    }

    #[test]
    fn recursive_forecast_uses_observed_hours() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 24) as f64]).collect();
        let y: Vec<f64> = (0..30).map(|i| i as f64 + 1.0).collect();
        let spec = FeatureSpec { lags: 1, hour_of_day: true };
        let f = fit(&x, &y, &ForestConfig { trees: 3, ..Default::default() }, Execution::Sequential).unwrap();
        let hist = [5.0];
        let rf = RecursiveForecaster { forest: &f, spec, history: &hist, day_start_hour: 0 };
        let a = rf.forecast(0, 3, &[]);
        assert_eq!(a.len(), 3);
        let b = rf.forecast(1, 2, &[9.0]);
        assert_eq!(b[0], f.predict(&[9.0, 1.0]).unwrap());
    }
}
