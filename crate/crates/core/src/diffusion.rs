//! Denoising diffusion for load-window augmentation.
//!
//! A linear `beta` schedule drives the forward corruption
//! `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`. A compact denoiser
//! predicts `x0` from `(x_t, t)`; sampling walks the Gaussian posterior
//! `q(x_{t-1} | x_t, x0_hat)` from pure noise down to `t = 1`.
//!
//! The denoiser works per position with a shared feature width `H`:
//!
//! ```text
//! h0[i] = w_x x[i] + b_in + pe[i] + W_t se(t)
//! block: a[i] = W1 h[i] + U mean(h) + b1
//!        h[i] <- h[i] + W2 silu(a[i]) + b2
//! out[i] = w_out . h[i] + b_out
//! ```
//!
//! `pe` and `se` are sinusoidal position and step embeddings; the mean-pool
//! term lets every position see the whole window. Kernel size 1 throughout.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::tscore::MinMax;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("diffusion step {t} outside 1..={steps}")]
    Step { t: usize, steps: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTraining,
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("checkpoint line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },
}

type Result<T> = std::result::Result<T, DiffusionError>;

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(DiffusionError::Shape { expected, got })
    }
}

/// Noise levels `beta_t` for `t = 1..=T` with `alpha_t = 1 - beta_t` and
/// `abar_t = prod_{s <= t} alpha_s`. Vectors are indexed from 0 (= step 1).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(DiffusionError::InvalidSchedule("no steps".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(DiffusionError::InvalidSchedule(format!("beta {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self { beta, alpha, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if (1..=self.steps()).contains(&t) {
            Ok(())
        } else {
            Err(DiffusionError::Step { t, steps: self.steps() })
        }
    }

    pub fn beta_at(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_at(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `abar_t`, with `abar_0 = 1`.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// `(c1, c2, sigma)` of the posterior mean `c1 x0 + c2 x_t` and its
    /// standard deviation.
    pub fn posterior(&self, t: usize) -> (f64, f64, f64) {
        if t == 1 {
            // abar_0 = 1: the mean is x0 itself and there is no noise.
            return (1.0, 0.0, 0.0);
        }
        let (b, a) = (self.beta_at(t), self.alpha_at(t));
        let (ab, ab_prev) = (self.alpha_bar_at(t), self.alpha_bar_at(t - 1));
        let c1 = ab_prev.sqrt() * b / (1.0 - ab);
        let c2 = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        let var = b * (1.0 - ab_prev) / (1.0 - ab);
        (c1, c2, var.sqrt())
    }

    /// Loss weight `lambda alpha_t (1 - abar_t) / beta_t^2`.
    pub fn loss_weight(&self, t: usize, lambda: f64) -> f64 {
        let b = self.beta_at(t);
        lambda * self.alpha_at(t) * (1.0 - self.alpha_bar_at(t)) / (b * b)
    }
}

/// Linear schedule from `beta_min` to `beta_max` over `steps` steps.
pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(DiffusionError::InvalidSchedule("at least one step required".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(DiffusionError::InvalidSchedule(format!(
            "need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}"
        )));
    }
    let beta = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    DiffusionSchedule::from_betas(beta)
}

pub fn forward_sample(x0: &[f64], t: usize, noise: &[f64], s: &DiffusionSchedule) -> Result<Vec<f64>> {
    check_len(x0.len(), noise.len())?;
    s.check_step(t)?;
    let ab = s.alpha_bar_at(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
}

/// Reverse update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReverseRule {
    /// Mean and deviation of the exact Gaussian posterior.
    #[default]
    Posterior,
    /// `sqrt(abar_t)` on the `x0_hat` coefficient and the unrooted variance
    /// as the noise scale.
    Printed,
}

pub fn reverse_step(x_t: &[f64], t: usize, x0_hat: &[f64], z: &[f64], s: &DiffusionSchedule) -> Result<Vec<f64>> {
    reverse_step_with(ReverseRule::Posterior, x_t, t, x0_hat, z, s)
}

pub fn reverse_step_with(
    rule: ReverseRule,
    x_t: &[f64],
    t: usize,
    x0_hat: &[f64],
    z: &[f64],
    s: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    check_len(x_t.len(), x0_hat.len())?;
    check_len(x_t.len(), z.len())?;
    s.check_step(t)?;
    let (c1, c2, sigma) = match rule {
        ReverseRule::Posterior => s.posterior(t),
        ReverseRule::Printed => {
            let (b, a) = (s.beta_at(t), s.alpha_at(t));
            let (ab, ab_prev) = (s.alpha_bar_at(t), s.alpha_bar_at(t - 1));
            (
                ab.sqrt() * b / (1.0 - ab),
                a.sqrt() * (1.0 - ab_prev) / (1.0 - ab),
                (1.0 - ab_prev) / (1.0 - ab) * b,
            )
        }
    };
    Ok(x_t
        .iter()
        .zip(x0_hat)
        .zip(z)
        .map(|((xt, x0), z)| c1 * x0 + c2 * xt + sigma * z)
        .collect())
}

fn sq_err(x0: &[f64], x0_hat: &[f64]) -> Result<f64> {
    check_len(x0.len(), x0_hat.len())?;
    Ok(x0.iter().zip(x0_hat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// `w_t ||x0 - x0_hat||^2`.
pub fn loss_simple(x0: &[f64], x0_hat: &[f64], t: usize, s: &DiffusionSchedule, lambda: f64) -> Result<f64> {
    s.check_step(t)?;
    Ok(s.loss_weight(t, lambda) * sq_err(x0, x0_hat)?)
}

/// `w_t (l1 ||e||^2 + l2 ||DFT(x0) - DFT(x0_hat)||^2)` with the unnormalized
/// DFT, the norm running over real and imaginary parts.
pub fn loss_fourier(
    x0: &[f64],
    x0_hat: &[f64],
    t: usize,
    s: &DiffusionSchedule,
    lambda: f64,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    s.check_step(t)?;
    let time = sq_err(x0, x0_hat)?;
    if x0.is_empty() {
        return Err(DiffusionError::Shape { expected: 1, got: 0 });
    }
    let mut buf: Vec<Complex<f64>> = x0.iter().zip(x0_hat).map(|(a, b)| Complex::new(a - b, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    let freq: f64 = buf.iter().map(|c| c.norm_sqr()).sum();
    Ok(s.loss_weight(t, lambda) * (lambda1 * time + lambda2 * freq))
}

/// Window length, feature width and block count of a denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserShape {
    pub window: usize,
    pub hidden: usize,
    pub blocks: usize,
}

impl Default for DenoiserShape {
    fn default() -> Self {
        Self {
            window: 24,
            hidden: 64,
            blocks: 3,
        }
    }
}

impl DenoiserShape {
    pub fn num_params(&self) -> usize {
        let h = self.hidden;
        2 * h + h * h + self.blocks * (3 * h * h + 2 * h) + h + 1
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.hidden == 0 {
            return Err(DiffusionError::InvalidConfig("window and hidden width must be positive".into()));
        }
        Ok(())
    }

    // Offsets into the flat parameter vector.
    fn wx(&self) -> usize {
        0
    }
    fn b_in(&self) -> usize {
        self.hidden
    }
    fn wt(&self) -> usize {
        2 * self.hidden
    }
    fn block(&self, b: usize) -> BlockOffsets {
        let h = self.hidden;
        let base = 2 * h + h * h + b * (3 * h * h + 2 * h);
        BlockOffsets {
            w1: base,
            u: base + h * h,
            b1: base + 2 * h * h,
            w2: base + 2 * h * h + h,
            b2: base + 3 * h * h + h,
        }
    }
    fn w_out(&self) -> usize {
        self.num_params() - self.hidden - 1
    }
    fn b_out(&self) -> usize {
        self.num_params() - 1
    }
}

struct BlockOffsets {
    w1: usize,
    u: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Sinusoidal embedding of a scalar position into `h` features.
pub fn sinusoidal(pos: f64, h: usize) -> Vec<f64> {
    (0..h)
        .map(|j| {
            let freq = 1.0 / 10_000f64.powf((2 * (j / 2)) as f64 / h as f64);
            if j % 2 == 0 {
                (pos * freq).sin()
            } else {
                (pos * freq).cos()
            }
        })
        .collect()
}

fn matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let h = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += m[r * h..(r + 1) * h].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn matvec_t(m: &[f64], y: &[f64], out: &mut [f64]) {
    let h = out.len();
    for (r, yr) in y.iter().enumerate() {
        if *yr != 0.0 {
            for (o, a) in out.iter_mut().zip(&m[r * h..(r + 1) * h]) {
                *o += a * yr;
            }
        }
    }
}

fn outer_acc(g: &mut [f64], y: &[f64], x: &[f64]) {
    let h = x.len();
    for (r, yr) in y.iter().enumerate() {
        if *yr != 0.0 {
            for (gi, xc) in g[r * h..(r + 1) * h].iter_mut().zip(x) {
                *gi += yr * xc;
            }
        }
    }
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Trace {
    x: Vec<f64>,
    se: Vec<f64>,
    /// `h[b]` is the `window * hidden` activation entering block `b`;
    /// the last entry feeds the output layer.
    h: Vec<Vec<f64>>,
    mean: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Per-position output gain of the network branch at this step.
    gain: Vec<f64>,
}

/// Mean and covariance of the normalized training windows.
#[derive(Debug, Clone, PartialEq)]
pub struct DataStats {
    pub mean: Vec<f64>,
    /// Row-major `window x window`.
    pub cov: Vec<f64>,
}

/// Mean and (population) covariance of the window positions.
pub fn data_stats(windows: &[Vec<f64>]) -> DataStats {
    let n = windows.len() as f64;
    let w = windows.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..w).map(|i| windows.iter().map(|x| x[i]).sum::<f64>() / n).collect();
    let mut cov = vec![0.0; w * w];
    for x in windows {
        for i in 0..w {
            for j in 0..w {
                cov[i * w + j] += (x[i] - mean[i]) * (x[j] - mean[j]) / n;
            }
        }
    }
    DataStats { mean, cov }
}

/// Output map `shift + skip x_t + gain * net` at one diffusion step.
#[derive(Debug, Clone, PartialEq)]
struct Precond {
    shift: Vec<f64>,
    /// Row-major `window x window`.
    skip: Vec<f64>,
    gain: Vec<f64>,
}

/// A denoiser with parameters held in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub shape: DenoiserShape,
    pub theta: Vec<f64>,
    pe: Vec<f64>,
    /// Data statistics behind the output preconditioning, if enabled.
    pub stats: Option<DataStats>,
    /// Indexed by diffusion step; empty without preconditioning.
    precond: Vec<Precond>,
}

impl Denoiser {
    pub fn zeros(shape: DenoiserShape) -> Result<Self> {
        Self::from_params(shape, vec![0.0; shape.num_params()])
    }

    pub fn from_params(shape: DenoiserShape, theta: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        check_len(shape.num_params(), theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::InvalidConfig("non-finite parameter".into()));
        }
        let pe = (0..shape.window)
            .flat_map(|i| sinusoidal(i as f64, shape.hidden))
            .collect();
        Ok(Self {
            shape,
            theta,
            pe,
            stats: None,
            precond: Vec::new(),
        })
    }

    /// Write the output as the posterior mean of `x0` given `x_t` under
    /// `x0 ~ N(m, S)`, plus the network scaled by the posterior standard
    /// deviation of each position. With `S = V diag(l) V^T`:
    /// `E[x0 | x_t] = m + V diag(sqrt(ab) l / (ab l + 1 - ab)) V^T (x_t - sqrt(ab) m)`
    /// and `Cov[x0 | x_t] = V diag(l (1 - ab) / (ab l + 1 - ab)) V^T`.
    pub fn with_preconditioning(mut self, sched: &DiffusionSchedule, stats: DataStats) -> Self {
        let w = stats.mean.len();
        let eig = nalgebra::DMatrix::from_row_slice(w, w, &stats.cov).symmetric_eigen();
        let v = &eig.eigenvectors;
        let lam: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
        self.precond = (0..=sched.steps())
            .map(|t| {
                let ab = sched.alpha_bar_at(t);
                let (mut coef, mut post) = (vec![1.0; w], vec![0.0; w]);
                for k in 0..w {
                    let den = ab * lam[k] + 1.0 - ab;
                    if den > 0.0 {
                        coef[k] = ab.sqrt() * lam[k] / den;
                        post[k] = lam[k] * (1.0 - ab) / den;
                    }
                }
                let mut skip = vec![0.0; w * w];
                let mut gain = vec![0.0; w];
                for i in 0..w {
                    for j in 0..w {
                        skip[i * w + j] = (0..w).map(|k| v[(i, k)] * coef[k] * v[(j, k)]).sum();
                    }
                    gain[i] = (0..w).map(|k| v[(i, k)] * v[(i, k)] * post[k]).sum::<f64>().max(0.0).sqrt();
                }
                let shift = (0..w)
                    .map(|i| stats.mean[i] - ab.sqrt() * (0..w).map(|j| skip[i * w + j] * stats.mean[j]).sum::<f64>())
                    .collect();
                Precond { shift, skip, gain }
            })
            .collect();
        self.stats = Some(stats);
        self
    }

    /// Scaled uniform initialization; output layer starts small.
    pub fn init(shape: DenoiserShape, seed: u64) -> Result<Self> {
        let mut d = Self::zeros(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = shape.hidden;
        let lim = (1.0 / h as f64).sqrt();
        let mut fill = |from: usize, len: usize, scale: f64| {
            for v in &mut d.theta[from..from + len] {
                *v = rng.gen_range(-scale..scale);
            }
        };
        fill(shape.wx(), h, 1.0);
        fill(shape.wt(), h * h, lim);
        for b in 0..shape.blocks {
            let o = shape.block(b);
            fill(o.w1, h * h, lim);
            fill(o.u, h * h, lim);
            fill(o.w2, h * h, 0.5 * lim);
        }
        fill(shape.w_out(), h, lim);
        d.theta[shape.b_out()] = 0.5;
        Ok(d)
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn predict(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        check_len(self.shape.window, x_t.len())?;
        Ok(self.forward(x_t, t).0)
    }

    fn forward(&self, x: &[f64], t: usize) -> (Vec<f64>, Trace) {
        let DenoiserShape { window: w, hidden: h, blocks } = self.shape;
        let th = &self.theta;
        let sh = &self.shape;
        let se = sinusoidal(t as f64, h);
        let mut emb = vec![0.0; h];
        matvec(&th[sh.wt()..sh.wt() + h * h], &se, &mut emb);
        let mut cur = vec![0.0; w * h];
        for i in 0..w {
            for j in 0..h {
                cur[i * h + j] = th[sh.wx() + j] * x[i] + th[sh.b_in() + j] + self.pe[i * h + j] + emb[j];
            }
        }
        let mut trace = Trace {
            x: x.to_vec(),
            se,
            h: Vec::with_capacity(blocks + 1),
            mean: Vec::with_capacity(blocks),
            pre: Vec::with_capacity(blocks),
            gain: Vec::new(),
        };
        for b in 0..blocks {
            let o = sh.block(b);
            let mut mean = vec![0.0; h];
            for i in 0..w {
                for j in 0..h {
                    mean[j] += cur[i * h + j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= w as f64);
            let mut g = th[o.b1..o.b1 + h].to_vec();
            matvec(&th[o.u..o.u + h * h], &mean, &mut g);
            let mut pre = vec![0.0; w * h];
            let mut next = cur.clone();
            let mut act = vec![0.0; h];
            for i in 0..w {
                let a = &mut pre[i * h..(i + 1) * h];
                a.copy_from_slice(&g);
                matvec(&th[o.w1..o.w1 + h * h], &cur[i * h..(i + 1) * h], a);
                for (s, a) in act.iter_mut().zip(a.iter()) {
                    *s = a * sigmoid(*a);
                }
                let row = &mut next[i * h..(i + 1) * h];
                for (r, b2) in row.iter_mut().zip(&th[o.b2..o.b2 + h]) {
                    *r += b2;
                }
                matvec(&th[o.w2..o.w2 + h * h], &act, row);
            }
            trace.h.push(cur);
            trace.mean.push(mean);
            trace.pre.push(pre);
            cur = next;
        }
        let wo = &th[sh.w_out()..sh.w_out() + h];
        let net: Vec<f64> = (0..w)
            .map(|i| cur[i * h..(i + 1) * h].iter().zip(wo).map(|(a, b)| a * b).sum::<f64>() + th[sh.b_out()])
            .collect();
        let out = match self.precond.get(t) {
            Some(p) => {
                trace.gain = p.gain.clone();
                (0..w)
                    .map(|i| {
                        let lin: f64 = p.skip[i * w..(i + 1) * w].iter().zip(x).map(|(a, b)| a * b).sum();
                        p.shift[i] + lin + p.gain[i] * net[i]
                    })
                    .collect()
            }
            None => {
                trace.gain = vec![1.0; w];
                net
            }
        };
        trace.h.push(cur);
        (out, trace)
    }

    /// Accumulate `d(sum_i dout[i] out[i]) / d theta` into `grad`.
    fn backward(&self, trace: &Trace, dout: &[f64], grad: &mut [f64]) {
        let DenoiserShape { window: w, hidden: h, blocks } = self.shape;
        let th = &self.theta;
        let sh = &self.shape;
        let last = &trace.h[blocks];
        let wo = &th[sh.w_out()..sh.w_out() + h];
        let mut dh = vec![0.0; w * h];
        for i in 0..w {
            let d = dout[i] * trace.gain[i];
            grad[sh.b_out()] += d;
            for j in 0..h {
                grad[sh.w_out() + j] += d * last[i * h + j];
                dh[i * h + j] = d * wo[j];
            }
        }
        let mut act = vec![0.0; h];
        let mut da = vec![0.0; w * h];
        for b in (0..blocks).rev() {
            let o = sh.block(b);
            let (hin, pre, mean) = (&trace.h[b], &trace.pre[b], &trace.mean[b]);
            let mut dg = vec![0.0; h];
            for i in 0..w {
                let a = &pre[i * h..(i + 1) * h];
                for (s, a) in act.iter_mut().zip(a) {
                    *s = a * sigmoid(*a);
                }
                let dnext = &dh[i * h..(i + 1) * h];
                for (gb, d) in grad[o.b2..o.b2 + h].iter_mut().zip(dnext) {
                    *gb += d;
                }
                outer_acc(&mut grad[o.w2..o.w2 + h * h], dnext, &act);
                let mut ds = vec![0.0; h];
                matvec_t(&th[o.w2..o.w2 + h * h], dnext, &mut ds);
                let dai = &mut da[i * h..(i + 1) * h];
                for j in 0..h {
                    let sg = sigmoid(a[j]);
                    dai[j] = ds[j] * sg * (1.0 + a[j] * (1.0 - sg));
                    dg[j] += dai[j];
                }
                outer_acc(&mut grad[o.w1..o.w1 + h * h], dai, &hin[i * h..(i + 1) * h]);
            }
            for (gb, d) in grad[o.b1..o.b1 + h].iter_mut().zip(&dg) {
                *gb += d;
            }
            outer_acc(&mut grad[o.u..o.u + h * h], &dg, mean);
            let mut dmean = vec![0.0; h];
            matvec_t(&th[o.u..o.u + h * h], &dg, &mut dmean);
            dmean.iter_mut().for_each(|v| *v /= w as f64);
            for i in 0..w {
                let mut back = vec![0.0; h];
                matvec_t(&th[o.w1..o.w1 + h * h], &da[i * h..(i + 1) * h], &mut back);
                for j in 0..h {
                    dh[i * h + j] += back[j] + dmean[j];
                }
            }
        }
        let mut demb = vec![0.0; h];
        for i in 0..w {
            for j in 0..h {
                let d = dh[i * h + j];
                grad[sh.wx() + j] += d * trace.x[i];
                grad[sh.b_in() + j] += d;
                demb[j] += d;
            }
        }
        outer_acc(&mut grad[sh.wt()..sh.wt() + h * h], &demb, &trace.se);
    }

    /// Add `scale * d loss_fourier / d theta` at `(x0, x_t, t)` to `grad`
    /// and return the unscaled loss.
    pub fn accumulate_loss_grad(
        &self,
        x0: &[f64],
        x_t: &[f64],
        t: usize,
        sched: &DiffusionSchedule,
        cfg: &TrainConfig,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        check_len(self.shape.window, x0.len())?;
        check_len(self.shape.window, x_t.len())?;
        check_len(self.num_params(), grad.len())?;
        let (out, trace) = self.forward(x_t, t);
        let loss = loss_fourier(x0, &out, t, sched, cfg.lambda, cfg.lambda1, cfg.lambda2)?;
        // The unnormalized DFT gives ||F e||^2 = len * ||e||^2 for real e.
        let len = self.shape.window as f64;
        let k = -2.0 * scale * sched.loss_weight(t, cfg.lambda) * (cfg.lambda1 + cfg.lambda2 * len);
        let dout: Vec<f64> = x0.iter().zip(&out).map(|(a, b)| k * (a - b)).collect();
        self.backward(&trace, &dout, grad);
        Ok(loss)
    }

    /// Output and gradient of `sum_i dout[i] out[i]` with respect to `theta`.
    pub fn vjp(&self, x_t: &[f64], t: usize, dout: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len(self.shape.window, x_t.len())?;
        check_len(self.shape.window, dout.len())?;
        let (out, trace) = self.forward(x_t, t);
        let mut grad = vec![0.0; self.num_params()];
        self.backward(&trace, dout, &mut grad);
        Ok((out, grad))
    }
}

/// Reduce-on-plateau settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    /// Relative improvement needed to count as progress.
    pub threshold: f64,
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
}

impl Default for Plateau {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            patience: 500,
            factor: 0.5,
            min_lr: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub accumulation: usize,
    pub plateau: Plateau,
    pub epochs: usize,
    /// Noise draws per window and epoch.
    pub draws: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Rescale each update's gradient to at most this norm.
    pub clip_norm: Option<f64>,
    /// Build the output around the Gaussian posterior mean of the data.
    pub precondition: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1.0e-2,
            accumulation: 2,
            plateau: Plateau::default(),
            epochs: 3000,
            draws: 8,
            batch_size: 2,
            lambda: 1.0e-4,
            lambda1: 1.0,
            lambda2: 0.1,
            clip_norm: Some(1.0),
            precondition: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DiffusionError::InvalidConfig(m.into()));
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.accumulation == 0 || self.batch_size == 0 || self.draws == 0 {
            return bad("accumulation, batch size and draws must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        let p = &self.plateau;
        if !(p.threshold >= 0.0 && p.factor > 0.0 && p.factor <= 1.0 && p.min_lr >= 0.0) {
            return bad("invalid plateau settings");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean per-window loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub lr_reductions: Vec<usize>,
    pub final_lr: f64,
    pub updates: usize,
}

/// Train a denoiser on normalized windows with plain SGD.
pub fn train(
    windows: &[Vec<f64>],
    shape: DenoiserShape,
    cfg: &TrainConfig,
    sched: &DiffusionSchedule,
) -> Result<(Denoiser, TrainReport)> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(DiffusionError::EmptyTraining);
    }
    for w in windows {
        check_len(shape.window, w.len())?;
    }
    let mut den = Denoiser::init(shape, exec::derive_seed(cfg.seed, 0))?;
    if cfg.precondition {
        den = den.with_preconditioning(sched, data_stats(windows));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(cfg.seed, 1));
    let np = den.num_params();
    let mut grad = vec![0.0; np];
    let mut pending = 0;
    let mut lr = cfg.lr;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..windows.len() * cfg.draws).map(|i| i % windows.len()).collect();

    let apply = |den: &mut Denoiser, grad: &mut [f64], pending: usize, lr: f64| {
        let mut scale = lr / pending as f64;
        if let Some(c) = cfg.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt() / pending as f64;
            if norm > c {
                scale *= c / norm;
            }
        }
        for (p, g) in den.theta.iter_mut().zip(grad.iter_mut()) {
            *p -= scale * *g;
            *g = 0.0;
        }
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for &i in batch {
                let x0 = &windows[i];
                let t = rng.gen_range(1..=sched.steps());
                let noise: Vec<f64> = (0..shape.window).map(|_| rng.sample(StandardNormal)).collect();
                let xt = forward_sample(x0, t, &noise, sched)?;
                total += den.accumulate_loss_grad(x0, &xt, t, sched, cfg, 1.0 / batch.len() as f64, &mut grad)?;
            }
            pending += 1;
            if pending == cfg.accumulation {
                apply(&mut den, &mut grad, pending, lr);
                pending = 0;
                report.updates += 1;
            }
        }
        let mean = total / order.len() as f64;
        if !mean.is_finite() || den.theta.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::Divergence { epoch });
        }
        report.epoch_losses.push(mean);
        if mean < best * (1.0 - cfg.plateau.threshold) {
            best = mean;
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.plateau.patience {
                let next = (lr * cfg.plateau.factor).max(cfg.plateau.min_lr);
                if next < lr {
                    report.lr_reductions.push(epoch);
                }
                lr = next;
                stale = 0;
                best = mean;
            }
        }
    }
    if pending > 0 {
        apply(&mut den, &mut grad, pending, lr);
        report.updates += 1;
    }
    report.final_lr = lr;
    Ok((den, report))
}

/// Anything that predicts `x0` from `(x_t, t)`.
pub trait X0Predictor: Sync {
    fn window(&self) -> usize;
    fn predict_x0(&self, x_t: &[f64], t: usize) -> Vec<f64>;
}

impl X0Predictor for Denoiser {
    fn window(&self) -> usize {
        self.shape.window
    }
    fn predict_x0(&self, x_t: &[f64], t: usize) -> Vec<f64> {
        self.forward(x_t, t).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub rule: ReverseRule,
    /// Clamp each `x0` estimate to `[0, 1]` before the reverse update.
    pub clip_x0: bool,
    pub exec: Execution,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            rule: ReverseRule::Posterior,
            clip_x0: true,
            exec: Execution::default(),
        }
    }
}

/// Draw one normalized window; the RNG supplies `x_T` and the step noises.
pub fn sample_one<P: X0Predictor + ?Sized>(
    model: &P,
    sched: &DiffusionSchedule,
    rng: &mut ChaCha8Rng,
    opts: &SampleOptions,
) -> Vec<f64> {
    let w = model.window();
    let mut x: Vec<f64> = (0..w).map(|_| rng.sample(StandardNormal)).collect();
    for t in (1..=sched.steps()).rev() {
        let mut x0 = model.predict_x0(&x, t);
        if opts.clip_x0 {
            x0.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        let z: Vec<f64> = if t > 1 {
            (0..w).map(|_| rng.sample(StandardNormal)).collect()
        } else {
            vec![0.0; w]
        };
        x = reverse_step_with(opts.rule, &x, t, &x0, &z, sched).expect("shapes fixed by the model");
    }
    x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// `n` normalized windows, sample `i` seeded by `derive_seed(seed, i)`.
pub fn generate<P: X0Predictor + ?Sized>(
    model: &P,
    sched: &DiffusionSchedule,
    n: usize,
    seed: u64,
    opts: &SampleOptions,
) -> Vec<Vec<f64>> {
    exec::map_indexed(opts.exec, n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(seed, i as u64));
        sample_one(model, sched, &mut rng, opts)
    })
}

/// Whole-window slices of `series` that start at hour-of-day 0.
pub fn day_windows(series: &[f64], start_hour: usize, window: usize) -> Vec<Vec<f64>> {
    let offset = (24 - start_hour % 24) % 24;
    series
        .get(offset..)
        .unwrap_or(&[])
        .chunks_exact(window)
        .map(<[f64]>::to_vec)
        .collect()
}

/// Diffusion settings that belong with a trained model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_min: 1e-4,
            beta_max: 0.1,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

/// A trained denoiser together with its schedule and data scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub denoiser: Denoiser,
    pub schedule: ScheduleSpec,
    pub scaler: MinMax,
}

const CHECKPOINT_MAGIC: &str = "diffusion-denoiser";
const CHECKPOINT_VERSION: u32 = 1;

impl DiffusionModel {
    /// Fit the scaler on `train_series`, cut day windows and train.
    pub fn fit(
        train_series: &[f64],
        start_hour: usize,
        shape: DenoiserShape,
        schedule: ScheduleSpec,
        cfg: &TrainConfig,
    ) -> Result<(Self, TrainReport)> {
        let sched = schedule.build()?;
        let scaler = MinMax::fit(train_series);
        let normalized: Vec<f64> = train_series.iter().map(|v| scaler.forward(*v)).collect();
        let windows = day_windows(&normalized, start_hour, shape.window);
        let (denoiser, report) = train(&windows, shape, cfg, &sched)?;
        Ok((
            Self {
                denoiser,
                schedule,
                scaler,
            },
            report,
        ))
    }

    /// `n` windows in the original units.
    pub fn generate(&self, n: usize, seed: u64, opts: &SampleOptions) -> Result<Vec<Vec<f64>>> {
        let sched = self.schedule.build()?;
        Ok(generate(&self.denoiser, &sched, n, seed, opts)
            .into_iter()
            .map(|w| w.into_iter().map(|v| self.scaler.inverse(v)).collect())
            .collect())
    }

    pub fn to_text(&self) -> String {
        let s = &self.denoiser.shape;
        let mut out = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n");
        let _ = writeln!(out, "window {}", s.window);
        let _ = writeln!(out, "hidden {}", s.hidden);
        let _ = writeln!(out, "blocks {}", s.blocks);
        let _ = writeln!(out, "steps {}", self.schedule.steps);
        let _ = writeln!(out, "beta_min {}", self.schedule.beta_min);
        let _ = writeln!(out, "beta_max {}", self.schedule.beta_max);
        let _ = writeln!(out, "scale_min {}", self.scaler.min);
        let _ = writeln!(out, "scale_max {}", self.scaler.max);
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
        match &self.denoiser.stats {
            Some(st) => {
                let _ = writeln!(out, "data_mean {}", join(&st.mean));
                let _ = writeln!(out, "data_cov {}", join(&st.cov));
            }
            None => {
                let _ = writeln!(out, "data_mean none");
                let _ = writeln!(out, "data_cov none");
            }
        }
        let _ = writeln!(out, "params {}", self.denoiser.num_params());
        for v in &self.denoiser.theta {
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, msg: String| DiffusionError::Checkpoint { line, msg };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (n, head) = lines.next().ok_or_else(|| err(1, "empty checkpoint".into()))?;
        if head != format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}") {
            return Err(err(n, format!("unsupported header {head:?}")));
        }
        let mut field = |key: &str| -> Result<(usize, String)> {
            let (n, l) = lines.next().ok_or_else(|| err(0, format!("missing {key}")))?;
            match l.split_once(' ') {
                Some((k, v)) if k == key => Ok((n, v.trim().to_string())),
                _ => Err(err(n, format!("expected {key}"))),
            }
        };
        fn num<T: std::str::FromStr>(f: (usize, String)) -> Result<T> {
            f.1.parse().map_err(|_| DiffusionError::Checkpoint {
                line: f.0,
                msg: format!("bad number {:?}", f.1),
            })
        }
        let shape = DenoiserShape {
            window: num(field("window")?)?,
            hidden: num(field("hidden")?)?,
            blocks: num(field("blocks")?)?,
        };
        let schedule = ScheduleSpec {
            steps: num(field("steps")?)?,
            beta_min: num(field("beta_min")?)?,
            beta_max: num(field("beta_max")?)?,
        };
        let scaler = MinMax {
            min: num(field("scale_min")?)?,
            max: num(field("scale_max")?)?,
        };
        let list = |f: (usize, String), len: usize| -> Result<Option<Vec<f64>>> {
            if f.1 == "none" {
                return Ok(None);
            }
            let v = f
                .1
                .split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|_| err(f.0, format!("bad number {x:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            if v.len() != len {
                return Err(err(f.0, format!("expected {len} values")));
            }
            Ok(Some(v))
        };
        let w = shape.window;
        let stats = match (list(field("data_mean")?, w)?, list(field("data_cov")?, w * w)?) {
            (Some(mean), Some(cov)) => Some(DataStats { mean, cov }),
            (None, None) => None,
            _ => return Err(err(0, "data_mean and data_cov must both be set or both none".into())),
        };
        let count: usize = num(field("params")?)?;
        if count != shape.num_params() {
            return Err(err(0, format!("{count} params do not fit the declared shape")));
        }
        let theta = lines
            .filter(|(_, l)| !l.is_empty())
            .map(|(n, l)| l.parse::<f64>().map_err(|_| err(n, format!("bad weight {l:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        check_len(count, theta.len())?;
        let sched = schedule.build()?;
        let mut denoiser = Denoiser::from_params(shape, theta)?;
        if let Some(st) = stats {
            denoiser = denoiser.with_preconditioning(&sched, st);
        }
        Ok(Self {
            denoiser,
            schedule,
            scaler,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched3() -> DiffusionSchedule {
        DiffusionSchedule::from_betas(vec![0.1, 0.2, 0.3]).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let s = sched3();
        let want = [0.9, 0.72, 0.504];
        for (a, b) in s.alpha_bar.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(make_schedule(1, 0.5, 0.5).unwrap().alpha_bar, vec![0.5]);
        assert!(make_schedule(10, 0.0, 0.1).is_err());
        assert!(make_schedule(10, 0.2, 0.1).is_err());
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        let lin = make_schedule(5, 0.1, 0.5).unwrap();
        assert!((lin.beta[4] - 0.5).abs() < 1e-15 && (lin.beta[2] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn forward_examples() {
        let s = sched3();
        let x = forward_sample(&[1.0, 0.0], 2, &[1.0, 1.0], &s).unwrap();
        assert!((x[0] - (0.72f64.sqrt() + 0.28f64.sqrt())).abs() < 1e-12);
        assert!((x[1] - 0.28f64.sqrt()).abs() < 1e-12);
        let tiny = make_schedule(1, 1e-9, 1e-9).unwrap();
        let y = forward_sample(&[0.3, 0.7], 1, &[0.5, -0.5], &tiny).unwrap();
        assert!((y[0] - 0.3).abs() < 1e-4 && (y[1] - 0.7).abs() < 1e-4);
        assert!(forward_sample(&[1.0], 4, &[0.0], &s).is_err());
        assert!(forward_sample(&[1.0], 1, &[0.0, 0.0], &s).is_err());
    }

    #[test]
    fn final_reverse_step_returns_estimate() {
        let s = sched3();
        let out = reverse_step(&[5.0, -3.0], 1, &[0.25, 0.75], &[0.0, 0.0], &s).unwrap();
        assert!((out[0] - 0.25).abs() < 1e-15 && (out[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn printed_rule_differs_from_posterior() {
        let s = sched3();
        let a = reverse_step_with(ReverseRule::Posterior, &[0.5], 2, &[1.0], &[1.0], &s).unwrap();
        let b = reverse_step_with(ReverseRule::Printed, &[0.5], 2, &[1.0], &[1.0], &s).unwrap();
        assert!((a[0] - b[0]).abs() > 1e-3);
    }

    #[test]
    fn loss_examples() {
        let s = sched3();
        assert_eq!(loss_simple(&[1.0, 2.0], &[1.0, 2.0], 1, &s, 1.0).unwrap(), 0.0);
        assert!((loss_simple(&[1.0], &[0.0], 1, &s, 1.0).unwrap() - 9.0).abs() < 1e-12);
        assert_eq!(loss_simple(&[1.0], &[0.0], 1, &s, 0.0).unwrap(), 0.0);
        let e = loss_fourier(&[1.0, 0.0, 2.0], &[0.0, 0.0, 0.0], 2, &s, 1.0, 1.0, 0.0).unwrap();
        assert!((e - loss_simple(&[1.0, 0.0, 2.0], &[0.0; 3], 2, &s, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_network_outputs_bias() {
        let shape = DenoiserShape { window: 5, hidden: 4, blocks: 2 };
        let mut d = Denoiser::zeros(shape).unwrap();
        let b = shape.b_out();
        d.theta[b] = 0.37;
        assert_eq!(d.predict(&[1.0, 2.0, 3.0, 4.0, 5.0], 7).unwrap(), vec![0.37; 5]);
        assert!(d.predict(&[1.0], 1).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let shape = DenoiserShape { window: 4, hidden: 3, blocks: 2 };
        let sched = make_schedule(10, 1e-3, 0.2).unwrap();
        let stats = data_stats(&[vec![0.4, 0.5, 0.3, 0.6], vec![0.6, 0.4, 0.3, 0.9], vec![0.1, 0.5, 0.3, 0.2]]);
        let d = Denoiser::init(shape, 3).unwrap().with_preconditioning(&sched, stats.clone());
        let x = [0.2, -0.4, 0.9, 0.1];
        let dout = [0.3, -1.1, 0.5, 0.8];
        let (_, g) = d.vjp(&x, 5, &dout).unwrap();
        let f = |theta: &[f64]| {
            let dd = Denoiser::from_params(shape, theta.to_vec()).unwrap().with_preconditioning(&sched, stats.clone());
            dd.predict(&x, 5).unwrap().iter().zip(&dout).map(|(o, w)| o * w).sum::<f64>()
        };
        let eps = 1e-5;
        for k in 0..d.num_params() {
            let mut p = d.theta.clone();
            p[k] += eps;
            let up = f(&p);
            p[k] -= 2.0 * eps;
            let down = f(&p);
            let fd = (up - down) / (2.0 * eps);
            assert!((fd - g[k]).abs() <= 1e-6 + 1e-4 * fd.abs(), "param {k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn training_reduces_loss_on_constant_window() {
        let sched = make_schedule(10, 1e-3, 0.2).unwrap();
        let shape = DenoiserShape { window: 6, hidden: 8, blocks: 1 };
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 1,
            precondition: false,
            ..Default::default()
        };
        let (_, r) = train(&[vec![0.6; 6]], shape, &cfg, &sched).unwrap();
        let head: f64 = r.epoch_losses[..30].iter().sum();
        let tail: f64 = r.epoch_losses[r.epoch_losses.len() - 30..].iter().sum();
        assert!(tail < head, "{head} -> {tail}");
        assert!(r.epoch_losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let sched = sched3();
        let shape = DenoiserShape { window: 3, hidden: 2, blocks: 1 };
        let cfg = TrainConfig { epochs: 0, seed: 9, ..Default::default() };
        let (d, r) = train(&[vec![0.1, 0.2, 0.3]], shape, &cfg, &sched).unwrap();
        let stats = data_stats(&[vec![0.1, 0.2, 0.3]]);
        assert_eq!(d, Denoiser::init(shape, exec::derive_seed(9, 0)).unwrap().with_preconditioning(&sched, stats));
        assert_eq!(r.updates, 0);
        assert!(train(&[], shape, &cfg, &sched).is_err());
    }

    #[test]
    fn zero_network_gives_gaussian_posterior_mean() {
        use nalgebra::{DMatrix, DVector};
        let sched = sched3();
        let shape = DenoiserShape { window: 3, hidden: 2, blocks: 1 };
        let windows = [vec![0.2, 0.5, 0.9], vec![0.4, 0.4, 0.1], vec![0.9, 0.1, 0.3]];
        let stats = data_stats(&windows);
        let zero = Denoiser::zeros(shape).unwrap().with_preconditioning(&sched, stats.clone());
        let mut theta = vec![0.0; shape.num_params()];
        theta[shape.b_out()] = 1.0;
        let unit = Denoiser::from_params(shape, theta).unwrap().with_preconditioning(&sched, stats.clone());
        let m = DVector::from_row_slice(&stats.mean);
        let s = DMatrix::from_row_slice(3, 3, &stats.cov);
        let x = [1.0, -2.0, 0.5];
        for t in 1..=3 {
            let ab = sched.alpha_bar_at(t);
            // Joint Gaussian of (x0, x_t): solve with the covariance of x_t.
            let var_t = &s * ab + DMatrix::identity(3, 3) * (1.0 - ab);
            let inv = var_t.clone().try_inverse().unwrap();
            let want = &m + &s * ab.sqrt() * &inv * (DVector::from_row_slice(&x) - &m * ab.sqrt());
            let post = &s - &s * ab * &inv * &s;
            let out = zero.predict(&x, t).unwrap();
            let bumped = unit.predict(&x, t).unwrap();
            for i in 0..3 {
                assert!((out[i] - want[i]).abs() < 1e-12, "t={t} i={i}");
                assert!((bumped[i] - out[i] - post[(i, i)].max(0.0).sqrt()).abs() < 1e-12);
            }
        }
        assert_eq!(Denoiser::zeros(shape).unwrap().predict(&x, 1).unwrap(), vec![0.0; 3]);
    }

    struct Fixed(Vec<f64>);
    impl X0Predictor for Fixed {
        fn window(&self) -> usize {
            self.0.len()
        }
        fn predict_x0(&self, _: &[f64], _: usize) -> Vec<f64> {
            self.0.clone()
        }
    }

    #[test]
    fn oracle_denoiser_sample_is_its_window() {
        let target = vec![0.1, 0.5, 0.9, 0.3];
        let sched = make_schedule(20, 1e-3, 0.2).unwrap();
        let out = generate(&Fixed(target.clone()), &sched, 3, 4, &SampleOptions::default());
        assert!(out.iter().all(|w| *w == target));
    }

    #[test]
    fn generation_is_seeded_and_bounded() {
        let sched = make_schedule(10, 1e-3, 0.2).unwrap();
        let d = Denoiser::init(DenoiserShape { window: 8, hidden: 4, blocks: 1 }, 1).unwrap();
        let seq = SampleOptions { exec: Execution::Sequential, ..Default::default() };
        let a = generate(&d, &sched, 10, 5, &seq);
        let b = generate(&d, &sched, 10, 5, &SampleOptions::default());
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn day_windows_align_to_midnight() {
        let s: Vec<f64> = (0..60).map(f64::from).collect();
        let w = day_windows(&s, 20, 24);
        assert_eq!(w.len(), 2);
        assert_eq!(w[0][0], 4.0);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = DiffusionModel {
            denoiser: Denoiser::init(DenoiserShape { window: 4, hidden: 3, blocks: 2 }, 8).unwrap(),
            schedule: ScheduleSpec::default(),
            scaler: MinMax { min: 10.0, max: 250.5 },
        };
        let text = m.to_text();
        assert_eq!(DiffusionModel::from_text(&text).unwrap(), m);
        assert!(DiffusionModel::from_text(&text.replace("hidden 3", "hidden 4")).is_err());
        let stats = data_stats(&[vec![0.1, 0.3, 0.2, 0.7], vec![0.4, 0.2, 0.9, 0.3]]);
        let sched = ScheduleSpec::default().build().unwrap();
        let p = DiffusionModel {
            denoiser: m.denoiser.clone().with_preconditioning(&sched, stats),
            ..m
        };
        let text = p.to_text();
        assert_eq!(DiffusionModel::from_text(&text).unwrap(), p);
        assert!(DiffusionModel::from_text(&text.replace("data_cov ", "data_cov 1 ")).is_err());
        assert!(DiffusionModel::from_text("nonsense").is_err());
    }
}
