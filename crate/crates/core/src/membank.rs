//! Sliding memory bank of recent frame embeddings.
//!
//! The bank keeps the last `W` frames and estimates the stationary frame
//! expectation by a softmax-weighted average whose scores are dot products
//! with the current frame, clamped to `[−κ, κ]`. The clamp bounds every
//! weight within a factor `e^{2κ}` of `1/W`.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CeresError, Result};
use crate::numeric::{check_dims, convex_combine, softmax, stable_sum, SimplexWeights, Vector};
use crate::rng::{self, Stream};

pub const DEFAULT_CAPACITY: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    kappa: f64,
    slots: VecDeque<(i64, Vector)>,
    last_time: Option<i64>,
}

/// Output of [`MemoryBank::context`]. `weights` is `None` exactly when the
/// bank is empty and `estimate` is the current frame passed through.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub estimate: Vector,
    pub weights: Option<SimplexWeights>,
}

impl MemoryBank {
    /// `capacity = 0` is allowed and yields a bank that never stores frames.
    pub fn new(capacity: usize, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(CeresError::InvalidInput(format!("kappa must be positive, got {kappa}")));
        }
        Ok(MemoryBank {
            capacity,
            kappa,
            slots: VecDeque::with_capacity(capacity),
            last_time: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.slots.len() == self.capacity
    }

    pub fn times(&self) -> Vec<i64> {
        self.slots.iter().map(|(t, _)| *t).collect()
    }

    pub fn embeddings(&self) -> Vec<Vector> {
        self.slots.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn push(&mut self, embedding: Vector, time: i64) -> Result<()> {
        if let Some(newest) = self.last_time {
            if time <= newest {
                return Err(CeresError::TimeOrderError { newest, got: time });
            }
        }
        if let Some((_, first)) = self.slots.front() {
            check_dims(first.dim(), embedding.dim())?;
        }
        self.last_time = Some(time);
        if self.capacity == 0 {
            return Ok(());
        }
        if self.slots.len() == self.capacity {
            self.slots.pop_front();
        }
        self.slots.push_back((time, embedding));
        Ok(())
    }

    /// Clamped similarity scores of `current` against every slot. Optional
    /// per-slot offsets (for example temporal encodings) are added before
    /// the clamp so the weight bounds still hold.
    pub fn scores(&self, current: &Vector, offsets: Option<&[f64]>) -> Result<Vec<f64>> {
        if let Some(off) = offsets {
            check_dims(self.slots.len(), off.len())?;
        }
        self.slots
            .iter()
            .enumerate()
            .map(|(i, (_, v))| {
                let raw = current.dot(v)? + offsets.map_or(0.0, |o| o[i]);
                Ok(raw.clamp(-self.kappa, self.kappa))
            })
            .collect()
    }

    pub fn context(&self, current: &Vector) -> Result<Context> {
        self.context_with_offsets(current, None)
    }

    pub fn context_with_offsets(&self, current: &Vector, offsets: Option<&[f64]>) -> Result<Context> {
        if self.slots.is_empty() {
            return Ok(Context {
                estimate: current.clone(),
                weights: None,
            });
        }
        let scores = self.scores(current, offsets)?;
        let weights = softmax(&scores, 1.0)?;
        let estimate = convex_combine(&weights, &self.embeddings())?;
        Ok(Context {
            estimate,
            weights: Some(weights),
        })
    }

    pub fn weight_deviation(&self, current: &Vector) -> Result<DeviationReport> {
        if self.capacity == 0 || !self.is_full() {
            return Err(CeresError::InvalidState(format!(
                "bank holds {} of {} slots",
                self.slots.len(),
                self.capacity
            )));
        }
        let weights = self.context(current)?.weights.expect("nonempty bank");
        Ok(DeviationReport::new(weights.as_slice(), self.kappa))
    }
}

/// Relative slack for floating-point comparison against the weight bounds;
/// the same multiple of `1/W` is allowed as absolute slack for rounding in
/// the weights themselves.
const BOUND_SLACK: f64 = 8.0 * f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    pub window: usize,
    pub kappa: f64,
    /// `‖w − 1/W‖₁`.
    pub l1_deviation: f64,
    /// `max_τ |w_τ − 1/W|`.
    pub max_coord_deviation: f64,
    /// `(e^{2κ} − 1)/W`.
    pub coord_bound: f64,
    /// `2(e^{2κ} − 1)/W`, reported only.
    pub l1_bound: f64,
    pub coord_pass: bool,
    /// `e^{−2κ}/W ≤ w_τ ≤ e^{2κ}/W` for every slot.
    pub ratio_pass: bool,
    pub l1_pass: bool,
}

impl DeviationReport {
    pub fn new(weights: &[f64], kappa: f64) -> Self {
        let w = weights.len() as f64;
        let u = 1.0 / w;
        let devs: Vec<f64> = weights.iter().map(|x| (x - u).abs()).collect();
        let l1 = stable_sum(devs.iter().copied());
        let max_dev = devs.iter().copied().fold(0.0, f64::max);
        let growth = (2.0 * kappa).exp_m1();
        let coord_bound = growth / w;
        let l1_bound = 2.0 * growth / w;
        let abs_slack = BOUND_SLACK / w;
        let hi = (2.0 * kappa).exp() / w * (1.0 + BOUND_SLACK) + abs_slack;
        let lo = (-2.0 * kappa).exp() / w * (1.0 - BOUND_SLACK) - abs_slack;
        DeviationReport {
            window: weights.len(),
            kappa,
            l1_deviation: l1,
            max_coord_deviation: max_dev,
            coord_bound,
            l1_bound,
            coord_pass: max_dev <= coord_bound * (1.0 + BOUND_SLACK) + abs_slack,
            ratio_pass: weights.iter().all(|&x| x >= lo && x <= hi),
            l1_pass: l1 <= l1_bound + abs_slack * w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationSweep {
    pub window: usize,
    pub kappa: f64,
    pub draws: usize,
    pub coord_pass: usize,
    pub ratio_pass: usize,
    pub l1_pass: usize,
    pub max_coord_deviation: f64,
    pub max_l1_deviation: f64,
}

impl DeviationSweep {
    pub fn all_provable_pass(&self) -> bool {
        self.coord_pass == self.draws && self.ratio_pass == self.draws
    }

    pub fn l1_pass_rate(&self) -> f64 {
        self.l1_pass as f64 / self.draws as f64
    }
}

/// Random full banks with frames `~ N(0, 1.5² I_4)`, so a sizeable share of
/// scores hits the clamp.
pub fn deviation_sweep(window: usize, kappa: f64, draws: usize, seed: u64) -> Result<DeviationSweep> {
    const DIM: usize = 4;
    let reports: Vec<DeviationReport> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let mut s = rng::stream(seed, i as u64);
            let frame = |s: &mut Stream| {
                Vector::new((0..DIM).map(|_| 1.5 * rng::standard_normal(s)).collect()).expect("finite")
            };
            let mut bank = MemoryBank::new(window, kappa)?;
            for t in 0..window {
                bank.push(frame(&mut s), t as i64)?;
            }
            let current = frame(&mut s);
            bank.weight_deviation(&current)
        })
        .collect::<Result<_>>()?;
    Ok(DeviationSweep {
        window,
        kappa,
        draws,
        coord_pass: reports.iter().filter(|r| r.coord_pass).count(),
        ratio_pass: reports.iter().filter(|r| r.ratio_pass).count(),
        l1_pass: reports.iter().filter(|r| r.l1_pass).count(),
        max_coord_deviation: reports.iter().map(|r| r.max_coord_deviation).fold(0.0, f64::max),
        max_l1_deviation: reports.iter().map(|r| r.l1_deviation).fold(0.0, f64::max),
    })
}

/// A seeded source of i.i.d. frames with an analytically known mean.
pub trait FrameGenerator: Sync {
    fn dim(&self) -> usize;
    fn mean(&self) -> Vector;
    fn sample(&self, s: &mut Stream) -> Vector;
}

/// `N(μ, σ² I)`.
#[derive(Debug, Clone)]
pub struct IsotropicGaussian {
    pub mean: Vector,
    pub sigma: f64,
}

impl FrameGenerator for IsotropicGaussian {
    fn dim(&self) -> usize {
        self.mean.dim()
    }

    fn mean(&self) -> Vector {
        self.mean.clone()
    }

    fn sample(&self, s: &mut Stream) -> Vector {
        let v = self
            .mean
            .as_slice()
            .iter()
            .map(|m| m + self.sigma * rng::standard_normal(s))
            .collect();
        Vector::new(v).expect("finite")
    }
}

#[derive(Debug, Clone)]
pub struct PointMass(pub Vector);

impl FrameGenerator for PointMass {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn mean(&self) -> Vector {
        self.0.clone()
    }

    fn sample(&self, _s: &mut Stream) -> Vector {
        self.0.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub window: usize,
    pub seed_count: usize,
    /// Mean over seeds of `‖X̄ − μ‖₂`.
    pub mean_err_unweighted: f64,
    /// Mean over seeds of `‖X̂ − μ‖₂`.
    pub mean_err_weighted: f64,
    /// Mean over seeds of `‖X̂ − X̄‖₂`.
    pub mean_gap: f64,
    /// Standard error of `mean_gap`.
    pub gap_std_error: f64,
    /// `(e^{2κ} − 1)` times the mean over seeds of `max_τ ‖x_τ‖₂`.
    pub envelope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub kappa: f64,
    pub rows: Vec<ConvergenceRow>,
    /// OLS slope of `log mean_err_unweighted` on `log W`; `None` when some
    /// error is exactly zero.
    pub slope_unweighted: Option<f64>,
    pub slope_weighted: Option<f64>,
    /// `mean_gap ≤ envelope` at every window.
    pub envelope_pass: bool,
    /// `mean_gap` nonincreasing in `W` up to three standard errors.
    pub gap_monotone: bool,
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn log_log_slope(windows: &[usize], errs: &[f64]) -> Option<f64> {
    if errs.iter().any(|e| !(*e > 0.0)) {
        return None;
    }
    let x: Vec<f64> = windows.iter().map(|w| (*w as f64).ln()).collect();
    let y: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    ols_slope(&x, &y)
}

struct Trial {
    err_unweighted: f64,
    err_weighted: f64,
    gap: f64,
    max_norm: f64,
}

/// For every window `W` and seed index, draw `W` memory frames and one
/// current frame on the stream `(base_seed, grid_index·2³² + seed_index)`.
pub fn convergence_experiment(
    generator: &dyn FrameGenerator,
    window_grid: &[usize],
    n_seeds: usize,
    kappa: f64,
    base_seed: u64,
) -> Result<ConvergenceTable> {
    if window_grid.len() < 4 {
        return Err(CeresError::InvalidInput("window grid needs at least 4 values".into()));
    }
    if window_grid.windows(2).any(|w| w[1] <= w[0]) || window_grid[0] == 0 {
        return Err(CeresError::InvalidInput("window grid must be positive and ascending".into()));
    }
    if n_seeds == 0 {
        return Err(CeresError::InvalidInput("need at least one seed".into()));
    }
    let mu = generator.mean();
    let growth = (2.0 * kappa).exp_m1();
    let mut rows = Vec::with_capacity(window_grid.len());
    for (gi, &w) in window_grid.iter().enumerate() {
        let trials: Vec<Trial> = (0..n_seeds)
            .into_par_iter()
            .map(|si| {
                let mut s = rng::stream(base_seed, ((gi as u64) << 32) | si as u64);
                let mut bank = MemoryBank::new(w, kappa)?;
                let mut max_norm = 0.0_f64;
                for t in 0..w {
                    let f = generator.sample(&mut s);
                    max_norm = max_norm.max(f.norm2());
                    bank.push(f, t as i64)?;
                }
                let current = generator.sample(&mut s);
                let frames = bank.embeddings();
                let mean = convex_combine(&SimplexWeights::uniform(w), &frames)?;
                let weighted = bank.context(&current)?.estimate;
                Ok(Trial {
                    err_unweighted: mean.sub(&mu)?.norm2(),
                    err_weighted: weighted.sub(&mu)?.norm2(),
                    gap: weighted.sub(&mean)?.norm2(),
                    max_norm,
                })
            })
            .collect::<Result<_>>()?;
        let n = n_seeds as f64;
        let avg = |f: &dyn Fn(&Trial) -> f64| stable_sum(trials.iter().map(f)) / n;
        let mean_gap = avg(&|t| t.gap);
        let var = if n_seeds > 1 {
            stable_sum(trials.iter().map(|t| (t.gap - mean_gap).powi(2))) / (n - 1.0)
        } else {
            0.0
        };
        rows.push(ConvergenceRow {
            window: w,
            seed_count: n_seeds,
            mean_err_unweighted: avg(&|t| t.err_unweighted),
            mean_err_weighted: avg(&|t| t.err_weighted),
            mean_gap,
            gap_std_error: (var / n).sqrt(),
            envelope: growth * avg(&|t| t.max_norm),
        });
    }
    let ws: Vec<usize> = rows.iter().map(|r| r.window).collect();
    let unweighted: Vec<f64> = rows.iter().map(|r| r.mean_err_unweighted).collect();
    let weighted: Vec<f64> = rows.iter().map(|r| r.mean_err_weighted).collect();
    Ok(ConvergenceTable {
        kappa,
        slope_unweighted: log_log_slope(&ws, &unweighted),
        slope_weighted: log_log_slope(&ws, &weighted),
        envelope_pass: rows.iter().all(|r| r.mean_gap <= r.envelope),
        gap_monotone: rows.windows(2).all(|p| {
            p[1].mean_gap <= p[0].mean_gap + 3.0 * (p[0].gap_std_error + p[1].gap_std_error)
        }),
        rows,
    })
}
