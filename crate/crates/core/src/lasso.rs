//! L1-penalized logistic regression on a stacked `[X, X̃]` design.
//!
//! Cyclic coordinate descent over variable/knockoff pairs. Each pair
//! `(j, p + j)` is updated in both orders from the same state and the two
//! results are averaged, so the fit is equivariant under exchanging a
//! column with its knockoff (up to floating-point rounding). Single
//! coordinates take a proximal Newton step, falling back to the global
//! curvature bound whenever the Newton step fails to decrease the objective.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const CONVERGENCE_TOLERANCE: f64 = 1e-9;
pub const MAX_SWEEPS: usize = 10_000;

/// Column-standardized design (mean 0, population variance 1).
#[derive(Clone, Debug)]
pub struct StandardizedDesign {
    /// Column-major, `columns[k][i]`.
    columns: Vec<Vec<f64>>,
    n: usize,
}

impl StandardizedDesign {
    /// `rows` is `n × 2p`: originals first, knockoffs second.
    pub fn new(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let columns = (0..d)
            .map(|k| {
                let col: Vec<f64> = rows.iter().map(|r| r[k]).collect();
                let mean = col.iter().sum::<f64>() / n as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                if var > 0.0 {
                    let sd = var.sqrt();
                    col.iter().map(|v| (v - mean) / sd).collect()
                } else {
                    vec![0.0; n]
                }
            })
            .collect();
        Self { columns, n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    fn subset(&self, rows: &[usize]) -> Self {
        Self {
            columns: self.columns.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect(),
            n: rows.len(),
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// Mean logistic deviance / 2 (negative log-likelihood per row).
pub fn mean_log_loss(eta: &[f64], y: &[f64]) -> f64 {
    eta.iter().zip(y).map(|(&e, &yi)| softplus(e) - yi * e).sum::<f64>() / eta.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFit {
    pub intercept: f64,
    /// Coefficients on the standardized columns.
    pub coefficients: Vec<f64>,
    pub sweeps: usize,
}

struct Solver<'a> {
    design: &'a StandardizedDesign,
    y: &'a [f64],
    lambda: f64,
    beta: Vec<f64>,
    intercept: f64,
    eta: Vec<f64>,
}

impl Solver<'_> {
    /// Proximal step on column `k` (or the intercept for `None`) starting
    /// from (`b`, `eta`); returns the new coefficient and updates `eta`.
    fn coordinate_step(&self, k: Option<usize>, b: f64, eta: &mut [f64]) -> f64 {
        let n = self.design.n as f64;
        let (lambda, col): (f64, Option<&[f64]>) = match k {
            Some(k) => (self.lambda, Some(&self.design.columns[k])),
            None => (0.0, None),
        };
        let z = |i: usize| col.map_or(1.0, |c| c[i]);
        let (mut g, mut h, mut sq) = (0.0, 0.0, 0.0);
        for (i, (&e, &yi)) in eta.iter().zip(self.y).enumerate() {
            let mu = sigmoid(e);
            let zi = z(i);
            g += zi * (mu - yi);
            h += mu * (1.0 - mu) * zi * zi;
            sq += zi * zi;
        }
        if sq == 0.0 {
            return b;
        }
        g /= n;
        h /= n;
        let bound = 0.25 * sq / n;
        let objective = |eta: &[f64], beta: f64| {
            mean_log_loss(eta, self.y) + lambda * beta.abs()
        };
        let current = objective(eta, b);
        let mut trial = vec![0.0; eta.len()];
        for curvature in [h, bound] {
            if curvature.is_nan() || curvature <= 0.0 {
                continue;
            }
            let nb = soft_threshold(curvature * b - g, lambda) / curvature;
            let delta = nb - b;
            if delta == 0.0 {
                return b;
            }
            for (i, t) in trial.iter_mut().enumerate() {
                *t = eta[i] + z(i) * delta;
            }
            if objective(&trial, nb) <= current || curvature == bound {
                eta.copy_from_slice(&trial);
                return nb;
            }
        }
        b
    }

    /// Updates the pair `(a, b)` in both orders and averages.
    fn pair_step(&mut self, a: usize, b: usize) -> f64 {
        let (ba, bb) = (self.beta[a], self.beta[b]);
        let mut eta1 = self.eta.clone();
        let a1 = self.coordinate_step(Some(a), ba, &mut eta1);
        let b1 = self.coordinate_step(Some(b), bb, &mut eta1);
        let mut eta2 = self.eta.clone();
        let b2 = self.coordinate_step(Some(b), bb, &mut eta2);
        let a2 = self.coordinate_step(Some(a), ba, &mut eta2);
        let na = 0.5 * (a1 + a2);
        let nb = 0.5 * (b1 + b2);
        let (ca, cb) = (&self.design.columns[a], &self.design.columns[b]);
        let (da, db) = (na - ba, nb - bb);
        for (i, e) in self.eta.iter_mut().enumerate() {
            *e += ca[i] * da + cb[i] * db;
        }
        self.beta[a] = na;
        self.beta[b] = nb;
        da.abs().max(db.abs())
    }
}

/// Minimizes `mean log-loss + lambda · ‖β‖₁` (intercept unpenalized).
///
/// Columns `j` and `p + j` are treated as a pair; `seed` fixes the pair
/// visiting order.
pub fn fit_pairwise(design: &StandardizedDesign, y: &[f64], lambda: f64, seed: u64) -> Result<LogisticFit> {
    let d = design.num_columns();
    let p = d / 2;
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let intercept = if ybar > 0.0 && ybar < 1.0 { (ybar / (1.0 - ybar)).ln() } else { 0.0 };
    let mut s = Solver {
        design,
        y,
        lambda,
        beta: vec![0.0; d],
        intercept,
        eta: vec![intercept; design.n],
    };
    let mut last_change = f64::INFINITY;
    for sweep in 1..=MAX_SWEEPS {
        let mut eta = std::mem::take(&mut s.eta);
        let b0 = s.coordinate_step(None, s.intercept, &mut eta);
        s.eta = eta;
        let mut change = (b0 - s.intercept).abs();
        s.intercept = b0;
        for &j in &order {
            change = change.max(s.pair_step(j, p + j));
        }
        last_change = change;
        if change < CONVERGENCE_TOLERANCE {
            return Ok(LogisticFit {
                intercept: s.intercept,
                coefficients: s.beta,
                sweeps: sweep,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_SWEEPS,
        last_change,
    })
}

/// Smallest penalty at which every coefficient is zero.
pub fn lambda_max(design: &StandardizedDesign, y: &[f64]) -> f64 {
    let n = design.n as f64;
    let ybar = y.iter().sum::<f64>() / n;
    design
        .columns
        .iter()
        .map(|c| (c.iter().zip(y).map(|(z, yi)| z * (yi - ybar)).sum::<f64>() / n).abs())
        .fold(0.0, f64::max)
}

/// Penalty grid as fractions of `lambda_max`.
pub const LAMBDA_GRID: [f64; 8] = [0.7, 0.5, 0.35, 0.25, 0.18, 0.12, 0.08, 0.05];

/// Picks a penalty from [`LAMBDA_GRID`] by held-out log-loss on a seeded
/// 70/30 split of the rows.
pub fn select_lambda(design: &StandardizedDesign, y: &[f64], seed: u64) -> Result<f64> {
    let lmax = lambda_max(design, y);
    if lmax == 0.0 {
        return Ok(0.0);
    }
    let mut idx: Vec<usize> = (0..design.n).collect();
    idx.shuffle(&mut stream_rng(seed, 1));
    let cut = (design.n * 7) / 10;
    let (train, valid) = idx.split_at(cut);
    if train.is_empty() || valid.is_empty() {
        return Ok(LAMBDA_GRID[0] * lmax);
    }
    let (dt, dv) = (design.subset(train), design.subset(valid));
    let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let yv: Vec<f64> = valid.iter().map(|&i| y[i]).collect();
    let mut best = (f64::INFINITY, LAMBDA_GRID[0] * lmax);
    for frac in LAMBDA_GRID {
        let lambda = frac * lmax;
        let fit = fit_pairwise(&dt, &yt, lambda, seed)?;
        let eta: Vec<f64> = (0..dv.n)
            .map(|i| fit.intercept + dv.columns.iter().zip(&fit.coefficients).map(|(c, b)| c[i] * b).sum::<f64>())
            .collect();
        let loss = mean_log_loss(&eta, &yv);
        if loss < best.0 {
            best = (loss, lambda);
        }
    }
    Ok(best.1)
}
