//! Knockoff statistics and the knockoff / knockoff+ selection rule.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{validation, Error, Result};
use crate::lasso::{fit_pairwise, select_lambda, StandardizedDesign};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    /// `|⟨X_j, y − ȳ⟩| − |⟨X̃_j, y − ȳ⟩|`.
    Marginal,
    /// `|b_j| − |b_{p+j}|` from an L1-penalized logistic fit.
    Lasso,
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatisticKind::Marginal => "marginal",
            StatisticKind::Lasso => "lasso",
        })
    }
}

impl FromStr for StatisticKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "marginal" => Ok(StatisticKind::Marginal),
            "lasso" => Ok(StatisticKind::Lasso),
            _ => Err(validation(format!("unknown statistic '{s}' (expected marginal or lasso)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WStatistics {
    pub w: Vec<f64>,
    pub kind: StatisticKind,
}

fn check_shapes(x: &[Vec<f64>], xt: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    let n = x.len();
    if n == 0 {
        return Err(validation("empty dataset"));
    }
    let p = x[0].len();
    if xt.len() != n || y.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "X has {n} rows, knockoffs {}, labels {}",
            xt.len(),
            y.len()
        )));
    }
    if x.iter().chain(xt).any(|r| r.len() != p) {
        return Err(Error::ShapeMismatch("rows of X and knockoffs must all have p entries".into()));
    }
    Ok(p)
}

pub fn marginal_diff_stat(x: &[Vec<f64>], xt: &[Vec<f64>], y: &[f64]) -> Result<WStatistics> {
    let p = check_shapes(x, xt, y)?;
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let inner = |m: &[Vec<f64>], j: usize| m.iter().zip(&yc).map(|(r, c)| r[j] * c).sum::<f64>();
    let w = (0..p).map(|j| inner(x, j).abs() - inner(xt, j).abs()).collect();
    Ok(WStatistics {
        w,
        kind: StatisticKind::Marginal,
    })
}

/// Lasso coefficient-difference statistic. `lambda = None` picks the
/// penalty from the fixed grid by a seeded validation split.
pub fn lasso_logistic_stat(
    x: &[Vec<f64>],
    xt: &[Vec<f64>],
    y: &[f64],
    lambda: Option<f64>,
    seed: u64,
) -> Result<WStatistics> {
    let p = check_shapes(x, xt, y)?;
    if let Some(l) = lambda {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(validation(format!("lambda must be finite and nonnegative, got {l}")));
        }
    }
    let stacked: Vec<Vec<f64>> = x.iter().zip(xt).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
    let design = StandardizedDesign::new(&stacked);
    let lambda = match lambda {
        Some(l) => l,
        None => select_lambda(&design, y, seed)?,
    };
    let fit = fit_pairwise(&design, y, lambda, seed)?;
    let b = &fit.coefficients;
    Ok(WStatistics {
        w: (0..p).map(|j| b[j].abs() - b[p + j].abs()).collect(),
        kind: StatisticKind::Lasso,
    })
}

fn serialize_tau<S: Serializer>(tau: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if tau.is_finite() {
        s.serialize_f64(*tau)
    } else {
        s.serialize_none()
    }
}

/// Output of the knockoff filter. `tau = +∞` (serialized as `null`) when
/// nothing is selected.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    #[serde(serialize_with = "serialize_tau")]
    pub tau: f64,
    /// 0-based indices with `w_j >= tau`.
    pub selected: BTreeSet<usize>,
    pub q: f64,
    pub plus: bool,
}

/// `tau = min{t ∈ {|w_j| : w_j ≠ 0} : (plus + #{w_j ≤ −t}) / max(1, #{w_j ≥ t}) ≤ q}`.
pub fn knockoff_threshold(w: &[f64], q: f64, plus: bool) -> Result<Selection> {
    if !(q > 0.0 && q < 1.0) {
        return Err(validation(format!("FDR level {q} outside (0, 1)")));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(validation("knockoff statistics must be finite"));
    }
    let mut sorted = w.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = w.iter().filter(|&&v| v != 0.0).map(|v| v.abs()).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let offset = if plus { 1.0 } else { 0.0 };
    let tau = candidates
        .into_iter()
        .find(|&t| {
            let negatives = sorted.partition_point(|&v| v <= -t);
            let positives = sorted.len() - sorted.partition_point(|&v| v < t);
            (offset + negatives as f64) / (positives.max(1) as f64) <= q
        })
        .unwrap_or(f64::INFINITY);
    let selected = w
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= tau)
        .map(|(j, _)| j)
        .collect();
    Ok(Selection { tau, selected, q, plus })
}
