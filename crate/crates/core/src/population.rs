//! Discrete covariate populations, the logistic label link, and the
//! populations derived from a prospective model: label-conditionals
//! (controls-only, cases-only), mixtures, and case-control samples.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand_distr::weighted::WeightedIndex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{LabeledDataset, Source};
use crate::error::{validation, Error, Result};
use crate::rng::stream_rng;
use crate::table::{check_cap, stable_sum, TabularDistribution, DEFAULT_ENUMERATION_CAP};

const STOCHASTIC_TOLERANCE: f64 = 1e-12;

/// A homogeneous-state, inhomogeneous-transition Markov chain over `p` variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovChainSpec {
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub init: Vec<f64>,
    /// `p − 1` row-stochastic `K × K` matrices; entry `[j][a][b]` is `P(X_{j+2} = b | X_{j+1} = a)`.
    pub transitions: Vec<Vec<Vec<f64>>>,
}

fn check_stochastic(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(validation(format!("{what} has a negative or non-finite entry")));
    }
    let s = stable_sum(row.iter().copied());
    if (s - 1.0).abs() > STOCHASTIC_TOLERANCE {
        return Err(validation(format!("{what} sums to {s}, expected 1")));
    }
    Ok(())
}

impl MarkovChainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(validation("markov chain needs p >= 1"));
        }
        if self.k < 2 {
            return Err(validation("markov chain needs K >= 2"));
        }
        if self.init.len() != self.k {
            return Err(Error::ShapeMismatch(format!(
                "init has length {}, expected K = {}",
                self.init.len(),
                self.k
            )));
        }
        check_stochastic(&self.init, "init")?;
        if self.transitions.len() != self.p - 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} transition matrices given, expected p - 1 = {}",
                self.transitions.len(),
                self.p - 1
            )));
        }
        for (t, m) in self.transitions.iter().enumerate() {
            if m.len() != self.k || m.iter().any(|r| r.len() != self.k) {
                return Err(Error::ShapeMismatch(format!(
                    "transition {} is not {k}x{k}",
                    t + 1,
                    k = self.k
                )));
            }
            for (a, row) in m.iter().enumerate() {
                check_stochastic(row, &format!("transition {} row {a}", t + 1))?;
            }
        }
        Ok(())
    }

    /// Same transition matrix at every step.
    pub fn homogeneous(p: usize, init: Vec<f64>, transition: Vec<Vec<f64>>) -> Self {
        Self {
            p,
            k: init.len(),
            init,
            transitions: vec![transition; p.saturating_sub(1)],
        }
    }
}

/// Enumerates the chain into an exact table.
pub fn tabular_from_markov(spec: &MarkovChainSpec) -> Result<TabularDistribution> {
    tabular_from_markov_with_cap(spec, DEFAULT_ENUMERATION_CAP)
}

pub fn tabular_from_markov_with_cap(spec: &MarkovChainSpec, cap: usize) -> Result<TabularDistribution> {
    spec.validate()?;
    check_cap((spec.k as u128).saturating_pow(spec.p as u32), cap, "")?;
    // Extend the table one variable at a time.
    let mut probs = spec.init.clone();
    for m in &spec.transitions {
        let mut next = Vec::with_capacity(probs.len() * spec.k);
        for (i, &pi) in probs.iter().enumerate() {
            let last = i % spec.k;
            next.extend(m[last].iter().map(|&t| pi * t));
        }
        probs = next;
    }
    TabularDistribution::with_cap(vec![spec.k; spec.p], probs, cap)
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `P(Y = 1 | x) = sigmoid(intercept + β · code(x))` with centered state codes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticLink {
    pub intercept: f64,
    pub beta: Vec<f64>,
}

impl LogisticLink {
    /// Numeric code of state `k` of a variable with `cardinality` states.
    pub fn code(k: usize, cardinality: usize) -> f64 {
        k as f64 - (cardinality as f64 - 1.0) / 2.0
    }

    pub fn constant(p: usize, prob_case: f64) -> Self {
        Self {
            intercept: (prob_case / (1.0 - prob_case)).ln(),
            beta: vec![0.0; p],
        }
    }

    pub fn log_odds(&self, x: &[usize], cardinalities: &[usize]) -> f64 {
        self.intercept
            + x.iter()
                .zip(cardinalities)
                .zip(&self.beta)
                .map(|((&xj, &k), &b)| b * Self::code(xj, k))
                .sum::<f64>()
    }

    pub fn prob_case(&self, x: &[usize], cardinalities: &[usize]) -> f64 {
        sigmoid(self.log_odds(x, cardinalities))
    }

    pub fn null_set(&self) -> NullSet {
        NullSet::from_coefficients(&self.beta, 0.0)
    }
}

/// Indices `j` (0-based) for which `Y ⊥ X_j | X_{-j}` holds.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullSet {
    pub nulls: BTreeSet<usize>,
    pub p: usize,
}

impl NullSet {
    /// Zero pattern of a coefficient vector; `|β_j| <= tol` counts as zero.
    pub fn from_coefficients(beta: &[f64], tol: f64) -> Self {
        Self {
            nulls: beta
                .iter()
                .enumerate()
                .filter(|(_, b)| b.abs() <= tol)
                .map(|(j, _)| j)
                .collect(),
            p: beta.len(),
        }
    }

    pub fn is_null(&self, j: usize) -> bool {
        self.nulls.contains(&j)
    }

    pub fn non_nulls(&self) -> BTreeSet<usize> {
        (0..self.p).filter(|j| !self.nulls.contains(j)).collect()
    }

    pub fn len(&self) -> usize {
        self.nulls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nulls.is_empty()
    }
}

/// Covariate law `P(X)` together with the label link `P(Y | X)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProspectiveModel {
    covariates: TabularDistribution,
    link: LogisticLink,
    prevalence: f64,
}

impl ProspectiveModel {
    pub fn new(covariates: TabularDistribution, link: LogisticLink) -> Result<Self> {
        if link.beta.len() != covariates.num_vars() {
            return Err(Error::ShapeMismatch(format!(
                "link has {} coefficients for {} variables",
                link.beta.len(),
                covariates.num_vars()
            )));
        }
        if !link.intercept.is_finite() || link.beta.iter().any(|b| !b.is_finite()) {
            return Err(validation("link coefficients must be finite"));
        }
        let radix = covariates.radix();
        let prevalence = stable_sum(covariates.support().map(|i| {
            covariates.probs()[i] * link.prob_case(&radix.decode(i), radix.cardinalities())
        }));
        Ok(Self {
            covariates,
            link,
            prevalence,
        })
    }

    pub fn covariates(&self) -> &TabularDistribution {
        &self.covariates
    }

    pub fn link(&self) -> &LogisticLink {
        &self.link
    }

    /// `π = P(Y = 1)`.
    pub fn prevalence(&self) -> f64 {
        self.prevalence
    }

    pub fn null_set(&self) -> NullSet {
        self.link.null_set()
    }

    pub fn num_vars(&self) -> usize {
        self.covariates.num_vars()
    }

    /// `P(Y = 1 | x)` for every encoded state.
    pub fn case_probabilities(&self) -> Vec<f64> {
        let radix = self.covariates.radix();
        (0..radix.size())
            .map(|i| self.link.prob_case(&radix.decode(i), radix.cardinalities()))
            .collect()
    }
}

/// Exact joint law of `(X, Y)`; entry for `(x, y)` lives at `2·index(x) + y`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledJoint {
    pub cardinalities: Vec<usize>,
    pub probs: Vec<f64>,
}

impl LabeledJoint {
    pub fn entry(&self, x_index: usize, y: u8) -> f64 {
        self.probs[2 * x_index + y as usize]
    }

    pub fn label_mass(&self, y: u8) -> f64 {
        stable_sum(self.probs.iter().skip(y as usize).step_by(2).copied())
    }

    /// Law of `X` obtained by summing out `Y`.
    pub fn covariate_marginal(&self) -> Vec<f64> {
        self.probs.chunks(2).map(|c| c[0] + c[1]).collect()
    }
}

pub fn prospective_joint(model: &ProspectiveModel) -> LabeledJoint {
    let case = model.case_probabilities();
    let mut probs = Vec::with_capacity(2 * case.len());
    for (&px, &p1) in model.covariates.probs().iter().zip(&case) {
        probs.push(px * (1.0 - p1));
        probs.push(px * p1);
    }
    LabeledJoint {
        cardinalities: model.covariates.cardinalities().to_vec(),
        probs,
    }
}

/// `P(X | Y = y)`: controls-only for `y = 0`, cases-only for `y = 1`.
pub fn condition_on_label(model: &ProspectiveModel, y: u8) -> Result<TabularDistribution> {
    if y > 1 {
        return Err(validation(format!("label must be 0 or 1, got {y}")));
    }
    let joint = prospective_joint(model);
    let mass = joint.label_mass(y);
    if mass <= 0.0 {
        return Err(Error::DegenerateLabel { label: y });
    }
    let probs = (0..model.covariates.len())
        .map(|i| joint.entry(i, y) / mass)
        .collect();
    TabularDistribution::new(joint.cardinalities, probs)
}

/// The covariate populations a knockoff sampler can be built for, or a
/// verification can be run under.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PopulationKind {
    /// `P(X)`.
    Prospective,
    /// `P(X | Y = 0)`.
    Controls,
    /// `P(X | Y = 1)`.
    Cases,
    /// `ρ · cases + (1 − ρ) · controls` for an arbitrary `ρ`.
    Mix(f64),
    /// Covariate marginal of a case-control sample with the given case fraction.
    Retrospective(f64),
}

impl PopulationKind {
    /// Weight on the cases-only law, if this population is a label mixture
    /// other than the prospective one.
    pub fn case_weight(&self) -> Option<f64> {
        match *self {
            PopulationKind::Prospective => None,
            PopulationKind::Controls => Some(0.0),
            PopulationKind::Cases => Some(1.0),
            PopulationKind::Mix(r) | PopulationKind::Retrospective(r) => Some(r),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PopulationKind::Mix(r) if !(0.0..=1.0).contains(&r) => {
                Err(validation(format!("mix weight {r} outside [0, 1]")))
            }
            PopulationKind::Retrospective(r) if !(r > 0.0 && r < 1.0) => {
                Err(validation(format!("case fraction {r} outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PopulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PopulationKind::Prospective => write!(f, "prospective"),
            PopulationKind::Controls => write!(f, "controls"),
            PopulationKind::Cases => write!(f, "cases"),
            PopulationKind::Mix(r) => write!(f, "mix:{r}"),
            PopulationKind::Retrospective(r) => write!(f, "retro:{r}"),
        }
    }
}

impl FromStr for PopulationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let weight = |rest: &str| -> Result<f64> {
            rest.parse::<f64>()
                .map_err(|_| validation(format!("bad population weight in '{s}'")))
        };
        let kind = match s {
            "prospective" => PopulationKind::Prospective,
            "controls" => PopulationKind::Controls,
            "cases" => PopulationKind::Cases,
            _ => {
                if let Some(rest) = s.strip_prefix("mix:") {
                    PopulationKind::Mix(weight(rest)?)
                } else if let Some(rest) = s.strip_prefix("retro:") {
                    PopulationKind::Retrospective(weight(rest)?)
                } else {
                    return Err(validation(format!(
                        "unknown population '{s}' (expected prospective, controls, cases, mix:<rho> or retro:<fraction>)"
                    )));
                }
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl Serialize for PopulationKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PopulationKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Both label-conditional covariate laws of a model.
#[derive(Clone, Debug)]
pub struct LabelConditionals {
    pub controls: TabularDistribution,
    pub cases: TabularDistribution,
}

impl LabelConditionals {
    pub fn new(model: &ProspectiveModel) -> Result<Self> {
        Ok(Self {
            controls: condition_on_label(model, 0)?,
            cases: condition_on_label(model, 1)?,
        })
    }

    pub fn population(&self, model: &ProspectiveModel, kind: PopulationKind) -> Result<TabularDistribution> {
        kind.validate()?;
        match kind.case_weight() {
            None => Ok(model.covariates().clone()),
            Some(w) => TabularDistribution::mix(&self.controls, &self.cases, w),
        }
    }
}

/// Covariate law of the requested population.
pub fn population(model: &ProspectiveModel, kind: PopulationKind) -> Result<TabularDistribution> {
    kind.validate()?;
    match kind {
        PopulationKind::Prospective => Ok(model.covariates().clone()),
        PopulationKind::Controls => condition_on_label(model, 0),
        PopulationKind::Cases => condition_on_label(model, 1),
        _ => LabelConditionals::new(model)?.population(model, kind),
    }
}

/// Number of cases in a stratified sample of size `n`.
pub fn case_count(case_fraction: f64, n: usize) -> usize {
    ((case_fraction * n as f64).round() as usize).min(n)
}

pub(crate) fn check_case_fraction(case_fraction: f64) -> Result<()> {
    if !(case_fraction > 0.0 && case_fraction < 1.0) {
        return Err(validation(format!("case fraction {case_fraction} outside (0, 1)")));
    }
    Ok(())
}

/// Draws a case-control sample: exactly `round(case_fraction · n)` rows from
/// the cases-only law, the rest from the controls-only law, then shuffles.
pub fn retrospective_sample(
    model: &ProspectiveModel,
    case_fraction: f64,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset<usize>> {
    check_case_fraction(case_fraction)?;
    let conditionals = LabelConditionals::new(model)?;
    retrospective_sample_from(&conditionals, case_fraction, n, seed)
}

pub fn retrospective_sample_from(
    conditionals: &LabelConditionals,
    case_fraction: f64,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset<usize>> {
    check_case_fraction(case_fraction)?;
    let n_cases = case_count(case_fraction, n);
    let mut rng = stream_rng(seed, 0);
    let radix = conditionals.controls.radix().clone();
    let mut rows: Vec<(Vec<usize>, u8, Source)> = Vec::with_capacity(n);
    for (label, table, count) in [
        (1u8, &conditionals.cases, n_cases),
        (0u8, &conditionals.controls, n - n_cases),
    ] {
        if count == 0 {
            continue;
        }
        let dist = WeightedIndex::new(table.probs())
            .map_err(|e| validation(format!("cannot sample from table: {e}")))?;
        let source = if label == 1 { Source::Cases } else { Source::Controls };
        for _ in 0..count {
            rows.push((radix.decode(dist.sample(&mut rng)), label, source));
        }
    }
    rows.shuffle(&mut rng);
    Ok(LabeledDataset::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_binary() -> ProspectiveModel {
        // P(Y=1|X=1) = .8, P(Y=1|X=0) = .2 with centered codes ±1/2: slope 2·logit(.8).
        let l = (0.8f64 / 0.2).ln();
        let covariates = TabularDistribution::new(vec![2], vec![0.5, 0.5]).unwrap();
        ProspectiveModel::new(covariates, LogisticLink { intercept: 0.0, beta: vec![2.0 * l] }).unwrap()
    }

    #[test]
    fn markov_copy_chain() {
        let spec = MarkovChainSpec::homogeneous(2, vec![0.5, 0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let t = tabular_from_markov(&spec).unwrap();
        assert_eq!(t.probs(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn markov_single_variable_is_init() {
        let spec = MarkovChainSpec { p: 1, k: 3, init: vec![0.2, 0.3, 0.5], transitions: vec![] };
        assert_eq!(tabular_from_markov(&spec).unwrap().probs(), &[0.2, 0.3, 0.5]);
    }

    #[test]
    fn markov_independent_chain_is_uniform() {
        let spec = MarkovChainSpec::homogeneous(3, vec![0.5, 0.5], vec![vec![0.5, 0.5]; 2]);
        let t = tabular_from_markov(&spec).unwrap();
        assert!(t.probs().iter().all(|&v| v == 0.125));
    }

    #[test]
    fn markov_rejects_bad_rows_and_big_tables() {
        let spec = MarkovChainSpec::homogeneous(2, vec![0.5, 0.5], vec![vec![0.6, 0.6], vec![0.5, 0.5]]);
        assert!(matches!(tabular_from_markov(&spec), Err(Error::Validation(_))));
        let spec = MarkovChainSpec::homogeneous(25, vec![0.5, 0.5], vec![vec![0.5, 0.5]; 2]);
        assert!(matches!(tabular_from_markov(&spec), Err(Error::Size { .. })));
        let spec = MarkovChainSpec::homogeneous(3, vec![0.5, 0.5], vec![vec![0.5, 0.5]; 2]);
        assert!(matches!(tabular_from_markov_with_cap(&spec, 4), Err(Error::Size { .. })));
    }

    #[test]
    fn centered_codes() {
        assert_eq!(LogisticLink::code(0, 2), -0.5);
        assert_eq!(LogisticLink::code(1, 3), 0.0);
        assert_eq!(LogisticLink::code(2, 3), 1.0);
    }

    #[test]
    fn single_binary_joint_by_hand() {
        let m = single_binary();
        let j = prospective_joint(&m);
        assert!((j.entry(1, 1) - 0.4).abs() < 1e-15);
        assert!((j.entry(0, 1) - 0.1).abs() < 1e-15);
        assert!((m.prevalence() - 0.5).abs() < 1e-15);
        let cases = condition_on_label(&m, 1).unwrap();
        assert!((cases.probs()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn constant_link_collapses_populations() {
        let cov = TabularDistribution::new(vec![2, 3], vec![0.1, 0.2, 0.05, 0.3, 0.15, 0.2]).unwrap();
        let m = ProspectiveModel::new(cov.clone(), LogisticLink::constant(2, 0.3)).unwrap();
        let j = prospective_joint(&m);
        for i in 0..cov.len() {
            assert!((j.entry(i, 1) - 0.3 * cov.probs()[i]).abs() < 1e-15);
        }
        for y in [0, 1] {
            assert!(condition_on_label(&m, y).unwrap().max_abs_diff(&cov).unwrap() < 1e-15);
        }
        let marg = j.covariate_marginal();
        assert!(marg.iter().zip(cov.probs()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn degenerate_label() {
        let cov = TabularDistribution::uniform(vec![2]).unwrap();
        let m = ProspectiveModel::new(cov, LogisticLink { intercept: 1e6, beta: vec![0.0] }).unwrap();
        assert!(matches!(condition_on_label(&m, 0), Err(Error::DegenerateLabel { label: 0 })));
    }

    #[test]
    fn mixing_at_prevalence_recovers_prospective() {
        let spec = MarkovChainSpec::homogeneous(3, vec![0.3, 0.7], vec![vec![0.9, 0.1], vec![0.2, 0.8]]);
        let m = ProspectiveModel::new(
            tabular_from_markov(&spec).unwrap(),
            LogisticLink { intercept: -1.0, beta: vec![2.0, 0.0, -1.0] },
        )
        .unwrap();
        let lc = LabelConditionals::new(&m).unwrap();
        let mixed = TabularDistribution::mix(&lc.controls, &lc.cases, m.prevalence()).unwrap();
        assert!(mixed.max_abs_diff(m.covariates()).unwrap() < 1e-12);
    }

    #[test]
    fn population_kind_parsing() {
        assert_eq!("controls".parse::<PopulationKind>().unwrap(), PopulationKind::Controls);
        assert_eq!("mix:0.3".parse::<PopulationKind>().unwrap(), PopulationKind::Mix(0.3));
        assert_eq!("retro:0.5".parse::<PopulationKind>().unwrap(), PopulationKind::Retrospective(0.5));
        assert!("retro:1.5".parse::<PopulationKind>().is_err());
        assert!("everyone".parse::<PopulationKind>().is_err());
        assert_eq!(PopulationKind::Mix(0.25).to_string(), "mix:0.25");
    }

    #[test]
    fn stratified_counts_and_reproducibility() {
        let m = single_binary();
        let d = retrospective_sample(&m, 0.5, 100, 3).unwrap();
        assert_eq!(d.y.iter().filter(|&&y| y == 1).count(), 50);
        let again = retrospective_sample(&m, 0.5, 100, 3).unwrap();
        assert_eq!(d, again);
        assert!(retrospective_sample(&m, 1.0, 100, 3).is_err());
    }

    #[test]
    fn retrospective_case_rows_follow_cases_only_law() {
        let m = single_binary();
        let d = retrospective_sample(&m, 0.5, 100_000, 11).unwrap();
        let (mut ones, mut cases) = (0usize, 0usize);
        for (x, &y) in d.rows.iter().zip(&d.y) {
            if y == 1 {
                cases += 1;
                ones += x[0];
            }
        }
        let freq = ones as f64 / cases as f64;
        assert!((freq - 0.8).abs() < 0.005, "{freq}");
    }

    #[test]
    fn constant_link_rows_follow_covariate_law() {
        let cov = TabularDistribution::new(vec![3], vec![0.2, 0.5, 0.3]).unwrap();
        let m = ProspectiveModel::new(cov, LogisticLink::constant(1, 0.05)).unwrap();
        let d = retrospective_sample(&m, 0.7, 60_000, 5).unwrap();
        for label in [0u8, 1] {
            let rows: Vec<usize> = d.rows.iter().zip(&d.y).filter(|(_, &y)| y == label).map(|(x, _)| x[0]).collect();
            for (k, expect) in [0.2, 0.5, 0.3].into_iter().enumerate() {
                let f = rows.iter().filter(|&&v| v == k).count() as f64 / rows.len() as f64;
                assert!((f - expect).abs() < 0.015, "label {label} state {k}: {f}");
            }
        }
    }
}
