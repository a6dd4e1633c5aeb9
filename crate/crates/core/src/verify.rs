//! Exact checks of the exchangeability transfer.
//!
//! A knockoff kernel built for one covariate law is applied to covariates
//! drawn from another; the resulting `(X, X̃)` law is enumerated and its
//! swap invariance measured coordinate by coordinate. For Gaussian
//! populations the check is a moment comparison on a Monte Carlo sample.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::gaussian::{lda_populations, retrospective_sample_gaussian, GaussianLdaModel};
use crate::knockoff::{ExactKernel, GaussianKnockoffSampler, KnockoffSampler, TabularKnockoffSampler, KernelMode};
use crate::population::{LabelConditionals, PopulationKind, ProspectiveModel};
use crate::rng::derive_seed;
use crate::table::{check_cap, stable_sum, MixedRadix, TabularDistribution, DEFAULT_ENUMERATION_CAP};

/// Largest null-variable swap distance under the target for which the
/// transfer is considered to hold.
pub const THEOREM_TOLERANCE: f64 = 1e-8;

/// Gaussian swap checks fail beyond this many standard errors.
pub const MOMENT_SE_LIMIT: f64 = 4.0;

/// Exact law of `(X, X̃)`; entry `(x, x̃)` lives at `index(x) · N + index(x̃)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTable {
    radix: MixedRadix,
    probs: Vec<f64>,
}

impl PairTable {
    pub fn radix(&self) -> &MixedRadix {
        &self.radix
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_vars(&self) -> usize {
        self.radix.num_vars()
    }

    pub fn entry(&self, x: usize, xt: usize) -> f64 {
        self.probs[x * self.radix.size() + xt]
    }

    /// Law of `X` (sums out `X̃`).
    pub fn x_marginal(&self) -> Vec<f64> {
        self.probs.chunks(self.radix.size()).map(|r| stable_sum(r.iter().copied())).collect()
    }

    /// Law of `X̃` (sums out `X`).
    pub fn knockoff_marginal(&self) -> Vec<f64> {
        let n = self.radix.size();
        let mut out = vec![0.0; n];
        for row in self.probs.chunks(n) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

/// `entry(x, x̃) = population(x) · kernel(x̃ | x)`.
pub fn exact_pair_law(population: &TabularDistribution, kernel: &ExactKernel) -> Result<PairTable> {
    if population.cardinalities() != kernel.cardinalities() {
        return Err(Error::ShapeMismatch(format!(
            "population cardinalities {:?} vs kernel {:?}",
            population.cardinalities(),
            kernel.cardinalities()
        )));
    }
    let n = population.len();
    check_cap((n as u128) * (n as u128), DEFAULT_ENUMERATION_CAP, "")?;
    let mut probs = vec![0.0; n * n];
    for x in population.support() {
        if !kernel.is_row_defined(x) {
            return Err(Error::Support(format!(
                "population puts mass on state {:?} where the kernel is undefined",
                population.radix().decode(x)
            )));
        }
        let px = population.probs()[x];
        for (o, k) in probs[x * n..(x + 1) * n].iter_mut().zip(kernel.row(x)) {
            *o = px * k;
        }
    }
    Ok(PairTable {
        radix: population.radix().clone(),
        probs,
    })
}

/// Total-variation distance between the pair law and the same law with
/// `X_j` and `X̃_j` exchanged.
pub fn swap_invariance_distance(joint: &PairTable, j: usize) -> Result<f64> {
    if j >= joint.num_vars() {
        return Err(validation(format!("variable index {j} out of range")));
    }
    let r = &joint.radix;
    let n = r.size();
    let stride = r.strides()[j];
    let k = r.cardinalities()[j];
    let terms = joint.probs.iter().enumerate().map(|(a, &v)| {
        let (x, xt) = (a / n, a % n);
        let (dx, dxt) = ((x / stride) % k, (xt / stride) % k);
        if dx == dxt {
            return 0.0;
        }
        let sx = x + dxt * stride - dx * stride;
        let sxt = xt + dx * stride - dxt * stride;
        (v - joint.probs[sx * n + sxt]).abs()
    });
    Ok((0.5 * stable_sum(terms)).min(1.0))
}

/// Agreement of the `X_j | X_{-j}` laws of two tables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMatch {
    /// Largest sup-norm gap over compared assignments.
    pub max_abs_deviation: f64,
    pub compared: usize,
    /// Assignments of `X_{-j}` with zero mass in either table.
    pub skipped: usize,
}

pub fn null_conditional_match(p: &TabularDistribution, q: &TabularDistribution, j: usize) -> Result<ConditionalMatch> {
    p.same_shape(q)?;
    if j >= p.num_vars() {
        return Err(validation(format!("variable index {j} out of range")));
    }
    let r = p.radix();
    let mut out = ConditionalMatch {
        max_abs_deviation: 0.0,
        compared: 0,
        skipped: 0,
    };
    for base in (0..r.size()).filter(|&i| r.digit(i, j) == 0) {
        match (p.conditional_law_at(j, base), q.conditional_law_at(j, base)) {
            (Ok(a), Ok(b)) => {
                out.compared += 1;
                let d = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
                out.max_abs_deviation = out.max_abs_deviation.max(d);
            }
            _ => out.skipped += 1,
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableSwap {
    /// 1-based variable index.
    pub variable: usize,
    pub is_null: bool,
    pub tv_under_reference: f64,
    pub tv_under_target: f64,
    /// Sup-norm gap between reference and target `X_j | X_{-j}` laws.
    pub conditional_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapReport {
    pub reference: PopulationKind,
    pub target: PopulationKind,
    pub variables: Vec<VariableSwap>,
    pub max_null_tv_target: f64,
    pub min_non_null_tv_target: Option<f64>,
    pub theorem_holds_for_nulls: bool,
}

impl SwapReport {
    pub fn variable(&self, j: usize) -> &VariableSwap {
        &self.variables[j]
    }
}

/// Builds the sampler on `reference`, then compares pair laws under the
/// reference and under `target`.
pub fn verify_theorem(model: &ProspectiveModel, reference: PopulationKind, target: PopulationKind) -> Result<SwapReport> {
    let conditionals = LabelConditionals::new(model)?;
    let ref_table = conditionals.population(model, reference)?;
    let sampler = TabularKnockoffSampler::build(
        &ref_table,
        None,
        KernelMode::Exact,
        DEFAULT_ENUMERATION_CAP,
        reference.to_string(),
    )?;
    verify_kernel(model, &conditionals, reference, target, sampler.exact_kernel()?)
}

/// Same as [`verify_theorem`] for a caller-supplied kernel.
pub fn verify_kernel(
    model: &ProspectiveModel,
    conditionals: &LabelConditionals,
    reference: PopulationKind,
    target: PopulationKind,
    kernel: &ExactKernel,
) -> Result<SwapReport> {
    let ref_table = conditionals.population(model, reference)?;
    let target_table = conditionals.population(model, target)?;
    let under_ref = exact_pair_law(&ref_table, kernel)?;
    let under_target = exact_pair_law(&target_table, kernel)?;
    let nulls = model.null_set();
    let variables = (0..model.num_vars())
        .into_par_iter()
        .map(|j| {
            Ok(VariableSwap {
                variable: j + 1,
                is_null: nulls.is_null(j),
                tv_under_reference: swap_invariance_distance(&under_ref, j)?,
                tv_under_target: swap_invariance_distance(&under_target, j)?,
                conditional_gap: null_conditional_match(&ref_table, &target_table, j)?.max_abs_deviation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_null_tv_target = variables
        .iter()
        .filter(|v| v.is_null)
        .map(|v| v.tv_under_target)
        .fold(0.0, f64::max);
    let min_non_null_tv_target = variables
        .iter()
        .filter(|v| !v.is_null)
        .map(|v| v.tv_under_target)
        .reduce(f64::min);
    Ok(SwapReport {
        reference,
        target,
        variables,
        max_null_tv_target,
        min_non_null_tv_target,
        theorem_holds_for_nulls: max_null_tv_target <= THEOREM_TOLERANCE,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianVariableSwap {
    pub variable: usize,
    pub is_null: bool,
    /// Largest |deviation| / SE over the mean, variance and cross-covariance comparisons.
    pub max_z: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSwapReport {
    pub reference: PopulationKind,
    pub case_fraction: f64,
    pub n: usize,
    pub variables: Vec<GaussianVariableSwap>,
    pub nulls_pass: bool,
}

/// Sample covariance (divisor `n − 1`) of the rows.
pub fn empirical_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut c = DMatrix::zeros(d, d);
    for r in rows {
        for a in 0..d {
            let da = r[a] - mean[a];
            for b in a..d {
                c[(a, b)] += da * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            c[(a, b)] /= (n - 1) as f64;
            c[(b, a)] = c[(a, b)];
        }
    }
    c
}

fn z_score(d: &[f64]) -> f64 {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    if se == 0.0 {
        if mean == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        mean.abs() / se
    }
}

/// Largest standardized gap between the stacked `(x, x̃)` moments and the
/// moments after exchanging columns `j` and `p + j`.
pub fn moment_swap_z(stacked: &[Vec<f64>], j: usize, p: usize) -> f64 {
    let n = stacked.len();
    let mut mean = vec![0.0; 2 * p];
    for r in stacked {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let (a, b) = (j, p + j);
    let mut worst = z_score(&stacked.iter().map(|r| r[a] - r[b]).collect::<Vec<_>>());
    let var_diff: Vec<f64> = stacked
        .iter()
        .map(|r| (r[a] - mean[a]).powi(2) - (r[b] - mean[b]).powi(2))
        .collect();
    worst = worst.max(z_score(&var_diff));
    for k in (0..2 * p).filter(|&k| k != a && k != b) {
        let d: Vec<f64> = stacked
            .iter()
            .map(|r| ((r[a] - mean[a]) - (r[b] - mean[b])) * (r[k] - mean[k]))
            .collect();
        worst = worst.max(z_score(&d));
    }
    worst
}

/// Moment-based swap check for Gaussian knockoffs built on one label
/// class and applied to a case-control sample.
pub fn gaussian_moment_swap_check(
    model: &GaussianLdaModel,
    reference: PopulationKind,
    case_fraction: f64,
    n: usize,
    seed: u64,
) -> Result<GaussianSwapReport> {
    if n < 10_000 {
        return Err(validation(format!("moment swap check needs n >= 10000, got {n}")));
    }
    let pops = lda_populations(model)?;
    let population = match reference {
        PopulationKind::Controls => &pops.controls,
        PopulationKind::Cases => &pops.cases,
        other => {
            return Err(validation(format!(
                "Gaussian knockoffs are available for controls or cases only, not {other}"
            )))
        }
    };
    let sampler = GaussianKnockoffSampler::equicorrelated(population, reference.to_string())?;
    let data = retrospective_sample_gaussian(&pops, case_fraction, n, derive_seed(seed, 0))?;
    let knockoffs = sampler.sample_rows(&data.rows, derive_seed(seed, 1))?;
    let stacked: Vec<Vec<f64>> = data
        .rows
        .iter()
        .zip(&knockoffs)
        .map(|(x, xt)| x.iter().chain(xt).copied().collect())
        .collect();
    let p = model.num_vars();
    let variables: Vec<GaussianVariableSwap> = (0..p)
        .into_par_iter()
        .map(|j| {
            let max_z = moment_swap_z(&stacked, j, p);
            GaussianVariableSwap {
                variable: j + 1,
                is_null: pops.nulls.is_null(j),
                max_z,
                passes: max_z <= MOMENT_SE_LIMIT,
            }
        })
        .collect();
    let nulls_pass = variables.iter().filter(|v| v.is_null).all(|v| v.passes);
    Ok(GaussianSwapReport {
        reference,
        case_fraction,
        n,
        variables,
        nulls_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knockoff::scip_build;
    use crate::population::{tabular_from_markov, LogisticLink, MarkovChainSpec};

    fn toy_model() -> ProspectiveModel {
        let spec = MarkovChainSpec {
            p: 3,
            k: 2,
            init: vec![0.4, 0.6],
            transitions: vec![vec![vec![0.7, 0.3], vec![0.2, 0.8]], vec![vec![0.6, 0.4], vec![0.1, 0.9]]],
        };
        ProspectiveModel::new(
            tabular_from_markov(&spec).unwrap(),
            LogisticLink { intercept: -2.0, beta: vec![0.0, 2.0, 0.0] },
        )
        .unwrap()
    }

    #[test]
    fn point_mass_population_occupies_one_row() {
        let t = TabularDistribution::uniform(vec![2, 2]).unwrap();
        let s = scip_build(&t, None).unwrap();
        let pm = TabularDistribution::point_mass(vec![2, 2], &[1, 0]).unwrap();
        let joint = exact_pair_law(&pm, s.exact_kernel().unwrap()).unwrap();
        let rows = joint.x_marginal();
        assert_eq!(rows, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn independent_population_and_fresh_kernel_give_product() {
        let t = TabularDistribution::product(&[vec![0.2, 0.8], vec![0.5, 0.3, 0.2]]).unwrap();
        let s = scip_build(&t, None).unwrap();
        let joint = exact_pair_law(&t, s.exact_kernel().unwrap()).unwrap();
        for x in 0..t.len() {
            for xt in 0..t.len() {
                assert!((joint.entry(x, xt) - t.probs()[x] * t.probs()[xt]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn x_marginal_recovers_population() {
        let m = toy_model();
        let lc = LabelConditionals::new(&m).unwrap();
        let s = scip_build(&lc.controls, None).unwrap();
        let joint = exact_pair_law(&lc.cases, s.exact_kernel().unwrap()).unwrap();
        for (a, b) in joint.x_marginal().iter().zip(lc.cases.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
        let total = stable_sum(joint.probs().iter().copied());
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn undefined_kernel_rows_are_a_support_error() {
        let copy = TabularDistribution::new(vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let s = scip_build(&copy, None).unwrap();
        let u = TabularDistribution::uniform(vec![2, 2]).unwrap();
        assert!(matches!(exact_pair_law(&u, s.exact_kernel().unwrap()), Err(Error::Support(_))));
    }

    #[test]
    fn swap_distance_index_out_of_range() {
        let t = TabularDistribution::uniform(vec![2, 2]).unwrap();
        let s = scip_build(&t, None).unwrap();
        let joint = exact_pair_law(&t, s.exact_kernel().unwrap()).unwrap();
        assert!(swap_invariance_distance(&joint, 2).is_err());
    }

    #[test]
    fn copy_chain_is_swap_invariant() {
        let copy = TabularDistribution::new(vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let s = scip_build(&copy, None).unwrap();
        let joint = exact_pair_law(&copy, s.exact_kernel().unwrap()).unwrap();
        for j in 0..2 {
            assert!(swap_invariance_distance(&joint, j).unwrap() <= 1e-14);
        }
    }

    #[test]
    fn conditional_match_identity_and_skips() {
        let m = toy_model();
        let t = m.covariates();
        assert_eq!(null_conditional_match(t, t, 1).unwrap().max_abs_deviation, 0.0);
        let copy = TabularDistribution::new(vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let u = TabularDistribution::uniform(vec![2, 2]).unwrap();
        let r = null_conditional_match(&copy, &u, 0).unwrap();
        assert_eq!((r.compared, r.skipped), (2, 0));
        assert_eq!(r.max_abs_deviation, 0.5);
    }

    #[test]
    fn toy_transfer() {
        let m = toy_model();
        let r = verify_theorem(&m, PopulationKind::Controls, PopulationKind::Retrospective(0.5)).unwrap();
        assert!(r.theorem_holds_for_nulls);
        assert!(r.variables.iter().all(|v| v.tv_under_reference <= 1e-10));
        assert!(r.min_non_null_tv_target.unwrap() > 1e-4);
        let same = verify_theorem(&m, PopulationKind::Cases, PopulationKind::Cases).unwrap();
        assert!(same.variables.iter().all(|v| v.tv_under_target <= 1e-10));
    }

    #[test]
    fn moment_check_rejects_small_n_and_mixture_reference() {
        let m = GaussianLdaModel { mu0: vec![0.0; 2], mu1: vec![1.0, 0.0], sigma: crate::gaussian::equicorrelation(2, 0.0), prevalence: 0.1 };
        assert!(gaussian_moment_swap_check(&m, PopulationKind::Controls, 0.5, 100, 1).is_err());
        assert!(gaussian_moment_swap_check(&m, PopulationKind::Prospective, 0.5, 20_000, 1).is_err());
    }

    #[test]
    fn empirical_covariance_small_case() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 10.0]];
        let c = empirical_covariance(&rows);
        assert!((c[(0, 0)] - 4.0).abs() < 1e-12);
        assert!((c[(0, 1)] - 8.0).abs() < 1e-12);
        assert!((c[(1, 1)] - 16.0).abs() < 1e-12);
    }
}
