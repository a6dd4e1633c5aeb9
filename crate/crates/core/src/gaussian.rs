//! Gaussian covariate populations: the two-class linear discriminant model,
//! whose label-conditionals are exactly Gaussian with a shared covariance.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Source};
use crate::error::{validation, Error, Result};
use crate::population::{case_count, check_case_fraction, NullSet};
use crate::rng::{stream_rng, Rng};

pub(crate) const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Coefficients with `|β_j| <= NULL_TOLERANCE · max(1, ‖β‖∞)` are treated as zero.
pub const NULL_TOLERANCE: f64 = 1e-10;

pub(crate) fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::ShapeMismatch("covariance must be a non-empty square matrix".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOLERANCE {
                return Err(validation(format!("covariance is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Multivariate normal with a Cholesky factor of its covariance.
#[derive(Clone, Debug)]
pub struct MultivariateNormal {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
}

impl MultivariateNormal {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if mean.len() != cov.nrows() || !cov.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "mean of length {} with {}x{} covariance",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        check_symmetric(&cov)?;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("covariance has no Cholesky factor".into()))?;
        Ok(Self {
            mean,
            chol_lower: chol.unpack(),
            cov,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.mean + &self.chol_lower * z).iter().copied().collect()
    }
}

/// Two Gaussian classes sharing a covariance: `X | Y = y ~ N(mu_y, sigma)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianLdaModel {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub prevalence: f64,
}

/// Exact label-conditional laws of an LDA model and its implied logistic coefficients.
#[derive(Clone, Debug)]
pub struct LdaPopulations {
    pub controls: MultivariateNormal,
    pub cases: MultivariateNormal,
    /// `sigma⁻¹ (mu1 − mu0)`.
    pub beta: Vec<f64>,
    pub nulls: NullSet,
}

impl GaussianLdaModel {
    pub fn num_vars(&self) -> usize {
        self.mu0.len()
    }

    pub fn sigma_matrix(&self) -> Result<DMatrix<f64>> {
        to_matrix(&self.sigma)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.mu0.len();
        if p == 0 || self.mu1.len() != p || self.sigma.len() != p {
            return Err(Error::ShapeMismatch("mu0, mu1 and sigma dimensions disagree".into()));
        }
        if self.mu0.iter().chain(&self.mu1).any(|v| !v.is_finite()) {
            return Err(validation("means must be finite"));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(validation(format!("prevalence {} outside (0, 1)", self.prevalence)));
        }
        let s = self.sigma_matrix()?;
        check_symmetric(&s)?;
        Ok(())
    }

    /// Log-odds of `Y = 1` at `x`.
    pub fn log_odds(&self, x: &[f64]) -> Result<f64> {
        let pops = lda_populations(self)?;
        let mid: Vec<f64> = self.mu0.iter().zip(&self.mu1).map(|(a, b)| 0.5 * (a + b)).collect();
        let lin: f64 = pops
            .beta
            .iter()
            .zip(x.iter().zip(&mid))
            .map(|(b, (xi, m))| b * (xi - m))
            .sum();
        Ok(lin + (self.prevalence / (1.0 - self.prevalence)).ln())
    }
}

pub fn lda_populations(model: &GaussianLdaModel) -> Result<LdaPopulations> {
    model.validate()?;
    let sigma = model.sigma_matrix()?;
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("sigma is not positive definite".into()))?;
    let diff = DVector::from_iterator(
        model.num_vars(),
        model.mu1.iter().zip(&model.mu0).map(|(a, b)| a - b),
    );
    let beta: Vec<f64> = chol.solve(&diff).iter().copied().collect();
    let scale = beta.iter().fold(1.0f64, |m, b| m.max(b.abs()));
    let nulls = NullSet::from_coefficients(&beta, NULL_TOLERANCE * scale);
    Ok(LdaPopulations {
        controls: MultivariateNormal::new(DVector::from_vec(model.mu0.clone()), sigma.clone())?,
        cases: MultivariateNormal::new(DVector::from_vec(model.mu1.clone()), sigma)?,
        beta,
        nulls,
    })
}

/// Stratified case-control sample from the two Gaussian classes.
pub fn retrospective_sample_gaussian(
    populations: &LdaPopulations,
    case_fraction: f64,
    n: usize,
    seed: u64,
) -> Result<LabeledDataset<f64>> {
    check_case_fraction(case_fraction)?;
    let n_cases = case_count(case_fraction, n);
    let mut rng = stream_rng(seed, 0);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n_cases {
        rows.push((populations.cases.sample(&mut rng), 1u8, Source::Cases));
    }
    for _ in n_cases..n {
        rows.push((populations.controls.sample(&mut rng), 0u8, Source::Controls));
    }
    rows.shuffle(&mut rng);
    Ok(LabeledDataset::from_rows(rows))
}

/// `(1 − rho) I + rho 11ᵀ`.
pub fn equicorrelation(p: usize, rho: f64) -> Vec<Vec<f64>> {
    (0..p)
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else { rho }).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(p: usize) -> Vec<Vec<f64>> {
        equicorrelation(p, 0.0)
    }

    #[test]
    fn equal_means_are_all_null() {
        let m = GaussianLdaModel { mu0: vec![1.0; 4], mu1: vec![1.0; 4], sigma: identity(4), prevalence: 0.1 };
        let pops = lda_populations(&m).unwrap();
        assert!(pops.beta.iter().all(|&b| b == 0.0));
        assert_eq!(pops.nulls.len(), 4);
    }

    #[test]
    fn unit_shift_on_identity() {
        let m = GaussianLdaModel {
            mu0: vec![0.0; 3],
            mu1: vec![1.0, 0.0, 0.0],
            sigma: identity(3),
            prevalence: 0.2,
        };
        let pops = lda_populations(&m).unwrap();
        assert_eq!(pops.beta, vec![1.0, 0.0, 0.0]);
        assert_eq!(pops.nulls.nulls.iter().copied().collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn singular_and_asymmetric_sigma_are_rejected() {
        let mut m = GaussianLdaModel {
            mu0: vec![0.0; 2],
            mu1: vec![1.0, 0.0],
            sigma: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            prevalence: 0.5,
        };
        assert!(matches!(lda_populations(&m), Err(Error::Singular(_))));
        m.sigma = vec![vec![1.0, 0.2], vec![0.1, 1.0]];
        assert!(matches!(lda_populations(&m), Err(Error::Validation(_))));
    }

    #[test]
    fn beta_matches_numeric_gradient_of_log_odds() {
        let m = GaussianLdaModel {
            mu0: vec![0.2, -0.1, 0.4],
            mu1: vec![1.0, 0.3, -0.2],
            sigma: vec![vec![2.0, 0.3, 0.1], vec![0.3, 1.0, 0.2], vec![0.1, 0.2, 1.5]],
            prevalence: 0.3,
        };
        let pops = lda_populations(&m).unwrap();
        // log-odds from the two Gaussian log-densities directly
        let log_density_ratio = |x: &[f64]| -> f64 {
            let s = m.sigma_matrix().unwrap();
            let inv = s.try_inverse().unwrap();
            let q = |mu: &[f64]| {
                let d = DVector::from_iterator(3, x.iter().zip(mu).map(|(a, b)| a - b));
                (d.transpose() * &inv * &d)[(0, 0)]
            };
            -0.5 * q(&m.mu1) + 0.5 * q(&m.mu0)
        };
        let x0 = [0.3, -0.7, 1.1];
        let h = 1e-5;
        for j in 0..3 {
            let mut up = x0;
            let mut dn = x0;
            up[j] += h;
            dn[j] -= h;
            let g = (log_density_ratio(&up) - log_density_ratio(&dn)) / (2.0 * h);
            assert!((g - pops.beta[j]).abs() < 1e-6, "{j}: {g} vs {}", pops.beta[j]);
            let g2 = (m.log_odds(&up).unwrap() - m.log_odds(&dn).unwrap()) / (2.0 * h);
            assert!((g2 - pops.beta[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn stratified_gaussian_sample() {
        let m = GaussianLdaModel { mu0: vec![0.0; 2], mu1: vec![3.0, 0.0], sigma: identity(2), prevalence: 0.1 };
        let pops = lda_populations(&m).unwrap();
        let d = retrospective_sample_gaussian(&pops, 0.25, 4000, 1).unwrap();
        assert_eq!(d.y.iter().filter(|&&y| y == 1).count(), 1000);
        let case_mean: f64 = d.rows.iter().zip(&d.y).filter(|(_, &y)| y == 1).map(|(x, _)| x[0]).sum::<f64>() / 1000.0;
        assert!((case_mean - 3.0).abs() < 0.15);
        assert_eq!(d, retrospective_sample_gaussian(&pops, 0.25, 4000, 1).unwrap());
    }
}
