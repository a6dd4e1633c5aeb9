//! Gaussian model-X knockoffs with the equicorrelated slack vector.
//!
//! For `X ~ N(mu, S)` and `D = diag(s)`, the knockoff is drawn from
//! `N(mu + (I − D S⁻¹)(x − mu), 2D − D S⁻¹ D)`, which makes the stacked
//! covariance `G = [[S, S − D], [S − D, S]]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::KnockoffSampler;
use crate::error::{validation, Error, Result};
use crate::gaussian::{check_symmetric, MultivariateNormal};
use crate::rng::Rng;

/// Multiplicative shrink applied to the equicorrelated slack.
pub const EQUICORRELATED_SHRINK: f64 = 1.0 - 1e-8;

/// Most negative eigenvalue of the conditional covariance absorbed by clipping.
const PSD_TOLERANCE: f64 = 1e-10;

/// `s_j = min(2 λ_min(corr), 1) · S_jj`, shrunk by [`EQUICORRELATED_SHRINK`].
pub fn equicorrelated_s(sigma: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !sigma.is_square() || sigma.nrows() == 0 {
        return Err(Error::ShapeMismatch("sigma must be a non-empty square matrix".into()));
    }
    check_symmetric(sigma)?;
    let p = sigma.nrows();
    let diag: Vec<f64> = (0..p).map(|j| sigma[(j, j)]).collect();
    if diag.iter().any(|&d| d.is_nan() || d <= 0.0) {
        return Err(Error::Singular("sigma has a non-positive diagonal entry".into()));
    }
    let corr = DMatrix::from_fn(p, p, |i, j| sigma[(i, j)] / (diag[i] * diag[j]).sqrt());
    let lambda_min = SymmetricEigen::new(corr).eigenvalues.min();
    if lambda_min.is_nan() || lambda_min <= 0.0 {
        return Err(Error::Singular(format!("smallest correlation eigenvalue is {lambda_min:e}")));
    }
    let s_corr = (2.0 * lambda_min).min(1.0);
    Ok(diag.iter().map(|&d| s_corr * d * EQUICORRELATED_SHRINK).collect())
}

#[derive(Clone, Debug)]
pub struct GaussianKnockoffSampler {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    s: Vec<f64>,
    /// `D S⁻¹`; the conditional mean is `x − D S⁻¹ (x − mu)`.
    shrink_map: DMatrix<f64>,
    cond_cov: DMatrix<f64>,
    cond_sqrt: DMatrix<f64>,
    label: String,
}

impl GaussianKnockoffSampler {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, s: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let p = mu.len();
        if sigma.nrows() != p || sigma.ncols() != p || s.len() != p {
            return Err(Error::ShapeMismatch(format!(
                "mu has length {p}, sigma is {}x{}, s has length {}",
                sigma.nrows(),
                sigma.ncols(),
                s.len()
            )));
        }
        if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(validation("slack vector must be finite and nonnegative"));
        }
        check_symmetric(&sigma)?;
        let inv = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("sigma is not positive definite".into()))?
            .inverse();
        let d = DMatrix::from_diagonal(&DVector::from_vec(s.clone()));
        let shrink_map = &d * &inv;
        let raw = &d * 2.0 - &shrink_map * &d;
        let cond_cov = (&raw + raw.transpose()) * 0.5;
        let eig = SymmetricEigen::new(cond_cov.clone());
        let min = eig.eigenvalues.min();
        if min < -PSD_TOLERANCE {
            return Err(validation(format!(
                "slack vector is infeasible: conditional covariance has eigenvalue {min:e}"
            )));
        }
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let cond_sqrt = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
        Ok(Self {
            mu,
            sigma,
            s,
            shrink_map,
            cond_cov,
            cond_sqrt,
            label: label.into(),
        })
    }

    /// Equicorrelated sampler for `N(mu, sigma)`.
    pub fn equicorrelated(population: &MultivariateNormal, label: impl Into<String>) -> Result<Self> {
        let s = equicorrelated_s(population.cov())?;
        Self::new(population.mean().clone(), population.cov().clone(), s, label)
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn cond_cov(&self) -> &DMatrix<f64> {
        &self.cond_cov
    }

    pub fn cond_mean(&self, x: &[f64]) -> DVector<f64> {
        let x = DVector::from_column_slice(x);
        &x - &self.shrink_map * (&x - &self.mu)
    }

    /// `G = [[S, S − D], [S − D, S]]`.
    pub fn augmented_covariance(&self) -> DMatrix<f64> {
        let p = self.mu.len();
        let mut g = DMatrix::zeros(2 * p, 2 * p);
        let off = &self.sigma - DMatrix::from_diagonal(&DVector::from_vec(self.s.clone()));
        g.view_mut((0, 0), (p, p)).copy_from(&self.sigma);
        g.view_mut((p, p), (p, p)).copy_from(&self.sigma);
        g.view_mut((0, p), (p, p)).copy_from(&off);
        g.view_mut((p, 0), (p, p)).copy_from(&off);
        g
    }
}

impl KnockoffSampler for GaussianKnockoffSampler {
    type Value = f64;

    fn reference_label(&self) -> &str {
        &self.label
    }

    fn num_vars(&self) -> usize {
        self.mu.len()
    }

    fn sample(&self, x: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        if x.len() != self.mu.len() {
            return Err(Error::ShapeMismatch(format!("x has length {}, expected {}", x.len(), self.mu.len())));
        }
        let z = DVector::from_fn(x.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok((self.cond_mean(x) + &self.cond_sqrt * z).iter().copied().collect())
    }
}
