//! Exact probability tables over discrete covariate vectors.
//!
//! States are addressed by a mixed-radix, row-major encoding: variable 1 is
//! the most significant digit, so for cardinalities `(K_1, .., K_p)` the
//! state `x` sits at `Σ_j x_j · ∏_{i>j} K_i`. Tables written by this crate
//! use the same layout in JSON, which keeps them portable.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Largest number of table entries materialized in memory.
pub const DEFAULT_ENUMERATION_CAP: usize = 1 << 24;

/// Tolerance on the total mass of a table.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Compensated (Neumaier) summation.
pub fn stable_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub(crate) fn check_cap(entries: u128, cap: usize, hint: &'static str) -> Result<()> {
    if entries > cap as u128 {
        return Err(Error::Size { entries, cap, hint });
    }
    Ok(())
}

/// Mixed-radix codec for discrete state vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedRadix {
    cardinalities: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl MixedRadix {
    pub fn new(cardinalities: &[usize], cap: usize) -> Result<Self> {
        if cardinalities.is_empty() {
            return Err(validation("at least one variable is required"));
        }
        if let Some(k) = cardinalities.iter().find(|&&k| k < 2) {
            return Err(validation(format!("every variable needs at least 2 states, got {k}")));
        }
        let entries = cardinalities
            .iter()
            .try_fold(1u128, |acc, &k| acc.checked_mul(k as u128))
            .unwrap_or(u128::MAX);
        check_cap(entries, cap, "")?;
        let mut strides = vec![1usize; cardinalities.len()];
        for j in (0..cardinalities.len().saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * cardinalities[j + 1];
        }
        Ok(Self {
            cardinalities: cardinalities.to_vec(),
            strides,
            size: entries as usize,
        })
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn num_vars(&self) -> usize {
        self.cardinalities.len()
    }

    /// Number of states, `∏ K_j`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn encode(&self, x: &[usize]) -> usize {
        debug_assert_eq!(x.len(), self.cardinalities.len());
        x.iter().zip(&self.strides).map(|(&xj, &s)| xj * s).sum()
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut x = vec![0; self.cardinalities.len()];
        for (j, &s) in self.strides.iter().enumerate() {
            x[j] = index / s;
            index %= s;
        }
        x
    }

    /// Digit `j` of an encoded state.
    #[inline]
    pub fn digit(&self, index: usize, j: usize) -> usize {
        (index / self.strides[j]) % self.cardinalities[j]
    }

    /// Replace digit `j` of an encoded state.
    #[inline]
    pub fn with_digit(&self, index: usize, j: usize, value: usize) -> usize {
        index - self.digit(index, j) * self.strides[j] + value * self.strides[j]
    }

    pub fn validate_state(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.cardinalities.len() {
            return Err(Error::ShapeMismatch(format!(
                "state has {} entries, expected {}",
                x.len(),
                self.cardinalities.len()
            )));
        }
        for (j, (&xj, &k)) in x.iter().zip(&self.cardinalities).enumerate() {
            if xj >= k {
                return Err(validation(format!("x{} = {xj} outside 0..{k}", j + 1)));
            }
        }
        Ok(())
    }
}

/// Exact law of a discrete covariate vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct TabularDistribution {
    radix: MixedRadix,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    cardinalities: Vec<usize>,
    probs: Vec<f64>,
}

impl TryFrom<TableRepr> for TabularDistribution {
    type Error = Error;
    fn try_from(r: TableRepr) -> Result<Self> {
        Self::new(r.cardinalities, r.probs)
    }
}

impl From<TabularDistribution> for TableRepr {
    fn from(t: TabularDistribution) -> Self {
        TableRepr {
            cardinalities: t.radix.cardinalities,
            probs: t.probs,
        }
    }
}

impl TabularDistribution {
    pub fn new(cardinalities: Vec<usize>, probs: Vec<f64>) -> Result<Self> {
        Self::with_cap(cardinalities, probs, DEFAULT_ENUMERATION_CAP)
    }

    pub fn with_cap(cardinalities: Vec<usize>, probs: Vec<f64>, cap: usize) -> Result<Self> {
        let radix = MixedRadix::new(&cardinalities, cap)?;
        if probs.len() != radix.size() {
            return Err(Error::ShapeMismatch(format!(
                "probability vector has length {}, expected {}",
                probs.len(),
                radix.size()
            )));
        }
        if let Some(bad) = probs.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(validation(format!("invalid probability {bad}")));
        }
        let total = stable_sum(probs.iter().copied());
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(validation(format!("probabilities sum to {total}, expected 1")));
        }
        Ok(Self { radix, probs })
    }

    /// Builds a table from nonnegative weights, rescaling them to unit mass.
    pub fn from_weights(cardinalities: Vec<usize>, mut weights: Vec<f64>) -> Result<Self> {
        let total = stable_sum(weights.iter().copied());
        if !(total > 0.0 && total.is_finite()) {
            return Err(validation("weights must have positive finite mass"));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(cardinalities, weights)
    }

    pub fn uniform(cardinalities: Vec<usize>) -> Result<Self> {
        let radix = MixedRadix::new(&cardinalities, DEFAULT_ENUMERATION_CAP)?;
        let n = radix.size();
        Self::new(cardinalities, vec![1.0 / n as f64; n])
    }

    pub fn point_mass(cardinalities: Vec<usize>, x: &[usize]) -> Result<Self> {
        let radix = MixedRadix::new(&cardinalities, DEFAULT_ENUMERATION_CAP)?;
        radix.validate_state(x)?;
        let mut probs = vec![0.0; radix.size()];
        probs[radix.encode(x)] = 1.0;
        Self::new(cardinalities, probs)
    }

    /// Product of independent marginals.
    pub fn product(marginals: &[Vec<f64>]) -> Result<Self> {
        let cards: Vec<usize> = marginals.iter().map(Vec::len).collect();
        let radix = MixedRadix::new(&cards, DEFAULT_ENUMERATION_CAP)?;
        let probs = (0..radix.size())
            .map(|i| {
                marginals
                    .iter()
                    .enumerate()
                    .map(|(j, m)| m[radix.digit(i, j)])
                    .product()
            })
            .collect();
        Self::new(cards, probs)
    }

    pub fn radix(&self) -> &MixedRadix {
        &self.radix
    }

    pub fn cardinalities(&self) -> &[usize] {
        self.radix.cardinalities()
    }

    pub fn num_vars(&self) -> usize {
        self.radix.num_vars()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, x: &[usize]) -> f64 {
        self.probs[self.radix.encode(x)]
    }

    /// Encoded states with positive probability.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, _)| i)
    }

    pub fn support_mask(&self) -> Vec<bool> {
        self.probs.iter().map(|&p| p > 0.0).collect()
    }

    pub(crate) fn same_shape(&self, other: &Self) -> Result<()> {
        if self.cardinalities() != other.cardinalities() {
            return Err(Error::ShapeMismatch(format!(
                "cardinalities {:?} vs {:?}",
                self.cardinalities(),
                other.cardinalities()
            )));
        }
        Ok(())
    }

    /// Marginal law of variable `j`.
    pub fn marginal(&self, j: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.cardinalities()[j]];
        for (i, &p) in self.probs.iter().enumerate() {
            m[self.radix.digit(i, j)] += p;
        }
        m
    }

    /// Mass of the event `{X_{-j} = x_{-j}}` for the encoded state `index`.
    pub fn slice_mass(&self, index: usize, j: usize) -> f64 {
        let base = self.radix.with_digit(index, j, 0);
        let stride = self.radix.strides()[j];
        stable_sum((0..self.cardinalities()[j]).map(|k| self.probs[base + k * stride]))
    }

    /// Exact law of `X_j` given `X_{-j}`.
    ///
    /// `x` is a full assignment; its `j`-th entry is ignored.
    pub fn conditional_law(&self, j: usize, x: &[usize]) -> Result<Vec<f64>> {
        if j >= self.num_vars() {
            return Err(validation(format!("variable index {j} out of range")));
        }
        self.radix.validate_state(x)?;
        self.conditional_law_at(j, self.radix.encode(x))
    }

    pub(crate) fn conditional_law_at(&self, j: usize, index: usize) -> Result<Vec<f64>> {
        let base = self.radix.with_digit(index, j, 0);
        let stride = self.radix.strides()[j];
        let k = self.cardinalities()[j];
        let slice: Vec<f64> = (0..k).map(|v| self.probs[base + v * stride]).collect();
        let mass = stable_sum(slice.iter().copied());
        if mass <= 0.0 {
            return Err(Error::Support(format!(
                "conditioning event for x{} has zero mass",
                j + 1
            )));
        }
        Ok(slice.into_iter().map(|v| v / mass).collect())
    }

    /// `rho · cases + (1 − rho) · controls`.
    pub fn mix(controls: &Self, cases: &Self, rho: f64) -> Result<Self> {
        controls.same_shape(cases)?;
        if !(0.0..=1.0).contains(&rho) {
            return Err(validation(format!("mixing weight {rho} outside [0, 1]")));
        }
        let probs = if rho == 0.0 {
            controls.probs.clone()
        } else if rho == 1.0 {
            cases.probs.clone()
        } else {
            controls
                .probs
                .iter()
                .zip(&cases.probs)
                .map(|(&c0, &c1)| rho * c1 + (1.0 - rho) * c0)
                .collect()
        };
        Ok(Self {
            radix: controls.radix.clone(),
            probs,
        })
    }

    /// Total-variation distance to another table of the same shape.
    pub fn tv_distance(&self, other: &Self) -> Result<f64> {
        self.same_shape(other)?;
        Ok(0.5 * stable_sum(self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs())))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radix_is_row_major_with_first_variable_most_significant() {
        let r = MixedRadix::new(&[2, 3], DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(r.encode(&[0, 0]), 0);
        assert_eq!(r.encode(&[0, 2]), 2);
        assert_eq!(r.encode(&[1, 0]), 3);
        assert_eq!(r.decode(5), vec![1, 2]);
        assert_eq!(r.with_digit(5, 0, 0), 2);
        assert_eq!(r.digit(4, 1), 1);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(matches!(
            TabularDistribution::new(vec![2], vec![0.5, 0.6]),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            TabularDistribution::new(vec![2], vec![1.0]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(TabularDistribution::new(vec![1], vec![1.0]).is_err());
        assert!(TabularDistribution::new(vec![2], vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn cap_is_enforced() {
        let err = TabularDistribution::uniform(vec![2; 25]).unwrap_err();
        assert!(matches!(err, Error::Size { .. }));
        let err = TabularDistribution::with_cap(vec![2, 2], vec![0.25; 4], 3).unwrap_err();
        assert!(matches!(err, Error::Size { entries: 4, cap: 3, .. }));
    }

    #[test]
    fn conditional_law_of_independent_uniform_is_uniform() {
        let t = TabularDistribution::uniform(vec![3, 2, 3]).unwrap();
        for i in 0..t.len() {
            let x = t.radix().decode(i);
            for j in 0..3 {
                let law = t.conditional_law(j, &x).unwrap();
                let k = t.cardinalities()[j] as f64;
                assert!(law.iter().all(|&v| (v - 1.0 / k).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn conditioning_on_zero_mass_is_a_support_error() {
        let t = TabularDistribution::point_mass(vec![2, 2], &[1, 1]).unwrap();
        assert!(matches!(t.conditional_law(0, &[0, 0]), Err(Error::Support(_))));
        assert_eq!(t.conditional_law(0, &[0, 1]).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn mix_endpoints_are_exact() {
        let a = TabularDistribution::new(vec![2], vec![0.3, 0.7]).unwrap();
        let b = TabularDistribution::new(vec![2], vec![0.9, 0.1]).unwrap();
        assert_eq!(TabularDistribution::mix(&a, &b, 0.0).unwrap(), a);
        assert_eq!(TabularDistribution::mix(&a, &b, 1.0).unwrap(), b);
        let c = TabularDistribution::new(vec![3], vec![0.2, 0.2, 0.6]).unwrap();
        assert!(matches!(
            TabularDistribution::mix(&a, &c, 0.5),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn json_layout() {
        let t = TabularDistribution::new(vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"cardinalities":[2,2],"probs":[0.5,0.0,0.0,0.5]}"#);
        let back: TabularDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<TabularDistribution>(r#"{"cardinalities":[2],"probs":[0.2,0.2]}"#).is_err());
    }

    #[test]
    fn stable_sum_recovers_unit_mass() {
        let n = 1 << 20;
        let v = vec![1.0 / n as f64; n];
        assert_eq!(stable_sum(v), 1.0);
    }
}
