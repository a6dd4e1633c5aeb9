//! Knockoff-generating kernels `x → x̃`.
//!
//! Each sampler is built for a reference population and satisfies pairwise
//! swap exchangeability of `(X, X̃)` when `X` is drawn from that reference.

mod gaussian;
mod scip;

pub use gaussian::{equicorrelated_s, GaussianKnockoffSampler, EQUICORRELATED_SHRINK};
pub use scip::{scip_build, scip_sample, ExactKernel, KernelMode, TabularKnockoffSampler};

use crate::error::Result;
use crate::rng::{stream_rng, Rng};

pub trait KnockoffSampler: Send + Sync {
    type Value: Copy + Send + Sync;

    /// Name of the population this sampler was built for.
    fn reference_label(&self) -> &str;

    fn num_vars(&self) -> usize;

    /// One knockoff draw for `x`.
    fn sample(&self, x: &[Self::Value], rng: &mut Rng) -> Result<Vec<Self::Value>>;

    /// Knockoffs for every row; row `i` uses its own stream of `seed`.
    fn sample_rows(&self, rows: &[Vec<Self::Value>], seed: u64) -> Result<Vec<Vec<Self::Value>>> {
        rows.iter()
            .enumerate()
            .map(|(i, x)| self.sample(x, &mut stream_rng(seed, i as u64)))
            .collect()
    }
}
