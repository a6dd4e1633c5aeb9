//! Sequential conditional independent pairs for exact tables.
//!
//! Variables are processed in `order`. At step `t` (variable `j`) the
//! knockoff `X̃_j` is drawn from the law of `X_j` given `(X_{-j}, X̃_{<t})`
//! under the running joint of `(X, X̃_{<t})`. Writing `L_t` for that
//! conditional, the kernel is `P(x̃ | x) = ∏_t L_t(x̃_j | x_{-j}, x̃_{<t})`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::KnockoffSampler;
use crate::error::{validation, Error, Result};
use crate::rng::{stream_rng, Rng};
use crate::table::{check_cap, stable_sum, MixedRadix, TabularDistribution, DEFAULT_ENUMERATION_CAP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// Materialize `P(x̃ | x)`; needs `(∏ K_j)²` entries under the cap.
    Exact,
    /// Run the sequential draws per call without materializing any joint.
    SamplingOnly,
    /// Exact when it fits under the cap, sampling-only otherwise.
    #[default]
    Auto,
}

/// Dense `P(x̃ | x)`; row `x` (encoded) holds a law over encoded `x̃`.
///
/// Rows for states outside the reference support are all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactKernel {
    radix: MixedRadix,
    rows: Vec<f64>,
}

impl ExactKernel {
    pub fn from_rows(cardinalities: &[usize], rows: Vec<f64>) -> Result<Self> {
        let radix = MixedRadix::new(cardinalities, DEFAULT_ENUMERATION_CAP)?;
        let n = radix.size();
        if rows.len() != n * n {
            return Err(Error::ShapeMismatch(format!("kernel has {} entries, expected {}", rows.len(), n * n)));
        }
        Ok(Self { radix, rows })
    }

    pub fn radix(&self) -> &MixedRadix {
        &self.radix
    }

    pub fn cardinalities(&self) -> &[usize] {
        self.radix.cardinalities()
    }

    pub fn num_states(&self) -> usize {
        self.radix.size()
    }

    pub fn row(&self, x: usize) -> &[f64] {
        let n = self.num_states();
        &self.rows[x * n..(x + 1) * n]
    }

    pub fn row_mut(&mut self, x: usize) -> &mut [f64] {
        let n = self.num_states();
        &mut self.rows[x * n..(x + 1) * n]
    }

    pub fn entry(&self, x: usize, xt: usize) -> f64 {
        self.rows[x * self.num_states() + xt]
    }

    pub fn is_row_defined(&self, x: usize) -> bool {
        self.row(x).iter().any(|&v| v > 0.0)
    }

    /// Row `x` as a table over `x̃`.
    pub fn row_table(&self, x: usize) -> Result<TabularDistribution> {
        TabularDistribution::new(self.cardinalities().to_vec(), self.row(x).to_vec())
    }
}

/// Knockoff sampler for a discrete reference law.
#[derive(Clone, Debug)]
pub struct TabularKnockoffSampler {
    reference: TabularDistribution,
    order: Vec<usize>,
    label: String,
    kernel: Option<ExactKernel>,
}

fn check_order(order: &[usize], p: usize) -> Result<()> {
    let mut seen = vec![false; p];
    if order.len() != p {
        return Err(validation(format!("construction order has {} entries for {p} variables", order.len())));
    }
    for &j in order {
        if j >= p || std::mem::replace(&mut seen[j], true) {
            return Err(validation(format!("construction order {order:?} is not a permutation of 0..{p}")));
        }
    }
    Ok(())
}

/// Builds the sampler. `order` defaults to `0..p`.
pub fn scip_build(reference: &TabularDistribution, order: Option<&[usize]>) -> Result<TabularKnockoffSampler> {
    TabularKnockoffSampler::build(reference, order, KernelMode::Exact, DEFAULT_ENUMERATION_CAP, "reference")
}

/// One knockoff draw at `x`, deterministic in `seed`.
pub fn scip_sample(sampler: &TabularKnockoffSampler, x: &[usize], seed: u64) -> Result<Vec<usize>> {
    sampler.sample(x, &mut stream_rng(seed, 0))
}

impl TabularKnockoffSampler {
    pub fn build(
        reference: &TabularDistribution,
        order: Option<&[usize]>,
        mode: KernelMode,
        cap: usize,
        label: impl Into<String>,
    ) -> Result<Self> {
        let p = reference.num_vars();
        let order: Vec<usize> = order.map_or_else(|| (0..p).collect(), <[usize]>::to_vec);
        check_order(&order, p)?;
        let n = reference.len() as u128;
        let fits = check_cap(n * n, cap, "; use sampling-only mode");
        let kernel = match (mode, fits) {
            (KernelMode::Exact, Err(e)) => return Err(e),
            (KernelMode::Exact, Ok(())) | (KernelMode::Auto, Ok(())) => Some(exact_kernel_rows(reference, &order)),
            _ => None,
        };
        Ok(Self {
            reference: reference.clone(),
            order,
            label: label.into(),
            kernel,
        })
    }

    pub fn reference(&self) -> &TabularDistribution {
        &self.reference
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn mode(&self) -> KernelMode {
        if self.kernel.is_some() {
            KernelMode::Exact
        } else {
            KernelMode::SamplingOnly
        }
    }

    /// The materialized `P(x̃ | x)`.
    pub fn exact_kernel(&self) -> Result<&ExactKernel> {
        self.kernel.as_ref().ok_or(Error::Size {
            entries: (self.reference.len() as u128).pow(2),
            cap: DEFAULT_ENUMERATION_CAP,
            hint: "; sampler was built in sampling-only mode",
        })
    }

    /// Draw without the materialized kernel: carries the running joint
    /// `J_t(·, x̃_{≤t})` over all `x` as a vector.
    fn sample_streaming(&self, x: usize, rng: &mut Rng) -> usize {
        let radix = self.reference.radix();
        let mut joint = self.reference.probs().to_vec();
        let mut next = vec![0.0; joint.len()];
        let mut xt = vec![0usize; radix.num_vars()];
        for &j in &self.order {
            let k = radix.cardinalities()[j];
            let stride = radix.strides()[j];
            let base = radix.with_digit(x, j, 0);
            let weights: Vec<f64> = (0..k).map(|v| joint[base + v * stride]).collect();
            let draw = categorical(&weights, rng);
            xt[j] = draw;
            for (i, out) in next.iter_mut().enumerate() {
                let f = joint[i];
                if f == 0.0 {
                    *out = 0.0;
                    continue;
                }
                let b = radix.with_digit(i, j, 0);
                let z: f64 = (0..k).map(|v| joint[b + v * stride]).sum();
                *out = f * joint[b + draw * stride] / z;
            }
            std::mem::swap(&mut joint, &mut next);
        }
        radix.encode(&xt)
    }
}

/// Index drawn with probability proportional to `weights`.
fn categorical(weights: &[f64], rng: &mut Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

fn exact_kernel_rows(reference: &TabularDistribution, order: &[usize]) -> ExactKernel {
    let radix = reference.radix();
    let n = radix.size();
    let pi = reference.probs();
    // cond[x * m + prefix] = ∏_{s<t} L_s, prefix encoded in construction order.
    let mut cond: Vec<f64> = pi.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut m = 1usize;
    for &j in order {
        let k = radix.cardinalities()[j];
        let stride = radix.strides()[j];
        let mut next = vec![0.0; n * m * k];
        for x in 0..n {
            let base = radix.with_digit(x, j, 0);
            for prefix in 0..m {
                let c = cond[x * m + prefix];
                if c == 0.0 {
                    continue;
                }
                // joint mass of (x with x_j = v, prefix), v = 0..k
                let mass: Vec<f64> = (0..k)
                    .map(|v| {
                        let xv = base + v * stride;
                        pi[xv] * cond[xv * m + prefix]
                    })
                    .collect();
                let z = stable_sum(mass.iter().copied());
                let out = &mut next[(x * m + prefix) * k..(x * m + prefix + 1) * k];
                for (o, w) in out.iter_mut().zip(&mass) {
                    *o = c * w / z;
                }
            }
        }
        cond = next;
        m *= k;
    }
    // Re-index x̃ from construction order to the natural layout.
    let natural: Vec<usize> = (0..n)
        .map(|prefix| {
            let mut rest = prefix;
            let mut idx = 0;
            for &j in order.iter().rev() {
                let k = radix.cardinalities()[j];
                idx += (rest % k) * radix.strides()[j];
                rest /= k;
            }
            idx
        })
        .collect();
    let mut rows = vec![0.0; n * n];
    for x in 0..n {
        for (prefix, &xt) in natural.iter().enumerate() {
            rows[x * n + xt] = cond[x * n + prefix];
        }
    }
    ExactKernel {
        radix: radix.clone(),
        rows,
    }
}

impl KnockoffSampler for TabularKnockoffSampler {
    type Value = usize;

    fn reference_label(&self) -> &str {
        &self.label
    }

    fn num_vars(&self) -> usize {
        self.reference.num_vars()
    }

    fn sample(&self, x: &[usize], rng: &mut Rng) -> Result<Vec<usize>> {
        let radix = self.reference.radix();
        radix.validate_state(x)?;
        let idx = radix.encode(x);
        if self.reference.probs()[idx] <= 0.0 {
            return Err(Error::Support(format!("state {x:?} is outside the reference support")));
        }
        let xt = match &self.kernel {
            Some(k) => categorical(k.row(idx), rng),
            None => self.sample_streaming(idx, rng),
        };
        Ok(radix.decode(xt))
    }
}
