//! Shipped demo models and the random model generator used by the
//! verification battery.

use rand::Rng as _;

use crate::gaussian::{equicorrelation, GaussianLdaModel};
use crate::model::ModelSpec;
use crate::population::{LogisticLink, MarkovChainSpec, ProspectiveModel};
use crate::rng::stream_rng;
use crate::table::TabularDistribution;

/// Five binary variables on an inhomogeneous Markov chain; variables 2 and
/// 4 drive the label, 1, 3 and 5 are null.
pub fn demo_discrete_spec() -> ModelSpec {
    ModelSpec::Markov {
        chain: MarkovChainSpec {
            p: 5,
            k: 2,
            init: vec![0.5, 0.5],
            transitions: vec![
                vec![vec![0.8, 0.2], vec![0.3, 0.7]],
                vec![vec![0.7, 0.3], vec![0.25, 0.75]],
                vec![vec![0.85, 0.15], vec![0.4, 0.6]],
                vec![vec![0.75, 0.25], vec![0.2, 0.8]],
            ],
        },
        link: LogisticLink {
            intercept: -2.5,
            beta: vec![0.0, 1.5, 0.0, -1.2, 0.0],
        },
    }
}

pub fn demo_discrete_model() -> ProspectiveModel {
    match demo_discrete_spec().build() {
        Ok(crate::model::Model::Discrete(m)) => m,
        _ => unreachable!("demo model is valid"),
    }
}

/// Ten Gaussian variables with equicorrelated covariance (ρ = 0.3);
/// variables 1, 4 and 7 carry signal.
pub fn demo_lda_model() -> GaussianLdaModel {
    let p = 10;
    let sigma = equicorrelation(p, 0.3);
    let mut beta = vec![0.0; p];
    beta[0] = 1.5;
    beta[3] = -1.2;
    beta[6] = 1.0;
    let mu1 = sigma
        .iter()
        .map(|row| row.iter().zip(&beta).map(|(s, b)| s * b).sum())
        .collect();
    GaussianLdaModel {
        mu0: vec![0.0; p],
        mu1,
        sigma,
        prevalence: 0.05,
    }
}

/// Ten binary variables with four signals; large enough for the knockoff+
/// rule to make selections at q = 0.2.
pub fn power_discrete_spec() -> ModelSpec {
    let p = 10;
    let mut beta = vec![0.0; p];
    beta[1] = 2.0;
    beta[3] = -2.0;
    beta[6] = 1.8;
    beta[8] = -1.8;
    ModelSpec::Markov {
        chain: MarkovChainSpec::homogeneous(p, vec![0.5, 0.5], vec![vec![0.8, 0.2], vec![0.25, 0.75]]),
        link: LogisticLink { intercept: -3.0, beta },
    }
}

/// Random full-support discrete model with `2 <= p <= max_p` variables of
/// `2..=max_k` states each, at least one null and one non-null variable.
///
/// Even seeds use a Markov chain, odd seeds an unstructured table.
pub fn random_discrete_model(seed: u64, max_p: usize, max_k: usize) -> ProspectiveModel {
    let mut rng = stream_rng(seed, 17);
    let p = rng.random_range(2..=max_p.max(2));
    let k = rng.random_range(2..=max_k.max(2));
    let mut weights = |len: usize| -> Vec<f64> {
        let w: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    };
    let covariates = if seed.is_multiple_of(2) {
        let init = weights(k);
        let transitions = (1..p).map(|_| (0..k).map(|_| weights(k)).collect()).collect();
        crate::population::tabular_from_markov(&MarkovChainSpec { p, k, init, transitions })
            .expect("random chain is valid")
    } else {
        let cards: Vec<usize> = (0..p).map(|_| rng.random_range(2..=k)).collect();
        let size = cards.iter().product();
        TabularDistribution::from_weights(cards, (0..size).map(|_| rng.random_range(0.05..1.0)).collect())
            .expect("random table is valid")
    };
    let mut signal: Vec<bool> = (0..p).map(|_| rng.random_bool(0.4)).collect();
    let forced_null = rng.random_range(0..p);
    signal[forced_null] = false;
    if !signal.iter().any(|&s| s) {
        signal[(forced_null + 1) % p] = true;
    }
    let beta = signal
        .iter()
        .map(|&s| {
            if s {
                let mag = rng.random_range(0.5..2.0);
                if rng.random_bool(0.5) { mag } else { -mag }
            } else {
                0.0
            }
        })
        .collect();
    let intercept = rng.random_range(-3.0..0.0);
    ProspectiveModel::new(covariates, LogisticLink { intercept, beta }).expect("random model is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_models_have_expected_null_sets() {
        let m = demo_discrete_model();
        assert_eq!(m.null_set().nulls.into_iter().collect::<Vec<_>>(), vec![0, 2, 4]);
        let pops = crate::gaussian::lda_populations(&demo_lda_model()).unwrap();
        assert_eq!(pops.nulls.len(), 7);
        assert!((pops.beta[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn random_models_are_reproducible_and_mixed() {
        let a = random_discrete_model(5, 5, 3);
        assert_eq!(a, random_discrete_model(5, 5, 3));
        for seed in 0..30 {
            let m = random_discrete_model(seed, 5, 3);
            let nulls = m.null_set();
            assert!(!nulls.is_empty() && nulls.len() < m.num_vars());
            assert!(m.covariates().probs().iter().all(|&v| v > 0.0));
            assert!(m.prevalence() > 0.0 && m.prevalence() < 1.0);
        }
    }
}
