//! JSON model documents.
//!
//! ```json
//! {"type": "markov", "p": 3, "K": 2, "init": [0.5, 0.5],
//!  "transitions": [[[0.9, 0.1], [0.2, 0.8]], [[0.9, 0.1], [0.2, 0.8]]],
//!  "link": {"intercept": -2.0, "beta": [0.0, 1.5, 0.0]}}
//! {"type": "lda", "mu0": [0, 0], "mu1": [1, 0], "sigma": [[1, 0], [0, 1]], "prevalence": 0.1}
//! ```
//!
//! A `"table"` document carries an explicit covariate table
//! (`cardinalities`, `probs`) plus a `link`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::gaussian::GaussianLdaModel;
use crate::population::{tabular_from_markov, LogisticLink, MarkovChainSpec, NullSet, ProspectiveModel};
use crate::table::TabularDistribution;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelSpec {
    Markov {
        #[serde(flatten)]
        chain: MarkovChainSpec,
        link: LogisticLink,
    },
    Table {
        cardinalities: Vec<usize>,
        probs: Vec<f64>,
        link: LogisticLink,
    },
    Lda(GaussianLdaModel),
}

/// A validated model ready for use.
#[derive(Clone, Debug)]
pub enum Model {
    Discrete(ProspectiveModel),
    Gaussian(GaussianLdaModel),
}

impl Model {
    pub fn null_set(&self) -> Result<NullSet> {
        match self {
            Model::Discrete(m) => Ok(m.null_set()),
            Model::Gaussian(m) => Ok(crate::gaussian::lda_populations(m)?.nulls),
        }
    }

    pub fn num_vars(&self) -> usize {
        match self {
            Model::Discrete(m) => m.num_vars(),
            Model::Gaussian(m) => m.num_vars(),
        }
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<Model> {
        Ok(match self {
            ModelSpec::Markov { chain, link } => {
                Model::Discrete(ProspectiveModel::new(tabular_from_markov(chain)?, link.clone())?)
            }
            ModelSpec::Table { cardinalities, probs, link } => Model::Discrete(ProspectiveModel::new(
                TabularDistribution::new(cardinalities.clone(), probs.clone())?,
                link.clone(),
            )?),
            ModelSpec::Lda(m) => {
                crate::gaussian::lda_populations(m)?;
                Model::Gaussian(m.clone())
            }
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("model serializes").as_bytes())
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_markov_document() {
        let text = r#"{"type":"markov","p":2,"K":2,"init":[0.5,0.5],
            "transitions":[[[0.9,0.1],[0.2,0.8]]],
            "link":{"intercept":-1.0,"beta":[0.0,1.0]}}"#;
        let spec = ModelSpec::from_json(text).unwrap();
        let Model::Discrete(m) = spec.build().unwrap() else { panic!("expected discrete") };
        assert_eq!(m.covariates().probs(), &[0.45, 0.05, 0.1, 0.4]);
        assert_eq!(m.null_set().nulls.into_iter().collect::<Vec<_>>(), vec![0]);
        let back = ModelSpec::from_json(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn parses_lda_document() {
        let text = r#"{"type":"lda","mu0":[0,0],"mu1":[1,0],"sigma":[[1,0],[0,1]],"prevalence":0.1}"#;
        let spec = ModelSpec::from_json(text).unwrap();
        assert!(matches!(spec.build().unwrap(), Model::Gaussian(_)));
        assert_eq!(spec.build().unwrap().null_set().unwrap().nulls.len(), 1);
    }

    #[test]
    fn invalid_documents_fail() {
        assert!(ModelSpec::from_json(r#"{"type":"hmm"}"#).is_err());
        let bad_link = r#"{"type":"markov","p":2,"K":2,"init":[0.5,0.5],
            "transitions":[[[0.9,0.1],[0.2,0.8]]],"link":{"intercept":0.0,"beta":[1.0]}}"#;
        assert!(ModelSpec::from_json(bad_link).unwrap().build().is_err());
    }

    #[test]
    fn hash_is_stable() {
        let text = r#"{"type":"lda","mu0":[0,0],"mu1":[1,0],"sigma":[[1,0],[0,1]],"prevalence":0.1}"#;
        let a = ModelSpec::from_json(text).unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_eq!(a.hash().len(), 64);
    }
}
