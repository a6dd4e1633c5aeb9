//! Monte Carlo FDR / power experiments and the exact verification battery.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::filter::{knockoff_threshold, lasso_logistic_stat, marginal_diff_stat, StatisticKind};
use crate::gaussian::{lda_populations, retrospective_sample_gaussian, LdaPopulations};
use crate::knockoff::{ExactKernel, GaussianKnockoffSampler, KernelMode, KnockoffSampler, TabularKnockoffSampler};
use crate::model::{sha256_hex, Model, ModelSpec};
use crate::population::{
    retrospective_sample_from, LabelConditionals, NullSet, PopulationKind, ProspectiveModel,
};
use crate::rng::derive_seed;
use crate::table::DEFAULT_ENUMERATION_CAP;
use crate::verify::{null_conditional_match, verify_kernel, THEOREM_TOLERANCE};

/// Eq.-(2)-style agreement required of null conditionals across populations.
pub const CONDITIONAL_MATCH_TOLERANCE: f64 = 1e-10;

fn default_plus() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub model: ModelSpec,
    pub case_fraction: f64,
    pub n: usize,
    pub reference: PopulationKind,
    #[serde(default = "default_statistic")]
    pub statistic: StatisticKind,
    /// Fixed lasso penalty; chosen by validation split when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub q: f64,
    #[serde(default = "default_plus")]
    pub plus: bool,
    pub reps: usize,
    pub master_seed: u64,
}

fn default_statistic() -> StatisticKind {
    StatisticKind::Marginal
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(validation("reps must be at least 1"));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(validation(format!("q = {} outside (0, 1)", self.q)));
        }
        if !(self.case_fraction > 0.0 && self.case_fraction < 1.0) {
            return Err(validation(format!("case_fraction = {} outside (0, 1)", self.case_fraction)));
        }
        if self.n < 2 {
            return Err(validation("n must be at least 2"));
        }
        self.reference.validate()
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub rep: usize,
    /// 1-based selected variables.
    pub selected: Vec<usize>,
    pub n_selected: usize,
    pub n_false: usize,
    pub fdp: f64,
    pub power: f64,
    /// SHA-256 of the rep's case-control dataset.
    pub data_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config_hash: String,
    pub master_seed: u64,
    pub reference: PopulationKind,
    pub statistic: StatisticKind,
    pub n: usize,
    pub q: f64,
    pub plus: bool,
    /// 1-based null variables.
    pub nulls: Vec<usize>,
    pub fdr: f64,
    pub fdr_se: f64,
    pub power: f64,
    pub power_se: f64,
    pub reps: Vec<RepResult>,
}

/// `|selected ∩ nulls| / max(1, |selected|)`.
pub fn false_discovery_proportion(selected: &BTreeSet<usize>, nulls: &NullSet) -> (usize, f64) {
    let n_false = selected.iter().filter(|j| nulls.is_null(**j)).count();
    (n_false, n_false as f64 / selected.len().max(1) as f64)
}

/// Share of non-null variables selected; 0 when there are none.
pub fn power(selected: &BTreeSet<usize>, nulls: &NullSet) -> f64 {
    let signals = nulls.non_nulls();
    if signals.is_empty() {
        return 0.0;
    }
    selected.iter().filter(|j| !nulls.is_null(**j)).count() as f64 / signals.len() as f64
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

enum Prepared {
    Discrete {
        conditionals: LabelConditionals,
        sampler: Arc<TabularKnockoffSampler>,
    },
    Gaussian {
        populations: LdaPopulations,
        sampler: Arc<GaussianKnockoffSampler>,
    },
}

/// Knockoff samplers keyed by (model hash, reference population).
#[derive(Default)]
pub struct SamplerCache {
    discrete: Mutex<HashMap<(String, String), Arc<TabularKnockoffSampler>>>,
    gaussian: Mutex<HashMap<(String, String), Arc<GaussianKnockoffSampler>>>,
    builds: Mutex<usize>,
}

impl SamplerCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of samplers built (cache misses) so far.
    pub fn builds(&self) -> usize {
        *self.builds.lock().expect("cache lock")
    }

    fn discrete(
        &self,
        key: (String, String),
        build: impl FnOnce() -> Result<TabularKnockoffSampler>,
    ) -> Result<Arc<TabularKnockoffSampler>> {
        let mut map = self.discrete.lock().expect("cache lock");
        if let Some(s) = map.get(&key) {
            return Ok(Arc::clone(s));
        }
        let s = Arc::new(build()?);
        *self.builds.lock().expect("cache lock") += 1;
        map.insert(key, Arc::clone(&s));
        Ok(s)
    }

    fn gaussian(
        &self,
        key: (String, String),
        build: impl FnOnce() -> Result<GaussianKnockoffSampler>,
    ) -> Result<Arc<GaussianKnockoffSampler>> {
        let mut map = self.gaussian.lock().expect("cache lock");
        if let Some(s) = map.get(&key) {
            return Ok(Arc::clone(s));
        }
        let s = Arc::new(build()?);
        *self.builds.lock().expect("cache lock") += 1;
        map.insert(key, Arc::clone(&s));
        Ok(s)
    }
}

fn prepare(config: &ScenarioConfig, model: &Model, cache: &SamplerCache) -> Result<Prepared> {
    let key = (config.model.hash(), config.reference.to_string());
    match model {
        Model::Discrete(m) => {
            let conditionals = LabelConditionals::new(m)?;
            let sampler = cache.discrete(key, || {
                let reference = conditionals.population(m, config.reference)?;
                TabularKnockoffSampler::build(
                    &reference,
                    None,
                    KernelMode::Auto,
                    DEFAULT_ENUMERATION_CAP,
                    config.reference.to_string(),
                )
            })?;
            Ok(Prepared::Discrete { conditionals, sampler })
        }
        Model::Gaussian(g) => {
            let populations = lda_populations(g)?;
            let sampler = cache.gaussian(key, || {
                let population = match config.reference {
                    PopulationKind::Controls => &populations.controls,
                    PopulationKind::Cases => &populations.cases,
                    other => {
                        return Err(validation(format!(
                            "Gaussian knockoffs are available for controls or cases only, not {other}"
                        )))
                    }
                };
                GaussianKnockoffSampler::equicorrelated(population, config.reference.to_string())
            })?;
            Ok(Prepared::Gaussian { populations, sampler })
        }
    }
}

/// One rep's case-control data and knockoffs, as real matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct RepData {
    pub x: Vec<Vec<f64>>,
    pub knockoffs: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl RepData {
    pub fn data_hash(&self) -> String {
        let mut bytes = Vec::with_capacity(self.x.len() * (self.x.first().map_or(0, Vec::len) + 1) * 8);
        for (r, y) in self.x.iter().zip(&self.y) {
            for v in r.iter().chain(std::iter::once(y)) {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        sha256_hex(&bytes)
    }
}

fn rep_seed(master: u64, rep: usize, tag: u64) -> u64 {
    derive_seed(derive_seed(master, rep as u64), tag)
}

fn generate(config: &ScenarioConfig, prepared: &Prepared, rep: usize) -> Result<RepData> {
    let data_seed = rep_seed(config.master_seed, rep, 0);
    let knock_seed = rep_seed(config.master_seed, rep, 1);
    match prepared {
        Prepared::Discrete { conditionals, sampler } => {
            let d = retrospective_sample_from(conditionals, config.case_fraction, config.n, data_seed)?;
            let xt = sampler.sample_rows(&d.rows, knock_seed)?;
            let to_f = |rows: &[Vec<usize>]| -> Vec<Vec<f64>> {
                rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
            };
            Ok(RepData {
                x: to_f(&d.rows),
                knockoffs: to_f(&xt),
                y: d.y.iter().map(|&v| v as f64).collect(),
            })
        }
        Prepared::Gaussian { populations, sampler } => {
            let d = retrospective_sample_gaussian(populations, config.case_fraction, config.n, data_seed)?;
            let xt = sampler.sample_rows(&d.rows, knock_seed)?;
            Ok(RepData {
                y: d.y.iter().map(|&v| v as f64).collect(),
                x: d.rows,
                knockoffs: xt,
            })
        }
    }
}

/// Data and knockoffs of a single rep, reproducible in isolation.
pub fn rep_data(config: &ScenarioConfig, rep: usize) -> Result<RepData> {
    config.validate()?;
    let model = config.model.build()?;
    let prepared = prepare(config, &model, &SamplerCache::new())?;
    generate(config, &prepared, rep)
}

pub fn run_fdr_experiment(config: &ScenarioConfig) -> Result<ExperimentResult> {
    run_fdr_experiment_cached(config, &SamplerCache::new())
}

pub fn run_fdr_experiment_cached(config: &ScenarioConfig, cache: &SamplerCache) -> Result<ExperimentResult> {
    config.validate()?;
    let model = config.model.build()?;
    let nulls = model.null_set()?;
    let prepared = prepare(config, &model, cache)?;
    let reps = (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let data = generate(config, &prepared, rep)?;
            let stats = match config.statistic {
                StatisticKind::Marginal => marginal_diff_stat(&data.x, &data.knockoffs, &data.y)?,
                StatisticKind::Lasso => lasso_logistic_stat(
                    &data.x,
                    &data.knockoffs,
                    &data.y,
                    config.lambda,
                    rep_seed(config.master_seed, rep, 2),
                )?,
            };
            let sel = knockoff_threshold(&stats.w, config.q, config.plus)?;
            let (n_false, fdp) = false_discovery_proportion(&sel.selected, &nulls);
            Ok(RepResult {
                rep,
                selected: sel.selected.iter().map(|j| j + 1).collect(),
                n_selected: sel.selected.len(),
                n_false,
                fdp,
                power: power(&sel.selected, &nulls),
                data_hash: data.data_hash(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (fdr, fdr_se) = mean_se(&reps.iter().map(|r| r.fdp).collect::<Vec<_>>());
    let (pw, power_se) = mean_se(&reps.iter().map(|r| r.power).collect::<Vec<_>>());
    Ok(ExperimentResult {
        config_hash: config.hash(),
        master_seed: config.master_seed,
        reference: config.reference,
        statistic: config.statistic,
        n: config.n,
        q: config.q,
        plus: config.plus,
        nulls: nulls.nulls.iter().map(|j| j + 1).collect(),
        fdr,
        fdr_se,
        power: pw,
        power_se,
        reps,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub reference: PopulationKind,
    pub fdr: f64,
    pub fdr_se: f64,
    pub power: f64,
    pub power_se: f64,
    /// Power minus that of the first arm, with the SE of the paired per-rep differences.
    pub power_diff_vs_first: f64,
    pub paired_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerComparison {
    pub rows: Vec<PowerRow>,
    /// Every arm saw identical datasets in every rep.
    pub common_random_numbers: bool,
    pub experiments: Vec<ExperimentResult>,
}

/// Runs configs that differ only in their reference population.
pub fn power_compare(configs: &[ScenarioConfig]) -> Result<PowerComparison> {
    let first = configs.first().ok_or_else(|| validation("power comparison needs at least one config"))?;
    for c in configs {
        let mut aligned = c.clone();
        aligned.reference = first.reference;
        if aligned != *first {
            return Err(validation(format!(
                "config for reference {} differs from the first config in more than its reference",
                c.reference
            )));
        }
    }
    let cache = SamplerCache::new();
    let experiments = configs
        .iter()
        .map(|c| run_fdr_experiment_cached(c, &cache))
        .collect::<Result<Vec<_>>>()?;
    let base = &experiments[0];
    let rows = experiments
        .iter()
        .map(|e| {
            let diffs: Vec<f64> = e.reps.iter().zip(&base.reps).map(|(a, b)| a.power - b.power).collect();
            let (d, se) = mean_se(&diffs);
            PowerRow {
                reference: e.reference,
                fdr: e.fdr,
                fdr_se: e.fdr_se,
                power: e.power,
                power_se: e.power_se,
                power_diff_vs_first: d,
                paired_se: se,
            }
        })
        .collect();
    let common_random_numbers = experiments.iter().all(|e| {
        e.reps.iter().zip(&base.reps).all(|(a, b)| a.data_hash == b.data_hash)
    });
    Ok(PowerComparison {
        rows,
        common_random_numbers,
        experiments,
    })
}

/// `rep,reference,n,q,plus,stat,n_selected,n_false,fdp,power`
pub fn write_results_csv<W: Write>(results: &[ExperimentResult], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["rep", "reference", "n", "q", "plus", "stat", "n_selected", "n_false", "fdp", "power"])?;
    for e in results {
        for r in &e.reps {
            wr.write_record([
                r.rep.to_string(),
                e.reference.to_string(),
                e.n.to_string(),
                e.q.to_string(),
                e.plus.to_string(),
                e.statistic.to_string(),
                r.n_selected.to_string(),
                r.n_false.to_string(),
                r.fdp.to_string(),
                r.power.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryLimits {
    pub max_p: usize,
    pub max_k: usize,
    /// Case fraction of the retrospective target population.
    pub case_fraction: f64,
    /// Weight of the `mix` reference population.
    pub mix_rho: f64,
    pub base_seed: u64,
}

impl Default for BatteryLimits {
    fn default() -> Self {
        Self {
            max_p: 5,
            max_k: 3,
            case_fraction: 0.5,
            mix_rho: 0.3,
            base_seed: 2019,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryEntry {
    pub seed: u64,
    pub cardinalities: Vec<usize>,
    pub nulls: Vec<usize>,
    pub reference: PopulationKind,
    pub max_null_tv_target: f64,
    /// 1-based null variables whose target swap distance exceeds the tolerance.
    pub failing_nulls: Vec<usize>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub entries: Vec<BatteryEntry>,
    /// Largest null-conditional gap across every pair of populations.
    pub max_null_conditional_gap: f64,
    pub passed: bool,
}

/// Context handed to a kernel tampering hook.
pub struct BatteryCase<'a> {
    pub seed: u64,
    pub model: &'a ProspectiveModel,
    pub reference: PopulationKind,
}

pub type KernelHook<'a> = &'a (dyn Fn(&BatteryCase<'_>, &mut ExactKernel) + Sync);

/// Reference populations exercised by the battery.
pub fn battery_references(limits: &BatteryLimits) -> [PopulationKind; 4] {
    [
        PopulationKind::Prospective,
        PopulationKind::Controls,
        PopulationKind::Cases,
        PopulationKind::Mix(limits.mix_rho),
    ]
}

pub fn verify_battery(seeds: usize, limits: &BatteryLimits) -> Result<BatteryReport> {
    verify_battery_with(seeds, limits, None)
}

/// Runs the transfer check over random models; `hook` may alter each
/// kernel before it is evaluated.
pub fn verify_battery_with(seeds: usize, limits: &BatteryLimits, hook: Option<KernelHook<'_>>) -> Result<BatteryReport> {
    if limits.max_p < 2 || limits.max_k < 2 {
        return Err(validation("battery limits need max_p >= 2 and max_k >= 2"));
    }
    let max_states = (limits.max_k as u128).pow(limits.max_p as u32);
    if max_states * max_states > DEFAULT_ENUMERATION_CAP as u128 {
        return Err(Error::Size {
            entries: max_states * max_states,
            cap: DEFAULT_ENUMERATION_CAP,
            hint: "; lower max_p or max_k",
        });
    }
    let per_seed = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(limits.base_seed, i as u64);
            let model = crate::demo::random_discrete_model(seed, limits.max_p, limits.max_k);
            let conditionals = LabelConditionals::new(&model)?;
            let nulls = model.null_set();
            let target = PopulationKind::Retrospective(limits.case_fraction);
            let mut kinds = battery_references(limits).to_vec();
            kinds.push(target);
            let tables = kinds
                .iter()
                .map(|&k| conditionals.population(&model, k))
                .collect::<Result<Vec<_>>>()?;
            let mut gap = 0.0f64;
            for &j in &nulls.nulls {
                for a in 0..tables.len() {
                    for b in a + 1..tables.len() {
                        gap = gap.max(null_conditional_match(&tables[a], &tables[b], j)?.max_abs_deviation);
                    }
                }
            }
            let mut entries = Vec::new();
            for (reference, table) in battery_references(limits).into_iter().zip(&tables) {
                let sampler = TabularKnockoffSampler::build(
                    table,
                    None,
                    KernelMode::Exact,
                    DEFAULT_ENUMERATION_CAP,
                    reference.to_string(),
                )?;
                let mut kernel = sampler.exact_kernel()?.clone();
                if let Some(h) = hook {
                    h(&BatteryCase { seed, model: &model, reference }, &mut kernel);
                }
                let report = verify_kernel(&model, &conditionals, reference, target, &kernel)?;
                let failing_nulls: Vec<usize> = report
                    .variables
                    .iter()
                    .filter(|v| v.is_null && v.tv_under_target > THEOREM_TOLERANCE)
                    .map(|v| v.variable)
                    .collect();
                entries.push(BatteryEntry {
                    seed,
                    cardinalities: model.covariates().cardinalities().to_vec(),
                    nulls: nulls.nulls.iter().map(|j| j + 1).collect(),
                    reference,
                    max_null_tv_target: report.max_null_tv_target,
                    passed: failing_nulls.is_empty(),
                    failing_nulls,
                });
            }
            Ok((entries, gap))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_null_conditional_gap = per_seed.iter().map(|(_, g)| *g).fold(0.0, f64::max);
    let entries: Vec<BatteryEntry> = per_seed.into_iter().flat_map(|(e, _)| e).collect();
    let passed = entries.iter().all(|e| e.passed) && max_null_conditional_gap <= CONDITIONAL_MATCH_TOLERANCE;
    Ok(BatteryReport {
        entries,
        max_null_conditional_gap,
        passed,
    })
}
