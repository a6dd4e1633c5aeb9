use std::collections::BTreeSet;

use knockoff_cc::demo::{demo_discrete_spec, power_discrete_spec};
use knockoff_cc::filter::StatisticKind;
use knockoff_cc::harness::{
    false_discovery_proportion, power_compare, rep_data, run_fdr_experiment, verify_battery, verify_battery_with,
    BatteryCase, BatteryLimits, ScenarioConfig,
};
use knockoff_cc::knockoff::ExactKernel;
use knockoff_cc::model::ModelSpec;
use knockoff_cc::population::{LogisticLink, MarkovChainSpec, PopulationKind};

fn config(model: ModelSpec, reference: PopulationKind, reps: usize) -> ScenarioConfig {
    ScenarioConfig {
        model,
        case_fraction: 0.5,
        n: 300,
        reference,
        statistic: StatisticKind::Marginal,
        lambda: None,
        q: 0.2,
        plus: true,
        reps,
        master_seed: 99,
    }
}

fn null_model(beta_scale: f64) -> ModelSpec {
    ModelSpec::Markov {
        chain: MarkovChainSpec::homogeneous(6, vec![0.4, 0.6], vec![vec![0.7, 0.3], vec![0.35, 0.65]]),
        link: LogisticLink {
            intercept: -1.0,
            beta: vec![beta_scale; 6],
        },
    }
}

#[test]
fn all_null_model_controls_fdr_with_zero_power() {
    for reference in [PopulationKind::Controls, PopulationKind::Cases, PopulationKind::Mix(0.5)] {
        let r = run_fdr_experiment(&config(null_model(0.0), reference, 400)).unwrap();
        assert_eq!(r.nulls.len(), 6);
        assert!(r.fdr <= 0.2 + 2.0 * r.fdr_se, "{reference}: FDR {} se {}", r.fdr, r.fdr_se);
        assert_eq!(r.power, 0.0);
    }
}

#[test]
fn independent_label_collapses_prospective_and_controls() {
    let a = run_fdr_experiment(&config(null_model(0.0), PopulationKind::Prospective, 50)).unwrap();
    let b = run_fdr_experiment(&config(null_model(0.0), PopulationKind::Controls, 50)).unwrap();
    assert_eq!(a.reps, b.reps);
    assert_eq!((a.fdr, a.power), (b.fdr, b.power));
}

#[test]
fn reps_are_reproducible_in_isolation() {
    let c = config(demo_discrete_spec(), PopulationKind::Controls, 20);
    let r = run_fdr_experiment(&c).unwrap();
    assert_eq!(r, run_fdr_experiment(&c).unwrap());
    for rep in [0, 7, 19] {
        assert_eq!(rep_data(&c, rep).unwrap().data_hash(), r.reps[rep].data_hash);
    }
    let single = run_fdr_experiment(&ScenarioConfig { reps: 1, ..c.clone() }).unwrap();
    assert_eq!(serde_json::to_string(&single).unwrap(), serde_json::to_string(&run_fdr_experiment(&ScenarioConfig { reps: 1, ..c }).unwrap()).unwrap());
}

#[test]
fn fdp_recomputes_from_selected_sets() {
    let r = run_fdr_experiment(&config(power_discrete_spec(), PopulationKind::Controls, 100)).unwrap();
    let nulls: BTreeSet<usize> = r.nulls.iter().copied().collect();
    let mut total = 0.0;
    for rep in &r.reps {
        let false_hits = rep.selected.iter().filter(|j| nulls.contains(j)).count();
        let fdp = false_hits as f64 / rep.selected.len().max(1) as f64;
        assert_eq!(rep.n_false, false_hits);
        assert_eq!(rep.n_selected, rep.selected.len());
        assert_eq!(rep.fdp, fdp);
        assert!((0.0..=1.0).contains(&rep.fdp));
        total += fdp;
    }
    assert!((total / r.reps.len() as f64 - r.fdr).abs() < 1e-12);
    assert!(r.reps.iter().any(|rep| rep.n_selected > 0));

    let model = power_discrete_spec().build().unwrap();
    let ns = model.null_set().unwrap();
    let sel: BTreeSet<usize> = [0, 1, 3].into_iter().collect();
    assert_eq!(false_discovery_proportion(&sel, &ns), (1, 1.0 / 3.0));
}

#[test]
fn power_compare_uses_common_random_numbers() {
    let base = config(demo_discrete_spec(), PopulationKind::Prospective, 60);
    let configs: Vec<ScenarioConfig> = [
        PopulationKind::Prospective,
        PopulationKind::Controls,
        PopulationKind::Cases,
        PopulationKind::Mix(0.5),
    ]
    .into_iter()
    .map(|reference| ScenarioConfig { reference, ..base.clone() })
    .collect();
    let cmp = power_compare(&configs).unwrap();
    assert!(cmp.common_random_numbers);
    assert_eq!(cmp.rows.len(), 4);
    for e in &cmp.experiments[1..] {
        for (a, b) in e.reps.iter().zip(&cmp.experiments[0].reps) {
            assert_eq!(a.data_hash, b.data_hash);
        }
    }
    let mut bad = configs.clone();
    bad[1].n = 301;
    assert!(power_compare(&bad).is_err());
}

#[test]
fn battery_with_zero_seeds_passes_empty() {
    let r = verify_battery(0, &BatteryLimits::default()).unwrap();
    assert!(r.passed && r.entries.is_empty());
}

#[test]
fn corrupted_kernel_is_localized() {
    let limits = BatteryLimits::default();
    // in the row with the largest diagonal entry, shift .01 from x̃ = x to
    // x̃ = x with the first null changed
    let hook = |case: &BatteryCase<'_>, kernel: &mut ExactKernel| {
        let j = *case.model.null_set().nulls.iter().next().unwrap();
        let x = (0..kernel.num_states())
            .max_by(|&a, &b| kernel.entry(a, a).total_cmp(&kernel.entry(b, b)))
            .unwrap();
        assert!(kernel.entry(x, x) >= 0.01);
        let radix = kernel.radix().clone();
        let moved = radix.with_digit(x, j, (radix.digit(x, j) + 1) % radix.cardinalities()[j]);
        let row = kernel.row_mut(x);
        row[x] -= 0.01;
        row[moved] += 0.01;
    };
    let r = verify_battery_with(20, &limits, Some(&hook)).unwrap();
    assert!(!r.passed);
    assert_eq!(r.entries.len(), 80);
    for e in &r.entries {
        assert_eq!(e.failing_nulls, vec![e.nulls[0]], "{e:?}");
    }
}
