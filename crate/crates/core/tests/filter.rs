use knockoff_cc::demo::{demo_discrete_spec, demo_lda_model};
use knockoff_cc::filter::{knockoff_threshold, lasso_logistic_stat, marginal_diff_stat, StatisticKind};
use knockoff_cc::harness::{rep_data, ScenarioConfig};
use knockoff_cc::model::ModelSpec;
use knockoff_cc::population::PopulationKind;
use proptest::prelude::*;

fn scenario(model: ModelSpec, n: usize, reference: PopulationKind, reps: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        model,
        case_fraction: 0.5,
        n,
        reference,
        statistic: StatisticKind::Marginal,
        lambda: None,
        q: 0.2,
        plus: true,
        reps,
        master_seed: seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn larger_q_never_shrinks_selection(
        w in prop::collection::vec(-5.0f64..5.0, 1..30),
        q1 in 0.01f64..0.99,
        q2 in 0.01f64..0.99,
        plus in any::<bool>(),
    ) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let a = knockoff_threshold(&w, lo, plus).unwrap();
        let b = knockoff_threshold(&w, hi, plus).unwrap();
        prop_assert!(a.selected.is_subset(&b.selected));
        prop_assert!(b.tau <= a.tau);
        prop_assert!(a.selected.iter().all(|&j| w[j] > 0.0));
    }

    #[test]
    fn knockoff_plus_selects_no_more_than_plain(w in prop::collection::vec(-5.0f64..5.0, 1..30), q in 0.01f64..0.99) {
        let plus = knockoff_threshold(&w, q, true).unwrap();
        let plain = knockoff_threshold(&w, q, false).unwrap();
        prop_assert!(plus.selected.is_subset(&plain.selected));
    }
}

#[test]
fn null_signs_are_fair_coins() {
    let config = scenario(demo_discrete_spec(), 300, PopulationKind::Controls, 600, 4242);
    let nulls = [0usize, 2, 4];
    let mut positive = [0usize; 3];
    let mut nonzero = [0usize; 3];
    for rep in 0..config.reps {
        let d = rep_data(&config, rep).unwrap();
        let w = marginal_diff_stat(&d.x, &d.knockoffs, &d.y).unwrap().w;
        for (i, &j) in nulls.iter().enumerate() {
            if w[j] != 0.0 {
                nonzero[i] += 1;
                positive[i] += usize::from(w[j] > 0.0);
            }
        }
    }
    for i in 0..3 {
        let m = nonzero[i] as f64;
        let freq = positive[i] as f64 / m;
        let se = (0.25 / m).sqrt();
        assert!(
            (freq - 0.5).abs() <= 4.0 * se,
            "variable {}: {} of {} positive",
            nulls[i] + 1,
            positive[i],
            nonzero[i]
        );
    }
}

#[test]
fn lasso_ranks_strong_signals_first() {
    let config = scenario(ModelSpec::Lda(demo_lda_model()), 200, PopulationKind::Controls, 100, 31);
    let signals = [0usize, 3, 6];
    let mut hits = 0;
    for rep in 0..config.reps {
        let d = rep_data(&config, rep).unwrap();
        let w = lasso_logistic_stat(&d.x, &d.knockoffs, &d.y, None, rep as u64).unwrap().w;
        let mut order: Vec<usize> = (0..w.len()).collect();
        order.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()));
        let top: Vec<usize> = order[..signals.len()].to_vec();
        if signals.iter().all(|s| top.contains(s) && w[*s] > 0.0) {
            hits += 1;
        }
    }
    assert!(hits >= 90, "signals ranked first with positive sign in {hits} of 100 reps");
}

#[test]
fn duplicated_knockoffs_give_zero_statistics() {
    let config = scenario(ModelSpec::Lda(demo_lda_model()), 200, PopulationKind::Controls, 1, 5);
    let d = rep_data(&config, 0).unwrap();
    let lasso = lasso_logistic_stat(&d.x, &d.x, &d.y, None, 0).unwrap().w;
    assert!(lasso.iter().all(|v| v.abs() <= 1e-8), "{lasso:?}");
    let marginal = marginal_diff_stat(&d.x, &d.x, &d.y).unwrap().w;
    assert!(marginal.iter().all(|&v| v == 0.0));
    let sel = knockoff_threshold(&lasso, 0.2, true).unwrap();
    assert!(sel.selected.is_empty() && sel.tau.is_infinite());
}
