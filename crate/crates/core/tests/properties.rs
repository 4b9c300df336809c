mod common;

use std::collections::HashSet;
use std::f64::consts::LN_2;

use attnlab::analysis::{
    js_divergence_probs, kl_divergence_probs, per_token_relative_error, seed_stats,
    token_distribution, top_tokens, TokenSelector,
};
use attnlab::harness::{eval_schedule, steps_per_epoch};
use attnlab::scaling::{
    kaplan_loss, limit_infinite_data, limit_infinite_model, tradeoff_table,
};
use attnlab::subsets::make_plan;
use attnlab::{ScalingConstants, SequenceRecord};
use proptest::prelude::*;

fn probs(weights: &[u32]) -> Vec<f64> {
    let total: u32 = weights.iter().sum();
    weights.iter().map(|&w| w as f64 / total as f64).collect()
}

fn weights(n: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..50, n).prop_filter("non-empty", |w| w.iter().any(|&x| x > 0))
}

fn distribution_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| (weights(n), weights(n)).prop_map(|(a, b)| (probs(&a), probs(&b))))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn subsets_nest_without_duplicates(n in 2usize..3000, seed in any::<u64>()) {
        let k_max = n.ilog2();
        let plan = make_plan(n, seed, 0, k_max).unwrap();
        let again = make_plan(n, seed, 0, k_max).unwrap();
        prop_assert_eq!(&plan, &again);
        let mut sorted = plan.permutation().to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        for k in 0..k_max {
            let small = plan.subset_indices(k).unwrap();
            let big = plan.subset_indices(k + 1).unwrap();
            prop_assert_eq!(small.len(), 1 << k);
            prop_assert_eq!(&big[..small.len()], small);
        }
        prop_assert!(make_plan(n, seed, 0, k_max + 1).is_err());
    }

    #[test]
    fn token_counts_match_brute_force(seed in any::<u64>(), exclude in any::<bool>()) {
        let records = common::random_records(seed, 100, 24, 97);
        let refs: Vec<&SequenceRecord> = records.iter().collect();
        let dist = token_distribution(&refs, 97, exclude).unwrap();
        let mut counts = vec![0u64; 97];
        for r in &records {
            for (pos, &t) in r.tokens().iter().enumerate() {
                if !exclude || pos < r.valid_len() {
                    counts[t as usize] += 1;
                }
            }
        }
        prop_assert_eq!(dist.counts(), &counts[..]);
        prop_assert_eq!(dist.total(), counts.iter().sum::<u64>());
        prop_assert!((dist.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_is_non_negative((p, q) in distribution_pair()) {
        prop_assert_eq!(kl_divergence_probs(&p, &p).unwrap(), 0.0);
        if let Ok(kl) = kl_divergence_probs(&p, &q) {
            prop_assert!(kl >= -1e-12);
        }
    }

    #[test]
    fn js_is_symmetric_and_bounded((p, q) in distribution_pair()) {
        let a = js_divergence_probs(&p, &q).unwrap();
        let b = js_divergence_probs(&q, &p).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=LN_2).contains(&a));
        prop_assert_eq!(js_divergence_probs(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn top_tokens_match_a_sort((p, _) in distribution_pair(), n in 1usize..12) {
        let got = top_tokens(&p, n);
        let mut pairs: Vec<(u32, f64)> = p.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect();
        pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let expected: Vec<u32> = pairs.iter().take(n).map(|x| x.0).collect();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn relative_error_is_the_mean_percent_gap((p, q) in distribution_pair()) {
        let ids: Vec<u32> = (0..q.len() as u32).filter(|&i| q[i as usize] > 0.0).collect();
        let report = per_token_relative_error(&p, &q, &TokenSelector::Ids(ids.clone())).unwrap();
        let expected: f64 = ids
            .iter()
            .map(|&i| 100.0 * (p[i as usize] - q[i as usize]).abs() / q[i as usize])
            .sum::<f64>()
            / ids.len() as f64;
        prop_assert!((report.mean - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn seed_std_matches_two_pass(values in prop::collection::vec(-10.0f64..10.0, 2..12)) {
        let runs: Vec<(u64, f64)> = values.iter().enumerate().map(|(i, &v)| (i as u64, v)).collect();
        let s = seed_stats(&runs, 7, "val_loss").unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert!((s.std - var.sqrt()).abs() < 1e-12);
        prop_assert_eq!(s.n_seeds, values.len());
    }

    #[test]
    fn kaplan_loss_decreases_in_both_arguments(
        ln in 10.0f64..25.0, ld in 10.0f64..25.0, step in 0.01f64..2.0
    ) {
        let c = ScalingConstants::default();
        let (n, d) = (ln.exp(), ld.exp());
        let base = kaplan_loss(n, d, &c).unwrap();
        prop_assert!(kaplan_loss(n * (1.0 + step), d, &c).unwrap() < base);
        prop_assert!(kaplan_loss(n, d * (1.0 + step), &c).unwrap() < base);
        prop_assert!(base > limit_infinite_data(n, &c).unwrap());
        prop_assert!(base > limit_infinite_model(d, &c).unwrap());
    }

    #[test]
    fn kaplan_loss_reaches_its_limits(a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let c = ScalingConstants::default();
        let (n, d) = (4.0e7 * 10f64.powf(a), 1.34e8 * 10f64.powf(b));
        let data = kaplan_loss(n, d * 1e6, &c).unwrap();
        prop_assert!((data - limit_infinite_data(n, &c).unwrap()).abs() / data < 1e-3);
        let model = kaplan_loss(n * 1e6, d, &c).unwrap();
        prop_assert!((model - limit_infinite_model(d, &c).unwrap()).abs() / model < 1e-3);
    }

    #[test]
    fn tradeoff_matches_exhaustive_scan(seed in any::<u64>(), fractions in prop::collection::vec(0.05f64..1.2, 1..8)) {
        let acc = common::random_monotone_fixture(seed);
        let report = tradeoff_table(&acc, None, &fractions).unwrap();
        for (row, &f) in report.rows.iter().zip(&fractions) {
            prop_assert_eq!(row.level, common::tradeoff_oracle(&acc, f));
            prop_assert_eq!(row.reachable, row.level.is_some());
        }
    }

    #[test]
    fn tradeoff_ignores_input_order(seed in any::<u64>(), rot in 0usize..16) {
        let acc = common::random_monotone_fixture(seed);
        let mut shuffled = acc.clone();
        let r = rot % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        let fractions = [0.5, 0.8, 0.9, 0.95, 1.0];
        prop_assert_eq!(
            tradeoff_table(&acc, None, &fractions).unwrap(),
            tradeoff_table(&shuffled, None, &fractions).unwrap()
        );
    }

    #[test]
    fn eval_schedule_shape(total in 1u64..400) {
        let s = eval_schedule(total);
        prop_assert!(s.contains(&0) && s.contains(&total));
        prop_assert!(s.iter().all(|&e| e <= total));
        for e in 0..=total.min(20) {
            prop_assert!(s.contains(&e));
        }
        for &e in &s {
            prop_assert!(e <= 20 || e % 10 == 0 || e == total);
        }
    }

    #[test]
    fn steps_per_epoch_is_floor(n in 1usize..100_000, b in 1usize..512) {
        match steps_per_epoch(n, b) {
            Ok(s) => prop_assert_eq!(s as usize, n / b),
            Err(_) => prop_assert!(n < b),
        }
    }
}

#[test]
fn disjoint_supports_reach_ln2() {
    let p = [0.5, 0.5, 0.0, 0.0];
    let q = [0.0, 0.0, 0.25, 0.75];
    assert!((js_divergence_probs(&p, &q).unwrap() - LN_2).abs() <= 1e-12);
}

#[test]
fn plan_matches_the_standalone_generator() {
    for (seed, prefix, digest) in common::PLAN_ORACLE {
        let plan = make_plan(4096, seed, 4, 12).unwrap();
        assert_eq!(&plan.permutation()[..8], &prefix);
        assert_eq!(common::fnv1a(plan.permutation()), digest);
    }
    let distinct: HashSet<Vec<usize>> = (0..8)
        .map(|s| make_plan(64, s, 0, 6).unwrap().permutation().to_vec())
        .collect();
    assert_eq!(distinct.len(), 8);
}

#[test]
fn table_fixture_reproduces_published_levels() {
    let report = tradeoff_table(
        &common::table3_accuracies(),
        Some(&common::table3_seconds()),
        &[0.8, 0.9, 0.95, 1.0],
    )
    .unwrap();
    let levels: Vec<Option<u32>> = report.rows.iter().map(|r| r.level).collect();
    assert_eq!(levels, [Some(13), Some(15), Some(16), Some(17)]);
    let cost: Vec<i64> = report
        .rows
        .iter()
        .map(|r| r.cost_percent.unwrap().round() as i64)
        .collect();
    assert_eq!(cost, [7, 26, 49, 100]);
}
