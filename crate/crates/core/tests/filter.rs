use proptest::prelude::*;

use fedpg_core::filter::{
    fedpg_aggregate, median_set, pairwise_distances, FilterConfig, FilterRule,
};
use fedpg_core::linalg::{distance, mean};

#[test]
fn clustered_majority_survives() {
    let reports = vec![
        vec![0.0, 0.0],
        vec![0.05, 0.0],
        vec![0.0, 0.05],
        vec![0.05, 0.05],
        vec![100.0, 0.0],
    ];
    assert_eq!(median_set(&reports, 1.0).unwrap(), vec![0, 1, 2, 3]);
}

#[test]
fn far_byzantine_reports_are_dropped() {
    // Seven good reports within σ = 1 of the origin, three at distance 50.
    let mut reports = Vec::new();
    for k in 0..7 {
        let angle = k as f64;
        reports.push(vec![0.9 * angle.cos(), 0.9 * angle.sin(), 0.0]);
    }
    for k in 0..3 {
        reports.push(vec![0.0, 0.0, 50.0 + k as f64 * 1e-3]);
    }
    let cfg = FilterConfig {
        sigma: 1.0,
        delta: 0.6,
        alpha: 0.3,
    };
    let out = fedpg_aggregate(&reports, 16, &cfg).unwrap();
    assert_eq!(out.accepted, (0..7).collect::<Vec<_>>());
    assert_eq!(out.rejected(10), vec![7, 8, 9]);
}

#[test]
fn no_majority_is_an_error() {
    let reports = vec![vec![0.0], vec![10.0], vec![20.0], vec![30.0]];
    let cfg = FilterConfig {
        sigma: 1.0,
        delta: 0.6,
        alpha: 0.3,
    };
    let err = fedpg_aggregate(&reports, 16, &cfg).unwrap_err();
    assert!(err.to_string().contains("filter assumptions violated"));
}

fn naive_distances(r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    r.iter()
        .map(|a| r.iter().map(|b| distance(a, b)).collect())
        .collect()
}

proptest! {
    #[test]
    fn gram_distances_match_naive(rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 8), 2..12)) {
        let fast = pairwise_distances(&rows).unwrap();
        let slow = naive_distances(&rows);
        for (a, b) in fast.iter().flatten().zip(slow.iter().flatten()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn aggregate_is_mean_of_accepted(
        rows in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 3..12),
        sigma in 2.0f64..5.0,
        batch in 1usize..32,
    ) {
        let cfg = FilterConfig { sigma, delta: 0.6, alpha: 0.3 };
        let out = fedpg_aggregate(&rows, batch, &cfg).unwrap();
        let accepted: Vec<&Vec<f64>> = out.accepted.iter().map(|&i| &rows[i]).collect();
        let m = mean(&accepted).unwrap();
        prop_assert!(out.accepted.contains(&out.mom_id));
        prop_assert!(out.accepted.windows(2).all(|w| w[0] < w[1]));
        for (a, b) in out.aggregate.iter().zip(&m) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for &i in &out.accepted {
            prop_assert!(distance(&rows[i], &out.mom) <= out.threshold_used + 1e-12);
        }
        let required = (1.0 - cfg.alpha) * rows.len() as f64;
        let r1 = out.r1_accepted_count.unwrap_or(0) as f64;
        prop_assert_eq!(out.rule_used == FilterRule::R2, r1 < required);
    }
}

#[test]
fn byzantine_anchor_under_r2_can_exclude_a_good_agent() {
    // Good reports at distance σ = 1 from the origin, two Byzantine copies at 1.1σ.
    let reports = vec![
        vec![1.0, 0.0],
        vec![-1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.0, -1.1],
        vec![0.0, -1.1],
    ];
    let cfg = FilterConfig {
        sigma: 1.0,
        delta: 0.6,
        alpha: 0.45,
    };
    let out = fedpg_aggregate(&reports, 1000, &cfg).unwrap();
    assert_eq!(out.rule_used, FilterRule::R2);
    assert_eq!(out.mom_id, 3);
    assert_eq!(out.accepted, vec![0, 1, 3, 4]);
}
