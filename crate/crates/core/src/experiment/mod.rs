//! Evaluation protocol, metrics persistence and multi-seed suites.

mod metrics;
mod suite;
mod summary;

pub use metrics::{read_csv, records_to_csv, write_csv, MetricsRecord, CSV_HEADER};
pub use suite::{config_hash, run_suite, RunEntry, RunStatus, SuiteManifest, MANIFEST_FILE};
pub use summary::{load_suite, mean_curve, write_curve_csv, CurvePoint};

use rand::Rng;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::gradient::sample_trajectory;
use crate::policy::PolicyParams;
use crate::rng::SimRng;

/// Mean undiscounted return of `n_eval` stochastic rollouts.
pub fn evaluate(
    params: &PolicyParams,
    test_env: &dyn Environment,
    n_eval: usize,
    rng: &mut SimRng,
) -> Result<f64> {
    if n_eval == 0 {
        return Err(Error::Empty("evaluation trajectories"));
    }
    let mut total = 0.0;
    for _ in 0..n_eval {
        total += sample_trajectory(test_env, params, rng)?.total_reward();
    }
    Ok(total / n_eval as f64)
}

/// Percentile bootstrap interval for the mean.
///
/// Resamples `values` with replacement `n_boot` times and returns the
/// `(1−level)/2` and `(1+level)/2` quantiles of the resampled means.
pub fn bootstrap_ci(
    values: &[f64],
    level: f64,
    n_boot: usize,
    rng: &mut SimRng,
) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Empty("bootstrap sample"));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::config(format!(
            "confidence level must lie in [0,1], got {level}"
        )));
    }
    if values.len() == 1 {
        return Ok((values[0], values[0]));
    }
    if n_boot == 0 {
        return Err(Error::Empty("bootstrap resamples"));
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((
        quantile_sorted(&means, tail),
        quantile_sorted(&means, 1.0 - tail),
    ))
}

/// Linear interpolation between order statistics.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{CartPole, ChainMdp, ChainMdpSpec};
    use crate::policy::PolicySpec;
    use crate::rng::seeded;

    #[test]
    fn constant_values_give_degenerate_interval() {
        assert_eq!(
            bootstrap_ci(&[3.5; 20], 0.9, 500, &mut seeded(0)).unwrap(),
            (3.5, 3.5)
        );
        assert_eq!(
            bootstrap_ci(&[7.0], 0.9, 500, &mut seeded(0)).unwrap(),
            (7.0, 7.0)
        );
        assert!(bootstrap_ci(&[], 0.9, 500, &mut seeded(0)).is_err());
    }

    #[test]
    fn binary_values_interval() {
        let values: Vec<f64> = (0..1000).map(|i| (i % 2) as f64).collect();
        let (lo, hi) = bootstrap_ci(&values, 0.9, 1000, &mut seeded(1)).unwrap();
        assert!(lo >= 0.45 && hi <= 0.55, "({lo}, {hi})");
        // 1.645 · 0.5/√1000 ≈ 0.026 half-width.
        let half = (hi - lo) / 2.0;
        assert!((half - 0.026).abs() < 0.005, "half width {half}");

        let small: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        let (slo, shi) = bootstrap_ci(&small, 0.9, 1000, &mut seeded(1)).unwrap();
        assert!(shi - slo > hi - lo);
    }

    #[test]
    fn full_level_spans_extreme_means() {
        let values = [0.0, 1.0, 2.0, 10.0];
        let mut rng = seeded(2);
        let (lo, hi) = bootstrap_ci(&values, 1.0, 200, &mut rng).unwrap();
        let mut rng = seeded(2);
        let n = values.len();
        let means: Vec<f64> = (0..200)
            .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
            .collect();
        assert_eq!(lo, means.iter().copied().fold(f64::INFINITY, f64::min));
        assert_eq!(hi, means.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn deterministic_evaluation_has_no_spread() {
        let mut spec = ChainMdpSpec::default();
        for s in 0..3 {
            for a in 0..2 {
                spec.transitions[s][a] = vec![0.0, 0.0, 0.0];
                spec.transitions[s][a][s] = 1.0;
            }
        }
        spec.initial = vec![0.0, 0.0, 1.0];
        let env = ChainMdp::new(spec).unwrap();
        let p = PolicyParams::new(
            vec![60.0, -60.0, 60.0, -60.0, 60.0, -60.0],
            PolicySpec::tabular(3, 2),
        )
        .unwrap();
        let mut rng = seeded(3);
        let returns: Vec<f64> = (0..10)
            .map(|_| {
                crate::gradient::sample_trajectory(&env, &p, &mut rng)
                    .unwrap()
                    .total_reward()
            })
            .collect();
        assert!(returns.iter().all(|r| *r == returns[0]));
        assert_eq!(evaluate(&p, &env, 10, &mut seeded(4)).unwrap(), 3.0);
    }

    #[test]
    fn evaluation_is_seeded() {
        let env = CartPole::default();
        let p = PolicyParams::init(PolicySpec::cartpole(), &mut seeded(0)).unwrap();
        let a = evaluate(&p, &env, 10, &mut seeded(9)).unwrap();
        let b = evaluate(&p, &env, 10, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0);
    }
}
