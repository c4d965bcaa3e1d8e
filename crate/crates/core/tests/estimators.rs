use rand::Rng;

use fedpg_core::env::ChainMdp;
use fedpg_core::gradient::{
    importance_weight, sample_batch, ActionSource, Estimator, EstimatorKind,
};
use fedpg_core::oracle::{exact_gradient, expectation, GradientForm};
use fedpg_core::policy::{PolicyParams, PolicySpec};
use fedpg_core::rng::{seeded, SimRng};

fn random_params(rng: &mut SimRng) -> PolicyParams {
    let theta = (0..6).map(|_| rng.random_range(-1.5..1.5)).collect();
    PolicyParams::new(theta, PolicySpec::tabular(3, 2)).unwrap()
}

fn mean_and_stderr(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let d = samples[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / n)
        .collect();
    let se = (0..d)
        .map(|i| {
            (samples
                .iter()
                .map(|s| (s[i] - mean[i]).powi(2))
                .sum::<f64>()
                / (n - 1.0)
                / n)
                .sqrt()
        })
        .collect();
    (mean, se)
}

#[test]
fn monte_carlo_estimates_match_exact_gradient() {
    let mdp = ChainMdp::default();
    let params = random_params(&mut seeded(21));
    let truth = exact_gradient(&mdp, &params, GradientForm::Recursive).unwrap();
    let trajs = sample_batch(
        &mdp,
        &params,
        100_000,
        ActionSource::Policy,
        &mut seeded(22),
    )
    .unwrap();
    for kind in [EstimatorKind::Reinforce, EstimatorKind::Gpomdp] {
        let est = Estimator::new(kind, mdp.tables().gamma);
        let samples: Vec<Vec<f64>> = trajs
            .iter()
            .map(|t| est.gradient(t, &params).unwrap())
            .collect();
        let (mean, se) = mean_and_stderr(&samples);
        for i in 0..truth.len() {
            assert!(
                (mean[i] - truth[i]).abs() <= 3.0 * se[i] + 1e-12,
                "{kind:?} coord {i}: {} vs {}",
                mean[i],
                truth[i]
            );
        }
    }
}

#[test]
fn gpomdp_has_lower_variance_than_reinforce() {
    let mdp = ChainMdp::default();
    let params = random_params(&mut seeded(3));
    let var = |kind| {
        let est = Estimator::new(kind, mdp.tables().gamma);
        let mean = expectation(&mdp, &params, |t| est.gradient(t, &params)).unwrap();
        expectation(&mdp, &params, |t| {
            let g = est.gradient(t, &params)?;
            Ok(vec![g
                .iter()
                .zip(&mean)
                .map(|(a, b)| (a - b).powi(2))
                .sum()])
        })
        .unwrap()[0]
    };
    assert!(var(EstimatorKind::Gpomdp) < var(EstimatorKind::Reinforce));
}

#[test]
fn importance_weights_average_to_one() {
    let mdp = ChainMdp::default();
    let mut rng = seeded(8);
    let theta_n = random_params(&mut rng);
    let theta_0 = random_params(&mut rng);
    let exact = expectation(&mdp, &theta_n, |t| {
        Ok(vec![importance_weight(t, &theta_n, &theta_0)?])
    })
    .unwrap()[0];
    assert!((exact - 1.0).abs() < 1e-10);

    let trajs = sample_batch(&mdp, &theta_n, 100_000, ActionSource::Policy, &mut rng).unwrap();
    let w: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| vec![importance_weight(t, &theta_n, &theta_0).unwrap()])
        .collect();
    let (mean, se) = mean_and_stderr(&w);
    assert!(
        (mean[0] - 1.0).abs() <= 3.0 * se[0],
        "{} ± {}",
        mean[0],
        se[0]
    );
}

#[test]
fn identical_parameters_give_unit_weight() {
    let mdp = ChainMdp::default();
    let params = random_params(&mut seeded(1));
    for t in sample_batch(&mdp, &params, 50, ActionSource::Policy, &mut seeded(2)).unwrap() {
        assert_eq!(importance_weight(&t, &params, &params).unwrap(), 1.0);
    }
}
