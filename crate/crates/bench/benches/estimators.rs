use criterion::{criterion_group, criterion_main, Criterion};

use fedpg_core::env::{CartPole, Environment};
use fedpg_core::gradient::{
    sample_batch, semi_stochastic_gradient, ActionSource, Estimator, EstimatorKind,
};
use fedpg_core::policy::{PolicyParams, PolicySpec};
use fedpg_core::rng::seeded;

fn bench_estimators(c: &mut Criterion) {
    let env = CartPole::default();
    let gamma = env.spec().gamma;
    let params = PolicyParams::init(PolicySpec::cartpole(), &mut seeded(0)).unwrap();
    let anchor = PolicyParams::init(PolicySpec::cartpole(), &mut seeded(1)).unwrap();
    let batch = sample_batch(&env, &params, 16, ActionSource::Policy, &mut seeded(2)).unwrap();
    let mu = vec![0.0; params.dim()];

    let mut group = c.benchmark_group("estimators");
    for kind in [EstimatorKind::Reinforce, EstimatorKind::Gpomdp] {
        let est = Estimator::new(kind, gamma);
        group.bench_function(format!("{kind:?}/batch16"), |b| {
            b.iter(|| {
                batch
                    .iter()
                    .map(|t| est.gradient(t, &params).unwrap())
                    .collect::<Vec<_>>()
            })
        });
    }
    let est = Estimator::new(EstimatorKind::Gpomdp, gamma);
    group.bench_function("semi_stochastic/b4", |b| {
        b.iter(|| {
            semi_stochastic_gradient(&batch[..4], &params, &anchor, &mu, &est, f64::INFINITY)
                .unwrap()
        })
    });
    group.bench_function("rollout/cartpole", |b| {
        let mut rng = seeded(3);
        b.iter(|| sample_batch(&env, &params, 1, ActionSource::Policy, &mut rng).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_estimators);
criterion_main!(benches);
