//! Byzantine filtering and aggregation of agent reports.
//!
//! Two concentric rules share one skeleton: find the vector-median set (the
//! reports within a threshold of a strict majority), take the member closest
//! to that set's mean as the anchor, and accept every report within the
//! threshold of the anchor.
//!
//! - R1 uses the concentration threshold `2σ√(V/B_t)` with
//!   `V = 2 ln(2K/δ)`;
//! - R2 uses `2σ` and runs only when R1 accepted fewer than `(1−α)K`
//!   reports (including when R1's median set was empty).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Bound on `‖g(τ|θ) − ∇J(θ)‖`.
    pub sigma: f64,
    /// Confidence parameter of the R1 threshold.
    pub delta: f64,
    /// Assumed upper bound on the Byzantine fraction.
    pub alpha: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            sigma: 0.06,
            delta: 0.6,
            alpha: 0.3,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta must lie in (0,1)"));
        }
        if !(0.0..0.5).contains(&self.alpha) {
            return Err(Error::config("alpha must lie in [0, 0.5)"));
        }
        Ok(())
    }

    /// `V = 2 ln(2K/δ)`.
    pub fn v(&self, k: usize) -> f64 {
        2.0 * (2.0 * k as f64 / self.delta).ln()
    }

    /// `𝔗_μ = 2σ √(V / B_t)`.
    pub fn threshold(&self, k: usize, batch_size: usize) -> f64 {
        2.0 * self.sigma * (self.v(k) / batch_size as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterRule {
    R1,
    R2,
}

impl std::fmt::Display for FilterRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FilterRule::R1 => "R1",
            FilterRule::R2 => "R2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Accepted agent indices, ascending.
    pub accepted: Vec<usize>,
    pub rule_used: FilterRule,
    pub mom_id: usize,
    pub mom: Vec<f64>,
    pub aggregate: Vec<f64>,
    pub threshold_used: f64,
    /// Size of the set R1 accepted; `None` when R1's median set was empty.
    pub r1_accepted_count: Option<usize>,
}

impl FilterOutcome {
    pub fn rejected(&self, k: usize) -> Vec<usize> {
        (0..k)
            .filter(|i| self.accepted.binary_search(i).is_err())
            .collect()
    }
}

fn check_dims(reports: &[Vec<f64>]) -> Result<usize> {
    let d = reports.first().ok_or(Error::Empty("reports"))?.len();
    for r in reports {
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
    }
    Ok(d)
}

/// Symmetric `K × K` Euclidean distances from the Gram matrix:
/// `‖x−y‖² = ‖x‖² + ‖y‖² − 2⟨x,y⟩`, negative round-off clamped to zero.
pub fn pairwise_distances(reports: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_dims(reports)?;
    let k = reports.len();
    let sq: Vec<f64> = reports.iter().map(|r| linalg::dot(r, r)).collect();
    let mut dist = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let d2 = sq[i] + sq[j] - 2.0 * linalg::dot(&reports[i], &reports[j]);
            let d = d2.max(0.0).sqrt();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok(dist)
}

/// Agents within `threshold` of strictly more than `K/2` reports (self included).
pub fn median_set_from_distances(dist: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let k = dist.len();
    (0..k)
        .filter(|&i| {
            let close = dist[i]
                .iter()
                .enumerate()
                .filter(|&(j, &d)| j == i || d <= threshold)
                .count();
            2 * close > k
        })
        .collect()
}

pub fn median_set(reports: &[Vec<f64>], threshold: f64) -> Result<Vec<usize>> {
    Ok(median_set_from_distances(
        &pairwise_distances(reports)?,
        threshold,
    ))
}

/// Member of `set` closest to the mean of `set`; ties go to the lowest id.
pub fn mean_of_median(reports: &[Vec<f64>], set: &[usize]) -> Result<(usize, Vec<f64>)> {
    if set.is_empty() {
        return Err(Error::Empty("median set"));
    }
    let mut ids = set.to_vec();
    ids.sort_unstable();
    let members: Vec<&[f64]> = ids.iter().map(|&i| reports[i].as_slice()).collect();
    let center = linalg::mean(&members).expect("nonempty");
    let mut best = (ids[0], f64::INFINITY);
    for &i in &ids {
        let d = linalg::distance(&reports[i], &center);
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok((best.0, reports[best.0].clone()))
}

struct RulePass {
    accepted: Vec<usize>,
    mom_id: usize,
}

fn run_rule(reports: &[Vec<f64>], dist: &[Vec<f64>], threshold: f64) -> Result<Option<RulePass>> {
    let set = median_set_from_distances(dist, threshold);
    if set.is_empty() {
        return Ok(None);
    }
    let (mom_id, _) = mean_of_median(reports, &set)?;
    let accepted = (0..reports.len())
        .filter(|&k| k == mom_id || dist[mom_id][k] <= threshold)
        .collect();
    Ok(Some(RulePass { accepted, mom_id }))
}

/// Filters the reports of one round and averages the accepted ones.
pub fn fedpg_aggregate(
    reports: &[Vec<f64>],
    batch_size: usize,
    config: &FilterConfig,
) -> Result<FilterOutcome> {
    config.validate()?;
    check_dims(reports)?;
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let k = reports.len();
    let dist = pairwise_distances(reports)?;
    let r1_threshold = config.threshold(k, batch_size);
    let r1 = run_rule(reports, &dist, r1_threshold)?;
    let r1_count = r1.as_ref().map(|p| p.accepted.len());
    let required = (1.0 - config.alpha) * k as f64;

    let (pass, rule_used, threshold_used) = match r1 {
        Some(pass) if (pass.accepted.len() as f64) >= required => {
            (pass, FilterRule::R1, r1_threshold)
        }
        _ => {
            let two_sigma = 2.0 * config.sigma;
            let pass = run_rule(reports, &dist, two_sigma)?
                .ok_or(Error::FilterAssumptionsViolated { k, two_sigma })?;
            (pass, FilterRule::R2, two_sigma)
        }
    };

    let accepted_vectors: Vec<&[f64]> = pass
        .accepted
        .iter()
        .map(|&i| reports[i].as_slice())
        .collect();
    let aggregate = linalg::mean(&accepted_vectors).expect("anchor is always accepted");
    Ok(FilterOutcome {
        mom: reports[pass.mom_id].clone(),
        mom_id: pass.mom_id,
        accepted: pass.accepted,
        rule_used,
        aggregate,
        threshold_used,
        r1_accepted_count: r1_count,
    })
}

/// Unfiltered mean, used by the baselines.
pub fn plain_mean(reports: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_dims(reports)?;
    Ok(linalg::mean(reports).expect("nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::seeded;

    fn naive_distances(reports: &[Vec<f64>]) -> Vec<Vec<f64>> {
        reports
            .iter()
            .map(|a| reports.iter().map(|b| linalg::distance(a, b)).collect())
            .collect()
    }

    #[test]
    fn identical_vectors_have_zero_distance() {
        let r = vec![vec![1.5, -2.0, 3.0]; 4];
        assert!(pairwise_distances(&r)
            .unwrap()
            .iter()
            .flatten()
            .all(|d| *d == 0.0));
    }

    #[test]
    fn unit_basis_distance() {
        let d = pairwise_distances(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(d[0][0], 0.0);
        assert!((d[0][1] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(d[0][1], d[1][0]);
    }

    #[test]
    fn gram_trick_matches_naive_loop() {
        let mut rng = seeded(1);
        let r: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..8).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let fast = pairwise_distances(&r).unwrap();
        let slow = naive_distances(&r);
        for (a, b) in fast.iter().flatten().zip(slow.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch_errors() {
        assert!(matches!(
            pairwise_distances(&[vec![1.0], vec![1.0, 2.0]]),
            Err(Error::DimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn median_set_cases() {
        let same = vec![vec![0.3, 0.3]; 3];
        assert_eq!(median_set(&same, 1e-9).unwrap(), vec![0, 1, 2]);

        let clustered = vec![
            vec![0.0, 0.0],
            vec![0.05, 0.0],
            vec![0.0, 0.05],
            vec![0.05, 0.05],
            vec![100.0, 0.0],
        ];
        assert_eq!(median_set(&clustered, 1.0).unwrap(), vec![0, 1, 2, 3]);

        let split = vec![vec![0.0], vec![0.1], vec![50.0], vec![50.1]];
        assert!(median_set(&split, 1.0).unwrap().is_empty());
    }

    #[test]
    fn mean_of_median_cases() {
        let r = vec![vec![0.0], vec![1.0], vec![5.0]];
        assert_eq!(mean_of_median(&r, &[2]).unwrap(), (2, vec![5.0]));
        assert_eq!(mean_of_median(&r, &[0, 1, 2]).unwrap(), (1, vec![1.0]));
        let tie = vec![vec![-1.0], vec![1.0]];
        assert_eq!(mean_of_median(&tie, &[1, 0]).unwrap().0, 0);
        assert!(mean_of_median(&r, &[]).is_err());
    }

    #[test]
    fn threshold_with_reference_hyperparameters() {
        let cfg = FilterConfig {
            sigma: 0.06,
            delta: 0.6,
            alpha: 0.3,
        };
        assert!((cfg.v(10) - 7.013_115_794_639_964).abs() < 1e-9);
        assert!((cfg.threshold(10, 16) - 0.079_446_864_099_069).abs() < 1e-12);
    }

    #[test]
    fn single_agent_accepts_itself() {
        let out = fedpg_aggregate(&[vec![3.0, -1.0]], 16, &FilterConfig::default()).unwrap();
        assert_eq!(out.accepted, vec![0]);
        assert_eq!(out.aggregate, vec![3.0, -1.0]);
        assert_eq!(out.rule_used, FilterRule::R1);
    }

    #[test]
    fn separates_far_byzantine_reports() {
        let mut rng = seeded(2);
        let center: Vec<f64> = (0..6).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut reports = Vec::new();
        for _ in 0..7 {
            let dir: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = linalg::norm(&dir);
            let r = rng.random_range(0.0..1.0);
            reports.push(
                center
                    .iter()
                    .zip(&dir)
                    .map(|(c, d)| c + r * d / n)
                    .collect::<Vec<_>>(),
            );
        }
        for _ in 0..3 {
            let mut v = center.clone();
            v[0] += 50.0;
            reports.push(v);
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
        let reports = vec![vec![0.0], vec![0.01], vec![10.0], vec![10.01]];
        let err = fedpg_aggregate(
            &reports,
            4,
            &FilterConfig {
                sigma: 0.1,
                delta: 0.6,
                alpha: 0.3,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::FilterAssumptionsViolated { k: 4, .. }));
    }

    #[test]
    fn falls_back_to_r2_when_r1_too_small() {
        // Good reports spread beyond the R1 threshold but within 2σ.
        let reports = vec![vec![0.0], vec![0.5], vec![1.0], vec![0.25], vec![0.75]];
        let cfg = FilterConfig {
            sigma: 1.0,
            delta: 0.6,
            alpha: 0.0,
        };
        let out = fedpg_aggregate(&reports, 1000, &cfg).unwrap();
        assert_eq!(out.rule_used, FilterRule::R2);
        assert_eq!(out.accepted.len(), 5);
        assert!(out.r1_accepted_count.is_none_or(|c| c < 5));
    }
}
