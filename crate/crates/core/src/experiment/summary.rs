use std::path::Path;

use serde::Serialize;

use super::bootstrap_ci;
use super::metrics::{read_csv, MetricsRecord};
use super::suite::{RunStatus, SuiteManifest};
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    /// Cumulative per-agent trajectories.
    pub trajectories: usize,
    pub mean_return: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_runs: usize,
}

/// Loads the manifest and every successful run's records.
pub fn load_suite(manifest_path: &Path) -> Result<(SuiteManifest, Vec<Vec<MetricsRecord>>)> {
    let manifest = SuiteManifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let runs = manifest
        .runs
        .iter()
        .filter(|r| r.status == RunStatus::Ok)
        .filter_map(|r| r.csv.as_ref())
        .map(|csv| read_csv(&dir.join(csv)))
        .collect::<Result<_>>()?;
    Ok((manifest, runs))
}

/// Mean test return across runs on the first run's trajectory grid, with a
/// pointwise percentile-bootstrap band. Each run contributes its record whose
/// trajectory count is nearest the grid point (earlier record on ties).
pub fn mean_curve(
    runs: &[Vec<MetricsRecord>],
    level: f64,
    n_boot: usize,
    rng: &mut SimRng,
) -> Result<Vec<CurvePoint>> {
    let grid = runs.first().ok_or(Error::Empty("runs"))?;
    if runs.iter().any(|r| r.is_empty()) {
        return Err(Error::Empty("run records"));
    }
    grid.iter()
        .map(|g| {
            let x = g.cumulative_trajectories;
            let values: Vec<f64> = runs
                .iter()
                .map(|run| {
                    run.iter()
                        .min_by_key(|r| r.cumulative_trajectories.abs_diff(x))
                        .expect("nonempty run")
                        .mean_test_return
                })
                .collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let (ci_low, ci_high) = bootstrap_ci(&values, level, n_boot, rng)?;
            Ok(CurvePoint {
                trajectories: x,
                mean_return: mean,
                ci_low,
                ci_high,
                n_runs: values.len(),
            })
        })
        .collect()
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
