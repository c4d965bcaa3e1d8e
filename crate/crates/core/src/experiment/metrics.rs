use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Column order of the per-run metrics CSV.
pub const CSV_HEADER: [&str; 13] = [
    "run_name",
    "algorithm",
    "seed",
    "round",
    "cumulative_trajectories",
    "cumulative_server_trajectories",
    "mean_test_return",
    "filter_rule",
    "accepted_count",
    "rejected_ids",
    "batch_size",
    "inner_steps",
    "wall_time_ms",
];

/// One row per round. `cumulative_trajectories` counts per-agent samples;
/// server-side inner-loop samples are tracked separately. `rejected_ids`
/// is a `;`-separated list, `filter_rule` is `R1`, `R2` or `none`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_name: String,
    pub algorithm: String,
    pub seed: u64,
    pub round: usize,
    pub cumulative_trajectories: usize,
    pub cumulative_server_trajectories: usize,
    pub mean_test_return: f64,
    pub filter_rule: String,
    pub accepted_count: usize,
    pub rejected_ids: String,
    pub batch_size: usize,
    pub inner_steps: usize,
    pub wall_time_ms: u64,
}

pub fn records_to_csv(records: &[MetricsRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    std::fs::write(path, records_to_csv(records)?)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
