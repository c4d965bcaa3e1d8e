//! Criterion benchmarks for the filter and the gradient estimators; see
//! `benches/`.
