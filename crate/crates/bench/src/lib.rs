//! Criterion benchmarks for the hashing pipeline; see `benches/`.
