//! Criterion benchmarks for the `explvar` crate; see `benches/`.
