//! Criterion benchmarks for `zigzag-core`; see `benches/`.
