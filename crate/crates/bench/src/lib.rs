//! Benchmarks for the operators and the full pipeline live in `benches/`.
