//! Criterion benchmarks for the stepping kernels; see `benches/stepping.rs`.
