//! Criterion benchmarks for `kshap-wor`; see `benches/kernels.rs`.
