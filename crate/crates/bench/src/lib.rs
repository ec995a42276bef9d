//! Criterion benchmarks for the solver and network kernels; see `benches/`.
