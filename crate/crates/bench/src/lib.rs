//! Criterion benchmarks for the `icl-core` kernels live under `benches/`.
