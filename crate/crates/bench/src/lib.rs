//! Criterion benchmarks of the core kernels; see `benches/pipeline.rs`.
