//! Criterion benchmarks for the rate allocator and whole simulation runs; see `benches/`.
