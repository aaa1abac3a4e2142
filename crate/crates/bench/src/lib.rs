//! Criterion benchmarks for the SymDQN workspace live in `benches/`.
