//! Criterion benchmarks for the localization engine live under `benches/`.
