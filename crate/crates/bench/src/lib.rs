//! Criterion benchmarks for the simplex heads, the attention classifier and
//! the explainers. Run with `cargo bench -p commexp-bench`.
