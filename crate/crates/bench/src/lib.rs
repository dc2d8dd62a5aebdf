//! Criterion benchmarks for `helloc-core`; run with `cargo bench -p helloc-bench`.
