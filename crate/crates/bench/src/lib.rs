//! Criterion benchmarks for the particle engine and the transport solvers.
//! Run with `cargo bench -p mvlab-bench`.
