//! Benchmark-only crate; the measurements live in `benches/lab.rs`.
