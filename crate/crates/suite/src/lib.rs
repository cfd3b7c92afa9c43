//! Holds the end-to-end acceptance suite in `tests/acceptance.rs`; run it
//! with `cargo test -p specrecon-suite --test acceptance`.
