//! Holds the acceptance suite in `tests/acceptance.rs`; see the README for how to run it.
