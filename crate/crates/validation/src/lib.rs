//! Host package for the acceptance harness in `tests/acceptance.rs`.
