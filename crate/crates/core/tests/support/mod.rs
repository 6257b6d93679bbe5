#![allow(dead_code, unused_imports)]

mod oracle;

pub use oracle::*;

/// Proptest settings for integration tests: no regression files, since the
/// test crates have no `lib.rs` to anchor them.
pub fn prop_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        ..Default::default()
    }
}
