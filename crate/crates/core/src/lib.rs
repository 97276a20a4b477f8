pub mod crn;
pub mod dynamics;
pub mod entropy;
pub mod equilibrium;
pub mod experiment;
pub mod error;
pub mod io;
pub mod networks;
pub mod numeric;
pub mod simulate;
pub mod stationary;

pub use crn::{CrnSpec, LatticeClass, RateMatrix, State};
pub use error::{CrnError, Result};

#[cfg(test)]
pub(crate) fn proptest_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x6b75_6e61_7279),
        failure_persistence: None,
        ..Default::default()
    }
}
