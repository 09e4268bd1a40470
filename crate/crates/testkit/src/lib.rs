//! Test-support crate: deliberately naive reference implementations used as
//! oracles by the unit and acceptance suites, plus a synthetic labeled image
//! corpus for end-to-end training tests.
//!
//! Nothing here shares code with the optimized kernels it is used to check.
//! Reference routines are written as the plainest possible loops, and the
//! expected values they produce were frozen before the optimized paths were
//! written.

pub mod corpus;
pub mod metrics;
pub mod naive;
