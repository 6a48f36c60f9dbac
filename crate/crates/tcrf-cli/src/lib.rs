//! Command-line front end: scenario files in, summaries, series, and
//! checkpoints out. The numerics live in the `tcrf` library; this crate only
//! parses, routes, and serializes.

pub mod checkpoint;
pub mod runner;
pub mod scenario;
