//! Monte Carlo engine for multipartite entanglement in measurement-only
//! circuits built from `ZZ` and `X` measurements.
//!
//! Realizations map onto bond percolation on a `(d+1)`-dimensional graph. A
//! rolling union-find tracks the clusters of the newest time-slice, the final
//! slice is a product of cat states, and the observables follow from how those
//! clusters meet a set of subregions.

pub mod analysis;
pub mod cluster;
pub mod ensembles;
pub mod error;
pub mod experiment;
pub mod measures;
pub mod oracle;
pub mod rng;
pub mod weighted;

pub use error::{Error, Result};
