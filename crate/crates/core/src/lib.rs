//! Potential energy landscapes of a shield-shaped body pushing through two
//! torsional-spring beams, a quasi-static sensor simulator, and a meshless
//! Helmholtz-Hodge reconstruction of the landscape from scattered forces.

pub mod error;
pub mod geometry;
pub mod landscape;
pub mod metrics;
pub mod reconstruct;
pub mod signal;
pub mod simulate;

pub use error::{Error, Result};
