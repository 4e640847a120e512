//! The guide's chapters as module docs, so `cargo test` runs every snippet
//! against the current API.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}
#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../../book/src/landscape.md")]
pub mod landscape {}
#[doc = include_str!("../../../book/src/simulate.md")]
pub mod simulate {}
#[doc = include_str!("../../../book/src/signal.md")]
pub mod signal {}
#[doc = include_str!("../../../book/src/reconstruct.md")]
pub mod reconstruct {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
