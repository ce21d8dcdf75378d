//! Online KV-cache clustering.
//!
//! A simulated attention head keeps its key/value cache under a fixed budget
//! by merging similar keys instead of evicting them. Merging is driven by
//! chunked soft matching ([`matching`]), centroids are degree-weighted
//! ([`merging`]), and decode attention adds a `log(degree)` bias so that a
//! centroid stands in for every token it absorbed ([`attention`]). The
//! [`pipeline`] module runs prefill and decode with budget-triggered
//! compression next to an uncompressed exact-attention oracle.

pub mod attention;
pub mod calibration;
pub mod error;
pub mod matching;
pub mod merging;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod tensor;
pub mod theory;

pub use error::{Error, FormatError, Result};
pub use tensor::Matrix;
