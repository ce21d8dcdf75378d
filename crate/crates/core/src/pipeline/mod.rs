//! Prefill/decode loop with budget-triggered cache compression.
//!
//! The cache budget is `B = floor(R * (n + max_decode))`. Whenever the cache
//! reaches `B + interval` rows, the rows between the attention sinks and the
//! recent window are clustered and merged until the cache is back at `B`.
//! Decode attention runs over centroids with a `log(degree)` bias.

mod budget;
mod cache;
mod config;
mod run;

pub use budget::{allocate_head_budgets, outlier_count};
pub use cache::{
    compress_step, decode_step, prefill, CacheState, CompressionEvent, DecodeOutput, PassRecord,
    Prefill,
};
pub use config::{schedule_ratio, CompressionConfig, RatioSchedule};
pub use run::{run_pipeline, CompressionRecord, HeadInput, StepEvent, StepRecord, Transcript};
