use std::ops::Range;

use super::config::CompressionConfig;
use crate::attention::{approx_attention, vanilla_attention};
use crate::error::{Error, Result};
use crate::matching::{build_clusters, collect_edges, edges_to_keep, prune_edges};
use crate::merging::compress_cache;
use crate::tensor::Matrix;

/// Mutable per-head cache: centroid rows, their degrees and the clustering step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheState {
    keys: Matrix,
    values: Matrix,
    degrees: Vec<u64>,
    clustering_step: usize,
    budget: usize,
}

/// One matching-and-merging pass inside a compression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassRecord {
    pub clustering_step: usize,
    pub ratio: f64,
    pub region_len: usize,
    pub merged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionEvent {
    pub len_before: usize,
    pub len_after: usize,
    pub passes: Vec<PassRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prefill {
    /// Causal attention output for every prompt row.
    pub outputs: Matrix,
    pub state: CacheState,
    pub event: Option<CompressionEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub out: Vec<f64>,
    pub event: Option<CompressionEvent>,
}

impl CacheState {
    /// Fresh cache holding `keys`/`values` at degree 1.
    pub fn new(keys: Matrix, values: Matrix, budget: usize) -> Result<Self> {
        if keys.rows() != values.rows() {
            return Err(Error::dim(format!(
                "{} keys but {} values",
                keys.rows(),
                values.rows()
            )));
        }
        let degrees = vec![1; keys.rows()];
        Ok(CacheState {
            keys,
            values,
            degrees,
            clustering_step: 0,
            budget,
        })
    }

    /// Rebuilds a cache from previously compressed parts.
    pub fn from_parts(
        keys: Matrix,
        values: Matrix,
        degrees: Vec<u64>,
        budget: usize,
    ) -> Result<Self> {
        if keys.rows() != values.rows() || keys.rows() != degrees.len() {
            return Err(Error::dim(format!(
                "cache rows disagree: keys {}, values {}, degrees {}",
                keys.rows(),
                values.rows(),
                degrees.len()
            )));
        }
        if degrees.contains(&0) {
            return Err(Error::contract("cluster degrees must be at least 1"));
        }
        Ok(CacheState {
            keys,
            values,
            degrees,
            clustering_step: 0,
            budget,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.rows() == 0
    }

    pub fn keys(&self) -> &Matrix {
        &self.keys
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn degrees(&self) -> &[u64] {
        &self.degrees
    }

    pub fn degree_total(&self) -> u64 {
        self.degrees.iter().sum()
    }

    pub fn clustering_step(&self) -> usize {
        self.clustering_step
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    fn should_compress(&self, cfg: &CompressionConfig) -> bool {
        self.len() >= self.budget + cfg.interval
    }

    fn push(&mut self, k: &[f64], v: &[f64]) -> Result<()> {
        if k.len() != self.keys.cols() || v.len() != self.values.cols() {
            return Err(Error::dim(format!(
                "token of dims ({}, {}) for a cache of dims ({}, {})",
                k.len(),
                v.len(),
                self.keys.cols(),
                self.values.cols()
            )));
        }
        self.keys.push_row(k)?;
        self.values.push_row(v)?;
        self.degrees.push(1);
        Ok(())
    }

    /// Rows eligible for merging: everything between the sinks and the recent window.
    pub fn compressible_region(&self, cfg: &CompressionConfig) -> Range<usize> {
        let end = self.len().saturating_sub(cfg.recent);
        cfg.sinks.min(end)..end
    }
}

/// Runs causal exact attention over the prompt and seeds the cache.
///
/// Compresses once if the prompt alone reaches `budget + interval`.
/// `budget` overrides the config-derived budget (used for per-head reallocation).
pub fn prefill(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    cfg: &CompressionConfig,
    budget: Option<usize>,
) -> Result<Prefill> {
    let n = k.rows();
    if n == 0 {
        return Err(Error::dim("prefill needs at least one prompt token"));
    }
    if q.rows() != n || v.rows() != n {
        return Err(Error::dim(format!(
            "prompt rows disagree: q {}, k {}, v {n}",
            q.rows(),
            k.rows()
        )));
    }
    let budget = match budget {
        Some(b) if b < cfg.min_budget() => {
            return Err(Error::config(format!(
                "budget {b} is below sinks + recent + 2 = {}",
                cfg.min_budget()
            )))
        }
        Some(b) => b,
        None => cfg.budget(n)?,
    };
    cfg.validate()?;
    let head_dim = cfg.scale_dim(k.cols());

    let mut outputs = Matrix::with_cols(v.cols());
    for i in 0..n {
        let out = vanilla_attention(
            q.row(i),
            &k.slice_rows(0..i + 1),
            &v.slice_rows(0..i + 1),
            head_dim,
        )?;
        outputs.push_row(&out.out)?;
    }

    let mut state = CacheState::new(k.clone(), v.clone(), budget)?;
    let event = if state.should_compress(cfg) {
        Some(compress_step(&mut state, cfg)?)
    } else {
        None
    };
    Ok(Prefill {
        outputs,
        state,
        event,
    })
}

/// Appends one token, attends over the whole cache, then compresses if the trigger fires.
pub fn decode_step(
    state: &mut CacheState,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    cfg: &CompressionConfig,
) -> Result<DecodeOutput> {
    state.push(k, v)?;
    let head_dim = cfg.scale_dim(state.keys.cols());
    let out = approx_attention(q, &state.keys, &state.values, &state.degrees, head_dim)?.out;
    let event = if state.should_compress(cfg) {
        Some(compress_step(state, cfg)?)
    } else {
        None
    };
    Ok(DecodeOutput { out, event })
}

/// Compresses the middle of the cache down to its budget.
///
/// Sinks and recent rows are untouched. Each pass runs chunked soft matching
/// at the schedule's ratio for the current clustering step, keeping no more
/// merge edges than needed to land exactly on the budget. A no-op when the
/// cache already fits.
pub fn compress_step(state: &mut CacheState, cfg: &CompressionConfig) -> Result<CompressionEvent> {
    let len_before = state.len();
    let mut passes = Vec::new();
    while state.len() > state.budget {
        let region = state.compressible_region(cfg);
        let ratio = cfg.schedule.ratio(state.clustering_step);
        let edges = collect_edges(&state.keys, region.clone(), cfg.chunk_size)?;
        let keep = edges_to_keep(region.len(), ratio)?
            .min(edges.len())
            .min(state.len() - state.budget);
        if keep == 0 {
            return Err(Error::NonConvergence {
                len: state.len(),
                budget: state.budget,
                ratio,
            });
        }
        let clustering = build_clusters(&prune_edges(edges, keep).edges, region.clone())?;
        let merged = compress_cache(&state.keys, &state.values, &state.degrees, &clustering)?;
        state.keys = merged.keys;
        state.values = merged.values;
        state.degrees = merged.degrees;
        passes.push(PassRecord {
            clustering_step: state.clustering_step,
            ratio,
            region_len: region.len(),
            merged: keep,
        });
        state.clustering_step += 1;
    }
    Ok(CompressionEvent {
        len_before,
        len_after: state.len(),
        passes,
    })
}
