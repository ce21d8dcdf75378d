//! Chunked soft matching.
//!
//! The compressible region is cut into fixed-size chunks. Inside each chunk
//! even offsets form set A and odd offsets form set B; every A token draws an
//! edge to its most similar B token. Edges from all chunks are pooled, only
//! the most similar are kept, and each kept edge merges its A token into its
//! B token.

use std::cmp::Ordering;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::tensor::{pairwise_similarity, Matrix};

/// Slack for float products such as `0.29 * 100` that land just below an integer.
const FLOOR_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    pub chunk_size: usize,
    /// Offsets relative to the start of the region.
    pub ranges: Vec<Range<usize>>,
}

impl ChunkPlan {
    /// Chunks with at least two tokens, the only ones that can be partitioned.
    pub fn compressible(&self) -> impl Iterator<Item = (usize, &Range<usize>)> {
        self.ranges.iter().enumerate().filter(|(_, r)| r.len() >= 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a_index: usize,
    pub b_index: usize,
    pub similarity: f64,
    pub chunk_id: usize,
}

/// Partition of a region into clusters.
///
/// `clusters[i]` is sorted ascending and survives at position
/// `representatives[i]`: the B token for a merged cluster, the token itself
/// for a singleton. Clusters are ordered by representative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub region: Range<usize>,
    pub clusters: Vec<Vec<usize>>,
    pub representatives: Vec<usize>,
}

impl Clustering {
    pub fn identity(region: Range<usize>) -> Self {
        Clustering {
            clusters: region.clone().map(|i| vec![i]).collect(),
            representatives: region.clone().collect(),
            region,
        }
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

pub fn make_chunks(region_len: usize, chunk_size: usize) -> Result<ChunkPlan> {
    if chunk_size < 2 {
        return Err(Error::config(format!(
            "chunk size must be at least 2, got {chunk_size}"
        )));
    }
    let ranges = (0..region_len)
        .step_by(chunk_size)
        .map(|start| start..(start + chunk_size).min(region_len))
        .collect();
    Ok(ChunkPlan { chunk_size, ranges })
}

/// Even offsets go to A, odd offsets to B. `None` for ranges too short to split.
pub fn alternating_partition(range: Range<usize>) -> Option<(Vec<usize>, Vec<usize>)> {
    if range.len() < 2 {
        return None;
    }
    let a = range.clone().step_by(2).collect();
    let b = range.skip(1).step_by(2).collect();
    Some((a, b))
}

/// Best-match edges for one chunk of `keys`, one per A token.
///
/// `range` holds row indices into `keys`. Ties go to the smaller B index.
pub fn match_chunk(keys: &Matrix, range: Range<usize>, chunk_id: usize) -> Result<Vec<Edge>> {
    if range.end > keys.rows() {
        return Err(Error::dim(format!(
            "chunk {range:?} exceeds {} cached keys",
            keys.rows()
        )));
    }
    let Some((a, b)) = alternating_partition(range.clone()) else {
        return Err(Error::contract(format!(
            "chunk {range:?} is too short to partition"
        )));
    };
    let sims = pairwise_similarity(&keys.select_rows(&a), &keys.select_rows(&b))?;
    let edges = a
        .iter()
        .enumerate()
        .map(|(i, &a_index)| {
            let row = sims.row(i);
            let mut best = 0;
            for (j, &s) in row.iter().enumerate().skip(1) {
                if s > row[best] {
                    best = j;
                }
            }
            Edge {
                a_index,
                b_index: b[best],
                similarity: row[best],
                chunk_id,
            }
        })
        .collect();
    Ok(edges)
}

/// Total order used by pruning: similarity descending, then `(chunk_id, a_index)` ascending.
fn edge_order(x: &Edge, y: &Edge) -> Ordering {
    y.similarity
        .total_cmp(&x.similarity)
        .then(x.chunk_id.cmp(&y.chunk_id))
        .then(x.a_index.cmp(&y.a_index))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub edges: Vec<Edge>,
    /// Set when more edges were requested than exist.
    pub clamped: bool,
}

/// Keeps the `keep` most similar edges across all chunks.
pub fn prune_edges(mut edges: Vec<Edge>, keep: usize) -> Pruned {
    let clamped = keep > edges.len();
    edges.sort_by(edge_order);
    edges.truncate(keep);
    Pruned { edges, clamped }
}

/// Number of merge edges retained for a region of `compressible_len` tokens at ratio `r`.
pub fn edges_to_keep(compressible_len: usize, r: f64) -> Result<usize> {
    if !(0.0..=0.5).contains(&r) {
        return Err(Error::config(format!(
            "compression ratio must lie in [0, 0.5], got {r}"
        )));
    }
    Ok((r * compressible_len as f64 + FLOOR_EPS).floor() as usize)
}

/// Groups `region` into clusters from the kept edges.
pub fn build_clusters(kept: &[Edge], region: Range<usize>) -> Result<Clustering> {
    let base = region.start;
    let mut target: Vec<Option<usize>> = vec![None; region.len()];
    for e in kept {
        if !region.contains(&e.a_index) || !region.contains(&e.b_index) {
            return Err(Error::contract(format!(
                "edge {}->{} lies outside region {region:?}",
                e.a_index, e.b_index
            )));
        }
        if target[e.a_index - base].replace(e.b_index).is_some() {
            return Err(Error::contract(format!(
                "token {} has more than one kept edge",
                e.a_index
            )));
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); region.len()];
    for i in region.clone() {
        let rep = target[i - base].unwrap_or(i);
        if target[i - base].is_some() && target[rep - base].is_some() {
            return Err(Error::contract(format!(
                "token {rep} is both a merge source and a merge target"
            )));
        }
        members[rep - base].push(i);
    }

    let mut clusters = Vec::new();
    let mut representatives = Vec::new();
    for (off, m) in members.into_iter().enumerate() {
        if !m.is_empty() {
            representatives.push(base + off);
            clusters.push(m);
        }
    }
    Ok(Clustering {
        region,
        clusters,
        representatives,
    })
}

/// All best-match edges for `region`, chunk by chunk.
pub fn collect_edges(keys: &Matrix, region: Range<usize>, chunk_size: usize) -> Result<Vec<Edge>> {
    if region.end > keys.rows() {
        return Err(Error::dim(format!(
            "region {region:?} exceeds {} cached keys",
            keys.rows()
        )));
    }
    let plan = make_chunks(region.len(), chunk_size)?;
    let mut edges = Vec::new();
    for (chunk_id, r) in plan.compressible() {
        let global = region.start + r.start..region.start + r.end;
        edges.extend(match_chunk(keys, global, chunk_id)?);
    }
    Ok(edges)
}

/// One chunked soft matching pass over `region` at compression ratio `r`.
pub fn chunked_soft_matching(
    keys: &Matrix,
    region: Range<usize>,
    chunk_size: usize,
    r: f64,
) -> Result<Clustering> {
    let keep = edges_to_keep(region.len(), r)?;
    let edges = collect_edges(keys, region.clone(), chunk_size)?;
    let keep = keep.min(edges.len());
    build_clusters(&prune_edges(edges, keep).edges, region)
}

/// Unchunked bipartite soft matching over the whole region, the quadratic reference path.
pub fn bipartite_soft_matching(keys: &Matrix, region: Range<usize>, r: f64) -> Result<Clustering> {
    let len = region.len().max(2);
    chunked_soft_matching(keys, region, len, r)
}
