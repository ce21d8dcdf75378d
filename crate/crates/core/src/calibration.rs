//! Offline outlier-head detection.
//!
//! A head whose keys rarely find a highly similar partner inside their chunk
//! gains little from clustering. For each head we measure the fraction of A
//! tokens whose best-match edge falls below a similarity threshold, then
//! exempt the heads with the highest fractions.

use crate::error::{Error, Result};
use crate::matching::{make_chunks, match_chunk};
use crate::pipeline::outlier_count;
use crate::tensor::Matrix;

pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct HeadProfile {
    pub head_index: usize,
    /// Mean over samples of the unmatched fraction of A tokens.
    pub unmatched_proportion: f64,
    pub sample_count: usize,
    /// Population variance of the per-sample fractions.
    pub sample_variance: f64,
}

/// Fraction of A tokens in one sample whose best edge is below `threshold`.
fn unmatched_fraction(keys: &Matrix, chunk_size: usize, threshold: f64) -> Result<f64> {
    if keys.rows() < 2 {
        return Err(Error::contract(format!(
            "calibration samples need at least 2 rows, got {}",
            keys.rows()
        )));
    }
    let plan = make_chunks(keys.rows(), chunk_size)?;
    let (mut below, mut total) = (0usize, 0usize);
    for (chunk_id, range) in plan.compressible() {
        for e in match_chunk(keys, range.clone(), chunk_id)? {
            total += 1;
            if e.similarity < threshold {
                below += 1;
            }
        }
    }
    Ok(below as f64 / total as f64)
}

pub fn profile_head(
    head_index: usize,
    samples: &[Matrix],
    chunk_size: usize,
    threshold: f64,
) -> Result<HeadProfile> {
    if samples.is_empty() {
        return Err(Error::contract("profile_head needs at least one sample"));
    }
    if !(threshold > -1.0 && threshold < 1.0) {
        return Err(Error::config(format!(
            "similarity threshold must lie in (-1, 1), got {threshold}"
        )));
    }
    let fractions = samples
        .iter()
        .map(|s| unmatched_fraction(s, chunk_size, threshold))
        .collect::<Result<Vec<_>>>()?;
    let n = fractions.len() as f64;
    let mean = fractions.iter().sum::<f64>() / n;
    let variance = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    Ok(HeadProfile {
        head_index,
        unmatched_proportion: mean,
        sample_count: fractions.len(),
        sample_variance: variance,
    })
}

/// Head indices of the `ceil(ratio * H)` most unmatched heads, ascending.
pub fn select_outliers(profiles: &[HeadProfile], ratio: f64) -> Result<Vec<usize>> {
    if profiles.is_empty() {
        return Err(Error::contract("no head profiles to select from"));
    }
    let count = outlier_count(ratio, profiles.len())?;
    let mut ranked: Vec<&HeadProfile> = profiles.iter().collect();
    ranked.sort_by(|a, b| {
        b.unmatched_proportion
            .total_cmp(&a.unmatched_proportion)
            .then(a.head_index.cmp(&b.head_index))
    });
    let mut picked: Vec<usize> = ranked.iter().take(count).map(|p| p.head_index).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Cuts a key matrix into consecutive samples of `sample_len` rows.
///
/// A trailing piece shorter than two rows is dropped.
pub fn split_samples(keys: &Matrix, sample_len: usize) -> Vec<Matrix> {
    let sample_len = sample_len.max(2);
    (0..keys.rows())
        .step_by(sample_len)
        .map(|s| s..(s + sample_len).min(keys.rows()))
        .filter(|r| r.len() >= 2)
        .map(|r| keys.slice_rows(r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn profile(index: usize, p: f64) -> HeadProfile {
        HeadProfile {
            head_index: index,
            unmatched_proportion: p,
            sample_count: 1,
            sample_variance: 0.0,
        }
    }

    #[test]
    fn identical_keys_are_fully_matched() {
        let k = Matrix::from_rows(&vec![vec![0.3, -0.4, 1.0]; 16]).unwrap();
        let p = profile_head(0, &[k], 8, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(p.unmatched_proportion, 0.0);
    }

    #[test]
    fn orthogonal_keys_are_fully_unmatched() {
        let k = Matrix::from_rows(&(0..8).map(|i| basis(8, i)).collect::<Vec<_>>()).unwrap();
        let p = profile_head(3, &[k], 8, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(p.unmatched_proportion, 1.0);
        assert_eq!(p.head_index, 3);
    }

    #[test]
    fn half_and_half() {
        // chunk 0 holds one repeated key, chunk 1 holds four orthogonal keys
        let mut rows = vec![basis(8, 0); 4];
        rows.extend((4..8).map(|i| basis(8, i)));
        let k = Matrix::from_rows(&rows).unwrap();
        let p = profile_head(0, &[k], 4, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(p.unmatched_proportion, 0.5);
    }

    #[test]
    fn averages_over_samples() {
        let same = Matrix::from_rows(&vec![vec![1.0, 1.0]; 4]).unwrap();
        let orth = Matrix::from_rows(&[basis(2, 0), basis(2, 1)]).unwrap();
        let p = profile_head(0, &[same, orth], 4, 0.8).unwrap();
        assert_eq!(p.unmatched_proportion, 0.5);
        assert_eq!(p.sample_count, 2);
        assert_eq!(p.sample_variance, 0.25);
    }

    #[test]
    fn profile_errors() {
        assert!(profile_head(0, &[], 4, 0.8).is_err());
        let k = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(profile_head(0, std::slice::from_ref(&k), 4, 0.8).is_err());
        let k2 = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert!(profile_head(0, &[k2], 4, 1.0).is_err());
    }

    #[test]
    fn selection() {
        let profiles: Vec<HeadProfile> = (0..32).map(|h| profile(h, h as f64 / 100.0)).collect();
        assert_eq!(select_outliers(&profiles, 0.04).unwrap(), vec![30, 31]);
        assert!(select_outliers(&profiles, 0.0).unwrap().is_empty());
        assert!(select_outliers(&profiles, 1.0).is_err());
        assert!(select_outliers(&[], 0.1).is_err());

        let tied = vec![profile(0, 0.1), profile(1, 0.9), profile(2, 0.9)];
        assert_eq!(select_outliers(&tied, 0.2).unwrap(), vec![1]);
    }

    #[test]
    fn sample_splitting() {
        let k = Matrix::from_rows(&vec![vec![1.0]; 9]).unwrap();
        let s = split_samples(&k, 4);
        assert_eq!(s.iter().map(Matrix::rows).collect::<Vec<_>>(), vec![4, 4]);
    }
}
