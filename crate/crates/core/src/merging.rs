//! Degree-weighted merging of cached key/value rows.

use crate::error::{Error, Result};
use crate::matching::Clustering;
use crate::tensor::Matrix;

/// Degree-weighted mean of `states` and the summed degree.
pub fn merge_cluster(states: &[&[f64]], degrees: &[u64]) -> Result<(Vec<f64>, u64)> {
    let Some(first) = states.first() else {
        return Err(Error::contract("cannot merge an empty cluster"));
    };
    if states.len() != degrees.len() {
        return Err(Error::dim(format!(
            "{} states but {} degrees",
            states.len(),
            degrees.len()
        )));
    }
    if degrees.contains(&0) {
        return Err(Error::contract("cluster degrees must be at least 1"));
    }
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for (s, &n) in states.iter().zip(degrees) {
        if s.len() != dim {
            return Err(Error::dim(format!(
                "state of dim {} in a cluster of dim {dim}",
                s.len()
            )));
        }
        for (a, x) in acc.iter_mut().zip(s.iter()) {
            *a += n as f64 * x;
        }
    }
    let total: u64 = degrees.iter().sum();
    for a in &mut acc {
        *a /= total as f64;
    }
    Ok((acc, total))
}

/// Compressed cache rows and their degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedCache {
    pub keys: Matrix,
    pub values: Matrix,
    pub degrees: Vec<u64>,
}

/// Replaces each cluster in `clustering.region` by its weighted centroid.
///
/// Rows outside the region are copied unchanged. Merged rows take the slot
/// of their representative, so row order stays ascending in original position.
pub fn compress_cache(
    keys: &Matrix,
    values: &Matrix,
    degrees: &[u64],
    clustering: &Clustering,
) -> Result<CompressedCache> {
    let s = keys.rows();
    if values.rows() != s || degrees.len() != s {
        return Err(Error::dim(format!(
            "cache rows disagree: keys {s}, values {}, degrees {}",
            values.rows(),
            degrees.len()
        )));
    }
    let region = clustering.region.clone();
    if region.end > s {
        return Err(Error::dim(format!(
            "clustering region {region:?} exceeds cache length {s}"
        )));
    }
    if clustering.clusters.len() != clustering.representatives.len() {
        return Err(Error::contract(
            "clusters and representatives differ in length",
        ));
    }
    let mut covered = vec![false; region.len()];
    for i in clustering.clusters.iter().flatten() {
        if !region.contains(i) || std::mem::replace(&mut covered[i - region.start], true) {
            return Err(Error::contract(format!(
                "clustering does not partition region {region:?} (index {i})"
            )));
        }
    }
    if covered.contains(&false) {
        return Err(Error::contract(format!(
            "clustering leaves part of region {region:?} uncovered"
        )));
    }

    let mut out_k = Matrix::with_cols(keys.cols());
    let mut out_v = Matrix::with_cols(values.cols());
    let mut out_n = Vec::with_capacity(s - region.len() + clustering.len());
    for (i, &n) in degrees.iter().enumerate().take(region.start) {
        out_k.push_row(keys.row(i))?;
        out_v.push_row(values.row(i))?;
        out_n.push(n);
    }
    for cluster in &clustering.clusters {
        let w: Vec<u64> = cluster.iter().map(|&i| degrees[i]).collect();
        if let [only] = cluster[..] {
            out_k.push_row(keys.row(only))?;
            out_v.push_row(values.row(only))?;
            out_n.push(w[0]);
            continue;
        }
        let ks: Vec<&[f64]> = cluster.iter().map(|&i| keys.row(i)).collect();
        let vs: Vec<&[f64]> = cluster.iter().map(|&i| values.row(i)).collect();
        let (k, n) = merge_cluster(&ks, &w)?;
        let (v, _) = merge_cluster(&vs, &w)?;
        out_k.push_row(&k)?;
        out_v.push_row(&v)?;
        out_n.push(n);
    }
    for (i, &n) in degrees.iter().enumerate().skip(region.end) {
        out_k.push_row(keys.row(i))?;
        out_v.push_row(values.row(i))?;
        out_n.push(n);
    }
    Ok(CompressedCache {
        keys: out_k,
        values: out_v,
        degrees: out_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::build_clusters;
    use crate::matching::Edge;
    use proptest::prelude::*;

    #[test]
    fn merge_examples() {
        assert_eq!(
            merge_cluster(&[&[1.0, 0.0]], &[5]).unwrap(),
            (vec![1.0, 0.0], 5)
        );
        assert_eq!(
            merge_cluster(&[&[1.0, 0.0], &[0.0, 1.0]], &[1, 3]).unwrap(),
            (vec![0.25, 0.75], 4)
        );
        assert_eq!(
            merge_cluster(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0]], &[2, 1, 1]).unwrap(),
            (vec![0.5, 0.5], 4)
        );
    }

    #[test]
    fn merge_errors() {
        assert!(matches!(merge_cluster(&[], &[]), Err(Error::Contract(_))));
        assert!(merge_cluster(&[&[1.0]], &[0]).is_err());
        assert!(merge_cluster(&[&[1.0], &[1.0, 2.0]], &[1, 1]).is_err());
    }

    fn m(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_clustering_is_noop() {
        let k = m(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let v = m(&[[0.0, 1.0], [1.0, 0.0], [2.0, 2.0]]);
        let n = vec![1, 4, 2];
        let out = compress_cache(&k, &v, &n, &Clustering::identity(0..3)).unwrap();
        assert_eq!(out.keys, k);
        assert_eq!(out.values, v);
        assert_eq!(out.degrees, n);
    }

    #[test]
    fn pairs_of_identical_keys() {
        let k = m(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let v = m(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]);
        let c = Clustering {
            region: 0..4,
            clusters: vec![vec![0, 1], vec![2, 3]],
            representatives: vec![1, 3],
        };
        let out = compress_cache(&k, &v, &[1, 1, 1, 1], &c).unwrap();
        assert_eq!(out.keys, m(&[[1.0, 0.0], [0.0, 1.0]]));
        assert_eq!(out.values, m(&[[2.0, 3.0], [6.0, 7.0]]));
        assert_eq!(out.degrees, vec![2, 2]);
    }

    #[test]
    fn weighted_pair() {
        let k = m(&[[1.0, 0.0], [0.0, 1.0]]);
        let c = Clustering {
            region: 0..2,
            clusters: vec![vec![0, 1]],
            representatives: vec![1],
        };
        let out = compress_cache(&k, &k, &[3, 1], &c).unwrap();
        assert_eq!(out.keys, m(&[[0.75, 0.25]]));
        assert_eq!(out.values, out.keys);
        assert_eq!(out.degrees, vec![4]);
    }

    #[test]
    fn rows_outside_region_pass_through() {
        let k = m(&[[9.0, 9.0], [1.0, 0.0], [1.0, 0.0], [7.0, 7.0]]);
        let edges = [Edge {
            a_index: 1,
            b_index: 2,
            similarity: 1.0,
            chunk_id: 0,
        }];
        let c = build_clusters(&edges, 1..3).unwrap();
        let out = compress_cache(&k, &k, &[1, 2, 3, 4], &c).unwrap();
        assert_eq!(out.keys, m(&[[9.0, 9.0], [1.0, 0.0], [7.0, 7.0]]));
        assert_eq!(out.degrees, vec![1, 5, 4]);
    }

    #[test]
    fn rejects_bad_clustering() {
        let k = m(&[[1.0, 0.0], [0.0, 1.0]]);
        let missing = Clustering {
            region: 0..2,
            clusters: vec![vec![0]],
            representatives: vec![0],
        };
        assert!(compress_cache(&k, &k, &[1, 1], &missing).is_err());
        assert!(compress_cache(&k, &k, &[1, 1], &Clustering::identity(0..3)).is_err());
        assert!(compress_cache(&k, &k, &[1], &Clustering::identity(0..2)).is_err());
    }

    proptest! {
        #[test]
        fn merging_is_associative(
            x in prop::collection::vec(-5.0f64..5.0, 3),
            y in prop::collection::vec(-5.0f64..5.0, 3),
            z in prop::collection::vec(-5.0f64..5.0, 3),
            nx in 1u64..50, ny in 1u64..50, nz in 1u64..50,
        ) {
            let (xy, nxy) = merge_cluster(&[&x, &y], &[nx, ny]).unwrap();
            let (two_step, n2) = merge_cluster(&[&xy, &z], &[nxy, nz]).unwrap();
            let (one_step, n1) = merge_cluster(&[&x, &y, &z], &[nx, ny, nz]).unwrap();
            prop_assert_eq!(n1, n2);
            for (a, b) in two_step.iter().zip(&one_step) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn degree_total_is_conserved(
            degrees in prop::collection::vec(1u64..10, 2..30),
            r in 0.0f64..=0.5,
        ) {
            let n = degrees.len();
            let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
            let k = Matrix::from_rows(&rows).unwrap();
            let c = crate::matching::chunked_soft_matching(&k, 0..n, 4, r).unwrap();
            let out = compress_cache(&k, &k, &degrees, &c).unwrap();
            prop_assert_eq!(out.degrees.iter().sum::<u64>(), degrees.iter().sum::<u64>());
            prop_assert_eq!(out.keys.rows(), c.len());
            // values were merged with exactly the key weights
            prop_assert_eq!(out.keys, out.values);
        }
    }
}
