//! Exact and degree-biased attention for a single query.

use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub out: Vec<f64>,
    /// Softmax probabilities over cache rows.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub l2: f64,
    pub linf: f64,
    pub cosine: f64,
}

/// `softmax(q K^T / sqrt(head_dim) + bias) V`, max-subtracted.
fn biased_attention(
    q: &[f64],
    keys: &Matrix,
    values: &Matrix,
    bias: Option<&[f64]>,
    head_dim: usize,
) -> Result<AttentionOutput> {
    let n = keys.rows();
    if n == 0 {
        return Err(Error::dim("attention over an empty cache"));
    }
    if values.rows() != n {
        return Err(Error::dim(format!("{n} keys but {} values", values.rows())));
    }
    if keys.cols() != q.len() {
        return Err(Error::dim(format!(
            "query of dim {} against keys of dim {}",
            q.len(),
            keys.cols()
        )));
    }
    if head_dim == 0 {
        return Err(Error::config("head_dim must be positive"));
    }
    let scale = (head_dim as f64).sqrt().recip();
    let mut logits: Vec<f64> = keys.row_iter().map(|k| dot(q, k) * scale).collect();
    if let Some(bias) = bias {
        for (l, b) in logits.iter_mut().zip(bias) {
            *l += b;
        }
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in &mut logits {
        *l = (*l - max).exp();
        total += *l;
    }
    for w in &mut logits {
        *w /= total;
    }
    let mut out = vec![0.0; values.cols()];
    for (w, v) in logits.iter().zip(values.row_iter()) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok(AttentionOutput {
        out,
        weights: Some(logits),
    })
}

pub fn vanilla_attention(
    q: &[f64],
    keys: &Matrix,
    values: &Matrix,
    head_dim: usize,
) -> Result<AttentionOutput> {
    biased_attention(q, keys, values, None, head_dim)
}

/// Attention over cluster centroids with a `log(degree)` logit bias.
///
/// Equivalent to exact attention over a cache in which every centroid appears
/// `degree` times.
pub fn approx_attention(
    q: &[f64],
    keys: &Matrix,
    values: &Matrix,
    degrees: &[u64],
    head_dim: usize,
) -> Result<AttentionOutput> {
    if degrees.len() != keys.rows() {
        return Err(Error::dim(format!(
            "{} degrees for {} cached rows",
            degrees.len(),
            keys.rows()
        )));
    }
    if degrees.contains(&0) {
        return Err(Error::contract("cluster degrees must be at least 1"));
    }
    let bias: Vec<f64> = degrees.iter().map(|&n| (n as f64).ln()).collect();
    biased_attention(q, keys, values, Some(&bias), head_dim)
}

pub fn attention_error(exact: &AttentionOutput, approx: &AttentionOutput) -> Result<ErrorMetrics> {
    output_error(&exact.out, &approx.out)
}

pub fn output_error(exact: &[f64], approx: &[f64]) -> Result<ErrorMetrics> {
    if exact.len() != approx.len() {
        return Err(Error::dim(format!(
            "outputs of dim {} and {}",
            exact.len(),
            approx.len()
        )));
    }
    let mut sq = 0.0f64;
    let mut linf = 0.0f64;
    for (a, b) in exact.iter().zip(approx) {
        let d = a - b;
        sq += d * d;
        linf = linf.max(d.abs());
    }
    let (na, nb) = (dot(exact, exact).sqrt(), dot(approx, approx).sqrt());
    let cosine = if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(exact, approx) / (na * nb)
    };
    Ok(ErrorMetrics {
        l2: sq.sqrt(),
        linf,
        cosine,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    /// Direct evaluation of the weighted sum, no max subtraction.
    fn naive(q: &[f64], k: &Matrix, v: &Matrix, head_dim: usize) -> Vec<f64> {
        let e: Vec<f64> = k
            .row_iter()
            .map(|r| {
                (q.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / (head_dim as f64).sqrt()).exp()
            })
            .collect();
        let z: f64 = e.iter().sum();
        (0..v.cols())
            .map(|c| {
                e.iter()
                    .zip(v.row_iter())
                    .map(|(w, r)| w * r[c])
                    .sum::<f64>()
                    / z
            })
            .collect()
    }

    #[test]
    fn single_token() {
        let out =
            vanilla_attention(&[1.0, 0.0], &m(&[&[1.0, 0.0]]), &m(&[&[5.0, 5.0]]), 2).unwrap();
        assert_eq!(out.out, vec![5.0, 5.0]);
    }

    #[test]
    fn two_token_softmax() {
        let eye = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let out = vanilla_attention(&[1.0, 0.0], &eye, &eye, 2).unwrap();
        let w1 =
            std::f64::consts::FRAC_1_SQRT_2.exp() / (std::f64::consts::FRAC_1_SQRT_2.exp() + 1.0);
        assert!((out.out[0] - w1).abs() < 1e-12);
        assert!((out.out[0] - 0.6698).abs() < 1e-4);
        assert!((out.out[1] - 0.3302).abs() < 1e-4);
    }

    #[test]
    fn equal_values_give_that_value() {
        let k = m(&[&[3.0, -1.0], &[0.2, 8.0], &[-4.0, 0.0]]);
        let v = m(&[&[1.5, -2.0], &[1.5, -2.0], &[1.5, -2.0]]);
        let out = vanilla_attention(&[0.3, 0.7], &k, &v, 2).unwrap();
        for (o, e) in out.out.iter().zip([1.5, -2.0]) {
            assert!((o - e).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_cache_is_error() {
        let k = Matrix::with_cols(2);
        assert!(vanilla_attention(&[1.0, 0.0], &k, &k, 2).is_err());
    }

    #[test]
    fn zero_degree_is_error() {
        let k = m(&[&[1.0]]);
        assert!(matches!(
            approx_attention(&[1.0], &k, &k, &[0], 1),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn identical_keys_compress_exactly() {
        let k = [0.4, -0.2, 0.9];
        let keys = m(&[&k, &k, &k]);
        let vals = m(&[&[1.0, 0.0, 2.0], &[0.0, 3.0, 1.0], &[2.0, 0.0, -1.0]]);
        let q = [0.7, 0.1, -0.5];
        let exact = naive(&q, &keys, &vals, 3);
        let mean = [1.0, 1.0, 2.0 / 3.0];
        let approx = approx_attention(&q, &m(&[&k]), &m(&[&mean]), &[3], 3).unwrap();
        let err = output_error(&exact, &approx.out).unwrap();
        assert!(err.l2 < 1e-9, "{err:?}");
    }

    #[test]
    fn degree_two_cluster_matches_expansion() {
        let centroids = m(&[&[1.0, 2.0], &[-0.5, 0.3]]);
        let means = m(&[&[0.1, 0.9], &[4.0, -1.0]]);
        let q = [0.25, -0.75];
        let expanded_k = m(&[&[1.0, 2.0], &[1.0, 2.0], &[-0.5, 0.3]]);
        let expanded_v = m(&[&[0.1, 0.9], &[0.1, 0.9], &[4.0, -1.0]]);
        let exact = naive(&q, &expanded_k, &expanded_v, 2);
        let approx = approx_attention(&q, &centroids, &means, &[2, 1], 2).unwrap();
        assert!(output_error(&exact, &approx.out).unwrap().l2 < 1e-12);
    }

    #[test]
    fn error_metrics() {
        let a = AttentionOutput {
            out: vec![1.0, 0.0],
            weights: None,
        };
        let e = attention_error(&a, &a).unwrap();
        assert_eq!((e.l2, e.linf, e.cosine), (0.0, 0.0, 1.0));
        let b = AttentionOutput {
            out: vec![0.0, 1.0],
            weights: None,
        };
        let e = attention_error(&a, &b).unwrap();
        assert!((e.l2 - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(e.linf, 1.0);
        assert_eq!(e.cosine, 0.0);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let k = m(&[&[700.0], &[699.0], &[-700.0]]);
        let v = m(&[&[1.0], &[2.0], &[3.0]]);
        let out = vanilla_attention(&[1.0], &k, &v, 1).unwrap();
        assert!(out.out[0].is_finite());
        let w = out.weights.unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let e = 1f64.exp();
        assert!((w[0] - e / (e + 1.0)).abs() < 1e-12);

        let out = approx_attention(&[1.0], &k, &v, &[1_000_000, 1, 3], 1).unwrap();
        assert!(out.out.iter().all(|x| x.is_finite()));
    }

    proptest! {
        #[test]
        fn unit_degrees_match_vanilla(
            n in 1usize..20,
            d in 1usize..8,
            seed in prop::collection::vec(-3.0f64..3.0, 400),
        ) {
            let take = |off: usize, len: usize| (0..len).map(|i| seed[(off + i) % seed.len()]).collect::<Vec<_>>();
            let q = take(0, d);
            let k = Matrix::new(n, d, take(7, n * d)).unwrap();
            let v = Matrix::new(n, d, take(131, n * d)).unwrap();
            let a = vanilla_attention(&q, &k, &v, d).unwrap();
            let b = approx_attention(&q, &k, &v, &vec![1; n], d).unwrap();
            for (x, y) in a.out.iter().zip(&b.out) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            for w in [a.weights.unwrap(), b.weights.unwrap()] {
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert!(w.iter().all(|&x| x >= 0.0));
            }
            let oracle = naive(&q, &k, &v, d);
            for (x, y) in a.out.iter().zip(&oracle) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }
}
