//! Synthetic key/value workloads with tunable locality, and the
//! similarity-versus-distance profiler used to check them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{cosine_similarity, Matrix};

pub const DEFAULT_WINDOW: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub heads: usize,
    /// Correlation length of the latent walk, in tokens. `f64::INFINITY` freezes it.
    pub locality: f64,
    /// Standard deviation of isotropic noise added to each key.
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadData {
    pub queries: Matrix,
    pub keys: Matrix,
    pub values: Matrix,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Generates per-head queries, keys and values.
///
/// Keys follow a stationary AR(1) walk `z_t = rho z_{t-1} + sqrt(1 - rho^2) e_t`
/// with `rho = exp(-1 / locality)`, plus `noise` times fresh Gaussian noise, so
/// expected similarity decays roughly like `rho^distance`. Queries and values
/// are independent standard normals.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<HeadData>> {
    if spec.n == 0 || spec.d == 0 || spec.heads == 0 {
        return Err(Error::config(
            "synthetic workload needs n, d and heads >= 1",
        ));
    }
    if spec.locality.is_nan() || spec.locality <= 0.0 || !spec.noise.is_finite() || spec.noise < 0.0
    {
        return Err(Error::config(format!(
            "locality must be > 0 and noise finite and >= 0 (got {}, {})",
            spec.locality, spec.noise
        )));
    }
    let rho = (-1.0 / spec.locality).exp();
    let innovation = (1.0 - rho * rho).max(0.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d) = (spec.n, spec.d);

    (0..spec.heads)
        .map(|_| {
            let mut latent: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let mut keys = Vec::with_capacity(n * d);
            for t in 0..n {
                if t > 0 {
                    for z in &mut latent {
                        *z = rho * *z + innovation * normal(&mut rng);
                    }
                }
                for &z in &latent {
                    keys.push(z + spec.noise * normal(&mut rng));
                }
            }
            let queries = (0..n * d).map(|_| normal(&mut rng)).collect();
            let values = (0..n * d).map(|_| normal(&mut rng)).collect();
            Ok(HeadData {
                queries: Matrix::new(n, d, queries)?,
                keys: Matrix::new(n, d, keys)?,
                values: Matrix::new(n, d, values)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileCurve {
    pub window: usize,
    /// `mean_similarity[i]` is the average at distance `i + 1`.
    pub mean_similarity: Vec<f64>,
}

impl ProfileCurve {
    pub fn distances(&self) -> impl Iterator<Item = usize> {
        1..=self.window
    }

    /// Adjacent pairs where the curve rises by more than `tolerance`.
    pub fn inversions(&self, tolerance: f64) -> usize {
        self.mean_similarity
            .windows(2)
            .filter(|w| w[1] - w[0] > tolerance)
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("distance,mean_similarity\n");
        for (d, m) in self.distances().zip(&self.mean_similarity) {
            s.push_str(&format!("{d},{m:.6}\n"));
        }
        s
    }
}

/// Mean cosine similarity at distances `1..=window` from sampled anchors.
///
/// Anchors are drawn uniformly from `[0, n - window)` so every distance is in range.
pub fn similarity_distance_profile(
    keys: &Matrix,
    window: usize,
    samples: usize,
    seed: u64,
) -> Result<ProfileCurve> {
    profile_heads(std::slice::from_ref(keys), window, samples, seed)
}

/// Like [`similarity_distance_profile`], averaged over several heads.
pub fn profile_heads(
    heads: &[Matrix],
    window: usize,
    samples: usize,
    seed: u64,
) -> Result<ProfileCurve> {
    if heads.is_empty() || samples == 0 || window == 0 {
        return Err(Error::config(
            "profile needs heads, samples >= 1 and window >= 1",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = vec![0.0; window];
    for keys in heads {
        let n = keys.rows();
        if window >= n {
            return Err(Error::config(format!(
                "window {window} must be shorter than the {n}-token sequence"
            )));
        }
        for _ in 0..samples {
            let anchor = rng.random_range(0..n - window);
            for (dist, sum) in (1..=window).zip(sums.iter_mut()) {
                *sum += cosine_similarity(keys.row(anchor), keys.row(anchor + dist))?;
            }
        }
    }
    let count = (heads.len() * samples) as f64;
    Ok(ProfileCurve {
        window,
        mean_similarity: sums.into_iter().map(|s| s / count).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(locality: f64, noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            n: 600,
            d: 64,
            heads: 2,
            locality,
            noise,
            seed: 9,
        }
    }

    #[test]
    fn frozen_walk_gives_identical_keys() {
        let h = generate_synthetic(&spec(f64::INFINITY, 0.0)).unwrap();
        let k = &h[0].keys;
        assert!(k.row_iter().all(|r| r == k.row(0)));
        let c = similarity_distance_profile(k, 256, 20, 1).unwrap();
        assert!(c.mean_similarity.iter().all(|&s| (s - 1.0).abs() < 1e-12));
        assert_eq!(c.mean_similarity.len(), 256);
    }

    #[test]
    fn no_locality_is_near_orthogonal() {
        let h = generate_synthetic(&SyntheticSpec {
            d: 256,
            ..spec(1e-3, 3.0)
        })
        .unwrap();
        let c = similarity_distance_profile(&h[0].keys, 64, 200, 2).unwrap();
        assert!(
            c.mean_similarity.iter().all(|s| s.abs() < 0.1),
            "{:?}",
            c.mean_similarity
        );
    }

    #[test]
    fn moderate_locality_decays() {
        let h = generate_synthetic(&SyntheticSpec {
            n: 2048,
            ..spec(40.0, 0.1)
        })
        .unwrap();
        let keys: Vec<Matrix> = h.into_iter().map(|h| h.keys).collect();
        let c = profile_heads(&keys, 256, 200, 3).unwrap();
        assert!(c.inversions(0.02) <= 2);
        assert!(c.mean_similarity[0] > c.mean_similarity[255] + 0.5);
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(&spec(10.0, 0.2)).unwrap();
        let b = generate_synthetic(&spec(10.0, 0.2)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec {
            seed: 10,
            ..spec(10.0, 0.2)
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn window_must_fit() {
        let h = generate_synthetic(&SyntheticSpec {
            n: 100,
            ..spec(5.0, 0.1)
        })
        .unwrap();
        assert!(similarity_distance_profile(&h[0].keys, 100, 4, 0).is_err());
    }

    #[test]
    fn rejects_bad_spec() {
        assert!(generate_synthetic(&spec(0.0, 0.1)).is_err());
        assert!(generate_synthetic(&spec(1.0, -0.1)).is_err());
        assert!(generate_synthetic(&SyntheticSpec {
            n: 0,
            ..spec(1.0, 0.1)
        })
        .is_err());
    }
}
