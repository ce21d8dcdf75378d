//! Exhaustive check that the alternating partition is optimal.
//!
//! For `[2n] = {1, ..., 2n}` split into halves `A`, `B` of size `n`, the
//! objective is `sum_{x in A} sum_{y in B} f(|x - y|)`. When `f` is
//! decreasing with non-increasing decrements, `A = {1, 3, ..., 2n-1}` attains
//! the maximum. Positions are 1-based throughout this module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest `n` for which [`verify_theorem`] enumerates all partitions.
pub const MAX_EXHAUSTIVE_N: usize = 8;
pub const TOLERANCE: f64 = 1e-9;

/// Tabulated distance score `f(1), f(2), ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFunction {
    values: Vec<f64>,
}

impl ScoreFunction {
    /// Requires `f(1) - f(2) >= f(2) - f(3) >= ... >= 0`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("score function needs at least f(1)"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("score function values must be finite"));
        }
        let steps: Vec<f64> = values.windows(2).map(|w| w[0] - w[1]).collect();
        if let Some(i) = steps.iter().position(|&a| a < -TOLERANCE) {
            return Err(Error::config(format!(
                "score function increases between d = {} and d = {}",
                i + 1,
                i + 2
            )));
        }
        if let Some(i) = steps.windows(2).position(|w| w[1] > w[0] + TOLERANCE) {
            return Err(Error::config(format!(
                "score function is not convex at d = {}",
                i + 2
            )));
        }
        Ok(ScoreFunction { values })
    }

    /// Unchecked table, for probing functions outside the hypothesis class.
    pub fn unchecked(values: Vec<f64>) -> Self {
        ScoreFunction { values }
    }

    pub fn tabulate(max_distance: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        ScoreFunction::new((1..=max_distance).map(|d| f(d as f64)).collect())
    }

    /// `f(d)` for `d >= 1`.
    pub fn at(&self, d: usize) -> f64 {
        self.values[d - 1]
    }

    pub fn max_distance(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_partition(n: usize, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != n || b.len() != n {
        return Err(Error::contract(format!(
            "partition halves have sizes {} and {}, expected {n}",
            a.len(),
            b.len()
        )));
    }
    let mut seen = vec![false; 2 * n + 1];
    for &x in a.iter().chain(b) {
        if x == 0 || x > 2 * n || std::mem::replace(&mut seen[x], true) {
            return Err(Error::contract(format!(
                "{x} breaks the partition of [1, {}]",
                2 * n
            )));
        }
    }
    Ok(())
}

pub fn partition_objective(a: &[usize], b: &[usize], f: &ScoreFunction) -> Result<f64> {
    let n = a.len();
    check_partition(n, a, b)?;
    if n > 0 && f.max_distance() < 2 * n - 1 {
        return Err(Error::contract(format!(
            "score function covers distances up to {}, need {}",
            f.max_distance(),
            2 * n - 1
        )));
    }
    Ok(objective(a, b, f))
}

fn objective(a: &[usize], b: &[usize], f: &ScoreFunction) -> f64 {
    a.iter()
        .flat_map(|&x| b.iter().map(move |&y| f.at(x.abs_diff(y))))
        .sum()
}

pub fn alternating(n: usize) -> (Vec<usize>, Vec<usize>) {
    (
        (1..=n).map(|i| 2 * i - 1).collect(),
        (1..=n).map(|i| 2 * i).collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremCheck {
    pub holds: bool,
    pub best_value: f64,
    pub alternating_value: f64,
    /// Every maximizing `A` (with `1 in A`), within tolerance.
    pub argmax: Vec<Vec<usize>>,
    pub partitions_checked: usize,
}

/// Calls `visit` with every `n`-subset of `[2n]` that contains 1.
///
/// Fixing `1 in A` loses nothing because the objective is symmetric in `(A, B)`.
fn for_each_half(n: usize, mut visit: impl FnMut(&[usize], &[usize])) {
    let total = 2 * n;
    // bit i set means position i + 1 is in A; bit 0 always set
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for mask in 0u32..(1 << (total - 1)) {
        if mask.count_ones() as usize != n - 1 {
            continue;
        }
        let mask = (mask << 1) | 1;
        a.clear();
        b.clear();
        for p in 0..total {
            if mask & (1 << p) != 0 {
                a.push(p + 1);
            } else {
                b.push(p + 1);
            }
        }
        visit(&a, &b);
    }
}

pub fn verify_theorem(n: usize, f: &ScoreFunction) -> Result<TheoremCheck> {
    if n == 0 || n > MAX_EXHAUSTIVE_N {
        return Err(Error::config(format!(
            "exhaustive verification supports 1 <= n <= {MAX_EXHAUSTIVE_N}, got {n}"
        )));
    }
    if f.max_distance() < 2 * n - 1 {
        return Err(Error::contract(format!(
            "score function covers distances up to {}, need {}",
            f.max_distance(),
            2 * n - 1
        )));
    }
    let mut values = Vec::new();
    for_each_half(n, |a, b| values.push((a.to_vec(), objective(a, b, f))));
    let best = values
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let (alt_a, alt_b) = alternating(n);
    let alt = objective(&alt_a, &alt_b, f);
    let argmax = values
        .iter()
        .filter(|(_, v)| best - v <= TOLERANCE)
        .map(|(a, _)| a.clone())
        .collect();
    Ok(TheoremCheck {
        holds: best - alt <= TOLERANCE,
        best_value: best,
        alternating_value: alt,
        argmax,
        partitions_checked: values.len(),
    })
}

/// A random score function satisfying the hypothesis.
///
/// Draws non-negative second differences `b_1..b_{2n-2}` (about a third of
/// them zero) and a tail value `f(2n-1)`, then rebuilds
/// `f(i) = f(2n-1) + sum_{j >= i} (j - i + 1) b_j`.
pub fn random_valid_score(n: usize, seed: u64) -> ScoreFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = (2 * n).saturating_sub(2);
    let b: Vec<f64> = (0..m)
        .map(|_| {
            if rng.random_bool(0.3) {
                0.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    let tail = rng.random_range(-1.0..1.0);
    score_from_second_differences(&b, tail)
}

/// Rebuilds `f(1..=len+1)` from second differences `b` and the value at the far end.
pub fn score_from_second_differences(b: &[f64], tail: f64) -> ScoreFunction {
    let m = b.len();
    let values = (1..=m + 1)
        .map(|i| tail + (i..=m).map(|j| (j - i + 1) as f64 * b[j - 1]).sum::<f64>())
        .collect();
    ScoreFunction::unchecked(values)
}

/// Searches random decreasing but non-convex score functions for one where
/// the alternating partition is not optimal.
pub fn find_counterexample(
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<Option<(ScoreFunction, TheoremCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let mut v = rng.random_range(0.0..1.0);
        let mut values = Vec::with_capacity(2 * n - 1);
        for _ in 0..2 * n - 1 {
            values.push(v);
            v -= rng.random_range(0.0..1.0f64).powi(3);
        }
        let f = ScoreFunction::unchecked(values);
        let check = verify_theorem(n, &f)?;
        if !check.holds {
            return Ok(Some((f, check)));
        }
    }
    Ok(None)
}
