use crate::error::{Error, Result};

/// `ceil(ratio * heads)`, capped at `heads`.
pub fn outlier_count(ratio: f64, heads: usize) -> Result<usize> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::config(format!(
            "outlier ratio must lie in [0, 1), got {ratio}"
        )));
    }
    // 0.25 * 4 must stay 1, not round up from 1.0000000000000002
    let n = (ratio * heads as f64 - 1e-9).ceil().max(0.0) as usize;
    Ok(n.min(heads))
}

/// Splits a total of `heads * budget` rows across heads.
///
/// Outlier heads receive `full_len` rows (they never compress); the rest is
/// shared evenly with the remainder going to the lowest head indices. Every
/// compressed head must still get at least `min_budget`.
pub fn allocate_head_budgets(
    budget: usize,
    heads: usize,
    outliers: &[usize],
    full_len: usize,
    min_budget: usize,
) -> Result<Vec<usize>> {
    let mut is_outlier = vec![false; heads];
    for &h in outliers {
        if h >= heads {
            return Err(Error::config(format!(
                "outlier head {h} out of range for {heads} heads"
            )));
        }
        if std::mem::replace(&mut is_outlier[h], true) {
            return Err(Error::config(format!("outlier head {h} listed twice")));
        }
    }
    let n_out = outliers.len();
    if n_out >= heads {
        return Err(Error::config("at least one head must remain compressible"));
    }
    let total = heads * budget;
    let reserved = n_out * full_len;
    let shared = total.saturating_sub(reserved);
    let rest = heads - n_out;
    if reserved > total || shared < rest * min_budget {
        return Err(Error::config(format!(
            "cannot give {n_out} outlier heads {full_len} rows each and keep {min_budget} rows \
             for the other {rest} within a total of {total}"
        )));
    }
    let (base, mut extra) = (shared / rest, shared % rest);
    Ok(is_outlier
        .into_iter()
        .map(|out| {
            if out {
                full_len
            } else if extra > 0 {
                extra -= 1;
                base + 1
            } else {
                base
            }
        })
        .collect())
}
