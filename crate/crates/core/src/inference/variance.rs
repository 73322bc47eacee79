//! Residual variance estimates feeding the sandwich variances.

use crate::error::{RdError, Result};

/// Nearest-neighbour residual variances along one side.
///
/// `z` must be monotone (the distance-sorted window of a side). For row `i`
/// the `k` closest other rows in `z` are taken, plus any further rows tied
/// with the k-th distance; with `J` neighbours of mean `m`,
/// `sigma2_i = J / (J + 1) * (u_i - m)^2`.
pub fn nn_residual_variance(z: &[f64], u: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = z.len();
    debug_assert_eq!(n, u.len());
    if k == 0 {
        return Err(RdError::Parameter("nearest-neighbour count k must be at least 1".into()));
    }
    if k >= n {
        return Err(RdError::Parameter(format!(
            "nearest-neighbour count k={k} needs at least {} rows on a side, found {n}",
            k + 1
        )));
    }
    let dist = |i: usize, j: usize| (z[i] - z[j]).abs();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Candidates below are lo-1, lo-2, ...; above are hi, hi+1, ...
        let mut lo = i;
        let mut hi = i + 1;
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut last = 0.0;
        while count < k {
            let take_lo = match (lo > 0, hi < n) {
                (true, true) => dist(i, lo - 1) <= dist(i, hi),
                (true, false) => true,
                (false, true) => false,
                (false, false) => break,
            };
            if take_lo {
                lo -= 1;
                sum += u[lo];
                last = dist(i, lo);
            } else {
                sum += u[hi];
                last = dist(i, hi);
                hi += 1;
            }
            count += 1;
        }
        while lo > 0 && dist(i, lo - 1) == last {
            lo -= 1;
            sum += u[lo];
            count += 1;
        }
        while hi < n && dist(i, hi) == last {
            sum += u[hi];
            hi += 1;
            count += 1;
        }
        let j = count as f64;
        let r = u[i] - sum / j;
        out.push(j / (j + 1.0) * r * r);
    }
    Ok(out)
}

/// `sum_i l_i^2 sigma2_i`.
pub(crate) fn sandwich(functional: &[f64], sigma2: &[f64]) -> f64 {
    functional
        .iter()
        .zip(sigma2)
        .map(|(l, s)| l * l * s)
        .sum()
}
