//! Enumeration of the strict upper triangle of an `n x n` adjacency matrix.
//!
//! Pair `(r, c)` with `r < c` maps to a linear index in row-major order:
//! row 0 owns indices `0..n-1`, row 1 the next `n-2`, and so on.

use crate::error::{Error, Result};

/// Number of unordered node pairs, `n (n - 1) / 2`.
#[inline]
pub fn pair_count(n: usize) -> u64 {
    let n = n as u64;
    n * n.saturating_sub(1) / 2
}

/// Linear index of the pair `(r, c)`, `r < c < n`.
pub fn pi_index(r: usize, c: usize, n: usize) -> Result<u64> {
    if r >= c || c >= n {
        return Err(Error::InvalidPair { r, c, n });
    }
    Ok(pi_index_unchecked(r, c, n))
}

#[inline]
pub(crate) fn pi_index_unchecked(r: usize, c: usize, n: usize) -> u64 {
    let (r, c, n) = (r as u64, c as u64, n as u64);
    r * n - r * (r + 1) / 2 + (c - r - 1)
}

/// Index of an unordered pair given in either orientation.
#[inline]
pub fn pair_to_index(u: usize, v: usize, n: usize) -> Result<u64> {
    pi_index(u.min(v), u.max(v), n)
}

/// Inverse of [`pi_index`] via the closed-form row solution
/// `r = n - 2 - floor(sqrt(-8l + 4n(n-1) - 7) / 2 - 0.5)`.
pub fn pi_inverse(l: u64, n: usize) -> Result<(usize, usize)> {
    let count = pair_count(n);
    if l >= count {
        return Err(Error::InvalidIndex { index: l, n, count });
    }
    Ok(pi_inverse_unchecked(l, n))
}

#[inline]
pub(crate) fn pi_inverse_unchecked(l: u64, n: usize) -> (usize, usize) {
    let nn = n as u64;
    let disc = (4 * nn * (nn - 1) - 8 * l - 7) as f64;
    let mut r = (nn as i64 - 2 - (disc.sqrt() / 2.0 - 0.5).floor() as i64).max(0) as u64;
    // Guard against sqrt rounding for very large n.
    while r > 0 && row_start(r, nn) > l {
        r -= 1;
    }
    while r + 1 < nn && row_start(r + 1, nn) <= l {
        r += 1;
    }
    let c = 1 + l + r + tri(nn - r) - tri(nn);
    (r as usize, c as usize)
}

#[inline]
fn tri(k: u64) -> u64 {
    k * k.saturating_sub(1) / 2
}

#[inline]
fn row_start(r: u64, n: u64) -> u64 {
    r * n - r * (r + 1) / 2
}

/// Batch form of [`pi_inverse`].
pub fn pi_inverse_batch(ls: &[u64], n: usize) -> Result<Vec<(usize, usize)>> {
    ls.iter().map(|&l| pi_inverse(l, n)).collect()
}
