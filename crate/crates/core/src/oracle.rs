//! Brute-force reference computations used to pin down the fast paths.
//!
//! Nothing here is on the detection hot path.

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, Observation};

/// Quadratic-time biased squared MMD between `x` and `y`.
pub fn mmd_b2(x: &[Observation], y: &[Observation], kernel: &KernelSpec) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument("both windows must be non-empty".into()));
    }
    let mean = |a: &[Observation], b: &[Observation]| -> Result<f64> {
        let mut s = 0.0;
        for p in a {
            for q in b {
                s += kernel.eval(p, q)?;
            }
        }
        Ok(s / (a.len() as f64 * b.len() as f64))
    };
    Ok(mean(x, x)? + mean(y, y)? - 2.0 * mean(x, y)?)
}

/// Sampled-mode term counts `(n_xx, n_xy)` for levels `0..=max_level`, by
/// the literal recurrence
///
/// ```text
/// n_xx(0) = 1, n_xx(1) = 4, n_xx(l) = 2 n_xx(l-1) + 2 n_xy(l-1)
/// n_xy(0) = 1, n_xy(l) = 2^l l
/// ```
pub fn term_counts_recurrence(max_level: u32) -> Vec<(u64, u64)> {
    let n_xy = |l: u32| if l == 0 { 1 } else { (1u64 << l) * l as u64 };
    let mut out: Vec<(u64, u64)> = Vec::with_capacity(max_level as usize + 1);
    for l in 0..=max_level {
        let n_xx = match l {
            0 => 1,
            1 => 4,
            _ => 2 * out[l as usize - 1].0 + 2 * n_xy(l - 1),
        };
        out.push((n_xx, n_xy(l)));
    }
    out
}
