//! Bracketing root finder.

use crate::error::{Error, Result};

/// Relative width at which bisection stops. Four ulps, i.e. well inside the
/// `1e-12` relative accuracy the thresholds promise.
pub const REL_TOL: f64 = 4.0 * f64::EPSILON;

/// Iteration cap; bisection on an `f64` interval exhausts the mantissa long
/// before this.
pub const MAX_ITER: usize = 200;

/// Root of `f` on `[lo, hi]` by bisection.
///
/// `f` may return `±∞` at the endpoints. The interval must carry a sign change
/// (an exact zero at either end is returned as is).
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.is_nan() || f_hi.is_nan() || f_lo.signum() == f_hi.signum() {
        return Err(Error::Bracket { lo, hi, f_lo, f_hi });
    }
    let lo_positive = f_lo > 0.0;
    for _ in 0..MAX_ITER {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi || hi - lo <= REL_TOL * mid.abs() {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.is_nan() {
            return Err(Error::Bracket {
                lo,
                hi: mid,
                f_lo,
                f_hi: f_mid,
            });
        }
        if (f_mid > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo + 0.5 * (hi - lo))
}
