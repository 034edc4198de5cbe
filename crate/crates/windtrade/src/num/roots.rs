//! Scalar root finding by bisection.

/// Root of `f` on [lo, hi], assuming f(lo) and f(hi) bracket a sign change.
/// Runs until the interval is below `xtol` (or 200 halvings).
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> f64 {
    let mut flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    let fhi = f(hi);
    if fhi == 0.0 {
        return hi;
    }
    debug_assert!(
        flo.signum() != fhi.signum(),
        "bisect: no sign change on [{lo}, {hi}] ({flo}, {fhi})"
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= xtol || mid == lo || mid == hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Expand [lo, hi] geometrically around its center until `f` changes sign,
/// then bisect. Returns None if no bracket is found within `max_doublings`.
pub fn bisect_expanding<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    xtol: f64,
    max_doublings: u32,
) -> Option<f64> {
    let mut flo = f(lo);
    let mut fhi = f(hi);
    let mut n = 0;
    while flo.signum() == fhi.signum() && flo != 0.0 && fhi != 0.0 {
        if n >= max_doublings {
            return None;
        }
        let w = hi - lo;
        lo -= w;
        hi += w;
        flo = f(lo);
        fhi = f(hi);
        n += 1;
    }
    Some(bisect(f, lo, hi, xtol))
}
