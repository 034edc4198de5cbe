//! Isotonic regression via the pool-adjacent-violators algorithm.

/// Weighted least-squares fit of a nondecreasing sequence to `y`.
///
/// Returns the projected values; ties are resolved by averaging the pooled
/// block, which is the L2-optimal choice. `weights` defaults to uniform when
/// `None`.
pub fn pava_nondecreasing(y: &[f64], weights: Option<&[f64]>) -> Vec<f64> {
    let n = y.len();
    if n == 0 {
        return Vec::new();
    }
    if let Some(w) = weights {
        assert_eq!(w.len(), n, "weights must match data length");
    }
    // Blocks of (mean value, total weight, element count), merged whenever a
    // new block would break monotonicity.
    let mut mean: Vec<f64> = Vec::with_capacity(n);
    let mut weight: Vec<f64> = Vec::with_capacity(n);
    let mut count: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let wi = weights.map_or(1.0, |w| w[i]);
        mean.push(y[i]);
        weight.push(wi);
        count.push(1);
        while mean.len() >= 2 && mean[mean.len() - 2] > mean[mean.len() - 1] {
            let (m2, w2, c2) = (mean.pop().unwrap(), weight.pop().unwrap(), count.pop().unwrap());
            let k = mean.len() - 1;
            let w_new = weight[k] + w2;
            mean[k] = if w_new > 0.0 {
                (mean[k] * weight[k] + m2 * w2) / w_new
            } else {
                // All-zero weights: fall back to a count-weighted average so
                // the output is still defined.
                (mean[k] * count[k] as f64 + m2 * c2 as f64) / (count[k] + c2) as f64
            };
            weight[k] = w_new;
            count[k] += c2;
        }
    }
    let mut out = Vec::with_capacity(n);
    for (m, c) in mean.iter().zip(&count) {
        out.extend(std::iter::repeat_n(*m, *c));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_nondecreasing(v: &[f64]) -> bool {
        v.windows(2).all(|w| w[0] <= w[1])
    }

    #[test]
    fn already_monotone_is_unchanged() {
        let y = [1.0, 2.0, 2.0, 3.5];
        assert_eq!(pava_nondecreasing(&y, None), y.to_vec());
    }

    #[test]
    fn single_violation_pools_to_average() {
        let out = pava_nondecreasing(&[1.0, 3.0, 2.0, 4.0], None);
        assert_eq!(out, vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn decreasing_input_pools_to_global_mean() {
        let out = pava_nondecreasing(&[3.0, 2.0, 1.0], None);
        assert!(is_nondecreasing(&out));
        for v in out {
            assert!((v - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_shift_the_pooled_value() {
        // Heavy first point should dominate the pooled block.
        let out = pava_nondecreasing(&[2.0, 0.0], Some(&[3.0, 1.0]));
        assert!(is_nondecreasing(&out));
        assert!((out[0] - 1.5).abs() < 1e-15);
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn projection_is_idempotent() {
        let y = [0.3, 0.1, 0.4, 0.1, 0.5, 0.9, 0.2, 0.6];
        let once = pava_nondecreasing(&y, None);
        let twice = pava_nondecreasing(&once, None);
        assert!(is_nondecreasing(&once));
        assert_eq!(once, twice);
    }
}
