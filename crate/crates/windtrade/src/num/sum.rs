//! Pairwise (cascade) summation: error grows like log n instead of n, and
//! the result is independent of chunking choices, so parallel reductions
//! that fall back to it stay bit-reproducible.

/// Sum the slice by recursive halving; empty input sums to zero.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 32;
    if xs.len() <= BASE {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_on_small_inputs() {
        assert_eq!(pairwise_sum(&[]), 0.0);
        assert_eq!(pairwise_sum(&[1.5]), 1.5);
        assert_eq!(pairwise_sum(&[1.0, 2.0, 3.0]), 6.0);
    }

    #[test]
    fn beats_naive_accumulation_on_an_ill_conditioned_sum() {
        // Many tiny terms after a large head: naive left-to-right loses
        // the tail, pairwise keeps it.
        let n = 1 << 20;
        let mut xs = vec![1e-10f64; n];
        xs[0] = 1e10;
        let exact = 1e10 + (n as f64 - 1.0) * 1e-10;
        let pairwise = pairwise_sum(&xs);
        assert!((pairwise - exact).abs() <= (xs.iter().sum::<f64>() - exact).abs());
        assert!((pairwise - exact).abs() / exact < 1e-15);
    }
}
