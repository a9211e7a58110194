//! Small numeric helpers shared by the oracle and the simulator.

/// Pairwise summation: order-stable and far more accurate than a naive
/// left-to-right sum on long vectors.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    const BASE: usize = 32;
    if values.len() <= BASE {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean via pairwise summation.
pub(crate) fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// 64-bit finalizer with full avalanche (splitmix64's mixing rounds).
pub(crate) fn avalanche(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_on_small_inputs() {
        let v = [1.0, 2.0, 3.5, -1.25];
        assert_eq!(pairwise_sum(&v), 5.25);
        assert_eq!(mean(&v), 5.25 / 4.0);
    }

    #[test]
    fn stable_on_long_inputs() {
        let v: Vec<f64> = (0..100_000).map(|i| (i as f64).sin()).collect();
        let p = pairwise_sum(&v);
        // Compare against Kahan summation.
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for &x in &v {
            let y = x - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        assert!((p - s).abs() < 1e-9);
    }
}
