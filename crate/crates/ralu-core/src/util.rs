//! Shared integer-from-ratio arithmetic.
//!
//! Ratio products that land on mathematical integers can sit one ULP off in
//! floating point; the guards below keep ceil/floor from crossing them.

const GUARD: f64 = 1e-9;

/// `ceil(ratio * count)` with an epsilon guard.
pub(crate) fn ceil_ratio(ratio: f64, count: usize) -> usize {
    ((ratio * count as f64 - GUARD).ceil().max(0.0)) as usize
}

/// `floor(ratio * count)` with an epsilon guard.
pub(crate) fn floor_ratio(ratio: f64, count: usize) -> usize {
    ((ratio * count as f64 + GUARD).floor().max(0.0)) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guards_hold_on_integer_products() {
        assert_eq!(ceil_ratio(0.3, 1024), 308);
        assert_eq!(ceil_ratio(0.3, 10), 3); // 0.30000000000000004 * 10
        assert_eq!(ceil_ratio(0.0, 7), 0);
        assert_eq!(ceil_ratio(1.0, 7), 7);
        assert_eq!(floor_ratio(0.6, 1948), 1168);
        assert_eq!(floor_ratio(0.6, 4096), 2457);
        assert_eq!(floor_ratio(0.3, 10), 3); // 2.9999999999999996
        assert_eq!(floor_ratio(1.0, 5), 5);
    }
}
