//! Relative-offset buckets against an integer-only oracle.

use layoutkit::model::{bucket, BIAS_MAX_DISTANCE_1D, BIAS_MAX_DISTANCE_2D};

const BUCKETS: usize = 32;
const EXACT: u128 = 8;
const LOG_BUCKETS: u32 = 8;

/// Magnitude `n >= 8` lands in log bucket `k` when
/// `n >= 8 * (max / 8)^(k / 8)`, i.e. `n^8 * 8^k >= 8^8 * max^k`.
fn oracle(offset: i64, max: i64) -> usize {
    let n = offset.unsigned_abs() as u128;
    let base = if offset > 0 { BUCKETS / 2 } else { 0 };
    if n < EXACT {
        return base + n as usize;
    }
    let max = max as u128;
    let k = (0..LOG_BUCKETS)
        .filter(|&k| n.pow(8) * EXACT.pow(k) >= EXACT.pow(8) * max.pow(k))
        .max()
        .unwrap_or(0);
    base + EXACT as usize + k as usize
}

#[test]
fn every_offset_matches_the_oracle() {
    for max in [BIAS_MAX_DISTANCE_1D, BIAS_MAX_DISTANCE_2D] {
        for off in -1000..=1000 {
            assert_eq!(bucket(off, BUCKETS, max), oracle(off, max), "offset {off}, max {max}");
        }
    }
}

#[test]
fn buckets_are_monotone_and_clamped() {
    for max in [BIAS_MAX_DISTANCE_1D, BIAS_MAX_DISTANCE_2D] {
        let pos: Vec<usize> = (0..=1000).map(|o| bucket(o, BUCKETS, max)).collect();
        assert!(pos.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(bucket(max, BUCKETS, max), BUCKETS - 1);
        assert_eq!(bucket(5 * max, BUCKETS, max), BUCKETS - 1);
        assert_eq!(bucket(-5 * max, BUCKETS, max), BUCKETS / 2 - 1);
        // every bucket is reachable within the range
        let mut used: Vec<usize> = (-max..=max).map(|o| bucket(o, BUCKETS, max)).collect();
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), BUCKETS - 1, "bucket 16 is unused: offset 0 sits in bucket 0");
    }
    assert_eq!(bucket(0, BUCKETS, 128), 0);
}
