//! Ranking metrics. Positions are 0-based ranks of the ground truth.

use crate::error::{CxError, Result};

/// Percentage of positions strictly below `k`.
pub fn recall_at_k(positions: &[usize], k: usize) -> Result<f64> {
    if positions.is_empty() {
        return Err(CxError::Empty("no ranked examples".into()));
    }
    let hits = positions.iter().filter(|p| **p < k).count();
    Ok(100.0 * hits as f64 / positions.len() as f64)
}

/// Count of ground truths at each position `0..k`.
pub fn rank_histogram(positions: &[usize], k: usize) -> Result<Vec<usize>> {
    let mut h = vec![0; k];
    for &p in positions {
        if p >= k {
            return Err(CxError::InvalidArgument(format!(
                "position {p} out of range for K={k}"
            )));
        }
        h[p] += 1;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(recall_at_k(&[0, 3, 7, 23], 5).unwrap(), 50.0);
        assert_eq!(recall_at_k(&[0, 3, 7, 23], 24).unwrap(), 100.0);
        assert_eq!(recall_at_k(&[4], 1).unwrap(), 0.0);
        assert!(recall_at_k(&[], 5).is_err());
        assert_eq!(rank_histogram(&[0, 0, 2], 3).unwrap(), vec![2, 0, 1]);
        assert!(rank_histogram(&[3], 3).is_err());
    }

    proptest! {
        #[test]
        fn recall_is_histogram_mass(pos in proptest::collection::vec(0usize..24, 1..200), k in 1usize..=24) {
            let h = rank_histogram(&pos, 24).unwrap();
            let mass: usize = h[..k].iter().sum();
            prop_assert_eq!(recall_at_k(&pos, k).unwrap(), 100.0 * mass as f64 / pos.len() as f64);
            prop_assert!(recall_at_k(&pos, k).unwrap() <= recall_at_k(&pos, (k + 1).min(24)).unwrap());
        }
    }
}
