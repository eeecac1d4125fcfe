//! Exact one-sided Wilcoxon signed-rank test.
//!
//! Zero differences are discarded and tied magnitudes share the average of
//! their ranks. The null distribution of `W⁺` is obtained exactly by counting,
//! over all `2^n` sign assignments, how many reach each rank sum. Ranks are
//! handled doubled so that average ranks stay integral and the count is exact.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, Error, Result};

/// Largest number of nonzero differences the exact test accepts.
pub const MAX_EXACT_N: usize = 25;

/// Signed-rank summary of paired differences.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedRanks {
    /// Doubled ranks of the nonzero `|d_i|`, in input order.
    pub doubled_ranks: Vec<u64>,
    /// Whether each nonzero difference is positive.
    pub positive: Vec<bool>,
}

impl SignedRanks {
    pub fn n(&self) -> usize {
        self.doubled_ranks.len()
    }

    /// `2·W⁺`
    pub fn doubled_w_plus(&self) -> u64 {
        self.doubled_ranks
            .iter()
            .zip(&self.positive)
            .filter(|(_, &p)| p)
            .map(|(r, _)| r)
            .sum()
    }

    pub fn w_plus(&self) -> f64 {
        self.doubled_w_plus() as f64 / 2.0
    }
}

/// Ranks `|a_i − b_i|` over the nonzero differences.
pub fn signed_ranks(a: &[f64], b: &[f64]) -> Result<SignedRanks> {
    if a.len() != b.len() || a.is_empty() {
        return contract("signed-rank test needs two nonempty samples of equal length");
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return contract("signed-rank test needs finite values");
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::UndefinedTest);
    }
    let n = diffs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut doubled_ranks = vec![0u64; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && diffs[order[end + 1]].abs() == diffs[order[start]].abs() {
            end += 1;
        }
        // Positions start..=end hold ranks start+1..=end+1; twice their mean:
        let r2 = (start + 1 + end + 1) as u64;
        for &i in &order[start..=end] {
            doubled_ranks[i] = r2;
        }
        start = end + 1;
    }
    Ok(SignedRanks {
        doubled_ranks,
        positive: diffs.iter().map(|d| *d > 0.0).collect(),
    })
}

/// Number of sign assignments reaching each doubled rank sum.
fn null_counts(doubled_ranks: &[u64]) -> Vec<u64> {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Exact `P(W⁺ ≥ observed)` under the null, for the alternative "`a` tends to
/// exceed `b`".
pub fn wilcoxon_one_sided(a: &[f64], b: &[f64]) -> Result<f64> {
    let ranks = signed_ranks(a, b)?;
    let n = ranks.n();
    if n > MAX_EXACT_N {
        return Err(Error::TestSize { n, max: MAX_EXACT_N });
    }
    let counts = null_counts(&ranks.doubled_ranks);
    let w = ranks.doubled_w_plus() as usize;
    let tail: u64 = counts[w..].iter().sum();
    Ok(tail as f64 / (1u64 << n) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerates every sign pattern directly.
    fn brute_force(a: &[f64], b: &[f64]) -> f64 {
        let r = signed_ranks(a, b).unwrap();
        let n = r.n();
        let observed = r.doubled_w_plus();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let w: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| r.doubled_ranks[i]).sum();
            if w >= observed {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn five_positive_differences() {
        let a = [2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(wilcoxon_one_sided(&a, &b).unwrap(), 0.03125);
        let a = [1.5, 2.7, 3.1, 0.4, 9.0];
        let b = [1.0, 1.0, 1.0, 0.0, 1.0];
        assert_eq!(wilcoxon_one_sided(&a, &b).unwrap(), 1.0 / 32.0);
    }

    #[test]
    fn all_negative_gives_one() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 4.0, 6.0, 8.0, 10.0];
        assert_eq!(wilcoxon_one_sided(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn mixed_six_matches_enumeration() {
        let a = [3.1, 0.2, 5.0, 1.0, 2.2, 7.5];
        let b = [1.0, 0.9, 2.0, 1.5, 2.0, 3.5];
        assert_eq!(wilcoxon_one_sided(&a, &b).unwrap(), brute_force(&a, &b));
    }

    #[test]
    fn ties_and_zeros() {
        // |d| = 1, 1, 2 (one zero dropped): ranks 1.5, 1.5, 3.
        let r = signed_ranks(&[1.0, 0.0, 2.0, 4.0], &[0.0, 1.0, 0.0, 4.0]).unwrap();
        assert_eq!(r.doubled_ranks, vec![3, 3, 6]);
        assert_eq!(r.positive, vec![true, false, true]);
        assert_eq!(r.w_plus(), 4.5);
        let p = wilcoxon_one_sided(&[1.0, 0.0, 2.0, 4.0], &[0.0, 1.0, 0.0, 4.0]).unwrap();
        assert_eq!(p, brute_force(&[1.0, 0.0, 2.0, 4.0], &[0.0, 1.0, 0.0, 4.0]));
    }

    #[test]
    fn error_paths() {
        assert_eq!(wilcoxon_one_sided(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::UndefinedTest));
        assert!(matches!(wilcoxon_one_sided(&[1.0], &[1.0, 2.0]), Err(Error::Contract(_))));
        let a: Vec<f64> = (0..26).map(|i| i as f64 + 1.0).collect();
        let b = vec![0.0; 26];
        assert_eq!(wilcoxon_one_sided(&a, &b), Err(Error::TestSize { n: 26, max: 25 }));
        assert!(wilcoxon_one_sided(&a[..25], &b[..25]).is_ok());
    }

    #[test]
    fn larger_rank_for_positive_lowers_p() {
        // Move the single positive difference up the magnitude ranking.
        let b = [0.0; 5];
        let mut last = 1.1;
        for mag in [0.5, 1.5, 2.5, 3.5, 4.5] {
            let a = [mag, -1.0, -2.0, -3.0, -4.0];
            let p = wilcoxon_one_sided(&a, &b).unwrap();
            assert!(p <= last);
            last = p;
        }
    }

    fn integer_pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..=10).prop_flat_map(|n| {
            (
                proptest::collection::vec(-20i32..20, n),
                proptest::collection::vec(-20i32..20, n),
            )
                .prop_map(|(a, b)| {
                    (
                        a.into_iter().map(f64::from).collect(),
                        b.into_iter().map(f64::from).collect(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((a, b) in integer_pairs()) {
            prop_assume!(a.iter().zip(&b).any(|(x, y)| x != y));
            let p = wilcoxon_one_sided(&a, &b).unwrap();
            prop_assert_eq!(p, brute_force(&a, &b));
            prop_assert!(p > 0.0 && p <= 1.0);
        }

        #[test]
        fn opposite_tails_overlap((a, b) in integer_pairs()) {
            prop_assume!(a.iter().zip(&b).any(|(x, y)| x != y));
            let p = wilcoxon_one_sided(&a, &b).unwrap() + wilcoxon_one_sided(&b, &a).unwrap();
            prop_assert!(p >= 1.0);
        }

        #[test]
        fn shift_invariant((a, b) in integer_pairs(), c in -100i32..100) {
            prop_assume!(a.iter().zip(&b).any(|(x, y)| x != y));
            let c = f64::from(c);
            let a2: Vec<f64> = a.iter().map(|x| x + c).collect();
            let b2: Vec<f64> = b.iter().map(|x| x + c).collect();
            prop_assert_eq!(wilcoxon_one_sided(&a, &b).unwrap(), wilcoxon_one_sided(&a2, &b2).unwrap());
        }
    }
}
