//! Two-sided Mann-Whitney U and Wilcoxon signed-rank tests.
//!
//! Small samples get exact p-values from the permutation distribution of the
//! statistic, computed by counting subsets of (doubled, hence integral) mid-ranks
//! with a given sum. Larger samples fall back to the normal approximation with
//! tie and continuity corrections.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest `n + m` (Mann-Whitney) or `n` (Wilcoxon) evaluated exactly.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    MannWhitneyU,
    WilcoxonSignedRank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: TestMethod,
    pub statistic: f64,
    pub p_value: f64,
    /// First sample size (number of non-zero pairs for Wilcoxon).
    pub n: usize,
    /// Second sample size; equals `n` for Wilcoxon.
    pub m: usize,
    pub exact: bool,
}

/// Mid-ranks (1-based, ties averaged) doubled so they are integers.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j share rank ((i+1) + (j+1)) / 2, doubled: i + j + 2
        for &idx in &order[i..=j] {
            ranks[idx] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

fn sum_of_tie_cubes(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        total += t * t * t - t;
        i = j + 1;
    }
    total
}

fn two_sided(p_low: f64, p_high: f64) -> f64 {
    (2.0 * p_low.min(p_high)).min(1.0)
}

fn normal_two_sided(stat: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return 1.0;
    }
    let diff = (stat - mean).abs();
    let z = ((diff - 0.5).max(0.0)) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * (1.0 - normal.cdf(z))).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Mann-Whitney U for sample `x` against `y`:
/// `U = #{xᵢ > yⱼ} + ½·#{xᵢ = yⱼ}`, reported for `x`.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Argument(
            "Mann-Whitney U needs two non-empty samples".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Argument("samples must be finite".into()));
    }
    let (n, m) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let rank_sum_x: u64 = ranks[..n].iter().sum();
    // 2U = 2·R_x − n(n+1)
    let two_u = rank_sum_x - (n * (n + 1)) as u64;
    let u = two_u as f64 / 2.0;

    if n + m <= EXACT_LIMIT {
        let dist = subset_sum_counts(&ranks, Some(n));
        let total: f64 = dist.iter().sum();
        let (mut low, mut high) = (0.0, 0.0);
        for (s, &c) in dist.iter().enumerate() {
            let s = s as u64;
            if s <= rank_sum_x {
                low += c;
            }
            if s >= rank_sum_x {
                high += c;
            }
        }
        return Ok(TestResult {
            method: TestMethod::MannWhitneyU,
            statistic: u,
            p_value: two_sided(low / total, high / total),
            n,
            m,
            exact: true,
        });
    }

    let (nf, mf) = (n as f64, m as f64);
    let big_n = nf + mf;
    let var =
        nf * mf / 12.0 * ((big_n + 1.0) - sum_of_tie_cubes(&pooled) / (big_n * (big_n - 1.0)));
    Ok(TestResult {
        method: TestMethod::MannWhitneyU,
        statistic: u,
        p_value: normal_two_sided(u, nf * mf / 2.0, var),
        n,
        m,
        exact: false,
    })
}

/// Wilcoxon signed-rank over `(a, b)` pairs; differences are `a − b`.
/// Zero differences are dropped and `W = min(W⁺, W⁻)` is reported.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<TestResult> {
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::Argument("pairs must be finite".into()));
    }
    let diffs: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let n = diffs.len();
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = doubled_midranks(&magnitudes);
    let total_doubled: u64 = ranks.iter().sum();
    let w_plus_doubled: u64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| *r)
        .sum();
    let w_minus_doubled = total_doubled - w_plus_doubled;
    let w = w_plus_doubled.min(w_minus_doubled) as f64 / 2.0;

    if n <= EXACT_LIMIT {
        let dist = subset_sum_counts(&ranks, None);
        let total: f64 = dist.iter().sum();
        let (mut low, mut high) = (0.0, 0.0);
        for (s, &c) in dist.iter().enumerate() {
            let s = s as u64;
            if s <= w_plus_doubled {
                low += c;
            }
            if s >= w_plus_doubled {
                high += c;
            }
        }
        return Ok(TestResult {
            method: TestMethod::WilcoxonSignedRank,
            statistic: w,
            p_value: two_sided(low / total, high / total),
            n,
            m: n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - sum_of_tie_cubes(&magnitudes) / 48.0;
    Ok(TestResult {
        method: TestMethod::WilcoxonSignedRank,
        statistic: w,
        p_value: normal_two_sided(w, mean, var),
        n,
        m: n,
        exact: false,
    })
}

/// Counts subsets of `weights` by total weight. With `size = Some(k)` only
/// subsets of exactly `k` elements are counted.
fn subset_sum_counts(weights: &[u64], size: Option<usize>) -> Vec<f64> {
    let max_sum: usize = weights.iter().sum::<u64>() as usize;
    match size {
        None => {
            let mut dp = vec![0.0f64; max_sum + 1];
            dp[0] = 1.0;
            let mut reach = 0usize;
            for &w in weights {
                let w = w as usize;
                for s in (0..=reach).rev() {
                    if dp[s] != 0.0 {
                        dp[s + w] += dp[s];
                    }
                }
                reach += w;
            }
            dp
        }
        Some(k) => {
            // dp[j][s]: subsets of j elements with sum s
            let mut dp = vec![vec![0.0f64; max_sum + 1]; k + 1];
            dp[0][0] = 1.0;
            let mut reach = 0usize;
            for (seen, &w) in weights.iter().enumerate() {
                let w = w as usize;
                for j in (1..=k.min(seen + 1)).rev() {
                    let (lo, hi) = dp.split_at_mut(j);
                    let prev = &lo[j - 1];
                    let cur = &mut hi[0];
                    for s in (0..=reach).rev() {
                        if prev[s] != 0.0 {
                            cur[s + w] += prev[s];
                        }
                    }
                }
                reach += w;
            }
            dp.swap_remove(k)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FEDAVG_AT_8: [f64; 4] = [54.699, 62.675, 58.755, 62.007];
    const CLIENT_0: [f64; 4] = [0.000, 0.300, 0.014, 22.889];

    #[test]
    fn separated_samples_mann_whitney() {
        let r = mann_whitney_u(&FEDAVG_AT_8, &CLIENT_0).unwrap();
        assert_eq!(r.statistic, 16.0);
        assert!((r.p_value - 2.0 / 70.0).abs() < 1e-15);
        assert!((r.p_value - 0.0286).abs() < 1e-4);
        assert!(r.exact);
        let swapped = mann_whitney_u(&CLIENT_0, &FEDAVG_AT_8).unwrap();
        assert_eq!(swapped.statistic, 0.0);
        assert_eq!(swapped.p_value, r.p_value);
    }

    #[test]
    fn single_observations() {
        let r = mann_whitney_u(&[1.0], &[0.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn ties_count_half() {
        let r = mann_whitney_u(&[1.0, 2.0], &[2.0, 3.0]).unwrap();
        assert_eq!(r.statistic, 0.5);
    }

    #[test]
    fn consistent_sign_wilcoxon() {
        let pairs = [
            (54.70, 75.59),
            (62.68, 86.94),
            (58.77, 87.17),
            (62.01, 83.18),
        ];
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.125).abs() < 1e-15);
    }

    #[test]
    fn five_same_sign() {
        let pairs: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64 * 1.5, 0.0)).collect();
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 2.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_and_empty() {
        assert!(matches!(
            wilcoxon_signed_rank(&[(1.0, 1.0), (2.0, 2.0)]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            mann_whitney_u(&[], &[1.0]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn large_samples_use_normal() {
        let x: Vec<f64> = (0..15).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..15).map(|i| i as f64 + 0.5).collect();
        let r = mann_whitney_u(&x, &y).unwrap();
        assert!(!r.exact);
        assert!(r.p_value > 0.5 && r.p_value <= 1.0);
    }

    #[test]
    fn midranks() {
        assert_eq!(doubled_midranks(&[1.0, 2.0, 2.0, 4.0]), vec![2, 5, 5, 8]);
    }

    #[test]
    fn subset_counts_are_binomial() {
        let w: Vec<u64> = (1..=6).map(|r| 2 * r).collect();
        let any: f64 = subset_sum_counts(&w, None).iter().sum();
        assert_eq!(any, 64.0);
        let three: f64 = subset_sum_counts(&w, Some(3)).iter().sum();
        assert_eq!(three, 20.0);
    }
}
