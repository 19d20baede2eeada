//! One-sided Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{AsiError, Result};

/// Largest sample size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    /// Differences tend to be positive.
    Greater,
    /// Differences tend to be negative.
    Less,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of the ranks of the positive differences.
    pub w_plus: f64,
    pub p_value: f64,
    /// Non-zero differences entering the test.
    pub n: usize,
    pub exact: bool,
}

/// Average ranks (1-based) of `|d|`, ties sharing their mean rank.
pub fn midranks(abs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0.0; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Number of sign assignments reaching each doubled rank sum, indexed by
/// `2·W+`. Doubling keeps midranks integral.
fn null_counts(doubled: &[usize]) -> Vec<f64> {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled {
        reach += r;
        for s in (r..=reach).rev() {
            counts[s] += counts[s - r];
        }
    }
    counts
}

/// Tests whether paired differences are shifted in the `alternative`
/// direction. Zero differences are dropped, ties are midranked, the null
/// distribution is exact for `n ≤ 25` and a continuity-corrected normal
/// approximation beyond.
pub fn wilcoxon_one_sided(diffs: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(AsiError::NonFinite(
            "Wilcoxon input contains NaN/inf".into(),
        ));
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return Err(AsiError::UndefinedTest(
            "all paired differences are zero".into(),
        ));
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = nz
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    if n <= EXACT_MAX_N {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let counts = null_counts(&doubled);
        let obs = (2.0 * w_plus).round() as usize;
        let total = 2f64.powi(n as i32);
        let tail: f64 = match alternative {
            Alternative::Greater => counts[obs..].iter().sum(),
            Alternative::Less => counts[..=obs].iter().sum(),
        };
        return Ok(WilcoxonResult {
            w_plus,
            p_value: (tail / total).min(1.0),
            n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let sd = var.sqrt();
    let normal = Normal::standard();
    let p = match alternative {
        Alternative::Greater => normal.sf((w_plus - mean - 0.5) / sd),
        Alternative::Less => normal.cdf((w_plus - mean + 0.5) / sd),
    };
    Ok(WilcoxonResult {
        w_plus,
        p_value: p.clamp(f64::MIN_POSITIVE, 1.0),
        n,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tail probability by visiting all 2ⁿ sign assignments.
    fn brute_force(ranks: &[f64], w_obs: f64, alt: Alternative) -> f64 {
        let n = ranks.len();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| ranks[i])
                .sum();
            let hit = match alt {
                Alternative::Greater => w >= w_obs - 1e-9,
                Alternative::Less => w <= w_obs + 1e-9,
            };
            hits += hit as u64;
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn three_positive_differences() {
        let r = wilcoxon_one_sided(&[1.0, 2.0, 3.0], Alternative::Greater).unwrap();
        assert_eq!(r.w_plus, 6.0);
        assert_eq!(r.p_value, 0.125);
        assert!(r.exact);
    }

    #[test]
    fn all_negative_with_greater_alternative() {
        let r = wilcoxon_one_sided(&[-1.0, -2.0, -3.0], Alternative::Greater).unwrap();
        assert!(r.p_value >= 0.875);
        let r = wilcoxon_one_sided(&[-1.0, -2.0, -3.0], Alternative::Less).unwrap();
        assert_eq!(r.p_value, 0.125);
    }

    #[test]
    fn zeros_are_dropped_and_all_zero_is_an_error() {
        let r = wilcoxon_one_sided(&[0.0, 1.0, 0.0, 2.0], Alternative::Greater).unwrap();
        assert_eq!(r.n, 2);
        assert_eq!(r.p_value, 0.25);
        assert!(matches!(
            wilcoxon_one_sided(&[0.0, 0.0], Alternative::Greater),
            Err(AsiError::UndefinedTest(_))
        ));
        assert!(wilcoxon_one_sided(&[], Alternative::Less).is_err());
    }

    #[test]
    fn exact_matches_enumeration_with_ties() {
        let d = [0.5, -0.5, 1.5, 2.0, -2.0, 2.0, 3.25, -0.1, 4.0, 0.5];
        let abs: Vec<f64> = d.iter().map(|v: &f64| v.abs()).collect();
        let ranks = midranks(&abs);
        assert_eq!(ranks[0], ranks[1]);
        for alt in [Alternative::Greater, Alternative::Less] {
            let r = wilcoxon_one_sided(&d, alt).unwrap();
            assert!((r.p_value - brute_force(&ranks, r.w_plus, alt)).abs() < 1e-12);
        }
    }

    #[test]
    fn null_distribution_sums_to_one() {
        for n in 1..=10 {
            let doubled: Vec<usize> = (1..=n).map(|r| 2 * r).collect();
            let counts = null_counts(&doubled);
            let total: f64 = counts.iter().sum();
            assert_eq!(total, 2f64.powi(n as i32));
        }
    }

    #[test]
    fn normal_approximation_is_close_to_exact_at_the_boundary() {
        let d: Vec<f64> = (1..=26)
            .map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 })
            .collect();
        let approx = wilcoxon_one_sided(&d, Alternative::Greater).unwrap();
        assert!(!approx.exact);
        let exact = brute_force(
            &midranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>()),
            approx.w_plus,
            Alternative::Greater,
        );
        assert!(
            (approx.p_value - exact).abs() < 5e-3,
            "{} vs {exact}",
            approx.p_value
        );
    }
}
