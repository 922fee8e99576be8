//! Wilcoxon signed-rank test for paired samples.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;

/// Largest number of non-zero differences handled by exact enumeration.
pub const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(w_plus, w_minus)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// Pairs with a non-zero difference.
    pub n_effective: usize,
    pub exact: bool,
    /// Every difference was zero.
    pub all_zero: bool,
}

/// Average ranks of `values` (1-based), ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Differences are snapped to this grid so that equal gaps computed from
/// different operands (`0.7 - 0.6` and `0.8 - 0.7`) tie.
const DIFF_GRID: f64 = 1e12;

/// Paired differences `x - y` with zeros dropped.
fn nonzero_differences(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(y)
        .map(|(a, b)| ((a - b) * DIFF_GRID).round() / DIFF_GRID)
        .filter(|d| *d != 0.0)
        .collect()
}

/// Exact two-sided p-value of observing `w_plus` given the (possibly tied)
/// ranks, by counting sign assignments. Ranks are doubled so that averaged
/// ties stay integral.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let total: f64 = counts.iter().sum();
    let t = (w_plus * 2.0).round() as usize;
    let lower: f64 = counts[..=t].iter().sum();
    let upper: f64 = counts[t..].iter().sum();
    (2.0 * lower.min(upper) / total).min(1.0)
}

fn normal_p(ranks: &[f64], diffs_abs: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = diffs_abs.to_vec();
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
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    (2.0 * (1.0 - normal.cdf(z))).min(1.0)
}

/// Two-sided Wilcoxon signed-rank test of `x` against `y`.
///
/// Zero differences are dropped and tied absolute differences share their
/// average rank. With at most [`EXACT_LIMIT`] non-zero differences the
/// p-value comes from the exact null distribution; beyond that from the
/// normal approximation with continuity and tie corrections.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(EvalError::Empty("paired samples"));
    }
    let diffs = nonzero_differences(x, y);
    if diffs.is_empty() {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            p_value: 1.0,
            n_effective: 0,
            exact: true,
            all_zero: true,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).fold(0.0, |acc, (r, _)| acc + r);
    let total = (ranks.len() * (ranks.len() + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let exact = diffs.len() <= EXACT_LIMIT;
    let p_value = if exact {
        exact_p(&ranks, w_plus)
    } else {
        normal_p(&ranks, &abs, w_plus)
    };
    Ok(WilcoxonResult {
        statistic: w_plus.min(w_minus),
        w_plus,
        w_minus,
        p_value,
        n_effective: diffs.len(),
        exact,
        all_zero: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_positive_five() {
        let x = [2.0, 4.0, 6.0, 8.0, 10.0];
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(r.w_minus, 0.0);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.n_effective, 5);
        assert!((r.p_value - 0.0625).abs() < 1e-15);
        let flipped = wilcoxon_signed_rank(&y, &x).unwrap();
        assert!(flipped.w_plus.is_sign_positive());
        assert_eq!(format!("{}", flipped.w_plus), "0");
    }

    #[test]
    fn identical_samples() {
        let r = wilcoxon_signed_rank(&[0.5, 0.6], &[0.5, 0.6]).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.n_effective, 0);
        assert!(r.all_zero);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]),
            Err(EvalError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.01 + if i % 3 == 0 { 0.2 } else { 0.0 }).collect();
        let y: Vec<f64> = (0..40).map(|i| i as f64 * 0.01 + 0.05).collect();
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert!(!r.exact);
        let s = wilcoxon_signed_rank(&y, &x).unwrap();
        assert_eq!(r.p_value, s.p_value);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }
}
