use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Largest combined sample size handled by the exact null distribution.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    /// Sum of the midranks of the first sample in the pooled ordering.
    pub statistic: f64,
    /// Two-sided p-value in `(0, 1]`.
    pub p_value: f64,
    pub method: TestMethod,
}

/// Midranks (1-based, ties share the average rank) of `values`.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    doubled_midranks(values).into_iter().map(|r| r as f64 / 2.0).collect()
}

// Twice the midrank is always an integer, which keeps the exact null
// distribution in integer arithmetic.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]].total_cmp(&values[order[i]]).is_eq() {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j; twice their mean is i + j + 1
        for &k in &order[i..j] {
            ranks[k] = (i + j + 1) as u64;
        }
        i = j;
    }
    ranks
}

/// Two-sided Wilcoxon rank-sum test of `a` against `b`.
///
/// With at most [`EXACT_LIMIT`] observations in total the p-value comes from
/// the exact permutation distribution of the rank sum (ties kept as
/// midranks); beyond that, from the normal approximation with tie-corrected
/// variance and a continuity correction of one half. In both cases the
/// one-sided tail in the observed direction is doubled and capped at 1.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("rank-sum test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rank-sum test input".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let (n, m) = (a.len(), b.len());
    let total = n + m;
    let observed: u64 = ranks[..n].iter().sum();
    let statistic = observed as f64 / 2.0;
    if total <= EXACT_LIMIT {
        let p_value = exact_p(&ranks, n, observed);
        return Ok(TestResult { statistic, p_value, method: TestMethod::Exact });
    }

    let (nf, mf, tf) = (n as f64, m as f64, total as f64);
    let expected = nf * (tf + 1.0) / 2.0;
    let tie_term: f64 = tie_group_sizes(&ranks).map(|t| t * t * t - t).sum::<f64>() / (tf * (tf - 1.0));
    let variance = nf * mf / 12.0 * ((tf + 1.0) - tie_term);
    let p_value = if variance <= 0.0 {
        1.0
    } else {
        let z = ((statistic - expected).abs() - 0.5).max(0.0) / libm::sqrt(variance);
        libm::erfc(z / core::f64::consts::SQRT_2).min(1.0)
    };
    Ok(TestResult { statistic, p_value, method: TestMethod::NormalApproximation })
}

fn tie_group_sizes(doubled: &[u64]) -> impl Iterator<Item = f64> {
    let mut sorted = doubled.to_vec();
    sorted.sort_unstable();
    let mut sizes = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        sizes.push(j as f64);
        i += j;
    }
    sizes.into_iter()
}

/// Exact two-sided p from the distribution of the (doubled) rank sum over all
/// size-`n` subsets of the pooled ranks, counted by dynamic programming.
fn exact_p(doubled: &[u64], n: usize, observed: u64) -> f64 {
    let max_sum: usize = doubled.iter().map(|&r| r as usize).sum();
    // counts[j][s]: number of j-element subsets with doubled rank sum s
    let mut counts = vec![vec![0u64; max_sum + 1]; n + 1];
    counts[0][0] = 1;
    for (i, &r) in doubled.iter().enumerate() {
        let r = r as usize;
        for j in (1..=n.min(i + 1)).rev() {
            let (lower, upper) = counts.split_at_mut(j);
            let (src, dst) = (&lower[j - 1], &mut upper[0]);
            for s in (r..=max_sum).rev() {
                dst[s] += src[s - r];
            }
        }
    }
    let dist = &counts[n];
    let total: u64 = dist.iter().sum();
    let n_total = doubled.len() as u64;
    let expected_doubled = n as u64 * (n_total + 1);
    let tail: u64 = if observed >= expected_doubled {
        dist[observed as usize..].iter().sum()
    } else {
        dist[..=observed as usize].iter().sum()
    };
    (2.0 * tail as f64 / total as f64).min(1.0)
}
