//! Evaluation metric and statistical tests.

mod fit;
mod wilcoxon;

use alloc::vec::Vec;

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::Tensor;

pub use fit::{linear_fit, pearson, FitResult};
pub use wilcoxon::{midranks, wilcoxon_rank_sum, TestMethod, TestResult, EXACT_LIMIT};

/// Moment statistics of a parameter tensor.
///
/// Moments are population-style: `sigma = sqrt(m2)`, `skew = m3 / m2^1.5`,
/// `kurtosis = m4 / m2² - 3` (excess). Both shape statistics are `None` when
/// `sigma` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptiveStats {
    pub size: usize,
    pub mean: f64,
    pub median: f64,
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
    pub kurtosis: Option<f64>,
    pub skew: Option<f64>,
}

pub fn describe(values: &[f64]) -> Result<DescriptiveStats> {
    if values.len() < 2 {
        return Err(Error::Degenerate("standard deviation needs at least two values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("descriptive statistics input".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 { 0.5 * (sorted[mid - 1] + sorted[mid]) } else { sorted[mid] };
    let sigma = libm::sqrt(m2);
    let (kurtosis, skew) = if m2 > 0.0 {
        (Some(m4 / (m2 * m2) - 3.0), Some(m3 / libm::pow(m2, 1.5)))
    } else {
        (None, None)
    };
    Ok(DescriptiveStats {
        size: values.len(),
        mean,
        median,
        sigma,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        kurtosis,
        skew,
    })
}

/// Mean and sample standard deviation (n − 1 denominator; zero for one value).
pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, libm::sqrt(ss / (n - 1.0)))
}

/// Indices of the `k` largest entries of `row`; equal values rank the lower
/// index first.
pub fn top_k_indices(row: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Number of rows whose label is among the row's `k` largest logits.
pub fn top_k_hits(logits: &Tensor, labels: &[usize], k: usize) -> Result<usize> {
    let [n, c] = logits.dims2()?;
    if k == 0 || k > c {
        return Err(invalid!("k = {} outside 1..={}", k, c));
    }
    if labels.len() != n {
        return Err(shape_err!("{} labels for {} rows", labels.len(), n));
    }
    let mut hits = 0;
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        if label >= c {
            return Err(invalid!("label {} out of range for {} classes", label, c));
        }
        // The label is in the top k iff fewer than k classes outrank it.
        let v = row[label];
        let outranking = row
            .iter()
            .enumerate()
            .filter(|&(j, &x)| x.total_cmp(&v).is_gt() || (x.total_cmp(&v).is_eq() && j < label))
            .count();
        if outranking < k {
            hits += 1;
        }
    }
    Ok(hits)
}

/// Fraction of rows whose label is among the `k` largest logits.
pub fn top_k_accuracy(logits: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    let hits = top_k_hits(logits, labels, k)?;
    Ok(hits as f64 / labels.len() as f64)
}

/// Top-k accuracy of a classifier whose logits are constant, given the
/// evaluation-set class frequencies. Ties send the prediction to the `k`
/// lowest class indices.
pub fn chance_level(class_frequencies: &[f64], k: usize) -> Result<f64> {
    if class_frequencies.is_empty() || class_frequencies.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
        return Err(invalid!("class frequencies must be non-empty and lie in [0, 1]"));
    }
    let total: f64 = class_frequencies.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid!("class frequencies sum to {}, not 1", total));
    }
    if k == 0 || k > class_frequencies.len() {
        return Err(invalid!("k = {} outside 1..={}", k, class_frequencies.len()));
    }
    Ok(class_frequencies[..k].iter().sum())
}
