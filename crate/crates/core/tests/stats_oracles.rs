use ablate_core::stats::{
    describe, linear_fit, pearson, top_k_accuracy, top_k_indices, wilcoxon_rank_sum, TestMethod,
};
use ablate_core::{Rng, Tensor};
use proptest::prelude::*;

/// Two-sided exact p by listing every way to pick the first sample's
/// positions from the pooled data, recomputing midranks from scratch.
fn brute_force_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let total = pooled.len();
    let rank = |v: f64| {
        let below = pooled.iter().filter(|&&x| x < v).count() as f64;
        let equal = pooled.iter().filter(|&&x| x == v).count() as f64;
        below + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = pooled.iter().map(|&v| rank(v)).collect();
    let observed: f64 = ranks[..a.len()].iter().sum();
    let expected = a.len() as f64 * (total as f64 + 1.0) / 2.0;
    let (mut count, mut as_low, mut as_high) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let s: f64 = (0..total).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        count += 1;
        if s <= observed + 1e-9 {
            as_low += 1;
        }
        if s >= observed - 1e-9 {
            as_high += 1;
        }
    }
    let tail = if observed >= expected { as_high } else { as_low };
    (2.0 * tail as f64 / count as f64).min(1.0)
}

#[test]
fn exact_p_matches_enumeration_on_random_pairs() {
    let mut rng = Rng::from_seed(77);
    for case in 0..100 {
        let n = 1 + rng.below(7) as usize;
        let m = 1 + rng.below(7) as usize;
        // small integer range forces frequent ties
        let a: Vec<f64> = (0..n).map(|_| rng.below(6) as f64).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.below(6) as f64).collect();
        let r = wilcoxon_rank_sum(&a, &b).unwrap();
        assert_eq!(r.method, TestMethod::Exact);
        let oracle = brute_force_p(&a, &b);
        assert!((r.p_value - oracle).abs() < 1e-12, "case {}: {:?} vs {:?}: {} != {}", case, a, b, r.p_value, oracle);
    }
}

#[test]
fn five_versus_five_disjoint() {
    // Disjoint ranges: only 1 of C(10,5) = 252 assignments is as extreme, doubled.
    let a = [0.91, 0.92, 0.93, 0.94, 0.95];
    let b = [0.1, 0.2, 0.3, 0.4, 0.5];
    let r = wilcoxon_rank_sum(&a, &b).unwrap();
    assert!((r.p_value - 2.0 / 252.0).abs() < 1e-15);
    assert!((r.p_value - brute_force_p(&a, &b)).abs() < 1e-15);
}

#[test]
fn describe_matches_closed_form() {
    let mut rng = Rng::from_seed(12);
    for _ in 0..20 {
        let n = 2 + rng.below(50) as usize;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal() * 3.0 + 1.0).collect();
        let s = describe(&xs).unwrap();
        // two-pass moments computed independently
        let mean = xs.iter().sum::<f64>() / n as f64;
        let central = |p: i32| xs.iter().map(|x| (x - mean).powi(p)).sum::<f64>() / n as f64;
        let (m2, m3, m4) = (central(2), central(3), central(4));
        let mut sorted = xs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
        assert!((s.mean - mean).abs() < 1e-10);
        assert!((s.median - median).abs() < 1e-10);
        assert!((s.sigma - m2.sqrt()).abs() < 1e-10);
        assert!((s.skew.unwrap() - m3 / m2.powf(1.5)).abs() < 1e-10);
        assert!((s.kurtosis.unwrap() - (m4 / (m2 * m2) - 3.0)).abs() < 1e-10);
        assert_eq!(s.min, sorted[0]);
        assert_eq!(s.max, sorted[n - 1]);
    }
}

#[test]
fn describe_standard_normal_sample() {
    let mut rng = Rng::from_seed(31);
    let xs: Vec<f64> = (0..100_000).map(|_| rng.normal()).collect();
    let s = describe(&xs).unwrap();
    assert!(s.mean.abs() < 0.02);
    assert!((s.sigma - 1.0).abs() < 0.02);
    assert!(s.kurtosis.unwrap().abs() < 0.1);
    assert!(s.skew.unwrap().abs() < 0.05);
}

#[test]
fn linear_fit_matches_normal_equations() {
    let mut rng = Rng::from_seed(40);
    for _ in 0..50 {
        let n = 3 + rng.below(20) as usize;
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let y: Vec<f64> = x.iter().map(|&v| 0.7 * v - 0.2 + 0.5 * rng.normal()).collect();
        let f = linear_fit(&x, &y).unwrap();
        // Solve [Σ1 Σx; Σx Σx²][b; a] = [Σy; Σxy] by Cramer's rule.
        let (s1, sx, sxx) = (n as f64, x.iter().sum::<f64>(), x.iter().map(|v| v * v).sum::<f64>());
        let (sy, sxy) = (y.iter().sum::<f64>(), x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>());
        let det = s1 * sxx - sx * sx;
        let slope = (s1 * sxy - sx * sy) / det;
        let intercept = (sxx * sy - sx * sxy) / det;
        let my = sy / s1;
        let ss_res: f64 = x.iter().zip(&y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
        let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        assert!((f.slope - slope).abs() < 1e-10);
        assert!((f.intercept - intercept).abs() < 1e-10);
        assert!((f.r_squared - (1.0 - ss_res / ss_tot)).abs() < 1e-10);
        assert!((f.r_squared - pearson(&x, &y).unwrap().powi(2)).abs() < 1e-10);
    }
}

#[test]
fn top_k_matches_full_sort_oracle() {
    let mut rng = Rng::from_seed(50);
    for _ in 0..50 {
        let (n, c) = (1 + rng.below(20) as usize, 2 + rng.below(12) as usize);
        // coarse values so ties occur
        let data: Vec<f32> = (0..n * c).map(|_| rng.below(5) as f32).collect();
        let logits = Tensor::new(vec![n, c], data).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c as u64) as usize).collect();
        for k in [1, 5.min(c)] {
            let mut hits = 0;
            for (i, &label) in labels.iter().enumerate() {
                let row = logits.row(i);
                let mut order: Vec<usize> = (0..c).collect();
                // stable sort by descending value keeps lower indices first among ties
                order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap());
                if order[..k].contains(&label) {
                    hits += 1;
                }
                assert_eq!(top_k_indices(row, k), order[..k].to_vec());
            }
            assert_eq!(top_k_accuracy(&logits, &labels, k).unwrap(), hits as f64 / n as f64);
        }
    }
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-20i32..20).prop_map(|v| v as f64 * 0.25), 1..9)
}

proptest! {
    #[test]
    fn rank_sum_p_is_symmetric(a in sample(), b in sample()) {
        let ab = wilcoxon_rank_sum(&a, &b).unwrap();
        let ba = wilcoxon_rank_sum(&b, &a).unwrap();
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!(ab.p_value > 0.0 && ab.p_value <= 1.0);
    }

    #[test]
    fn rank_sum_is_shift_invariant(a in sample(), b in sample(), shift in -100i32..100) {
        let s = shift as f64 * 0.5;
        let shifted_a: Vec<f64> = a.iter().map(|v| v + s).collect();
        let shifted_b: Vec<f64> = b.iter().map(|v| v + s).collect();
        let r1 = wilcoxon_rank_sum(&a, &b).unwrap();
        let r2 = wilcoxon_rank_sum(&shifted_a, &shifted_b).unwrap();
        prop_assert_eq!(r1, r2);
    }

    #[test]
    fn large_samples_symmetric_and_bounded(
        a in prop::collection::vec(-50i32..50, 11..30),
        b in prop::collection::vec(-50i32..50, 11..30),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let ab = wilcoxon_rank_sum(&a, &b).unwrap();
        let ba = wilcoxon_rank_sum(&b, &a).unwrap();
        prop_assert_eq!(ab.method, TestMethod::NormalApproximation);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!(ab.p_value > 0.0 && ab.p_value <= 1.0);
    }

    #[test]
    fn top_k_invariant_under_monotone_transform(
        data in prop::collection::vec(-3.0f32..3.0, 40),
        labels in prop::collection::vec(0usize..8, 5),
        k in 1usize..8,
    ) {
        let logits = Tensor::new(vec![5, 8], data.clone()).unwrap();
        // piecewise power-of-two scaling: strictly increasing and exact in f32
        let transformed = Tensor::new(vec![5, 8], data.iter().map(|&v| if v > 0.0 { v * 8.0 } else { v * 0.5 }).collect()).unwrap();
        prop_assert_eq!(
            top_k_accuracy(&logits, &labels, k).unwrap(),
            top_k_accuracy(&transformed, &labels, k).unwrap()
        );
    }

    #[test]
    fn r_squared_is_squared_correlation(
        x in prop::collection::vec(-10.0f64..10.0, 3..30),
        noise in prop::collection::vec(-1.0f64..1.0, 30),
        slope in -3.0f64..3.0,
    ) {
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, e)| slope * a + e).collect();
        if let (Ok(fit), Ok(r)) = (linear_fit(&x, &y), pearson(&x, &y)) {
            prop_assert!((fit.r_squared - r * r).abs() < 1e-10);
            prop_assert!((0.0..=1.0).contains(&fit.r_squared));
        }
    }
}
