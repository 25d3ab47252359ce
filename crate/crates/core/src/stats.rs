//! Small statistical helpers shared by the harness and its tests.

use rayon::prelude::*;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959963984540054;

/// Mean and 95% normal-approximation confidence half-width.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n >= 2, "confidence interval needs at least 2 values");
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, Z_95 * (var / n as f64).sqrt())
}

/// Frequency of `true` with a 95% binomial (normal-approximation)
/// confidence half-width.
pub fn freq_ci(hits: usize, trials: usize) -> (f64, f64) {
    assert!(trials >= 2);
    let p = hits as f64 / trials as f64;
    (p, Z_95 * (p * (1.0 - p) / trials as f64).sqrt())
}

/// Median by total order; mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Normal-approximation z statistic of the Wilcoxon rank-sum test for two
/// equal-length samples. Near zero when the samples come from the same
/// distribution.
pub fn rank_sum_z(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && a.len() == b.len());
    let n = a.len();
    let mut tagged: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    tagged.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut r1 = 0.0;
    for (rank0, &(_, from_a)) in tagged.iter().enumerate() {
        if from_a {
            r1 += (rank0 + 1) as f64;
        }
    }
    let nn = n as f64;
    let mu = nn * (2.0 * nn + 1.0) / 2.0;
    let sd = (nn * nn * (2.0 * nn + 1.0) / 12.0).sqrt();
    (r1 - mu) / sd
}

/// Pearson chi-square statistic against given expected counts.
pub fn chi_square(observed: &[usize], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum()
}

/// Run `trials` independent simulations, each on its own derived seed, and
/// collect the results in trial order. The reduction order is fixed, so
/// results are identical whatever the worker count.
pub fn run_trials<T, F>(trials: usize, root_seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64) -> T + Sync,
{
    (0..trials)
        .into_par_iter()
        .map(|t| f(t, crate::seed::child_seed(root_seed, t as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_ci_shrinks_with_samples() {
        let few = vec![0.0, 1.0, 0.0, 1.0];
        let many: Vec<f64> = (0..400).map(|i| (i % 2) as f64).collect();
        let (m1, c1) = mean_ci(&few);
        let (m2, c2) = mean_ci(&many);
        assert_eq!(m1, 0.5);
        assert_eq!(m2, 0.5);
        assert!(c2 < c1);
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn rank_sum_near_zero_for_identical() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| i as f64 + 0.5).collect();
        assert!(rank_sum_z(&a, &b).abs() < 1.0);
    }

    #[test]
    fn run_trials_is_order_stable() {
        let a = run_trials(100, 7, |t, s| (t, s));
        let b = run_trials(100, 7, |t, s| (t, s));
        assert_eq!(a, b);
        assert!(a.iter().enumerate().all(|(i, &(t, _))| i == t));
    }
}
