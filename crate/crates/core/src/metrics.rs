//! Evaluation metrics: coefficient of determination, Pearson correlation,
//! pixel-error statistics, and ROC AUC.
//!
//! All metrics return [`Error::UndefinedMetric`] instead of NaN when the
//! inputs are degenerate (empty sets, zero variance, single-class labels).

use crate::error::{Error, Result};

fn check_paired(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "{what}: length mismatch ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::UndefinedMetric(format!("{what}: empty input")));
    }
    Ok(())
}

/// Coefficient of determination of `predicted` against `actual`:
/// 1 - SS_res / SS_tot. Undefined when `actual` has zero variance.
pub fn r2(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    check_paired(predicted, actual, "r2")?;
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let ss_tot: f64 = actual.iter().map(|&y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("r2: target has zero variance".into()));
    }
    let ss_res: f64 = predicted.iter().zip(actual).map(|(&p, &y)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Pearson correlation coefficient. Undefined when either input has zero
/// variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_paired(x, y, "pearson")?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::UndefinedMetric("pearson: zero variance".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Histogram bin width in pixels.
pub const HIST_BIN_PX: f64 = 1.0;
/// Errors at or beyond this bound land in the overflow bin.
pub const HIST_MAX_PX: f64 = 160.0;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PixelErrorStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// 1 px bins [0,1), [1,2), ..., [159,160), plus a final overflow bin.
    pub histogram: Vec<u64>,
}

/// Summarizes localization errors in pixels. Median is exact (sorted),
/// not interpolated from the histogram.
pub fn pixel_error_stats(errors: &[f64]) -> Result<PixelErrorStats> {
    if errors.is_empty() {
        return Err(Error::UndefinedMetric("pixel errors: empty input".into()));
    }
    if let Some(&bad) = errors.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(Error::InvalidArgument(format!("pixel error {bad} must be finite and non-negative")));
    }
    let bins = HIST_MAX_PX as usize + 1;
    let mut histogram = vec![0u64; bins];
    for &e in errors {
        let idx = if e >= HIST_MAX_PX { bins - 1 } else { (e / HIST_BIN_PX) as usize };
        histogram[idx] += 1;
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let mean = errors.iter().sum::<f64>() / n as f64;
    Ok(PixelErrorStats { count: n, mean, median, histogram })
}

/// Area under the ROC curve via the Mann-Whitney U statistic, with midranks
/// for tied scores. Undefined unless both classes are present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "roc_auc: length mismatch ({} vs {})",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "roc_auc: needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share the midrank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn r2_matches_hand_computed_value() {
        // actual [1,2,4], predicted [1,2,3]: SS_res 1, SS_tot 14/3.
        let got = r2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((got - 11.0 / 14.0).abs() < 1e-12, "{got}");
        assert!((got - 0.7857142857142857).abs() < 1e-12);
    }

    #[test]
    fn r2_is_one_for_exact_predictions_and_degrades_with_noise() {
        let y = [0.5, 1.5, -2.0, 3.0];
        assert!((r2(&y, &y).unwrap() - 1.0).abs() < 1e-15);
        let noisy: Vec<f64> = y.iter().map(|v| v + 0.5).collect();
        assert!(r2(&noisy, &y).unwrap() < 1.0);
    }

    #[test]
    fn mean_predictor_scores_zero() {
        let y = [1.0, 2.0, 4.0, 9.0];
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let pred = vec![mean; y.len()];
        assert!(r2(&pred, &y).unwrap().abs() < 1e-15);
    }

    #[test]
    fn r2_can_go_negative_for_worse_than_mean_predictions() {
        let got = r2(&[10.0, -10.0, 10.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(got < 0.0, "{got}");
    }

    #[test]
    fn r2_undefined_for_constant_target() {
        assert!(matches!(r2(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::UndefinedMetric(_))));
        assert!(r2(&[], &[]).is_err());
        assert!(r2(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pearson_matches_hand_computed_value() {
        let got = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((got - 0.9819805060619657).abs() < 1e-12, "{got}");
    }

    #[test]
    fn pearson_is_affine_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..50).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 7.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let y_neg: Vec<f64> = x.iter().map(|v| -0.3 * v + 1.0).collect();
        assert!((pearson(&x, &y_neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_undefined_for_zero_variance() {
        assert!(matches!(pearson(&[1.0, 1.0], &[2.0, 3.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(pearson(&[1.0, 2.0], &[3.0, 3.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn pixel_stats_median_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1usize, 2, 3, 10, 101, 200] {
            let errors: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..20.0)).collect();
            let stats = pixel_error_stats(&errors).unwrap();
            let mut sorted = errors.clone();
            sorted.sort_by(f64::total_cmp);
            let oracle = if n % 2 == 1 {
                sorted[n / 2]
            } else {
                (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
            };
            assert_eq!(stats.median, oracle, "n {n}");
            assert_eq!(stats.count, n);
            assert_eq!(stats.histogram.iter().sum::<u64>(), n as u64);
        }
    }

    #[test]
    fn pixel_histogram_uses_one_px_bins_with_overflow() {
        let stats = pixel_error_stats(&[0.0, 0.99, 1.0, 2.5, 159.9, 160.0, 500.0]).unwrap();
        assert_eq!(stats.histogram.len(), 161);
        assert_eq!(stats.histogram[0], 2);
        assert_eq!(stats.histogram[1], 1);
        assert_eq!(stats.histogram[2], 1);
        assert_eq!(stats.histogram[159], 1);
        assert_eq!(stats.histogram[160], 2); // overflow bin
    }

    #[test]
    fn pixel_stats_reject_bad_inputs() {
        assert!(matches!(pixel_error_stats(&[]), Err(Error::UndefinedMetric(_))));
        assert!(pixel_error_stats(&[-1.0]).is_err());
        assert!(pixel_error_stats(&[f64::NAN]).is_err());
    }

    #[test]
    fn auc_is_one_for_perfect_separation_and_zero_when_inverted() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(roc_auc(&scores, &labels).unwrap(), 1.0);
        let inverted = [false, false, true, true];
        assert_eq!(roc_auc(&scores, &inverted).unwrap(), 0.0);
    }

    #[test]
    fn auc_of_constant_scores_is_half() {
        let scores = [0.5; 6];
        let labels = [true, false, true, false, false, true];
        assert_eq!(roc_auc(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn auc_requires_both_classes() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(roc_auc(&[0.1, 0.2], &[false, false]), Err(Error::UndefinedMetric(_))));
        assert!(roc_auc(&[0.1], &[true, false]).is_err());
    }

    /// Direct pair-counting oracle: ties count one half.
    fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_matches_pair_counting_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..60 {
            let n = rng.gen_range(2..=200);
            // Coarse score grid forces plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 7.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            labels[0] = true;
            if labels.iter().all(|&l| l) {
                labels[n - 1] = false;
            }
            if n > 1 {
                labels[n - 1] = false;
            }
            let got = roc_auc(&scores, &labels).unwrap();
            let want = auc_oracle(&scores, &labels);
            assert!((got - want).abs() < 1e-12, "trial {trial}: {got} vs {want}");
        }
    }

    #[test]
    fn inverting_labels_gives_one_minus_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let n = rng.gen_range(4..60);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..10) as f64).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[n - 1] = false;
            let auc = roc_auc(&scores, &labels).unwrap();
            let flipped: Vec<bool> = labels.iter().map(|&l| !l).collect();
            let inv = roc_auc(&scores, &flipped).unwrap();
            assert!((auc + inv - 1.0).abs() < 1e-12, "{auc} + {inv}");
        }
    }

    #[test]
    fn auc_of_random_scores_is_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let got = roc_auc(&scores, &labels).unwrap();
        assert!((got - 0.5).abs() < 0.02, "{got}");
    }
}
