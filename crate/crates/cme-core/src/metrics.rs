//! Evaluation metrics: interval coverage and width, selection rates, the
//! subject-averaged mean squared prediction error, relative-to-oracle
//! ratios, and the empirical prediction risk.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::selection::IntervalSet;

/// Coverage probability and mean interval width over one group of targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageWidth {
    pub coverage: f64,
    pub mean_width: f64,
}

/// Fraction of `truth` values falling inside the intervals, and the average
/// interval width.
pub fn coverage_and_width(intervals: &IntervalSet, truth: &[f64]) -> Result<CoverageWidth> {
    if intervals.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} intervals but {} truth values",
            intervals.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Dimension("empty interval set".into()));
    }
    let mut covered = 0usize;
    let mut width_sum = 0.0;
    for i in 0..truth.len() {
        if intervals.lower[i] <= truth[i] && truth[i] <= intervals.upper[i] {
            covered += 1;
        }
        width_sum += intervals.upper[i] - intervals.lower[i];
    }
    Ok(CoverageWidth {
        coverage: covered as f64 / truth.len() as f64,
        mean_width: width_sum / truth.len() as f64,
    })
}

/// Coverage/width split into signal (true non-zero) and noise coordinates.
/// Either side is `None` when its group is empty.
pub fn coverage_and_width_by_group(
    intervals: &IntervalSet,
    truth: &[f64],
    is_signal: &[bool],
) -> Result<(Option<CoverageWidth>, Option<CoverageWidth>)> {
    if intervals.len() != truth.len() || truth.len() != is_signal.len() {
        return Err(Error::Dimension("interval/truth/mask lengths differ".into()));
    }
    let group = |want: bool| -> Option<CoverageWidth> {
        let idx: Vec<usize> = (0..truth.len()).filter(|&j| is_signal[j] == want).collect();
        if idx.is_empty() {
            return None;
        }
        let mut covered = 0usize;
        let mut width_sum = 0.0;
        for &j in &idx {
            if intervals.lower[j] <= truth[j] && truth[j] <= intervals.upper[j] {
                covered += 1;
            }
            width_sum += intervals.upper[j] - intervals.lower[j];
        }
        Some(CoverageWidth {
            coverage: covered as f64 / idx.len() as f64,
            mean_width: width_sum / idx.len() as f64,
        })
    };
    Ok((group(true), group(false)))
}

/// True and false positive rates of a selection against the true support.
/// TPR is `None` when there are no true non-zeros, FPR when there are no
/// true zeros.
pub fn tpr_fpr(selected: &[bool], beta0: &[f64]) -> Result<(Option<f64>, Option<f64>)> {
    if selected.len() != beta0.len() {
        return Err(Error::Dimension(format!(
            "selection length {} but truth length {}",
            selected.len(),
            beta0.len()
        )));
    }
    let mut true_pos = 0usize;
    let mut false_pos = 0usize;
    let mut n_signal = 0usize;
    let mut n_zero = 0usize;
    for j in 0..beta0.len() {
        if beta0[j] != 0.0 {
            n_signal += 1;
            if selected[j] {
                true_pos += 1;
            }
        } else {
            n_zero += 1;
            if selected[j] {
                false_pos += 1;
            }
        }
    }
    let tpr = (n_signal > 0).then(|| true_pos as f64 / n_signal as f64);
    let fpr = (n_zero > 0).then(|| false_pos as f64 / n_zero as f64);
    Ok((tpr, fpr))
}

/// Subject-averaged mean squared prediction error:
/// `sum_i { sum_j (y_ij - yhat_ij)^2 / m_i } / n`.
pub fn mspe(y_true: &[DVector<f64>], y_pred: &[DVector<f64>]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "{} true subjects but {} predicted",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Dimension("no subjects".into()));
    }
    let mut total = 0.0;
    for (i, (yt, yp)) in y_true.iter().zip(y_pred).enumerate() {
        if yt.len() != yp.len() {
            return Err(Error::Dimension(format!(
                "subject {i}: {} observations but {} predictions",
                yt.len(),
                yp.len()
            )));
        }
        total += (yt - yp).norm_squared() / yt.len() as f64;
    }
    Ok(total / y_true.len() as f64)
}

/// CME-to-oracle ratio of a positive metric.
pub fn relative_metric(cme_value: f64, oracle_value: f64) -> Result<f64> {
    if oracle_value <= 0.0 || !oracle_value.is_finite() {
        return Err(Error::Numeric(format!(
            "relative metric needs a positive oracle value, got {oracle_value}"
        )));
    }
    Ok(cme_value / oracle_value)
}

/// Empirical prediction risk `||X beta0 - X beta_bar||^2 / N`.
pub fn prediction_risk(x: &DMatrix<f64>, beta0: &DVector<f64>, beta_bar: &DVector<f64>) -> Result<f64> {
    if x.ncols() != beta0.len() || x.ncols() != beta_bar.len() {
        return Err(Error::Dimension(format!(
            "X has {} columns, beta0 {}, beta_bar {}",
            x.ncols(),
            beta0.len(),
            beta_bar.len()
        )));
    }
    let diff = x * (beta0 - beta_bar);
    Ok(diff.norm_squared() / x.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn coverage_extremes() {
        let iv = IntervalSet { lower: vec![-10.0; 3], upper: vec![10.0; 3], level: 0.95 };
        let cw = coverage_and_width(&iv, &[0.0, 5.0, -5.0]).unwrap();
        assert_eq!(cw.coverage, 1.0);
        assert_eq!(cw.mean_width, 20.0);

        let below = IntervalSet { lower: vec![-2.0; 3], upper: vec![-1.0; 3], level: 0.95 };
        let cw = coverage_and_width(&below, &[0.0, 5.0, 7.0]).unwrap();
        assert_eq!(cw.coverage, 0.0);
    }

    #[test]
    fn coverage_hand_case() {
        let iv = IntervalSet {
            lower: vec![0.0, 0.0, 0.0, 0.0],
            upper: vec![1.0, 2.0, 1.0, 2.0],
            level: 0.95,
        };
        let cw = coverage_and_width(&iv, &[0.5, 1.0, 5.0, -1.0]).unwrap();
        assert_relative_eq!(cw.coverage, 0.5, epsilon = 1e-15);
        assert_relative_eq!(cw.mean_width, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn grouped_coverage_splits_masks() {
        let iv = IntervalSet {
            lower: vec![0.0, -1.0, -1.0],
            upper: vec![2.0, 1.0, -0.5],
            level: 0.95,
        };
        let truth = [1.0, 0.0, 0.0];
        let mask = [true, false, false];
        let (signal, noise) = coverage_and_width_by_group(&iv, &truth, &mask).unwrap();
        assert_eq!(signal.unwrap().coverage, 1.0);
        assert_relative_eq!(noise.unwrap().coverage, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn tpr_fpr_cases() {
        let beta0 = [1.0, 0.5, 0.0, 0.0, 0.0];
        let perfect = [true, true, false, false, false];
        assert_eq!(tpr_fpr(&perfect, &beta0).unwrap(), (Some(1.0), Some(0.0)));

        let everything = [true; 5];
        assert_eq!(tpr_fpr(&everything, &beta0).unwrap(), (Some(1.0), Some(1.0)));

        // 4 of 5 signals plus 10 of 295 zeros.
        let mut beta_big = vec![0.0; 300];
        for j in 0..5 {
            beta_big[j] = 1.0;
        }
        let mut sel = vec![false; 300];
        for j in 0..4 {
            sel[j] = true;
        }
        for j in 5..15 {
            sel[j] = true;
        }
        let (tpr, fpr) = tpr_fpr(&sel, &beta_big).unwrap();
        assert_relative_eq!(tpr.unwrap(), 0.8, epsilon = 1e-15);
        assert_relative_eq!(fpr.unwrap(), 10.0 / 295.0, epsilon = 1e-15);

        // No true signals: TPR undefined.
        let none = [0.0, 0.0];
        let (tpr, fpr) = tpr_fpr(&[false, true], &none).unwrap();
        assert!(tpr.is_none());
        assert_eq!(fpr, Some(0.5));
    }

    #[test]
    fn mspe_matches_double_average() {
        let y_true = vec![DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![0.0, 0.0])];
        let y_pred = vec![DVector::from_vec(vec![1.0, 1.0]), DVector::from_vec(vec![2.0, 2.0])];
        // Per-subject means: 1 and 4; subject average 2.5.
        assert_relative_eq!(mspe(&y_true, &y_pred).unwrap(), 2.5, epsilon = 1e-15);
        assert_eq!(mspe(&y_true, &y_true).unwrap(), 0.0);

        // Scaling all errors by c multiplies MSPE by c^2.
        let scaled: Vec<DVector<f64>> = y_pred.iter().map(|v| v * 3.0).collect();
        assert_relative_eq!(mspe(&y_true, &scaled).unwrap(), 9.0 * 2.5, epsilon = 1e-12);
    }

    #[test]
    fn relative_metric_cases() {
        assert_eq!(relative_metric(2.0, 2.0).unwrap(), 1.0);
        assert_relative_eq!(relative_metric(1.07, 1.0).unwrap(), 1.07, epsilon = 1e-15);
        assert!(relative_metric(1.0, 0.0).is_err());
    }

    #[test]
    fn prediction_risk_zero_at_truth() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let beta0 = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(prediction_risk(&x, &beta0, &beta0).unwrap(), 0.0);
        let off = DVector::from_vec(vec![0.0, 2.0]);
        assert_relative_eq!(prediction_risk(&x, &beta0, &off).unwrap(), 0.5, epsilon = 1e-15);
    }
}
