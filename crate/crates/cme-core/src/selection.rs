//! Fixed-effects selection from posterior draws (sequential 2-means) and
//! empirical credible/predictive intervals.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Outcome of sequential 2-means selection.
#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// Selected-coefficient indicator, length p.
    pub selected: Vec<bool>,
    /// Estimated signal count per posterior draw.
    pub signal_count_per_draw: Vec<usize>,
    /// Final number of selected coefficients (mode of the per-draw counts).
    pub chosen_count: usize,
}

/// Sequential 2-means over posterior draws.
///
/// For each draw the absolute coefficients are split by exact 1-d 2-means;
/// the upper cluster is peeled off as signals and the lower cluster is
/// re-split until the two centers come within `tol_b` of each other. The
/// overall signal count is the mode of the per-draw counts, and the selected
/// set is the coefficients with the largest posterior median |beta_j|.
///
/// The default `tol_b` is the 90th percentile of all |draws| pooled over
/// coordinates and iterations. Under sparsity that percentile sits in the
/// upper tail of the noise coordinates, so the peeling stops once the
/// remaining cluster gaps are noise-sized, at any data scale and chain
/// length.
pub fn s2m_select(beta_draws: &DMatrix<f64>, tol_b: Option<f64>) -> Result<SelectionResult> {
    let t_keep = beta_draws.nrows();
    let p = beta_draws.ncols();
    if t_keep < 2 {
        return Err(Error::Dimension(format!("need at least 2 draws, got {t_keep}")));
    }
    if p == 0 {
        return Err(Error::Dimension("draw matrix has no coefficients".into()));
    }

    // Posterior medians of |beta_j| drive the final ranking.
    let abs_medians: Vec<f64> = (0..p)
        .map(|j| {
            let mut col: Vec<f64> = beta_draws.column(j).iter().map(|v| v.abs()).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            quantile_type7(&col, 0.5)
        })
        .collect();
    let tol = match tol_b {
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(t) => return Err(Error::Config(format!("tol_b must be positive, got {t}"))),
        None => {
            let mut pooled: Vec<f64> = beta_draws.iter().map(|v| v.abs()).collect();
            pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
            quantile_type7(&pooled, 0.9)
        }
    };

    let mut signal_count_per_draw = Vec::with_capacity(t_keep);
    let mut scratch = vec![0.0; p];
    for t in 0..t_keep {
        for j in 0..p {
            scratch[j] = beta_draws[(t, j)].abs();
        }
        signal_count_per_draw.push(signals_in_draw(&mut scratch, tol));
    }

    let chosen_count = mode_smallest(&signal_count_per_draw);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| abs_medians[b].partial_cmp(&abs_medians[a]).unwrap().then(a.cmp(&b)));
    let mut selected = vec![false; p];
    for &j in order.iter().take(chosen_count) {
        selected[j] = true;
    }
    Ok(SelectionResult { selected, signal_count_per_draw, chosen_count })
}

/// Signal count for one draw: sort the absolute values, then repeatedly
/// split off the upper 2-means cluster while the centers stay at least
/// `tol` apart.
fn signals_in_draw(values: &mut [f64], tol: f64) -> usize {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut hi = values.len();
    let mut signals = 0usize;
    loop {
        let current = &values[..hi];
        if current.len() == 1 {
            // Degenerate single coordinate: a signal only if it clears the
            // tolerance on its own.
            if current[0] > 0.0 && current[0] >= tol {
                signals += 1;
            }
            break;
        }
        let split = two_means_split(current);
        if split == 0 {
            break; // all values identical; no separation
        }
        let lower_mean = mean(&current[..split]);
        let upper_mean = mean(&current[split..]);
        if upper_mean - lower_mean < tol {
            break; // remaining values are one cluster of noise
        }
        signals += current.len() - split;
        hi = split;
    }
    signals
}

/// Exact 1-d 2-means on sorted data: the split index minimizing within-
/// cluster sum of squares. Returns 0 when no split improves on a single
/// cluster (all values equal).
fn two_means_split(sorted: &[f64]) -> usize {
    let n = sorted.len();
    debug_assert!(n >= 2);
    let mut prefix = Vec::with_capacity(n + 1);
    let mut prefix_sq = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    prefix_sq.push(0.0);
    for &v in sorted {
        prefix.push(prefix.last().unwrap() + v);
        prefix_sq.push(prefix_sq.last().unwrap() + v * v);
    }
    let sse = |lo: usize, hi: usize| -> f64 {
        let count = (hi - lo) as f64;
        let sum = prefix[hi] - prefix[lo];
        (prefix_sq[hi] - prefix_sq[lo]) - sum * sum / count
    };
    let mut best_split = 0usize;
    let mut best = sse(0, n);
    for split in 1..n {
        let total = sse(0, split) + sse(split, n);
        if total < best - 1e-15 * best.abs().max(1.0) {
            best = total;
            best_split = split;
        }
    }
    best_split
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Most frequent value; ties broken toward the smaller count.
fn mode_smallest(counts: &[usize]) -> usize {
    let mut freq = std::collections::BTreeMap::new();
    for &c in counts {
        *freq.entry(c).or_insert(0usize) += 1;
    }
    freq.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(c, _)| c).unwrap_or(0)
}

/// Elementwise interval bounds at a nominal level.
#[derive(Debug, Clone)]
pub struct IntervalSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

impl IntervalSet {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }
}

/// Per-column empirical quantile intervals at `(1-level)/2` and
/// `1-(1-level)/2`, with type-7 linear interpolation between order
/// statistics.
pub fn credible_intervals(draws: &DMatrix<f64>, level: f64) -> Result<IntervalSet> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Config(format!("interval level must be in (0,1), got {level}")));
    }
    if draws.nrows() < 2 {
        return Err(Error::Dimension(format!("need at least 2 draws, got {}", draws.nrows())));
    }
    let alpha = (1.0 - level) / 2.0;
    let mut lower = Vec::with_capacity(draws.ncols());
    let mut upper = Vec::with_capacity(draws.ncols());
    let mut col = vec![0.0; draws.nrows()];
    for j in 0..draws.ncols() {
        for (t, v) in draws.column(j).iter().enumerate() {
            col[t] = *v;
        }
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lower.push(quantile_type7(&col, alpha));
        upper.push(quantile_type7(&col, 1.0 - alpha));
    }
    Ok(IntervalSet { lower, upper, level })
}

/// Type-7 quantile (linear interpolation between order statistics) of
/// already-sorted data.
pub fn quantile_type7(sorted: &[f64], prob: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&prob));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
