//! Fragmentation metrics, error rates, metric-binned error curves and a
//! tricube local-linear smoother.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::legend::Label;
use crate::raster::ProportionVector;

/// Bin width used for error-vs-metric curves.
pub const DEFAULT_BIN_STEP: f64 = 0.05;
/// Neighbourhood fraction for [`local_regression_smooth`].
pub const DEFAULT_SPAN: f64 = 0.3;

/// Fraction of disagreeing labels.
pub fn error_rate(true_labels: &[Label], simulated: &[Label]) -> Result<f64> {
    if true_labels.is_empty() {
        return Err(Error::InvalidArgument("no labels".into()));
    }
    if true_labels.len() != simulated.len() {
        return Err(Error::InvalidArgument(format!(
            "{} true labels against {} simulated",
            true_labels.len(),
            simulated.len()
        )));
    }
    let wrong = true_labels
        .iter()
        .zip(simulated)
        .filter(|(a, b)| !a.agrees_with(b))
        .count();
    Ok(wrong as f64 / true_labels.len() as f64)
}

/// Area share of the target classes.
pub fn purity(proportions: &ProportionVector, target_classes: &[usize]) -> Result<f64> {
    if target_classes.is_empty() {
        return Err(Error::InvalidArgument("empty target class set".into()));
    }
    Ok(target_classes.iter().map(|&c| proportions.get(c)).sum::<f64>().min(1.0))
}

fn x_ln_x(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Equivalent Reference Probability of a proportion vector.
///
/// With `d` the expected difference of information between the dominant
/// class and the others, `ε = e^d / (e^d + k − 1)`. It equals `1/k` for
/// uniform proportions and `1` for a pure vector; for two classes it reduces
/// to the dominant proportion.
pub fn erp(proportions: &ProportionVector) -> Result<f64> {
    let k = proportions.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("ERP needs at least two classes, got {k}")));
    }
    let (dom, p_max) = proportions.dominant();
    let rest = 1.0 - p_max;
    if rest <= 0.0 {
        return Ok(1.0);
    }
    let others: f64 = proportions
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != dom)
        .map(|(_, &p)| x_ln_x(p))
        .sum();
    let expected_gain = p_max.ln() - others / rest;
    let e = expected_gain.exp();
    Ok((e / (e + (k - 1) as f64)).clamp(0.0, 1.0))
}

/// Per-bin mean error over a metric in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCurve {
    pub step: f64,
    pub bin_centers: Vec<f64>,
    /// `None` for empty bins.
    pub mean_error: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl BinnedCurve {
    pub fn bin_count(step: f64) -> usize {
        ((1.0 / step) - 1e-9).ceil() as usize
    }

    /// Bin index for a metric value: `[i·step, (i+1)·step)`, last bin closed.
    pub fn bin_of(value: f64, step: f64) -> usize {
        let n = Self::bin_count(step);
        let i = (value / step + 1e-9).floor();
        if i < 0.0 {
            0
        } else {
            (i as usize).min(n - 1)
        }
    }

    /// Index of the populated bin with the largest mean error.
    pub fn peak_bin(&self) -> Option<usize> {
        self.mean_error
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.map(|e| (i, e)))
            .fold(None, |best: Option<(usize, f64)>, (i, e)| match best {
                Some((_, b)) if b >= e => best,
                _ => Some((i, e)),
            })
            .map(|(i, _)| i)
    }
}

pub fn bin_errors(metric_values: &[f64], per_unit_errors: &[f64], step: f64) -> Result<BinnedCurve> {
    if metric_values.len() != per_unit_errors.len() {
        return Err(Error::InvalidArgument(format!(
            "{} metric values against {} errors",
            metric_values.len(),
            per_unit_errors.len()
        )));
    }
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::InvalidArgument(format!("bin step must lie in (0, 1), got {step}")));
    }
    let n = BinnedCurve::bin_count(step);
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (&m, &e) in metric_values.iter().zip(per_unit_errors) {
        let b = BinnedCurve::bin_of(m, step);
        sums[b] += e;
        counts[b] += 1;
    }
    Ok(BinnedCurve {
        step,
        bin_centers: (0..n).map(|i| ((i as f64 + 0.5) * step).min(1.0)).collect(),
        mean_error: sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect(),
        counts,
    })
}

/// Degree-one local regression with tricube weights over the
/// `ceil(span · n)` nearest neighbours of each query point. One pass, no
/// robustness iterations.
pub fn local_regression_smooth(x: &[f64], y: &[f64], span: f64, query: &[f64]) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("x and y lengths differ".into()));
    }
    if x.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "local regression needs at least 5 points, got {}",
            x.len()
        )));
    }
    if !(span > 0.0 && span <= 1.0) {
        return Err(Error::InvalidArgument(format!("span must lie in (0, 1], got {span}")));
    }
    let n = x.len();
    let q = ((span * n as f64).ceil() as usize).clamp(2, n);
    let mut dist: Vec<f64> = Vec::with_capacity(n);
    Ok(query
        .iter()
        .map(|&x0| {
            dist.clear();
            dist.extend(x.iter().map(|&xi| (xi - x0).abs()));
            let mut sorted = dist.clone();
            sorted.select_nth_unstable_by(q - 1, f64::total_cmp);
            let h = sorted[q - 1];
            let weights: Vec<f64> = dist
                .iter()
                .map(|&d| {
                    if h == 0.0 {
                        if d == 0.0 { 1.0 } else { 0.0 }
                    } else if d < h {
                        (1.0 - (d / h).powi(3)).powi(3)
                    } else {
                        0.0
                    }
                })
                .collect();
            weighted_line_at(x, y, &weights, x0, h)
        })
        .collect())
}

fn weighted_line_at(x: &[f64], y: &[f64], w: &[f64], x0: f64, h: f64) -> f64 {
    let sw: f64 = w.iter().sum();
    if sw <= 0.0 {
        // Only boundary neighbours: average everything at distance <= h.
        let (s, c) = x
            .iter()
            .zip(y)
            .filter(|(&xi, _)| (xi - x0).abs() <= h)
            .fold((0.0, 0usize), |(s, c), (_, &yi)| (s + yi, c + 1));
        return s / c as f64;
    }
    let mx = x.iter().zip(w).map(|(&xi, &wi)| wi * xi).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(&yi, &wi)| wi * yi).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(&xi, &wi)| wi * (xi - mx).powi(2)).sum();
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&xi, &yi), &wi)| wi * (xi - mx) * (yi - my))
        .sum();
    let scale = h.max(1e-300);
    if sxx <= 1e-12 * sw * scale * scale {
        return my;
    }
    my + sxy / sxx * (x0 - mx)
}
