//! Score-curve statistics.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("score curve is empty")]
pub struct EmptyCurve;

/// First step at which the rolling mean of the last `window` scores reaches
/// `threshold`. Windows are partial until `window` points exist.
pub fn meets_threshold(curve: &[(u64, f64)], threshold: f64, window: usize) -> Result<Option<u64>, EmptyCurve> {
    Ok(meets_index(curve, threshold, window)?.map(|i| curve[i].0))
}

/// Index form of [`meets_threshold`].
pub fn meets_index(curve: &[(u64, f64)], threshold: f64, window: usize) -> Result<Option<usize>, EmptyCurve> {
    if curve.is_empty() {
        return Err(EmptyCurve);
    }
    let window = window.max(1);
    Ok((0..curve.len()).find(|&i| {
        let lo = (i + 1).saturating_sub(window);
        let w = &curve[lo..=i];
        w.iter().map(|p| p.1).sum::<f64>() / w.len() as f64 >= threshold
    }))
}

/// Mean and population standard deviation of the scores strictly after the
/// point where the threshold was met.
pub fn after_meets(curve: &[(u64, f64)], threshold: f64, window: usize) -> Option<(f64, f64)> {
    let i = meets_index(curve, threshold, window).ok()??;
    let rest: Vec<f64> = curve[i + 1..].iter().map(|p| p.1).collect();
    if rest.is_empty() {
        return None;
    }
    let n = rest.len() as f64;
    let mean = rest.iter().sum::<f64>() / n;
    let var = rest.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}
