//! Order statistics shared by curve aggregation and threshold calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `q`-quantile with linear interpolation between order statistics
/// (position `q * (n - 1)` in the sorted sample).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidConfig(format!("quantile level {q} outside [0, 1]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            location: "quantile sample".into(),
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(sorted_quantile(&sorted, q))
}

fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if sorted[lo] == sorted[hi] {
        // Also keeps equal infinite neighbours from producing NaN.
        return sorted[lo];
    }
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Lower quantile, median and upper quantile of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

/// Central band holding `central_fraction` of the sample: the
/// `(1 - f) / 2` and `(1 + f) / 2` quantiles around the median.
pub fn percentile_band(values: &[f64], central_fraction: f64) -> Result<Band> {
    if !(central_fraction > 0.0 && central_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "central fraction {central_fraction} outside (0, 1]"
        )));
    }
    quantile(values, 0.5)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(Band {
        lower: sorted_quantile(&sorted, (1.0 - central_fraction) / 2.0),
        median: sorted_quantile(&sorted, 0.5),
        upper: sorted_quantile(&sorted, (1.0 + central_fraction) / 2.0),
    })
}

pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
