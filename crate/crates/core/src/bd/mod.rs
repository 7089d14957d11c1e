//! Bjøntegaard-Delta cost metrics.
//!
//! The same machinery yields BD-rate, BD decoding energy and BD decoding
//! time: only the cost variable on the curves changes. Each curve is fitted
//! as `log10(cost)` over quality, the fits are averaged over the shared
//! quality range with composite Simpson integration, and the mean log
//! difference is turned into a percentage.

mod curve;
mod fit;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use curve::{CurvePoint, QualityCurve, MIN_CURVE_POINTS};
pub use fit::{fit_log_cost, FitMethod, LogCostFit};
pub use table::{bd_table, bd_table_partial, SequenceBd};

/// Default number of Simpson subintervals over the overlap.
pub const DEFAULT_SUBINTERVALS: usize = 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BdError {
    #[error("curve {label:?} has {count} points, need at least {MIN_CURVE_POINTS}")]
    InsufficientPoints { label: String, count: usize },
    #[error("curve {label:?} is invalid: {reason}")]
    InvalidCurve { label: String, reason: String },
    #[error("quality {quality} dB outside fitted range [{lo}, {hi}]")]
    OutOfRange { quality: f64, lo: f64, hi: f64 },
    #[error("curves {reference:?} and {test:?} share no quality range")]
    NoOverlap { reference: String, test: String },
    #[error("incomplete curve for {sequence}/{config}/{variant}: {detail}")]
    IncompleteCurve {
        sequence: String,
        config: String,
        variant: String,
        detail: String,
    },
}

/// Percent cost difference of `test` over `reference` at equal quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdResult {
    pub delta_percent: f64,
    pub quality_overlap: (f64, f64),
    pub method: FitMethod,
}

/// Composite Simpson rule with `n` (at least 2, rounded up to even) subintervals.
pub fn integrate_simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
    let n = n.max(2);
    let n = n + n % 2;
    let h = (hi - lo) / n as f64;
    let node = |i: usize| {
        if i == n {
            hi
        } else {
            lo + (hi - lo) * i as f64 / n as f64
        }
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(node(i));
    }
    acc * h / 3.0
}

/// BD delta with [`DEFAULT_SUBINTERVALS`].
pub fn bd_delta(reference: &QualityCurve, test: &QualityCurve, method: FitMethod) -> Result<BdResult, BdError> {
    bd_delta_with(reference, test, method, DEFAULT_SUBINTERVALS)
}

pub fn bd_delta_with(
    reference: &QualityCurve,
    test: &QualityCurve,
    method: FitMethod,
    subintervals: usize,
) -> Result<BdResult, BdError> {
    let lo = reference.min_quality().max(test.min_quality());
    let hi = reference.max_quality().min(test.max_quality());
    if !(lo < hi) {
        return Err(BdError::NoOverlap {
            reference: reference.label().to_string(),
            test: test.label().to_string(),
        });
    }
    let fit_ref = fit_log_cost(reference, method)?;
    let fit_test = fit_log_cost(test, method)?;
    // Split at the knots so every Simpson panel sees a single cubic piece.
    let mut edges: Vec<f64> = fit_ref
        .breakpoints()
        .iter()
        .chain(fit_test.breakpoints())
        .copied()
        .filter(|&q| q > lo && q < hi)
        .chain([lo, hi])
        .collect();
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let width = hi - lo;
    let area: f64 = edges
        .windows(2)
        .map(|w| {
            let n = (subintervals as f64 * (w[1] - w[0]) / width).ceil() as usize;
            integrate_simpson(|q| fit_test.value_at(q) - fit_ref.value_at(q), w[0], w[1], n)
        })
        .sum();
    let mean_log_diff = area / width;
    Ok(BdResult {
        delta_percent: (10f64.powf(mean_log_diff) - 1.0) * 100.0,
        quality_overlap: (lo, hi),
        method,
    })
}
