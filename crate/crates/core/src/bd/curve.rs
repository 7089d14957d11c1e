use serde::{Deserialize, Serialize};

use super::BdError;

/// Minimum points per curve: one per QP of the standard four-QP sweep.
pub const MIN_CURVE_POINTS: usize = 4;

/// One operating point: a positive cost (kbps, J or s) at a YUV-PSNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub cost: f64,
    pub quality: f64,
}

impl CurvePoint {
    pub fn new(cost: f64, quality: f64) -> Self {
        Self { cost, quality }
    }
}

/// A validated quality/cost curve, sorted by quality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityCurve {
    label: String,
    points: Vec<CurvePoint>,
}

impl QualityCurve {
    /// Sorts by quality and checks the curve can be fitted in the log-cost domain.
    ///
    /// Qualities must be distinct and cost must strictly increase with
    /// quality.
    pub fn new(label: impl Into<String>, mut points: Vec<CurvePoint>) -> Result<Self, BdError> {
        let label = label.into();
        if points.len() < MIN_CURVE_POINTS {
            return Err(BdError::InsufficientPoints {
                label,
                count: points.len(),
            });
        }
        let invalid = |reason: String| BdError::InvalidCurve {
            label: label.clone(),
            reason,
        };
        for p in &points {
            if !p.cost.is_finite() || !p.quality.is_finite() {
                return Err(invalid(format!("non-finite point ({}, {})", p.cost, p.quality)));
            }
            if p.cost <= 0.0 {
                return Err(invalid(format!("cost {} is not positive", p.cost)));
            }
        }
        points.sort_by(|a, b| a.quality.total_cmp(&b.quality));
        for w in points.windows(2) {
            if w[1].quality == w[0].quality {
                return Err(invalid(format!("duplicate quality {} dB", w[0].quality)));
            }
            if w[1].cost <= w[0].cost {
                return Err(invalid(format!(
                    "cost does not increase with quality: {} at {} dB then {} at {} dB",
                    w[0].cost, w[0].quality, w[1].cost, w[1].quality
                )));
            }
        }
        Ok(Self { label, points })
    }

    pub fn from_pairs(label: impl Into<String>, pairs: &[(f64, f64)]) -> Result<Self, BdError> {
        Self::new(label, pairs.iter().map(|&(c, q)| CurvePoint::new(c, q)).collect())
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn min_quality(&self) -> f64 {
        self.points[0].quality
    }

    pub fn max_quality(&self) -> f64 {
        self.points[self.points.len() - 1].quality
    }

    /// Same curve with every cost multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, BdError> {
        Self::new(
            self.label.clone(),
            self.points
                .iter()
                .map(|p| CurvePoint::new(p.cost * factor, p.quality))
                .collect(),
        )
    }
}
