//! Interpolants of log10(cost) as a function of quality.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::curve::QualityCurve;
use super::BdError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    /// Least-squares cubic polynomial, the classic Bjøntegaard fit.
    CubicFit,
    /// Shape-preserving piecewise cubic Hermite interpolation.
    #[default]
    PiecewiseCubicHermite,
}

impl fmt::Display for FitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitMethod::CubicFit => "cubic-fit",
            FitMethod::PiecewiseCubicHermite => "piecewise-cubic-hermite",
        })
    }
}

impl FromStr for FitMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cubic" | "cubic-fit" | "poly" => Ok(FitMethod::CubicFit),
            "pchip" | "piecewise-cubic-hermite" | "hermite" => Ok(FitMethod::PiecewiseCubicHermite),
            other => Err(format!(
                "unknown fit method {other:?} (expected cubic-fit or piecewise-cubic-hermite)"
            )),
        }
    }
}

/// A fitted `quality -> log10(cost)` function on the curve's quality range.
#[derive(Debug, Clone)]
pub struct LogCostFit {
    lo: f64,
    hi: f64,
    kind: FitKind,
}

#[derive(Debug, Clone)]
enum FitKind {
    /// Polynomial in `(q - center) / scale`, coefficients lowest order first.
    Cubic {
        center: f64,
        scale: f64,
        coeffs: [f64; 4],
    },
    Hermite {
        x: Vec<f64>,
        y: Vec<f64>,
        slopes: Vec<f64>,
    },
}

pub fn fit_log_cost(curve: &QualityCurve, method: FitMethod) -> Result<LogCostFit, BdError> {
    let x: Vec<f64> = curve.points().iter().map(|p| p.quality).collect();
    let y: Vec<f64> = curve.points().iter().map(|p| p.cost.log10()).collect();
    let kind = match method {
        FitMethod::CubicFit => cubic_least_squares(&x, &y).ok_or_else(|| BdError::InvalidCurve {
            label: curve.label().to_string(),
            reason: "singular cubic fit".into(),
        })?,
        FitMethod::PiecewiseCubicHermite => FitKind::Hermite {
            slopes: pchip_slopes(&x, &y),
            x,
            y,
        },
    };
    Ok(LogCostFit {
        lo: curve.min_quality(),
        hi: curve.max_quality(),
        kind,
    })
}

fn cubic_least_squares(x: &[f64], y: &[f64]) -> Option<FitKind> {
    let lo = x[0];
    let hi = x[x.len() - 1];
    let center = 0.5 * (lo + hi);
    let scale = 0.5 * (hi - lo);
    let mut ata = Matrix4::<f64>::zeros();
    let mut aty = Vector4::<f64>::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let u = (xi - center) / scale;
        let row = Vector4::new(1.0, u, u * u, u * u * u);
        ata += row * row.transpose();
        aty += row * yi;
    }
    let c = ata.lu().solve(&aty)?;
    Some(FitKind::Cubic {
        center,
        scale,
        coeffs: [c[0], c[1], c[2], c[3]],
    })
}

/// Derivatives at the knots: weighted harmonic means inside, a one-sided
/// three-point estimate limited for shape preservation at both ends.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    if n == 2 {
        return vec![delta[0]; 2];
    }
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let (prev, next) = (delta[i - 1], delta[i]);
        if prev == 0.0 || next == 0.0 || prev.signum() != next.signum() {
            d[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / prev + w2 / next);
        }
    }
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

impl LogCostFit {
    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// Abscissae where the interpolant switches polynomial pieces.
    pub fn breakpoints(&self) -> &[f64] {
        match &self.kind {
            FitKind::Cubic { .. } => &[],
            FitKind::Hermite { x, .. } => x,
        }
    }

    /// log10(cost) at `quality`; errors outside the fitted quality range.
    pub fn eval(&self, quality: f64) -> Result<f64, BdError> {
        if !(quality >= self.lo && quality <= self.hi) {
            return Err(BdError::OutOfRange {
                quality,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(self.value_at(quality))
    }

    pub(crate) fn value_at(&self, quality: f64) -> f64 {
        let q = quality.clamp(self.lo, self.hi);
        match &self.kind {
            FitKind::Cubic { center, scale, coeffs } => {
                let u = (q - center) / scale;
                coeffs[0] + u * (coeffs[1] + u * (coeffs[2] + u * coeffs[3]))
            }
            FitKind::Hermite { x, y, slopes } => {
                let n = x.len();
                let i = match x.binary_search_by(|v| v.total_cmp(&q)) {
                    Ok(i) if i == n - 1 => return y[n - 1],
                    Ok(i) => i,
                    Err(ins) => ins.saturating_sub(1).min(n - 2),
                };
                let h = x[i + 1] - x[i];
                let t = (q - x[i]) / h;
                let t2 = t * t;
                let t3 = t2 * t;
                let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
                let h10 = t3 - 2.0 * t2 + t;
                let h01 = -2.0 * t3 + 3.0 * t2;
                let h11 = t3 - t2;
                h00 * y[i] + h10 * h * slopes[i] + h01 * y[i + 1] + h11 * h * slopes[i + 1]
            }
        }
    }
}
