use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bd::{BdError, CurvePoint, QualityCurve};
use crate::meter::EnergyMeasurement;
use crate::quality::SequencePsnr;

/// QPs of the common test conditions.
pub const DEFAULT_QPS: [u32; 4] = [22, 27, 32, 37];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SequenceClass {
    A1,
    A2,
    B,
    C,
    D,
    E,
    F,
}

impl SequenceClass {
    pub const ALL: [SequenceClass; 7] = [
        SequenceClass::A1,
        SequenceClass::A2,
        SequenceClass::B,
        SequenceClass::C,
        SequenceClass::D,
        SequenceClass::E,
        SequenceClass::F,
    ];

    /// Class A sequences are not coded in low delay, class E not in random access.
    pub fn applies_to(self, config: CodingConfig) -> bool {
        !matches!(
            (self, config),
            (SequenceClass::A1 | SequenceClass::A2, CodingConfig::LB) | (SequenceClass::E, CodingConfig::RA)
        )
    }
}

impl fmt::Display for SequenceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for SequenceClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown sequence class {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CodingConfig {
    AI,
    LB,
    RA,
}

impl CodingConfig {
    pub const ALL: [CodingConfig; 3] = [CodingConfig::AI, CodingConfig::LB, CodingConfig::RA];
}

impl fmt::Display for CodingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for CodingConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown coding configuration {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Encoded,
    Measured,
    Failed,
}

impl fmt::Display for JobStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobStatus::Pending => "pending",
            JobStatus::Encoded => "encoded",
            JobStatus::Measured => "measured",
            JobStatus::Failed => "failed",
        })
    }
}

/// Which measured quantity serves as cost on a quality curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostField {
    Rate,
    Energy,
    Time,
}

impl CostField {
    pub const ALL: [CostField; 3] = [CostField::Rate, CostField::Energy, CostField::Time];

    /// Short metric name: BDR, BDDE or BDDT.
    pub fn metric_name(self) -> &'static str {
        match self {
            CostField::Rate => "BDR",
            CostField::Energy => "BDDE",
            CostField::Time => "BDDT",
        }
    }
}

impl fmt::Display for CostField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostField::Rate => "rate",
            CostField::Energy => "energy",
            CostField::Time => "time",
        })
    }
}

impl FromStr for CostField {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rate" | "bitrate" | "bdr" => Ok(CostField::Rate),
            "energy" | "bdde" => Ok(CostField::Energy),
            "time" | "bddt" => Ok(CostField::Time),
            other => Err(format!("unknown cost field {other:?} (expected rate, energy or time)")),
        }
    }
}

/// Outcome of one measured decode, as persisted in the result store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub sequence: String,
    pub class: SequenceClass,
    pub config: CodingConfig,
    pub qp: u32,
    pub variant: String,
    pub content_hash: String,
    pub status: JobStatus,
    /// Non-fatal conditions, e.g. `not-converged`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default)]
    pub bitrate_kbps: Option<f64>,
    #[serde(default)]
    pub psnr: Option<SequencePsnr>,
    #[serde(default)]
    pub energy: Option<EnergyMeasurement>,
    #[serde(default)]
    pub decode_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const FLAG_NOT_CONVERGED: &str = "not-converged";

impl ResultRecord {
    pub fn key(&self) -> (&str, CodingConfig, u32, &str) {
        (&self.sequence, self.config, self.qp, &self.variant)
    }

    /// The cost value for `field`, if this record was measured.
    pub fn cost(&self, field: CostField) -> Option<f64> {
        if self.status != JobStatus::Measured {
            return None;
        }
        match field {
            CostField::Rate => self.bitrate_kbps,
            CostField::Energy => self.energy.as_ref().map(|e| e.mean_energy_j),
            CostField::Time => self.decode_time_s,
        }
    }
}

/// Identifies one curve: all QPs of a sequence, configuration and variant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CurveKey {
    pub sequence: String,
    pub config: CodingConfig,
    pub variant: String,
}

#[derive(Debug, Clone, Default)]
pub struct CurveSet {
    pub curves: BTreeMap<CurveKey, QualityCurve>,
    /// Groups that could not form a curve, with the reason.
    pub excluded: BTreeMap<CurveKey, BdError>,
    pub classes: BTreeMap<String, SequenceClass>,
}

/// Keeps the last record of each job key, in first-seen order.
pub fn latest_records(records: &[ResultRecord]) -> Vec<&ResultRecord> {
    let mut index: BTreeMap<(&str, CodingConfig, u32, &str), usize> = BTreeMap::new();
    let mut out: Vec<&ResultRecord> = Vec::new();
    for r in records {
        match index.get(&r.key()) {
            Some(&i) => out[i] = r,
            None => {
                index.insert(r.key(), out.len());
                out.push(r);
            }
        }
    }
    out
}

/// Groups measured records into `(cost, psnr_yuv)` curves over `qps`.
///
/// Groups missing a QP or holding an unusable point are listed in
/// `excluded` instead of failing the whole set.
pub fn build_curves(records: &[ResultRecord], field: CostField, qps: &[u32]) -> CurveSet {
    let mut groups: BTreeMap<CurveKey, Vec<&ResultRecord>> = BTreeMap::new();
    let mut set = CurveSet::default();
    for r in latest_records(records) {
        set.classes.insert(r.sequence.clone(), r.class);
        groups
            .entry(CurveKey {
                sequence: r.sequence.clone(),
                config: r.config,
                variant: r.variant.clone(),
            })
            .or_default()
            .push(r);
    }
    for (key, recs) in groups {
        let mut points = Vec::new();
        let mut gaps = Vec::new();
        for &qp in qps {
            let hit = recs.iter().find(|r| r.qp == qp);
            match hit.and_then(|r| Some((r.cost(field)?, r.psnr?.psnr_yuv))) {
                Some((cost, quality)) => points.push(CurvePoint::new(cost, quality)),
                None => gaps.push(match hit {
                    Some(r) if r.status == JobStatus::Failed => format!("QP {qp} failed"),
                    Some(_) => format!("QP {qp} has no {field} value"),
                    None => format!("QP {qp} missing"),
                }),
            }
        }
        let label = format!("{}/{}/{}", key.sequence, key.config, key.variant);
        let outcome = if gaps.is_empty() {
            QualityCurve::new(label, points)
        } else {
            Err(BdError::IncompleteCurve {
                sequence: key.sequence.clone(),
                config: key.config.to_string(),
                variant: key.variant.clone(),
                detail: gaps.join(", "),
            })
        };
        match outcome {
            Ok(curve) => {
                set.curves.insert(key, curve);
            }
            Err(e) => {
                log::warn!("excluding curve: {e}");
                set.excluded.insert(key, e);
            }
        }
    }
    set
}
