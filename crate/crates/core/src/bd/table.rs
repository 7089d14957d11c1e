use std::collections::BTreeSet;

use serde::Serialize;

use super::{bd_delta, BdError, BdResult, FitMethod};
use crate::pipeline::{build_curves, CodingConfig, CostField, CurveKey, ResultRecord, SequenceClass};

/// BD result of one sequence and configuration for one cost field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceBd {
    pub sequence: String,
    pub class: SequenceClass,
    pub config: CodingConfig,
    pub reference: String,
    pub test: String,
    pub cost_field: CostField,
    pub result: BdResult,
}

/// Like [`bd_table_partial`] but fails on the first unusable group.
pub fn bd_table(
    records: &[ResultRecord],
    reference: &str,
    test: &str,
    cost_field: CostField,
    qps: &[u32],
    method: FitMethod,
) -> Result<Vec<SequenceBd>, BdError> {
    let (rows, mut errors) = bd_table_partial(records, reference, test, cost_field, qps, method);
    if errors.is_empty() {
        Ok(rows)
    } else {
        Err(errors.swap_remove(0))
    }
}

/// One BD value per (sequence, config) where both variants have complete
/// curves; every other group yields an error instead.
pub fn bd_table_partial(
    records: &[ResultRecord],
    reference: &str,
    test: &str,
    cost_field: CostField,
    qps: &[u32],
    method: FitMethod,
) -> (Vec<SequenceBd>, Vec<BdError>) {
    let relevant: Vec<ResultRecord> = records
        .iter()
        .filter(|r| r.variant == reference || r.variant == test)
        .cloned()
        .collect();
    let set = build_curves(&relevant, cost_field, qps);
    let groups: BTreeSet<(String, CodingConfig)> = relevant.iter().map(|r| (r.sequence.clone(), r.config)).collect();

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (sequence, config) in groups {
        let lookup = |variant: &str| {
            let key = CurveKey {
                sequence: sequence.clone(),
                config,
                variant: variant.to_string(),
            };
            match (set.curves.get(&key), set.excluded.get(&key)) {
                (Some(c), _) => Ok(c),
                (None, Some(e)) => Err(e.clone()),
                (None, None) => Err(BdError::IncompleteCurve {
                    sequence: sequence.clone(),
                    config: config.to_string(),
                    variant: variant.to_string(),
                    detail: "no records".into(),
                }),
            }
        };
        let outcome = lookup(reference)
            .and_then(|r| Ok((r, lookup(test)?)))
            .and_then(|(r, t)| bd_delta(r, t, method));
        match outcome {
            Ok(result) => rows.push(SequenceBd {
                class: set.classes[&sequence],
                sequence,
                config,
                reference: reference.to_string(),
                test: test.to_string(),
                cost_field,
                result,
            }),
            Err(e) => errors.push(e),
        }
    }
    (rows, errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::record::tests::{curve_records, FOOD_MARKET_HEVC};
    use crate::pipeline::DEFAULT_QPS;

    const FOOD_MARKET_VVC: [(f64, f64); 4] = [(1157.7, 39.04), (1305.5, 41.43), (1444.8, 43.40), (1629.8, 44.85)];

    #[test]
    fn identical_variants_give_zero_for_every_field() {
        let mut recs = curve_records("HM", &FOOD_MARKET_HEVC);
        recs.extend(curve_records("HM-copy", &FOOD_MARKET_HEVC));
        for field in CostField::ALL {
            let rows = bd_table(&recs, "HM", "HM-copy", field, &DEFAULT_QPS, FitMethod::default()).unwrap();
            assert_eq!(rows.len(), 1);
            assert_eq!(rows[0].result.delta_percent, 0.0);
        }
    }

    #[test]
    fn energy_field_on_sample_group() {
        let mut recs = curve_records("HM", &FOOD_MARKET_HEVC);
        recs.extend(curve_records("VTM", &FOOD_MARKET_VVC));
        let rows = bd_table(
            &recs,
            "HM",
            "VTM",
            CostField::Energy,
            &DEFAULT_QPS,
            FitMethod::default(),
        )
        .unwrap();
        assert!((rows[0].result.delta_percent - 72.361_685_177).abs() < 1e-6);
        assert_eq!(rows[0].class, SequenceClass::A1);
    }

    #[test]
    fn halved_time() {
        let mut recs = curve_records("HM", &FOOD_MARKET_HEVC);
        let mut fast = curve_records("fast", &FOOD_MARKET_HEVC);
        for r in &mut fast {
            r.decode_time_s = r.decode_time_s.map(|t| t * 0.5);
        }
        recs.extend(fast);
        let rows = bd_table(&recs, "HM", "fast", CostField::Time, &DEFAULT_QPS, FitMethod::default()).unwrap();
        assert!((rows[0].result.delta_percent + 50.0).abs() < 1e-9);
    }

    #[test]
    fn gap_is_reported() {
        let mut recs = curve_records("HM", &FOOD_MARKET_HEVC);
        let mut partial = curve_records("VTM", &FOOD_MARKET_VVC);
        partial.retain(|r| r.qp != 32);
        recs.extend(partial);
        let err = bd_table(&recs, "HM", "VTM", CostField::Rate, &DEFAULT_QPS, FitMethod::default()).unwrap_err();
        assert!(matches!(&err, BdError::IncompleteCurve { variant, .. } if variant == "VTM"));
        assert!(err.to_string().contains("QP 32"));
        let (rows, errors) = bd_table_partial(
            &recs,
            "HM",
            "missing",
            CostField::Rate,
            &DEFAULT_QPS,
            FitMethod::default(),
        );
        assert!(rows.is_empty());
        assert!(errors[0].to_string().contains("no records"));
    }
}
