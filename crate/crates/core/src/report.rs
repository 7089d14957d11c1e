//! Class-level BD tables, per-sequence scatter exports and curve exports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::bd::{bd_table_partial, BdError, FitMethod};
use crate::pipeline::{build_curves, latest_records, CodingConfig, CostField, ResultRecord, SequenceClass};

pub const SIGN_CONVENTION: &str =
    "Positive values: the test variant needs more bit rate, decoding time or decoding energy than the reference at equal YUV-PSNR.";
pub const ABLATION_CAPTION: &str =
    "Test variant disables coding tools: a positive value means enabling the tool lowers that cost.";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no BD results to report")]
    EmptyReport,
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Bd(#[from] BdError),
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// BDR, BDDT and BDDE of one sequence under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceMetrics {
    pub sequence: String,
    pub class: SequenceClass,
    pub config: CodingConfig,
    pub variant: String,
    pub bdr: Option<f64>,
    pub bddt: Option<f64>,
    pub bdde: Option<f64>,
}

impl SequenceMetrics {
    pub fn get(&self, field: CostField) -> Option<f64> {
        match field {
            CostField::Rate => self.bdr,
            CostField::Time => self.bddt,
            CostField::Energy => self.bdde,
        }
    }

    fn slot(&mut self, field: CostField) -> &mut Option<f64> {
        match field {
            CostField::Rate => &mut self.bdr,
            CostField::Time => &mut self.bddt,
            CostField::Energy => &mut self.bdde,
        }
    }
}

/// Per-sequence BD values of `test` against `reference` for all three cost fields.
///
/// Groups that cannot be evaluated are returned as errors alongside.
pub fn sequence_metrics(
    records: &[ResultRecord],
    reference: &str,
    test: &str,
    qps: &[u32],
    method: FitMethod,
) -> (Vec<SequenceMetrics>, Vec<BdError>) {
    let mut merged: BTreeMap<(String, CodingConfig), SequenceMetrics> = BTreeMap::new();
    let mut errors = Vec::new();
    for field in CostField::ALL {
        let (rows, errs) = bd_table_partial(records, reference, test, field, qps, method);
        for e in errs {
            if !errors.contains(&e) {
                errors.push(e);
            }
        }
        for row in rows {
            let entry = merged
                .entry((row.sequence.clone(), row.config))
                .or_insert_with(|| SequenceMetrics {
                    sequence: row.sequence.clone(),
                    class: row.class,
                    config: row.config,
                    variant: test.to_string(),
                    bdr: None,
                    bddt: None,
                    bdde: None,
                });
            *entry.slot(field) = Some(row.result.delta_percent);
        }
    }
    (merged.into_values().collect(), errors)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub class: SequenceClass,
    pub bdr: Option<f64>,
    pub bddt: Option<f64>,
    pub bdde: Option<f64>,
    pub sequence_count: usize,
}

/// Mean over all sequences, irrespective of class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanRow {
    pub bdr: Option<f64>,
    pub bddt: Option<f64>,
    pub bdde: Option<f64>,
    pub sequence_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub reference: String,
    pub test: String,
    pub config: CodingConfig,
    pub rows: Vec<ClassRow>,
    pub overall: MeanRow,
    pub sign_convention: String,
    pub caption: Option<String>,
}

fn mean_of(metrics: &[&SequenceMetrics], field: CostField) -> Option<f64> {
    let vals: Vec<f64> = metrics.iter().filter_map(|m| m.get(field)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// One report per configuration present, in AI, LB, RA order.
///
/// Class rows average that class's sequences; the overall row averages all
/// sequences directly, so large classes weigh more.
pub fn aggregate(
    metrics: &[SequenceMetrics],
    reference: &str,
    test: &str,
    ablation: bool,
) -> Result<Vec<ComparisonReport>, ReportError> {
    if metrics.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    let mut by_config: BTreeMap<CodingConfig, Vec<&SequenceMetrics>> = BTreeMap::new();
    for m in metrics {
        by_config.entry(m.config).or_default().push(m);
    }
    let mut reports = Vec::new();
    for (config, ms) in by_config {
        let mut by_class: BTreeMap<SequenceClass, Vec<&SequenceMetrics>> = BTreeMap::new();
        for &m in &ms {
            by_class.entry(m.class).or_default().push(m);
        }
        let rows = by_class
            .into_iter()
            .map(|(class, cms)| ClassRow {
                class,
                bdr: mean_of(&cms, CostField::Rate),
                bddt: mean_of(&cms, CostField::Time),
                bdde: mean_of(&cms, CostField::Energy),
                sequence_count: cms.len(),
            })
            .collect();
        reports.push(ComparisonReport {
            reference: reference.to_string(),
            test: test.to_string(),
            config,
            rows,
            overall: MeanRow {
                bdr: mean_of(&ms, CostField::Rate),
                bddt: mean_of(&ms, CostField::Time),
                bdde: mean_of(&ms, CostField::Energy),
                sequence_count: ms.len(),
            },
            sign_convention: SIGN_CONVENTION.to_string(),
            caption: ablation.then(|| ABLATION_CAPTION.to_string()),
        });
    }
    Ok(reports)
}

/// Two decimals, halves rounded away from zero on the shortest decimal
/// representation, so 82.555 gives "82.56".
pub fn format_2dp(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let repr = format!("{}", x.abs());
    let (int, frac) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int.bytes().map(|b| b - b'0').collect();
    let frac: Vec<u8> = frac.bytes().map(|b| b - b'0').collect();
    digits.push(frac.first().copied().unwrap_or(0));
    digits.push(frac.get(1).copied().unwrap_or(0));
    if frac.get(2).copied().unwrap_or(0) >= 5 {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let n = digits.len();
    let int_part: String = digits[..n - 2].iter().map(|d| (d + b'0') as char).collect();
    let int_part = int_part.trim_start_matches('0');
    let int_part = if int_part.is_empty() { "0" } else { int_part };
    let zero = digits.iter().all(|&d| d == 0);
    format!(
        "{}{int_part}.{}{}",
        if x < 0.0 && !zero { "-" } else { "" },
        digits[n - 2],
        digits[n - 1]
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            other => Err(format!("unknown table format {other:?} (expected markdown or csv)")),
        }
    }
}

const COLUMN_ORDER: [CostField; 3] = [CostField::Rate, CostField::Time, CostField::Energy];

/// Classes as rows, BDR / BDDT / BDDE for each report's configuration as
/// columns, and a final mean row. Absent cells are "-" in markdown and
/// empty in CSV.
pub fn render_table(reports: &[ComparisonReport], format: TableFormat) -> String {
    let mut header = vec!["Class".to_string()];
    for r in reports {
        for f in COLUMN_ORDER {
            header.push(format!("{} {}", r.config, f.metric_name()));
        }
    }
    let mut classes: Vec<SequenceClass> = reports.iter().flat_map(|r| r.rows.iter().map(|c| c.class)).collect();
    classes.sort();
    classes.dedup();

    let cell = |v: Option<f64>| match (v, format) {
        (Some(x), _) => format_2dp(x),
        (None, TableFormat::Markdown) => "-".to_string(),
        (None, TableFormat::Csv) => String::new(),
    };
    let pick = |bdr, bddt, bdde, f: CostField| match f {
        CostField::Rate => bdr,
        CostField::Time => bddt,
        CostField::Energy => bdde,
    };
    let mut body: Vec<Vec<String>> = Vec::new();
    for class in classes {
        let mut row = vec![class.to_string()];
        for r in reports {
            let c = r.rows.iter().find(|c| c.class == class);
            for f in COLUMN_ORDER {
                row.push(cell(c.and_then(|c| pick(c.bdr, c.bddt, c.bdde, f))));
            }
        }
        body.push(row);
    }
    let mut mean = vec!["Mean".to_string()];
    for r in reports {
        for f in COLUMN_ORDER {
            mean.push(cell(pick(r.overall.bdr, r.overall.bddt, r.overall.bdde, f)));
        }
    }
    body.push(mean);

    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header).expect("in-memory csv");
            for row in &body {
                w.write_record(row).expect("in-memory csv");
            }
            String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
        }
        TableFormat::Markdown => {
            let mut out = String::new();
            let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
            out.push_str(&line(&header));
            let rule: Vec<String> = header
                .iter()
                .enumerate()
                .map(|(i, _)| if i == 0 { "---".into() } else { "---:".into() })
                .collect();
            out.push_str(&line(&rule));
            for row in &body {
                out.push_str(&line(row));
            }
            if let Some(r) = reports.first() {
                let _ = write!(
                    out,
                    "\nReference: {}. Test: {}. {}\n",
                    r.reference, r.test, r.sign_convention
                );
                if let Some(c) = &r.caption {
                    let _ = writeln!(out, "{c}");
                }
            }
            out
        }
    }
}

/// Per-sequence `x` and `y` metrics as CSV; sequences missing either are
/// skipped and named in the returned notices.
pub fn export_scatter(metrics: &[SequenceMetrics], x: CostField, y: CostField) -> (String, Vec<String>) {
    let mut w = csv::Writer::from_writer(Vec::new());
    let col = |f: CostField| format!("{}_percent", f.metric_name().to_ascii_lowercase());
    w.write_record(["sequence".into(), "class".into(), "variant".into(), col(x), col(y)])
        .expect("in-memory csv");
    let mut notices = Vec::new();
    for m in metrics {
        match (m.get(x), m.get(y)) {
            (Some(xv), Some(yv)) => w
                .write_record([
                    m.sequence.clone(),
                    m.class.to_string(),
                    m.variant.clone(),
                    xv.to_string(),
                    yv.to_string(),
                ])
                .expect("in-memory csv"),
            _ => notices.push(format!(
                "skipping {} ({}): {} or {} missing",
                m.sequence,
                m.config,
                x.metric_name(),
                y.metric_name()
            )),
        }
    }
    (
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8"),
        notices,
    )
}

/// Rows `variant, cost, psnr_yuv, qp` for every variant measured on a
/// sequence, ready to plot the cost curves.
///
/// `variants` fixes the row order; other variants follow alphabetically.
pub fn export_curves(
    records: &[ResultRecord],
    sequence: &str,
    config: CodingConfig,
    field: CostField,
    qps: &[u32],
    variants: &[&str],
) -> Result<String, ReportError> {
    let selected: Vec<ResultRecord> = latest_records(records)
        .into_iter()
        .filter(|r| r.sequence == sequence && r.config == config)
        .cloned()
        .collect();
    if selected.is_empty() {
        return Err(ReportError::NotFound(format!(
            "no records for {sequence} under {config}"
        )));
    }
    let set = build_curves(&selected, field, qps);
    if let Some(e) = set.excluded.into_values().next() {
        return Err(e.into());
    }
    let rank = |v: &str| variants.iter().position(|x| *x == v).unwrap_or(variants.len());
    let mut keys: Vec<_> = set.curves.keys().collect();
    keys.sort_by(|a, b| (rank(&a.variant), &a.variant).cmp(&(rank(&b.variant), &b.variant)));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "cost", "psnr_yuv", "qp"])
        .expect("in-memory csv");
    for key in keys {
        let mut rows: Vec<&ResultRecord> = selected
            .iter()
            .filter(|r| r.variant == key.variant && qps.contains(&r.qp))
            .collect();
        rows.sort_by_key(|r| std::cmp::Reverse(r.qp));
        for r in rows {
            let (Some(cost), Some(p)) = (r.cost(field), r.psnr) else {
                continue;
            };
            w.write_record([
                r.variant.clone(),
                cost.to_string(),
                p.psnr_yuv.to_string(),
                r.qp.to_string(),
            ])?;
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8"))
}
