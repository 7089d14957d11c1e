//! Append-only JSON-lines result store and its derived CSV.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::record::{latest_records, ResultRecord};
use super::PipelineError;

pub const CSV_COLUMNS: [&str; 14] = [
    "sequence",
    "class",
    "config",
    "qp",
    "variant",
    "bitrate_kbps",
    "psnr_y",
    "psnr_u",
    "psnr_v",
    "psnr_yuv",
    "energy_j",
    "energy_halfwidth_j",
    "samples",
    "time_s",
];

#[derive(Debug, Clone)]
pub struct ResultStore {
    path: PathBuf,
}

impl ResultStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// The derived CSV: same location, `.csv` extension.
    pub fn csv_path(&self) -> PathBuf {
        self.path.with_extension("csv")
    }

    /// Writes one record as one line and flushes it to disk.
    pub fn append(&self, record: &ResultRecord) -> Result<(), PipelineError> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| PipelineError::io(&self.path, e))?;
        f.write_all(line.as_bytes())
            .and_then(|_| f.sync_data())
            .map_err(|e| PipelineError::io(&self.path, e))
    }

    /// All records in file order; a missing store is empty.
    ///
    /// A truncated last line (crash mid-write) is skipped with a warning.
    pub fn load(&self) -> Result<Vec<ResultRecord>, PipelineError> {
        let f = match File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(PipelineError::io(&self.path, e)),
        };
        let lines: Vec<String> = BufReader::new(f)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(|e| PipelineError::io(&self.path, e))?;
        let mut out = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(r) => out.push(r),
                Err(e) if i + 1 == lines.len() => {
                    log::warn!("{}:{}: ignoring partial record ({e})", self.path.display(), i + 1)
                }
                Err(e) => {
                    return Err(PipelineError::Store {
                        path: self.path.clone(),
                        line: i + 1,
                        reason: e.to_string(),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Latest record per job key.
    pub fn latest(&self) -> Result<Vec<ResultRecord>, PipelineError> {
        let all = self.load()?;
        Ok(latest_records(&all).into_iter().cloned().collect())
    }

    /// Rewrites the derived CSV from the latest records.
    pub fn export_csv(&self) -> Result<PathBuf, PipelineError> {
        let path = self.csv_path();
        let mut buf = Vec::new();
        write_csv(&self.latest()?, &mut buf)?;
        fs::write(&path, buf).map_err(|e| PipelineError::io(&path, e))?;
        Ok(path)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per record; cells of failed records stay empty.
pub fn write_csv(records: &[ResultRecord], out: impl Write) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        let psnr = r.psnr;
        let energy = r.energy.as_ref();
        w.write_record([
            r.sequence.clone(),
            r.class.to_string(),
            r.config.to_string(),
            r.qp.to_string(),
            r.variant.clone(),
            opt(r.bitrate_kbps),
            opt(psnr.map(|p| p.psnr_y)),
            opt(psnr.map(|p| p.psnr_u)),
            opt(psnr.map(|p| p.psnr_v)),
            opt(psnr.map(|p| p.psnr_yuv)),
            opt(energy.map(|e| e.mean_energy_j)),
            opt(energy.map(|e| e.half_width_j)),
            energy.map(|e| e.sample_count.to_string()).unwrap_or_default(),
            opt(r.decode_time_s),
        ])?;
    }
    w.flush().map_err(|e| PipelineError::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::record::tests::{curve_records, FOOD_MARKET_HEVC};
    use crate::pipeline::JobStatus;

    #[test]
    fn append_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::new(dir.path().join("sub/results.jsonl"));
        assert!(store.load().unwrap().is_empty());
        let recs = curve_records("HM", &FOOD_MARKET_HEVC);
        for r in &recs {
            store.append(r).unwrap();
        }
        assert_eq!(store.load().unwrap(), recs);
        let mut failed = recs[0].clone();
        failed.status = JobStatus::Failed;
        store.append(&failed).unwrap();
        let latest = store.latest().unwrap();
        assert_eq!(latest.len(), 4);
        assert_eq!(latest[0].status, JobStatus::Failed);
    }

    #[test]
    fn truncated_tail_is_tolerated() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::new(dir.path().join("r.jsonl"));
        let recs = curve_records("HM", &FOOD_MARKET_HEVC);
        store.append(&recs[0]).unwrap();
        let mut f = OpenOptions::new().append(true).open(store.path()).unwrap();
        f.write_all(b"{\"sequence\":\"Foo").unwrap();
        assert_eq!(store.load().unwrap().len(), 1);
        f.write_all(b"\n{}\n").unwrap();
        assert!(matches!(store.load(), Err(PipelineError::Store { line: 2, .. })));
    }

    #[test]
    fn csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::new(dir.path().join("r.jsonl"));
        for r in curve_records("HM", &FOOD_MARKET_HEVC) {
            store.append(&r).unwrap();
        }
        let text = fs::read_to_string(store.export_csv().unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(
            lines.next().unwrap(),
            "FoodMarket4,A1,RA,37,HM,1311.4,38.03,38.03,38.03,38.03,655.7,0,3,6.557"
        );
    }
}
