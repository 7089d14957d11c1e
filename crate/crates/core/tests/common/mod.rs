//! Shared set-up for pipeline tests: a plan directory with raw sources,
//! mock codec scripts and a replay trace matching the planned jobs.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tempfile::TempDir;

use codec_energy::bd::FitMethod;
use codec_energy::pipeline::{
    encode_all, measure_all, plan_jobs, CodingConfig, CostField, MeasureContext, MeasureSummary, Plan, PlanOptions,
    ResultStore, DEFAULT_QPS,
};
use codec_energy::report::{aggregate, export_curves, export_scatter, render_table, sequence_metrics, TableFormat};

pub const IDLE_W: f64 = 1.5;
pub const RUNS_PER_JOB: usize = 3;

pub struct Seq {
    pub name: &'static str,
    pub class: &'static str,
    pub width: u32,
    pub height: u32,
    pub bit_depth: u8,
    pub frames: u32,
    pub frame_rate: f64,
}

/// Three sequences touching both applicability gaps: A1 has no LB, E has no RA.
pub const SEQUENCES: [Seq; 3] = [
    Seq {
        name: "Tango2",
        class: "A1",
        width: 16,
        height: 8,
        bit_depth: 10,
        frames: 2,
        frame_rate: 60.0,
    },
    Seq {
        name: "Johnny",
        class: "E",
        width: 16,
        height: 8,
        bit_depth: 8,
        frames: 2,
        frame_rate: 60.0,
    },
    Seq {
        name: "Cactus",
        class: "B",
        width: 32,
        height: 16,
        bit_depth: 8,
        frames: 3,
        frame_rate: 50.0,
    },
];

/// Ground-truth decoding energy the replay trace encodes for a job.
pub fn true_energy(variant: &str, sequence: &str, qp: u32) -> f64 {
    let base = if variant == "HM" { 5.0 } else { 8.0 };
    let seq = 1.0 + 0.5 * SEQUENCES.iter().position(|s| s.name == sequence).unwrap_or(0) as f64;
    base * seq * (1.0 + 0.08 * (37.0 - qp as f64))
}

pub fn true_time(energy: f64) -> f64 {
    energy / 20.0
}

pub struct Workspace {
    pub dir: TempDir,
    pub plan_path: PathBuf,
}

impl Workspace {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn plan(&self) -> Plan {
        Plan::load(&self.plan_path, PlanOptions::default()).expect("plan loads")
    }

    pub fn encode_log(&self) -> Vec<String> {
        fs::read_to_string(self.path().join("encode.log"))
            .unwrap_or_default()
            .lines()
            .map(str::to_string)
            .collect()
    }
}

fn write_yuv(path: &Path, samples: &[u16], bit_depth: u8) {
    let bytes: Vec<u8> = if bit_depth > 8 {
        samples.iter().flat_map(|s| s.to_le_bytes()).collect()
    } else {
        samples.iter().map(|&s| s as u8).collect()
    };
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, bytes).unwrap();
}

fn write_sources(root: &Path, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in &SEQUENCES {
        let n = (s.width * s.height * 3 / 2 * s.frames) as usize;
        let scale = 1u16 << (s.bit_depth - 8);
        let source: Vec<u16> = (0..n).map(|_| rng.random_range(32u16..224) * scale).collect();
        write_yuv(&root.join(format!("sources/{}.yuv", s.name)), &source, s.bit_depth);
        for qp in DEFAULT_QPS {
            // error amplitude grows with QP, so PSNR falls with QP
            let amp = (qp as u16 - 17) / 5 * scale;
            let recon: Vec<u16> = source
                .iter()
                .enumerate()
                .map(|(i, &v)| if i % 2 == 0 { v + amp } else { v - amp })
                .collect();
            write_yuv(
                &root.join(format!("sources/{}_recon/qp{qp}.yuv", s.name)),
                &recon,
                s.bit_depth,
            );
        }
    }
}

pub fn base_plan() -> Value {
    let sequences: Vec<Value> = SEQUENCES
        .iter()
        .map(|s| {
            json!({
                "name": s.name, "class": s.class, "source": format!("sources/{}.yuv", s.name),
                "width": s.width, "height": s.height, "bit_depth": s.bit_depth,
                "frames": s.frames, "frame_rate": s.frame_rate
            })
        })
        .collect();
    let encoder = json!([
        "sh",
        "mock_encoder.sh",
        "encode.log",
        "{input}",
        "{output}",
        "{qp}",
        "{extra_flags}"
    ]);
    let decoder = json!(["sh", "mock_decoder.sh", "{bitstream}", "{output}"]);
    json!({
        "name": "mock-matrix",
        "encode_workers": 2,
        "configs": ["AI", "LB", "RA"],
        "qps": DEFAULT_QPS,
        "sequences": sequences,
        "variants": [
            {"id": "HM", "role": "reference", "encoder": encoder, "decoder": decoder},
            {"id": "VTM", "role": "test", "encoder": encoder, "decoder": decoder, "tool_overrides": ["--ALF=0"]}
        ],
        "measurement": {
            "alpha": 0.99, "beta": 0.02, "min_iterations": RUNS_PER_JOB, "max_iterations": 20,
            "backend": {"kind": "replay-trace", "path": "trace.txt", "cycle": true},
            "idle": {"fixed_power_w": IDLE_W},
            "lock": "measure.lock",
            "lock_log": "lock.log"
        }
    })
}

/// Writes the trace for `plan`: every job gets `RUNS_PER_JOB` identical runs.
pub fn write_trace(plan: &Plan, path: &Path) {
    let mut counter: u64 = 0;
    let mut lines = String::new();
    for job in plan_jobs(plan).jobs {
        let e = true_energy(&job.variant_id, &job.sequence, job.qp);
        let t = true_time(e);
        let step = ((e + IDLE_W * t) * 1e6).round() as u64;
        for _ in 0..RUNS_PER_JOB {
            lines.push_str(&format!("{counter}\n{} {t}\n", counter + step));
            counter += step;
        }
    }
    fs::write(path, lines).unwrap();
}

/// Plan directory built from `base_plan()` after `tweak`.
pub fn workspace(tweak: impl FnOnce(&mut Value)) -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    for script in ["mock_encoder.sh", "mock_decoder.sh"] {
        fs::copy(fixtures.join(script), root.join(script)).unwrap();
    }
    write_sources(root, 7);
    let mut plan = base_plan();
    tweak(&mut plan);
    let plan_path = root.join("plan.json");
    fs::write(&plan_path, serde_json::to_string_pretty(&plan).unwrap()).unwrap();
    let ws = Workspace { dir, plan_path };
    write_trace(&ws.plan(), &ws.path().join("trace.txt"));
    ws
}

pub fn run_pipeline(ws: &Workspace) -> MeasureSummary {
    let plan = ws.plan();
    let jobs = encode_all(&plan, plan_jobs(&plan).jobs);
    let mut ctx = MeasureContext::from_plan(&plan).unwrap();
    measure_all(&plan, &jobs, &mut ctx, &ResultStore::new(&plan.store)).unwrap()
}

/// Every artifact a run produces, as bytes.
#[derive(Debug, PartialEq)]
pub struct Outputs {
    pub store: Vec<u8>,
    pub store_csv: Vec<u8>,
    pub table_markdown: String,
    pub table_csv: String,
    pub scatter: String,
    pub curves: String,
}

pub fn outputs(ws: &Workspace) -> Outputs {
    let plan = ws.plan();
    let store = ResultStore::new(&plan.store);
    let records = store.load().unwrap();
    let (metrics, errors) = sequence_metrics(&records, "HM", "VTM", &plan.qps, FitMethod::default());
    assert!(errors.is_empty(), "{errors:?}");
    let reports = aggregate(&metrics, "HM", "VTM", true).unwrap();
    let ra: Vec<_> = metrics
        .iter()
        .filter(|m| m.config == CodingConfig::RA)
        .cloned()
        .collect();
    let (scatter, notices) = export_scatter(&ra, CostField::Rate, CostField::Energy);
    assert!(notices.is_empty(), "{notices:?}");
    Outputs {
        store: fs::read(&plan.store).unwrap(),
        store_csv: fs::read(store.csv_path()).unwrap(),
        table_markdown: render_table(&reports, TableFormat::Markdown),
        table_csv: render_table(&reports, TableFormat::Csv),
        scatter,
        curves: export_curves(
            &records,
            "Cactus",
            CodingConfig::RA,
            CostField::Energy,
            &plan.qps,
            &["HM", "VTM"],
        )
        .unwrap(),
    }
}
