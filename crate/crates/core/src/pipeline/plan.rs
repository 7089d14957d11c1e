//! Experiment plan files: parsing and whole-file validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::record::{CodingConfig, SequenceClass, DEFAULT_QPS};
use super::template::{
    CommandTemplate, DECODER_PLACEHOLDERS, DECODER_REQUIRED, ENCODER_PLACEHOLDERS, ENCODER_REQUIRED,
};
use super::PipelineError;
use crate::meter::{BackendConfig, StoppingRule};
use crate::quality::{VideoSpec, DEFAULT_PSNR_CEILING};

pub const DEFAULT_IDLE_CALIBRATION_S: f64 = 10.0;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    workdir: Option<PathBuf>,
    #[serde(default)]
    store: Option<PathBuf>,
    #[serde(default)]
    encode_workers: Option<usize>,
    configs: Vec<String>,
    #[serde(default)]
    qps: Option<Vec<i64>>,
    sequences: Vec<RawSequence>,
    variants: Vec<RawVariant>,
    #[serde(default)]
    measurement: RawMeasurement,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSequence {
    name: String,
    class: String,
    source: PathBuf,
    width: u32,
    height: u32,
    #[serde(default = "default_bit_depth")]
    bit_depth: u8,
    frames: u32,
    frame_rate: f64,
}

fn default_bit_depth() -> u8 {
    8
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVariant {
    id: String,
    #[serde(default)]
    role: Option<String>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    encoder: Option<Vec<String>>,
    #[serde(default)]
    bitstreams_from: Option<String>,
    decoder: Vec<String>,
    #[serde(default)]
    configs: Option<Vec<String>>,
    #[serde(default)]
    config_files: BTreeMap<String, PathBuf>,
    #[serde(default)]
    tool_overrides: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasurement {
    alpha: Option<f64>,
    beta: Option<f64>,
    min_iterations: Option<usize>,
    max_iterations: Option<usize>,
    #[serde(default)]
    backend: BackendConfig,
    #[serde(default)]
    idle: RawIdle,
    psnr_ceiling: Option<f64>,
    lock: Option<PathBuf>,
    lock_log: Option<PathBuf>,
    #[serde(default)]
    keep_decoded: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIdle {
    fixed_power_w: Option<f64>,
    calibrate_seconds: Option<f64>,
    baseline_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantRole {
    Reference,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEntry {
    pub name: String,
    pub class: SequenceClass,
    /// Source path as written in the plan; used for content hashing.
    pub declared_source: PathBuf,
    /// Source path resolved against the plan directory.
    pub source_path: PathBuf,
    pub spec: VideoSpec,
    pub frame_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecVariant {
    pub variant_id: String,
    pub role: VariantRole,
    pub description: Option<String>,
    pub encoder: CommandTemplate,
    pub decoder: CommandTemplate,
    /// Variant whose bitstreams this one decodes instead of encoding its own.
    pub bitstreams_from: Option<String>,
    /// Restricts the plan's configurations for this variant.
    pub configs: Option<Vec<CodingConfig>>,
    pub config_files: BTreeMap<CodingConfig, PathBuf>,
    pub tool_overrides: Vec<String>,
}

impl CodecVariant {
    pub fn runs_config(&self, config: CodingConfig) -> bool {
        self.configs.as_ref().is_none_or(|c| c.contains(&config))
    }

    /// The variant that produces this variant's bitstreams.
    pub fn encoding_variant(&self) -> &str {
        self.bitstreams_from.as_deref().unwrap_or(&self.variant_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum IdleSource {
    Fixed { power_w: f64 },
    Calibrate { seconds: f64 },
    BaselineFile(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSettings {
    pub rule: StoppingRule,
    pub backend: BackendConfig,
    pub idle: IdleSource,
    pub psnr_ceiling: f64,
    pub lock_path: Option<PathBuf>,
    pub lock_log: Option<PathBuf>,
    pub keep_decoded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub name: String,
    pub plan_dir: PathBuf,
    pub workdir: PathBuf,
    pub store: PathBuf,
    pub encode_workers: usize,
    pub configs: Vec<CodingConfig>,
    pub qps: Vec<u32>,
    pub sequences: Vec<SequenceEntry>,
    pub variants: Vec<CodecVariant>,
    pub measurement: MeasurementSettings,
}

#[derive(Debug, Clone, Copy)]
pub struct PlanOptions {
    /// Require every sequence source file to exist.
    pub check_sources: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self { check_sources: true }
    }
}

impl Plan {
    pub fn load(path: impl AsRef<Path>, opts: PlanOptions) -> Result<Plan, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let dir = if dir.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            dir
        };
        Self::from_json(&text, &dir, opts).map_err(|e| match e {
            PipelineError::InvalidPlan { problems, .. } => PipelineError::InvalidPlan {
                path: path.to_path_buf(),
                problems,
            },
            other => other,
        })
    }

    /// Parses plan JSON with relative paths resolved against `plan_dir`.
    pub fn from_json(text: &str, plan_dir: &Path, opts: PlanOptions) -> Result<Plan, PipelineError> {
        let invalid = |problems: Vec<String>| PipelineError::InvalidPlan {
            path: PathBuf::from("<plan>"),
            problems,
        };
        let raw: RawPlan = serde_json::from_str(text).map_err(|e| invalid(vec![e.to_string()]))?;
        let mut problems = Vec::new();
        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                plan_dir.join(p)
            }
        };

        let mut configs = Vec::new();
        for c in &raw.configs {
            match c.parse::<CodingConfig>() {
                Ok(c) if configs.contains(&c) => problems.push(format!("configuration {c} listed twice")),
                Ok(c) => configs.push(c),
                Err(e) => problems.push(e),
            }
        }
        if raw.configs.is_empty() {
            problems.push("no configurations".into());
        }

        let qps: Vec<u32> = match &raw.qps {
            None => DEFAULT_QPS.to_vec(),
            Some(list) => {
                let mut out = Vec::new();
                for &q in list {
                    if !(0..=63).contains(&q) {
                        problems.push(format!("QP {q} outside 0..=63"));
                    } else if out.contains(&(q as u32)) {
                        problems.push(format!("QP {q} listed twice"));
                    } else {
                        out.push(q as u32);
                    }
                }
                if list.is_empty() {
                    problems.push("no QPs".into());
                }
                out
            }
        };

        let mut sequences = Vec::new();
        let mut seen = BTreeSet::new();
        for s in &raw.sequences {
            let ctx = format!("sequence {:?}", s.name);
            if !seen.insert(s.name.clone()) {
                problems.push(format!("duplicate {ctx}"));
            }
            let class = s
                .class
                .parse::<SequenceClass>()
                .map_err(|e| problems.push(format!("{ctx}: {e}")));
            let spec = VideoSpec {
                width: s.width,
                height: s.height,
                bit_depth: s.bit_depth,
                frame_count: s.frames,
            };
            if let Err(e) = spec.validate() {
                problems.push(format!("{ctx}: {e}"));
            }
            if !(s.frame_rate > 0.0 && s.frame_rate.is_finite()) {
                problems.push(format!("{ctx}: frame_rate {} must be positive", s.frame_rate));
            }
            let source_path = resolve(&s.source);
            if opts.check_sources && !source_path.is_file() {
                problems.push(format!("{ctx}: source file {} not found", source_path.display()));
            }
            if let Ok(class) = class {
                sequences.push(SequenceEntry {
                    name: s.name.clone(),
                    class,
                    declared_source: s.source.clone(),
                    source_path,
                    spec,
                    frame_rate: s.frame_rate,
                });
            }
        }
        if raw.sequences.is_empty() {
            problems.push("no sequences".into());
        }

        let mut variants: Vec<CodecVariant> = Vec::new();
        let ids: BTreeSet<&str> = raw.variants.iter().map(|v| v.id.as_str()).collect();
        let mut seen = BTreeSet::new();
        for v in &raw.variants {
            let ctx = format!("variant {:?}", v.id);
            if !seen.insert(v.id.as_str()) {
                problems.push(format!("duplicate {ctx}"));
            }
            if v.id.is_empty() || v.id.contains(['/', '\\']) || v.id.starts_with('.') {
                problems.push(format!("{ctx}: id must be a plain file-name component"));
            }
            let role = match v.role.as_deref().unwrap_or("test") {
                "reference" => VariantRole::Reference,
                "test" => VariantRole::Test,
                other => {
                    problems.push(format!("{ctx}: role {other:?} is neither reference nor test"));
                    VariantRole::Test
                }
            };
            let encoder = match (&v.encoder, &v.bitstreams_from) {
                (Some(tokens), None) => {
                    let t = CommandTemplate::new(tokens.clone());
                    for p in t.check(ENCODER_PLACEHOLDERS, ENCODER_REQUIRED) {
                        problems.push(format!("{ctx} encoder: {p}"));
                    }
                    t
                }
                (None, Some(src)) => {
                    if !ids.contains(src.as_str()) || src == &v.id {
                        problems.push(format!("{ctx}: bitstreams_from names unknown variant {src:?}"));
                    }
                    if !v.tool_overrides.is_empty() || !v.config_files.is_empty() {
                        problems.push(format!(
                            "{ctx}: tool_overrides and config_files belong to the encoding variant {src:?}"
                        ));
                    }
                    CommandTemplate::new(vec![])
                }
                (Some(_), Some(_)) => {
                    problems.push(format!("{ctx}: give either encoder or bitstreams_from, not both"));
                    CommandTemplate::new(vec![])
                }
                (None, None) => {
                    problems.push(format!("{ctx}: needs an encoder command or bitstreams_from"));
                    CommandTemplate::new(vec![])
                }
            };
            let decoder = CommandTemplate::new(v.decoder.clone());
            for p in decoder.check(DECODER_PLACEHOLDERS, DECODER_REQUIRED) {
                problems.push(format!("{ctx} decoder: {p}"));
            }
            let variant_configs = v.configs.as_ref().map(|list| {
                list.iter()
                    .filter_map(|c| {
                        c.parse::<CodingConfig>()
                            .map_err(|e| problems.push(format!("{ctx}: {e}")))
                            .ok()
                    })
                    .collect::<Vec<_>>()
            });
            let mut config_files = BTreeMap::new();
            for (name, path) in &v.config_files {
                match name.parse::<CodingConfig>() {
                    Ok(c) => {
                        let p = resolve(path);
                        if opts.check_sources && !p.is_file() {
                            problems.push(format!("{ctx}: config file {} not found", p.display()));
                        }
                        config_files.insert(c, p);
                    }
                    Err(e) => problems.push(format!("{ctx}: {e}")),
                }
            }
            if v.tool_overrides.iter().any(|f| f.is_empty()) {
                problems.push(format!("{ctx}: empty tool override"));
            }
            variants.push(CodecVariant {
                variant_id: v.id.clone(),
                role,
                description: v.description.clone(),
                encoder,
                decoder,
                bitstreams_from: v.bitstreams_from.clone(),
                configs: variant_configs,
                config_files,
                tool_overrides: v.tool_overrides.clone(),
            });
        }
        // Decoder-only variants inherit the encode side of their source.
        let snapshot = variants.clone();
        for v in &mut variants {
            if let Some(src) = &v.bitstreams_from {
                if let Some(s) = snapshot.iter().find(|s| &s.variant_id == src) {
                    if s.bitstreams_from.is_some() {
                        problems.push(format!(
                            "variant {:?}: bitstreams_from {src:?} does not encode its own bitstreams",
                            v.variant_id
                        ));
                    }
                    v.encoder = s.encoder.clone();
                    v.config_files = s.config_files.clone();
                    v.tool_overrides = s.tool_overrides.clone();
                }
            }
        }
        let references = variants.iter().filter(|v| v.role == VariantRole::Reference).count();
        if references != 1 {
            problems.push(format!(
                "exactly one variant must have role \"reference\", found {references}"
            ));
        }

        let m = &raw.measurement;
        let defaults = StoppingRule::default();
        let rule = StoppingRule {
            alpha: m.alpha.unwrap_or(defaults.alpha),
            beta: m.beta.unwrap_or(defaults.beta),
            min_iterations: m.min_iterations.unwrap_or(defaults.min_iterations),
            max_iterations: m.max_iterations.unwrap_or(defaults.max_iterations),
        };
        if let Err(e) = rule.validate() {
            problems.push(format!("measurement: {e}"));
        }
        let idle = match (m.idle.fixed_power_w, m.idle.calibrate_seconds, &m.idle.baseline_file) {
            (None, None, None) => IdleSource::Calibrate {
                seconds: DEFAULT_IDLE_CALIBRATION_S,
            },
            (Some(w), None, None) if w >= 0.0 && w.is_finite() => IdleSource::Fixed { power_w: w },
            (None, Some(s), None) if s > 0.0 && s.is_finite() => IdleSource::Calibrate { seconds: s },
            (None, None, Some(p)) => IdleSource::BaselineFile(resolve(p)),
            _ => {
                problems.push(
                    "measurement.idle: give one of fixed_power_w >= 0, calibrate_seconds > 0, baseline_file".into(),
                );
                IdleSource::Fixed { power_w: 0.0 }
            }
        };
        let psnr_ceiling = m.psnr_ceiling.unwrap_or(DEFAULT_PSNR_CEILING);
        if !(psnr_ceiling > 0.0) {
            problems.push(format!("measurement.psnr_ceiling {psnr_ceiling} must be positive"));
        }
        let encode_workers = raw.encode_workers.unwrap_or(1);
        if encode_workers == 0 {
            problems.push("encode_workers must be at least 1".into());
        }

        if !problems.is_empty() {
            return Err(invalid(problems));
        }
        let workdir = resolve(raw.workdir.as_deref().unwrap_or(Path::new("work")));
        let store = match &raw.store {
            Some(s) => resolve(s),
            None => workdir.join("results.jsonl"),
        };
        Ok(Plan {
            name: raw.name.unwrap_or_else(|| "plan".into()),
            plan_dir: plan_dir.to_path_buf(),
            workdir,
            store,
            encode_workers,
            configs,
            qps,
            sequences,
            variants,
            measurement: MeasurementSettings {
                rule,
                backend: m.backend.clone(),
                idle,
                psnr_ceiling,
                lock_path: m.lock.as_deref().map(resolve),
                lock_log: m.lock_log.as_deref().map(resolve),
                keep_decoded: m.keep_decoded,
            },
        })
    }

    pub fn reference(&self) -> &CodecVariant {
        self.variants
            .iter()
            .find(|v| v.role == VariantRole::Reference)
            .expect("validated plan has a reference variant")
    }

    pub fn variant(&self, id: &str) -> Option<&CodecVariant> {
        self.variants.iter().find(|v| v.variant_id == id)
    }

    pub fn sequence(&self, name: &str) -> Option<&SequenceEntry> {
        self.sequences.iter().find(|s| s.name == name)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn sample_plan() -> serde_json::Value {
        json!({
            "configs": ["AI", "LB", "RA"],
            "sequences": [
                {"name": "Tango2", "class": "A1", "source": "Tango2.yuv", "width": 64, "height": 32, "frames": 2, "frame_rate": 60},
                {"name": "Johnny", "class": "E", "source": "Johnny.yuv", "width": 64, "height": 32, "bit_depth": 10, "frames": 2, "frame_rate": 60}
            ],
            "variants": [
                {"id": "HM", "role": "reference",
                 "encoder": ["enc", "-c", "{config}", "-i", "{input}", "-q", "{qp}", "-b", "{output}", "{extra_flags}"],
                 "decoder": ["dec", "-b", "{bitstream}", "-o", "{output}"]},
                {"id": "VTM", "encoder": ["enc2", "{input}", "{output}", "{qp}"], "decoder": ["dec2", "{bitstream}", "{output}"],
                 "tool_overrides": ["--ALF=0"]}
            ],
            "measurement": {"idle": {"fixed_power_w": 1.5}, "backend": {"kind": "synthetic-sampler", "energy_j": 5.0}}
        })
    }

    fn parse(v: &serde_json::Value) -> Result<Plan, PipelineError> {
        Plan::from_json(
            &v.to_string(),
            Path::new("/plans"),
            PlanOptions { check_sources: false },
        )
    }

    fn problems(v: &serde_json::Value) -> Vec<String> {
        match parse(v) {
            Err(PipelineError::InvalidPlan { problems, .. }) => problems,
            other => panic!("expected invalid plan, got {other:?}"),
        }
    }

    #[test]
    fn parses_with_defaults() {
        let plan = parse(&sample_plan()).unwrap();
        assert_eq!(plan.qps, DEFAULT_QPS);
        assert_eq!(plan.workdir, Path::new("/plans/work"));
        assert_eq!(plan.store, Path::new("/plans/work/results.jsonl"));
        assert_eq!(plan.reference().variant_id, "HM");
        assert_eq!(plan.measurement.rule, StoppingRule::default());
        assert_eq!(plan.measurement.idle, IdleSource::Fixed { power_w: 1.5 });
        assert_eq!(plan.sequences[0].source_path, Path::new("/plans/Tango2.yuv"));
        assert_eq!(plan.sequences[1].spec.bit_depth, 10);
    }

    #[test]
    fn lists_all_problems() {
        let mut v = sample_plan();
        v["sequences"][0]["class"] = json!("G");
        v["variants"][1]["id"] = json!("HM");
        v["variants"][1]["decoder"] = json!(["dec2", "{bitstream}", "{outptu}"]);
        v["measurement"]["alpha"] = json!(1.5);
        let p = problems(&v);
        assert!(p.iter().any(|s| s.contains("unknown sequence class \"G\"")), "{p:?}");
        assert!(p.iter().any(|s| s.contains("duplicate variant \"HM\"")), "{p:?}");
        assert!(p.iter().any(|s| s.contains("{outptu}")), "{p:?}");
        assert!(p.iter().any(|s| s.contains("measurement")), "{p:?}");
        assert!(p.len() >= 5, "{p:?}");
    }

    #[test]
    fn missing_sources_are_reported() {
        let err = Plan::from_json(
            &sample_plan().to_string(),
            Path::new("/nonexistent"),
            PlanOptions::default(),
        )
        .unwrap_err();
        let PipelineError::InvalidPlan { problems, .. } = err else {
            panic!()
        };
        assert_eq!(problems.iter().filter(|p| p.contains("not found")).count(), 2);
    }

    #[test]
    fn reference_must_be_unique() {
        let mut v = sample_plan();
        v["variants"][1]["role"] = json!("reference");
        assert!(problems(&v).iter().any(|p| p.contains("found 2")));
        v["variants"][0]["role"] = json!("test");
        v["variants"][1]["role"] = json!("test");
        assert!(problems(&v).iter().any(|p| p.contains("found 0")));
    }

    #[test]
    fn decoder_only_variant_inherits_encoder() {
        let mut v = sample_plan();
        v["variants"].as_array_mut().unwrap().push(json!({
            "id": "VTM-noSIMD", "bitstreams_from": "VTM", "decoder": ["dec2-scalar", "{bitstream}", "{output}"]
        }));
        let plan = parse(&v).unwrap();
        let simd = plan.variant("VTM-noSIMD").unwrap();
        assert_eq!(simd.encoder, plan.variant("VTM").unwrap().encoder);
        assert_eq!(simd.tool_overrides, ["--ALF=0"]);
        assert_eq!(simd.encoding_variant(), "VTM");
        v["variants"][2]["bitstreams_from"] = json!("nope");
        assert!(problems(&v).iter().any(|p| p.contains("unknown variant")));
    }

    #[test]
    fn idle_source_is_exclusive() {
        let mut v = sample_plan();
        v["measurement"]["idle"] = json!({"fixed_power_w": 1.0, "calibrate_seconds": 5});
        assert!(problems(&v).iter().any(|p| p.contains("measurement.idle")));
        v["measurement"]["idle"] = json!({});
        assert_eq!(
            parse(&v).unwrap().measurement.idle,
            IdleSource::Calibrate {
                seconds: DEFAULT_IDLE_CALIBRATION_S
            }
        );
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = sample_plan();
        v["variants"][0]["tool_override"] = json!(["--ALF=0"]);
        assert!(problems(&v)[0].contains("unknown field"));
    }
}
