use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use super::plan::{CodecVariant, Plan, SequenceEntry};
use super::record::{CodingConfig, JobStatus, SequenceClass};

/// One encode plus measured decode of a sequence at a QP.
#[derive(Debug, Clone, PartialEq)]
pub struct JobRecord {
    pub sequence: String,
    pub class: SequenceClass,
    pub config: CodingConfig,
    pub qp: u32,
    pub variant_id: String,
    pub bitstream_path: PathBuf,
    pub status: JobStatus,
    /// Covers everything that determines the bitstream.
    pub encode_hash: String,
    /// `encode_hash` plus the decoder command.
    pub content_hash: String,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct JobPlan {
    pub jobs: Vec<JobRecord>,
    /// Skipped combinations, one line each.
    pub notices: Vec<String>,
}

fn file_stem(sequence: &str, config: CodingConfig, qp: u32) -> String {
    format!("{sequence}_{config}_qp{qp}")
}

/// Expands the plan in sequence, configuration, variant, QP order.
pub fn plan_jobs(plan: &Plan) -> JobPlan {
    let mut out = JobPlan::default();
    for seq in &plan.sequences {
        for &config in &plan.configs {
            if !seq.class.applies_to(config) {
                out.notices.push(format!(
                    "skipping {} (class {}) under {config}: not part of the test conditions",
                    seq.name, seq.class
                ));
                continue;
            }
            for variant in &plan.variants {
                if !variant.runs_config(config) {
                    continue;
                }
                for &qp in &plan.qps {
                    let encode_hash = encode_hash(seq, variant, config, qp);
                    let mut h = Sha256::new();
                    h.update(encode_hash.as_bytes());
                    for t in variant.decoder.tokens() {
                        h.update(b"\0dec\0");
                        h.update(t.as_bytes());
                    }
                    out.jobs.push(JobRecord {
                        sequence: seq.name.clone(),
                        class: seq.class,
                        config,
                        qp,
                        variant_id: variant.variant_id.clone(),
                        bitstream_path: plan
                            .workdir
                            .join("bitstreams")
                            .join(variant.encoding_variant())
                            .join(format!("{}.bin", file_stem(&seq.name, config, qp))),
                        status: JobStatus::Pending,
                        encode_hash,
                        content_hash: hex::encode(h.finalize()),
                        message: None,
                    });
                }
            }
        }
    }
    out
}

/// Hash over the encoder template, overrides, configuration, QP and the
/// input's identity (declared path, size, geometry, frame rate).
fn encode_hash(seq: &SequenceEntry, variant: &CodecVariant, config: CodingConfig, qp: u32) -> String {
    let mut h = Sha256::new();
    let mut field = |tag: &str, value: &[u8]| {
        h.update(tag.as_bytes());
        h.update(b"\0");
        h.update((value.len() as u64).to_le_bytes());
        h.update(value);
    };
    for t in variant.encoder.tokens() {
        field("enc", t.as_bytes());
    }
    for f in &variant.tool_overrides {
        field("flag", f.as_bytes());
    }
    field("config", config.to_string().as_bytes());
    if let Some(cfg) = variant.config_files.get(&config) {
        field(
            "config-file",
            cfg.file_name().map(|n| n.as_encoded_bytes()).unwrap_or_default(),
        );
        field("config-body", &fs::read(cfg).unwrap_or_default());
    }
    field("qp", qp.to_string().as_bytes());
    field("sequence", seq.name.as_bytes());
    field("source", seq.declared_source.as_os_str().as_encoded_bytes());
    let size = fs::metadata(&seq.source_path).map(|m| m.len()).unwrap_or(0);
    field("source-size", &size.to_le_bytes());
    let s = &seq.spec;
    field(
        "spec",
        format!(
            "{}x{}@{}b/{}f/{}fps",
            s.width, s.height, s.bit_depth, s.frame_count, seq.frame_rate
        )
        .as_bytes(),
    );
    hex::encode(h.finalize())
}

/// Encoder argument vector for `job`.
pub fn encoder_argv(plan: &Plan, job: &JobRecord) -> Option<Vec<OsString>> {
    let seq = plan.sequence(&job.sequence)?;
    let variant = plan.variant(&job.variant_id)?;
    let config = match variant.config_files.get(&job.config) {
        Some(p) => p.display().to_string(),
        None => job.config.to_string(),
    };
    let values = BTreeMap::from([
        ("input", seq.source_path.display().to_string()),
        ("output", job.bitstream_path.display().to_string()),
        ("qp", job.qp.to_string()),
        ("config", config),
        ("width", seq.spec.width.to_string()),
        ("height", seq.spec.height.to_string()),
        ("frames", seq.spec.frame_count.to_string()),
        ("framerate", seq.frame_rate.to_string()),
        ("bit_depth", seq.spec.bit_depth.to_string()),
    ]);
    let mut argv = variant.encoder.render(&values, &variant.tool_overrides);
    if !variant.encoder.uses("extra_flags") {
        argv.extend(variant.tool_overrides.iter().map(OsString::from));
    }
    Some(argv)
}

/// Where the decoder of `job` writes its reconstruction.
pub fn decoded_path(plan: &Plan, job: &JobRecord) -> PathBuf {
    plan.workdir
        .join("decoded")
        .join(&job.variant_id)
        .join(format!("{}.yuv", file_stem(&job.sequence, job.config, job.qp)))
}

pub fn decoder_argv(plan: &Plan, job: &JobRecord) -> Option<Vec<OsString>> {
    let seq = plan.sequence(&job.sequence)?;
    let variant = plan.variant(&job.variant_id)?;
    let values = BTreeMap::from([
        ("bitstream", job.bitstream_path.display().to_string()),
        ("output", decoded_path(plan, job).display().to_string()),
        ("bit_depth", seq.spec.bit_depth.to_string()),
    ]);
    Some(variant.decoder.render(&values, &[]))
}
