//! Running encodes (cached, parallel) and measured decodes (serial, locked).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use log::{info, warn};
use rayon::prelude::*;

use super::jobs::{decoded_path, decoder_argv, encoder_argv, JobRecord};
use super::plan::{IdleSource, Plan};
use super::record::{JobStatus, ResultRecord, FLAG_NOT_CONVERGED};
use super::store::ResultStore;
use super::PipelineError;
use crate::meter::{
    calibrate_idle, default_lock_path, measure_until_confident, DecoderInvocation, IdleBaseline, MeasurementLock,
    MeterError, PowerBackend, StoppingRule,
};
use crate::quality::sequence_psnr;

/// Marker written next to a finished bitstream, holding its encode hash.
pub fn cache_marker(bitstream: &Path) -> PathBuf {
    let mut s = bitstream.as_os_str().to_owned();
    s.push(".ok");
    PathBuf::from(s)
}

fn is_cached(job: &JobRecord) -> bool {
    job.bitstream_path.is_file()
        && fs::read_to_string(cache_marker(&job.bitstream_path)).is_ok_and(|h| h.trim() == job.encode_hash)
}

fn fail(mut job: JobRecord, message: String) -> JobRecord {
    warn!(
        "encode {} {} QP {} {}: {message}",
        job.sequence, job.config, job.qp, job.variant_id
    );
    job.status = JobStatus::Failed;
    job.message = Some(message);
    job
}

/// Runs the encoder of `job` unless an artifact with the same hash exists.
pub fn run_encode(plan: &Plan, mut job: JobRecord) -> JobRecord {
    if is_cached(&job) {
        info!("cache hit: {}", job.bitstream_path.display());
        job.status = JobStatus::Encoded;
        job.message = Some("cache hit".into());
        return job;
    }
    let Some(argv) = encoder_argv(plan, &job) else {
        return fail(job, "job does not belong to this plan".into());
    };
    let marker = cache_marker(&job.bitstream_path);
    let _ = fs::remove_file(&marker);
    if let Some(dir) = job.bitstream_path.parent().map(Path::to_path_buf) {
        if let Err(e) = fs::create_dir_all(&dir) {
            return fail(job, format!("cannot create {}: {e}", dir.display()));
        }
    }
    let argv = resolve_program(plan, argv);
    info!("encode: {}", display_argv(&argv));
    let output = Command::new(&argv[0])
        .args(&argv[1..])
        .current_dir(&plan.plan_dir)
        .stdin(Stdio::null())
        .output();
    match output {
        Err(e) => fail(job, format!("failed to spawn {:?}: {e}", argv[0])),
        Ok(out) if !out.status.success() => {
            let mut msg = format!("encoder exited with {}", out.status);
            let stderr = String::from_utf8_lossy(&out.stderr);
            if !stderr.trim().is_empty() {
                msg.push_str(": ");
                msg.push_str(stderr.trim_end());
            }
            fail(job, msg)
        }
        Ok(_) if !job.bitstream_path.is_file() => {
            let msg = format!("encoder wrote no bitstream at {}", job.bitstream_path.display());
            fail(job, msg)
        }
        Ok(_) => {
            if let Err(e) = fs::write(&marker, &job.encode_hash) {
                return fail(job, format!("cannot write {}: {e}", marker.display()));
            }
            job.status = JobStatus::Encoded;
            job.message = None;
            job
        }
    }
}

/// Encodes all jobs on `plan.encode_workers` threads; order is preserved.
///
/// Jobs sharing a bitstream (decoder-only variants) trigger one encode.
pub fn encode_all(plan: &Plan, jobs: Vec<JobRecord>) -> Vec<JobRecord> {
    let mut leaders: Vec<JobRecord> = Vec::new();
    let mut index: BTreeMap<PathBuf, usize> = BTreeMap::new();
    for j in &jobs {
        if !index.contains_key(&j.bitstream_path) {
            index.insert(j.bitstream_path.clone(), leaders.len());
            leaders.push(j.clone());
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.encode_workers)
        .build()
        .expect("thread pool");
    let done: Vec<JobRecord> = pool.install(|| leaders.into_par_iter().map(|j| run_encode(plan, j)).collect());
    jobs.into_iter()
        .map(|mut j| {
            let d = &done[index[&j.bitstream_path]];
            j.status = d.status;
            j.message = d.message.clone();
            j
        })
        .collect()
}

/// Everything a measured decode needs besides the job itself.
pub struct MeasureContext {
    pub backend: Box<dyn PowerBackend>,
    pub baseline: IdleBaseline,
    pub rule: StoppingRule,
    pub lock_path: PathBuf,
    pub lock_log: Option<PathBuf>,
    pub psnr_ceiling: f64,
    pub keep_decoded: bool,
}

impl MeasureContext {
    /// Opens the plan's backend and establishes the idle baseline.
    pub fn from_plan(plan: &Plan) -> Result<Self, PipelineError> {
        let m = &plan.measurement;
        let mut backend = m.backend.build(&plan.plan_dir)?;
        let baseline = match &m.idle {
            IdleSource::Fixed { power_w } => IdleBaseline::fixed(*power_w)?,
            IdleSource::Calibrate { seconds } => {
                info!("calibrating idle power for {seconds} s");
                calibrate_idle(backend.as_mut(), *seconds)?
            }
            IdleSource::BaselineFile(path) => {
                let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
                serde_json::from_str(&text).map_err(|e| PipelineError::Store {
                    path: path.clone(),
                    line: e.line(),
                    reason: e.to_string(),
                })?
            }
        };
        Ok(Self {
            backend,
            baseline,
            rule: m.rule,
            lock_path: m.lock_path.clone().unwrap_or_else(default_lock_path),
            lock_log: m.lock_log.clone(),
            psnr_ceiling: m.psnr_ceiling,
            keep_decoded: m.keep_decoded,
        })
    }
}

fn result_shell(job: &JobRecord) -> ResultRecord {
    ResultRecord {
        sequence: job.sequence.clone(),
        class: job.class,
        config: job.config,
        qp: job.qp,
        variant: job.variant_id.clone(),
        content_hash: job.content_hash.clone(),
        status: JobStatus::Failed,
        flags: Vec::new(),
        bitrate_kbps: None,
        psnr: None,
        energy: None,
        decode_time_s: None,
        error: None,
    }
}

/// `8 * bytes * fps / (1000 * frames)`.
pub fn bitrate_kbps(bytes: u64, frame_rate: f64, frames: u32) -> f64 {
    8.0 * bytes as f64 * frame_rate / (1000.0 * frames as f64)
}

/// Measures one decode and scores its output.
///
/// Codec and PSNR problems come back as a failed record. Only failures
/// that would hit every job (lock, energy backend) are returned as errors.
pub fn run_decode_measured(
    plan: &Plan,
    job: &JobRecord,
    ctx: &mut MeasureContext,
) -> Result<ResultRecord, PipelineError> {
    let mut rec = result_shell(job);
    if job.status != JobStatus::Encoded {
        rec.error = Some(format!(
            "not encoded: {}",
            job.message.as_deref().unwrap_or("encode did not run")
        ));
        return Ok(rec);
    }
    let (Some(seq), Some(argv)) = (plan.sequence(&job.sequence), decoder_argv(plan, job)) else {
        rec.error = Some("job does not belong to this plan".into());
        return Ok(rec);
    };
    let decoded = decoded_path(plan, job);
    if let Some(dir) = decoded.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let argv = resolve_program(plan, argv);
    info!("measure: {}", display_argv(&argv));
    let mut invocation = DecoderInvocation::from_argv(argv)?.in_dir(&plan.plan_dir);

    let measured = {
        let _lock = MeasurementLock::acquire(&ctx.lock_path, ctx.lock_log.as_deref())?;
        measure_until_confident(ctx.backend.as_mut(), &ctx.baseline, &mut invocation, &ctx.rule)
    };
    let energy = match measured {
        Ok(e) => e,
        Err(e @ (MeterError::BackendUnavailable { .. } | MeterError::CorruptCounter { .. })) => return Err(e.into()),
        Err(e) => {
            rec.error = Some(e.to_string());
            return Ok(rec);
        }
    };
    if !energy.confident {
        rec.flags.push(FLAG_NOT_CONVERGED.into());
    }
    rec.decode_time_s = Some(energy.mean_time_s);
    let mean_energy = energy.mean_energy_j;
    rec.energy = Some(energy);

    let bytes = fs::metadata(&job.bitstream_path).map(|m| m.len()).unwrap_or(0);
    rec.bitrate_kbps = Some(bitrate_kbps(bytes, seq.frame_rate, seq.spec.frame_count));

    let psnr = sequence_psnr(&seq.source_path, &decoded, &seq.spec, ctx.psnr_ceiling);
    if !ctx.keep_decoded {
        let _ = fs::remove_file(&decoded);
    }
    match psnr {
        Ok(p) => rec.psnr = Some(p),
        Err(e) => {
            rec.error = Some(format!("psnr mismatch: {e}"));
            return Ok(rec);
        }
    }
    let costs = [
        rec.bitrate_kbps.unwrap_or(0.0),
        mean_energy,
        rec.decode_time_s.unwrap_or(0.0),
    ];
    if costs.iter().any(|&c| !(c > 0.0)) {
        rec.error = Some(format!(
            "non-positive cost (rate {} kbps, energy {} J, time {} s)",
            costs[0], costs[1], costs[2]
        ));
        return Ok(rec);
    }
    rec.status = JobStatus::Measured;
    Ok(rec)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeasureSummary {
    pub measured: usize,
    pub skipped: usize,
    pub failed: usize,
    pub not_converged: usize,
}

/// Measures jobs one at a time, appending each record to the store.
///
/// Jobs already measured with the same content hash are skipped. The
/// derived CSV is refreshed at the end.
pub fn measure_all(
    plan: &Plan,
    jobs: &[JobRecord],
    ctx: &mut MeasureContext,
    store: &ResultStore,
) -> Result<MeasureSummary, PipelineError> {
    let done: BTreeMap<_, String> = store
        .latest()?
        .into_iter()
        .filter(|r| r.status == JobStatus::Measured)
        .map(|r| ((r.sequence, r.config, r.qp, r.variant), r.content_hash))
        .collect();
    let mut summary = MeasureSummary::default();
    for job in jobs {
        let key = (job.sequence.clone(), job.config, job.qp, job.variant_id.clone());
        if done.get(&key) == Some(&job.content_hash) {
            summary.skipped += 1;
            continue;
        }
        let rec = run_decode_measured(plan, job, ctx)?;
        match rec.status {
            JobStatus::Measured => summary.measured += 1,
            _ => {
                warn!(
                    "{} {} QP {} {}: {}",
                    rec.sequence,
                    rec.config,
                    rec.qp,
                    rec.variant,
                    rec.error.as_deref().unwrap_or("failed")
                );
                summary.failed += 1;
            }
        }
        if rec.flags.iter().any(|f| f == FLAG_NOT_CONVERGED) {
            summary.not_converged += 1;
        }
        store.append(&rec)?;
    }
    store.export_csv()?;
    Ok(summary)
}

/// Commands run in the plan directory; relative program paths with a
/// directory part are made absolute against it as well.
fn resolve_program(plan: &Plan, mut argv: Vec<OsString>) -> Vec<OsString> {
    let program = Path::new(&argv[0]);
    if program.is_relative() && program.components().count() > 1 {
        argv[0] = plan.plan_dir.join(program).into_os_string();
    }
    argv
}

fn display_argv(argv: &[OsString]) -> String {
    argv.iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join(" ")
}
