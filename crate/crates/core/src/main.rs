use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use codec_energy::bd::{bd_delta, FitMethod, QualityCurve};
use codec_energy::meter::calibrate_idle;
use codec_energy::pipeline::{
    encode_all, measure_all, plan_jobs, CodingConfig, CostField, JobStatus, MeasureContext, PipelineError, Plan,
    PlanOptions, ResultRecord, ResultStore, VariantRole, DEFAULT_QPS,
};
use codec_energy::quality::{sequence_psnr, VideoSpec, DEFAULT_PSNR_CEILING};
use codec_energy::report::{
    aggregate, export_curves, export_scatter, format_2dp, render_table, sequence_metrics, ReportError, TableFormat,
};

#[derive(Parser)]
#[command(name = "codec-energy", version, about = "Decoder energy and time benchmarking")]
struct Cli {
    /// Experiment plan (JSON).
    #[arg(long, global = true)]
    plan: Option<PathBuf>,
    /// Result store; defaults to the plan's store.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Table format: markdown or csv.
    #[arg(long, global = true, default_value = "markdown")]
    format: TableFormat,
    /// Do not require sequence sources and config files to exist.
    #[arg(long, global = true)]
    skip_source_check: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a plan and list its jobs.
    Plan {
        #[arg(long)]
        list: bool,
    },
    /// Run all encodes of the plan; cached bitstreams are reused.
    Encode,
    /// Encode if needed, then run every measured decode serially.
    Measure,
    /// YUV-PSNR of a decoded file against its source.
    Psnr(PsnrArgs),
    /// BD delta between two curve files with `cost,quality` columns.
    Bd {
        reference: PathBuf,
        test: PathBuf,
        #[arg(long, default_value_t = FitMethod::default())]
        method: FitMethod,
        /// Name printed with the result, e.g. BDDE.
        #[arg(long, default_value = "BD")]
        cost_label: String,
    },
    /// Tables and plot-ready exports from the result store.
    #[command(subcommand)]
    Report(ReportCommand),
    /// Measure the idle power draw with the plan's backend.
    IdleCalibrate {
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        /// Where to write the baseline JSON.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PsnrArgs {
    reference: PathBuf,
    decoded: PathBuf,
    #[arg(long)]
    width: u32,
    #[arg(long)]
    height: u32,
    #[arg(long, default_value_t = 8)]
    bit_depth: u8,
    /// Frame count; derived from the reference size when omitted.
    #[arg(long)]
    frames: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_PSNR_CEILING)]
    ceiling: f64,
}

#[derive(Args)]
struct Selection {
    /// Reference variant; defaults to the plan's reference.
    #[arg(long)]
    reference: Option<String>,
    /// Test variant; defaults to every test variant of the plan.
    #[arg(long)]
    test: Option<String>,
    #[arg(long, default_value_t = FitMethod::default())]
    method: FitMethod,
    /// Write to this file instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Per-class BDR / BDDT / BDDE table with the overall mean.
    Table {
        #[command(flatten)]
        sel: Selection,
    },
    /// One row per sequence with two BD metrics.
    Scatter {
        #[command(flatten)]
        sel: Selection,
        #[arg(long, default_value = "rate")]
        x: CostField,
        #[arg(long, default_value = "energy")]
        y: CostField,
        /// Needed when the store holds several configurations.
        #[arg(long)]
        config: Option<CodingConfig>,
    },
    /// Cost and quality per variant and QP for one sequence.
    Curves {
        #[arg(long)]
        sequence: String,
        #[arg(long)]
        config: CodingConfig,
        #[arg(long, default_value = "energy")]
        cost: CostField,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

/// Exit code 1: the input is wrong. Exit code 2: running it went wrong.
enum Failure {
    Validation(anyhow::Error),
    Execution(anyhow::Error),
}

fn validation(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(e.into())
}

fn execution(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Execution(e.into())
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::InvalidPlan { .. } => validation(e),
            other => execution(other),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Csv(_) => execution(e),
            other => validation(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => code,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Execution(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_plan(cli: &Cli) -> Result<Plan, Failure> {
    let path = cli
        .plan
        .as_ref()
        .ok_or_else(|| validation(anyhow!("this command needs --plan")))?;
    Ok(Plan::load(
        path,
        PlanOptions {
            check_sources: !cli.skip_source_check,
        },
    )?)
}

fn open_store(cli: &Cli, plan: Option<&Plan>) -> Result<ResultStore, Failure> {
    match (&cli.store, plan) {
        (Some(s), _) => Ok(ResultStore::new(s)),
        (None, Some(p)) => Ok(ResultStore::new(&p.store)),
        (None, None) => Err(validation(anyhow!("give --store or --plan"))),
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), Failure> {
    match output {
        Some(p) => fs::write(p, text)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(execution),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(execution),
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Failure> {
    match &cli.command {
        Command::Plan { list } => {
            let plan = load_plan(cli)?;
            let jp = plan_jobs(&plan);
            for n in &jp.notices {
                eprintln!("note: {n}");
            }
            if *list {
                for j in &jp.jobs {
                    println!(
                        "{}\t{}\tQP{}\t{}\t{}",
                        j.sequence,
                        j.config,
                        j.qp,
                        j.variant_id,
                        &j.content_hash[..12]
                    );
                }
            }
            println!(
                "plan {:?}: {} sequences, {} variants, {} jobs",
                plan.name,
                plan.sequences.len(),
                plan.variants.len(),
                jp.jobs.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Encode => {
            let plan = load_plan(cli)?;
            let jobs = encode_all(&plan, plan_jobs(&plan).jobs);
            let failed = jobs.iter().filter(|j| j.status == JobStatus::Failed).count();
            let cached = jobs
                .iter()
                .filter(|j| j.message.as_deref() == Some("cache hit"))
                .count();
            println!(
                "{} jobs: {} encoded ({} cached), {failed} failed",
                jobs.len(),
                jobs.len() - failed,
                cached
            );
            Ok(if failed > 0 {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Measure => {
            let plan = load_plan(cli)?;
            let store = open_store(cli, Some(&plan))?;
            let jobs = encode_all(&plan, plan_jobs(&plan).jobs);
            let mut ctx = MeasureContext::from_plan(&plan)?;
            info!("idle baseline {:.3} W", ctx.baseline.idle_power_w);
            let s = measure_all(&plan, &jobs, &mut ctx, &store)?;
            println!(
                "{} measured, {} already measured, {} failed, {} not converged; store {}",
                s.measured,
                s.skipped,
                s.failed,
                s.not_converged,
                store.path().display()
            );
            Ok(if s.failed > 0 {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Psnr(a) => {
            let frames = match a.frames {
                Some(f) => f,
                None => {
                    let probe = VideoSpec {
                        width: a.width,
                        height: a.height,
                        bit_depth: a.bit_depth,
                        frame_count: 1,
                    };
                    probe.validate().map_err(validation)?;
                    let len = fs::metadata(&a.reference)
                        .with_context(|| a.reference.display().to_string())
                        .map_err(execution)?
                        .len();
                    (len / probe.frame_bytes()) as u32
                }
            };
            let spec = VideoSpec {
                width: a.width,
                height: a.height,
                bit_depth: a.bit_depth,
                frame_count: frames,
            };
            spec.validate().map_err(validation)?;
            let p = sequence_psnr(&a.reference, &a.decoded, &spec, a.ceiling).map_err(validation)?;
            println!("frames {frames}");
            println!(
                "psnr_y {:.4}\npsnr_u {:.4}\npsnr_v {:.4}\npsnr_yuv {:.4}",
                p.psnr_y, p.psnr_u, p.psnr_v, p.psnr_yuv
            );
            if p.clamped_frames > 0 {
                println!("clamped_frames {}", p.clamped_frames);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bd {
            reference,
            test,
            method,
            cost_label,
        } => {
            let r = read_curve(reference).map_err(validation)?;
            let t = read_curve(test).map_err(validation)?;
            let res = bd_delta(&r, &t, *method).map_err(validation)?;
            println!("{cost_label}: {}%", format_2dp(res.delta_percent));
            Ok(ExitCode::SUCCESS)
        }
        Command::Report(rc) => report(cli, rc),
        Command::IdleCalibrate { seconds, output } => {
            let plan = load_plan(cli)?;
            let mut backend = plan.measurement.backend.build(&plan.plan_dir).map_err(execution)?;
            let baseline = calibrate_idle(backend.as_mut(), *seconds).map_err(execution)?;
            let out = output.clone().unwrap_or_else(|| plan.workdir.join("idle.json"));
            if let Some(dir) = out.parent() {
                fs::create_dir_all(dir).map_err(execution)?;
            }
            let json = serde_json::to_string_pretty(&baseline).expect("baseline serializes");
            fs::write(&out, json + "\n").map_err(execution)?;
            println!(
                "idle power {:.4} W over {} s -> {}",
                baseline.idle_power_w,
                seconds,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read_curve(path: &Path) -> Result<QualityCurve> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| anyhow!("{}: missing column {name:?}", path.display()))
    };
    let (ci, qi) = (col("cost")?, col("quality")?);
    let mut pairs = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let num = |j: usize| -> Result<f64> {
            row.get(j)
                .unwrap_or("")
                .parse()
                .with_context(|| format!("{}: row {}", path.display(), i + 2))
        };
        pairs.push((num(ci)?, num(qi)?));
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(QualityCurve::from_pairs(label, &pairs)?)
}

struct Comparison {
    reference: String,
    test: String,
    ablation: bool,
}

fn comparisons(plan: Option<&Plan>, sel: &Selection, records: &[ResultRecord]) -> Result<Vec<Comparison>, Failure> {
    let reference = match (&sel.reference, plan) {
        (Some(r), _) => r.clone(),
        (None, Some(p)) => p.reference().variant_id.clone(),
        (None, None) => return Err(validation(anyhow!("give --reference or --plan"))),
    };
    let ablation = |id: &str| {
        plan.and_then(|p| p.variant(id))
            .is_some_and(|v| !v.tool_overrides.is_empty())
    };
    let tests: Vec<String> = match (&sel.test, plan) {
        (Some(t), _) => vec![t.clone()],
        (None, Some(p)) => p
            .variants
            .iter()
            .filter(|v| v.role == VariantRole::Test)
            .map(|v| v.variant_id.clone())
            .collect(),
        (None, None) => {
            let mut ids: Vec<String> = records
                .iter()
                .map(|r| r.variant.clone())
                .filter(|v| *v != reference)
                .collect();
            ids.sort();
            ids.dedup();
            ids
        }
    };
    if tests.is_empty() {
        return Err(validation(anyhow!("no test variant to compare against {reference}")));
    }
    Ok(tests
        .into_iter()
        .map(|test| Comparison {
            ablation: ablation(&test),
            reference: reference.clone(),
            test,
        })
        .collect())
}

fn report(cli: &Cli, rc: &ReportCommand) -> Result<ExitCode, Failure> {
    let plan = match &cli.plan {
        Some(_) => Some(load_plan(cli)?),
        None => None,
    };
    let store = open_store(cli, plan.as_ref())?;
    let records = store.load()?;
    if records.is_empty() {
        return Err(validation(anyhow!("result store {} is empty", store.path().display())));
    }
    let qps: Vec<u32> = plan
        .as_ref()
        .map(|p| p.qps.clone())
        .unwrap_or_else(|| DEFAULT_QPS.to_vec());
    match rc {
        ReportCommand::Table { sel } => {
            let mut text = String::new();
            for (i, c) in comparisons(plan.as_ref(), sel, &records)?.iter().enumerate() {
                let (metrics, errors) = sequence_metrics(&records, &c.reference, &c.test, &qps, sel.method);
                for e in &errors {
                    warn!("{e}");
                }
                let reports = aggregate(&metrics, &c.reference, &c.test, c.ablation)?;
                if i > 0 {
                    text.push('\n');
                }
                if cli.format == TableFormat::Markdown {
                    text.push_str(&format!("## {} vs {}\n\n", c.test, c.reference));
                }
                text.push_str(&render_table(&reports, cli.format));
            }
            emit(&text, sel.output.as_deref())?;
        }
        ReportCommand::Scatter { sel, x, y, config } => {
            let mut all = Vec::new();
            for c in comparisons(plan.as_ref(), sel, &records)? {
                let (metrics, errors) = sequence_metrics(&records, &c.reference, &c.test, &qps, sel.method);
                for e in &errors {
                    warn!("{e}");
                }
                all.extend(metrics);
            }
            let mut configs: Vec<CodingConfig> = all.iter().map(|m| m.config).collect();
            configs.sort();
            configs.dedup();
            match config {
                Some(cfg) => all.retain(|m| m.config == *cfg),
                None if configs.len() > 1 => {
                    return Err(validation(anyhow!(
                        "the store holds several configurations; choose one with --config"
                    )))
                }
                None => {}
            }
            let (csv, notices) = export_scatter(&all, *x, *y);
            for n in notices {
                eprintln!("note: {n}");
            }
            emit(&csv, sel.output.as_deref())?;
        }
        ReportCommand::Curves {
            sequence,
            config,
            cost,
            output,
        } => {
            let order: Vec<&str> = plan
                .as_ref()
                .map(|p| p.variants.iter().map(|v| v.variant_id.as_str()).collect())
                .unwrap_or_default();
            let csv = export_curves(&records, sequence, *config, *cost, &qps, &order)?;
            emit(&csv, output.as_deref())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
