//! Cumulative energy counter sources.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::MeterError;

/// Package-0 RAPL domain of the Linux powercap hierarchy.
pub const DEFAULT_RAPL_DOMAIN: &str = "/sys/class/powercap/intel-rapl:0";

/// Wraparound modulus used by virtual counters unless configured otherwise.
pub const DEFAULT_VIRTUAL_MAX_COUNTER: u64 = 262_144_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    RaplSysfs,
    ReplayTrace,
    SyntheticSampler,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::RaplSysfs => "rapl-sysfs",
            BackendKind::ReplayTrace => "replay-trace",
            BackendKind::SyntheticSampler => "synthetic-sampler",
        })
    }
}

/// Something whose energy can be measured: usually a decoder process.
pub trait Workload {
    fn run(&mut self) -> Result<(), MeterError>;
}

impl<F> Workload for F
where
    F: FnMut() -> Result<(), MeterError>,
{
    fn run(&mut self) -> Result<(), MeterError> {
        self()
    }
}

/// A source of cumulative microjoule readings plus the clock that goes with it.
///
/// Real counters use the wall clock. Replay and synthetic backends run on a
/// virtual clock so that repeated runs produce identical measurements.
pub trait PowerBackend {
    fn kind(&self) -> BackendKind;

    /// Wraparound modulus of the counter, in microjoules.
    fn max_counter(&self) -> u64;

    /// Raw counter value; range checking happens in [`read_counter`].
    fn read_raw(&mut self) -> Result<u64, MeterError>;

    /// Let an idle window of `seconds` pass; returns the elapsed seconds.
    fn idle(&mut self, seconds: f64) -> f64;

    /// Run `workload` and return its elapsed seconds.
    fn run_workload(&mut self, workload: &mut dyn Workload) -> Result<f64, MeterError>;
}

/// Reads the current cumulative counter, rejecting values outside `[0, max_counter)`.
pub fn read_counter(backend: &mut dyn PowerBackend) -> Result<u64, MeterError> {
    let max = backend.max_counter();
    let value = backend.read_raw()?;
    if value >= max {
        return Err(MeterError::CorruptCounter { value, max });
    }
    Ok(value)
}

/// Microjoules elapsed between two readings of a counter that wraps at `max_counter`.
pub fn counter_delta(before: u64, after: u64, max_counter: u64) -> u64 {
    if after >= before {
        after - before
    } else {
        max_counter - before + after
    }
}

fn wall_idle(seconds: f64) -> f64 {
    let start = Instant::now();
    if seconds > 0.0 {
        std::thread::sleep(Duration::from_secs_f64(seconds));
    }
    start.elapsed().as_secs_f64()
}

/// RAPL counter exposed through the powercap sysfs tree.
#[derive(Debug, Clone)]
pub struct RaplSysfs {
    energy_path: PathBuf,
    max_counter: u64,
}

impl RaplSysfs {
    /// Opens a powercap domain directory holding `energy_uj` and `max_energy_range_uj`.
    pub fn open(domain: impl AsRef<Path>) -> Result<Self, MeterError> {
        let domain = domain.as_ref();
        let max_path = domain.join("max_energy_range_uj");
        let max_counter = read_u64_file(&max_path)?;
        if max_counter == 0 {
            return Err(MeterError::CorruptCounter { value: 0, max: 0 });
        }
        Ok(Self {
            energy_path: domain.join("energy_uj"),
            max_counter,
        })
    }

    pub fn with_max(energy_path: impl Into<PathBuf>, max_counter: u64) -> Result<Self, MeterError> {
        if max_counter == 0 {
            return Err(MeterError::InvalidArgument("max_counter must be positive".into()));
        }
        Ok(Self {
            energy_path: energy_path.into(),
            max_counter,
        })
    }
}

fn read_u64_file(path: &Path) -> Result<u64, MeterError> {
    let text = fs::read_to_string(path).map_err(|e| MeterError::BackendUnavailable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    text.trim().parse::<u64>().map_err(|e| MeterError::BackendUnavailable {
        path: path.to_path_buf(),
        reason: format!("unparsable counter {:?}: {e}", text.trim()),
    })
}

impl PowerBackend for RaplSysfs {
    fn kind(&self) -> BackendKind {
        BackendKind::RaplSysfs
    }

    fn max_counter(&self) -> u64 {
        self.max_counter
    }

    fn read_raw(&mut self) -> Result<u64, MeterError> {
        read_u64_file(&self.energy_path)
    }

    fn idle(&mut self, seconds: f64) -> f64 {
        wall_idle(seconds)
    }

    fn run_workload(&mut self, workload: &mut dyn Workload) -> Result<f64, MeterError> {
        let start = Instant::now();
        workload.run()?;
        Ok(start.elapsed().as_secs_f64())
    }
}

/// Replays recorded counter readings, one per read.
///
/// A reading may carry the duration of the run that ended at it; runs
/// without one last `seconds_per_run`.
#[derive(Debug, Clone)]
pub struct ReplayTrace {
    readings: Vec<u64>,
    durations: Vec<Option<f64>>,
    position: usize,
    cycle: bool,
    max_counter: u64,
    seconds_per_run: f64,
}

impl ReplayTrace {
    pub fn new(readings: Vec<u64>, max_counter: u64, seconds_per_run: f64) -> Result<Self, MeterError> {
        if max_counter == 0 {
            return Err(MeterError::InvalidArgument("max_counter must be positive".into()));
        }
        if !(seconds_per_run > 0.0) {
            return Err(MeterError::InvalidArgument(format!(
                "seconds_per_run {seconds_per_run} must be positive"
            )));
        }
        if readings.is_empty() {
            return Err(MeterError::InvalidArgument("replay trace is empty".into()));
        }
        Ok(Self {
            durations: vec![None; readings.len()],
            readings,
            position: 0,
            cycle: false,
            max_counter,
            seconds_per_run,
        })
    }

    /// Restart from the first reading once the trace is exhausted.
    pub fn cycling(mut self, cycle: bool) -> Self {
        self.cycle = cycle;
        self
    }

    /// Per-reading run durations in seconds, aligned with the readings.
    pub fn with_durations(mut self, durations: Vec<Option<f64>>) -> Result<Self, MeterError> {
        if durations.len() != self.readings.len() {
            return Err(MeterError::InvalidArgument(format!(
                "{} durations for {} readings",
                durations.len(),
                self.readings.len()
            )));
        }
        if let Some(bad) = durations.iter().flatten().find(|d| !(**d > 0.0)) {
            return Err(MeterError::InvalidArgument(format!(
                "run duration {bad} must be positive"
            )));
        }
        self.durations = durations;
        Ok(self)
    }

    /// Parses a trace file: one integer microjoule reading per line,
    /// optionally followed by the duration in seconds of the run ending there.
    pub fn from_file(path: impl AsRef<Path>, max_counter: u64, seconds_per_run: f64) -> Result<Self, MeterError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| MeterError::BackendUnavailable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut readings = Vec::new();
        let mut durations = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let bad = |reason: String| MeterError::BackendUnavailable {
                path: path.to_path_buf(),
                reason: format!("line {}: {reason}", line_no + 1),
            };
            let mut fields = line.split_whitespace();
            let Some(first) = fields.next() else { continue };
            readings.push(first.parse::<u64>().map_err(|e| bad(e.to_string()))?);
            durations.push(
                fields
                    .next()
                    .map(|d| d.parse::<f64>().map_err(|e| bad(e.to_string())))
                    .transpose()?,
            );
            if fields.next().is_some() {
                return Err(bad("expected `reading [seconds]`".into()));
            }
        }
        Self::new(readings, max_counter, seconds_per_run)?.with_durations(durations)
    }
}

impl PowerBackend for ReplayTrace {
    fn kind(&self) -> BackendKind {
        BackendKind::ReplayTrace
    }

    fn max_counter(&self) -> u64 {
        self.max_counter
    }

    fn read_raw(&mut self) -> Result<u64, MeterError> {
        if self.position >= self.readings.len() {
            if !self.cycle {
                return Err(MeterError::BackendUnavailable {
                    path: PathBuf::from("<replay-trace>"),
                    reason: format!("trace exhausted after {} readings", self.readings.len()),
                });
            }
            self.position = 0;
        }
        let value = self.readings[self.position];
        self.position += 1;
        Ok(value)
    }

    fn idle(&mut self, seconds: f64) -> f64 {
        seconds
    }

    fn run_workload(&mut self, workload: &mut dyn Workload) -> Result<f64, MeterError> {
        workload.run()?;
        let next = if self.position >= self.readings.len() {
            0
        } else {
            self.position
        };
        Ok(self.durations[next].unwrap_or(self.seconds_per_run))
    }
}

/// Simulated machine: constant idle draw plus a seeded per-run workload energy.
#[derive(Debug, Clone)]
pub struct SyntheticSampler {
    idle_power_w: f64,
    workload: Option<Normal<f64>>,
    workload_mean_j: f64,
    seconds_per_run: f64,
    max_counter: u64,
    total_uj: f64,
    rng: ChaCha8Rng,
}

impl SyntheticSampler {
    pub fn new(
        idle_power_w: f64,
        workload_mean_j: f64,
        workload_std_j: f64,
        seconds_per_run: f64,
        seed: u64,
    ) -> Result<Self, MeterError> {
        if !(idle_power_w >= 0.0) || !(seconds_per_run > 0.0) || !(workload_std_j >= 0.0) {
            return Err(MeterError::InvalidArgument(format!(
                "synthetic sampler needs idle_power_w >= 0, std >= 0, seconds_per_run > 0 \
                 (got {idle_power_w}, {workload_std_j}, {seconds_per_run})"
            )));
        }
        let workload = if workload_std_j > 0.0 {
            Some(Normal::new(workload_mean_j, workload_std_j).map_err(|e| MeterError::InvalidArgument(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            idle_power_w,
            workload,
            workload_mean_j,
            seconds_per_run,
            max_counter: DEFAULT_VIRTUAL_MAX_COUNTER,
            total_uj: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Pure idle source: no workload energy.
    pub fn idle_only(idle_power_w: f64) -> Result<Self, MeterError> {
        Self::new(idle_power_w, 0.0, 0.0, 1.0, 0)
    }

    pub fn with_max_counter(mut self, max_counter: u64) -> Result<Self, MeterError> {
        if max_counter == 0 {
            return Err(MeterError::InvalidArgument("max_counter must be positive".into()));
        }
        self.max_counter = max_counter;
        Ok(self)
    }

    /// Starts the cumulative counter at `uj` (useful to exercise wraparound).
    pub fn with_initial_counter(mut self, uj: u64) -> Self {
        self.total_uj = uj as f64;
        self
    }

    fn advance(&mut self, joules: f64) {
        self.total_uj += joules.max(0.0) * 1e6;
    }
}

impl PowerBackend for SyntheticSampler {
    fn kind(&self) -> BackendKind {
        BackendKind::SyntheticSampler
    }

    fn max_counter(&self) -> u64 {
        self.max_counter
    }

    fn read_raw(&mut self) -> Result<u64, MeterError> {
        Ok((self.total_uj.round() as u64) % self.max_counter)
    }

    fn idle(&mut self, seconds: f64) -> f64 {
        self.advance(self.idle_power_w * seconds);
        seconds
    }

    fn run_workload(&mut self, workload: &mut dyn Workload) -> Result<f64, MeterError> {
        workload.run()?;
        let energy = match &self.workload {
            Some(dist) => dist.sample(&mut self.rng),
            None => self.workload_mean_j,
        };
        self.advance(energy + self.idle_power_w * self.seconds_per_run);
        Ok(self.seconds_per_run)
    }
}

/// Declarative backend selection, as found in plan files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendConfig {
    RaplSysfs {
        #[serde(default = "default_rapl_domain")]
        domain: PathBuf,
    },
    ReplayTrace {
        path: PathBuf,
        #[serde(default = "default_seconds_per_run")]
        seconds_per_run: f64,
        #[serde(default)]
        cycle: bool,
        #[serde(default = "default_virtual_max")]
        max_counter: u64,
    },
    SyntheticSampler {
        #[serde(default)]
        idle_power_w: f64,
        energy_j: f64,
        #[serde(default)]
        stddev_j: f64,
        #[serde(default = "default_seconds_per_run")]
        seconds_per_run: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_rapl_domain() -> PathBuf {
    PathBuf::from(DEFAULT_RAPL_DOMAIN)
}
fn default_seconds_per_run() -> f64 {
    1.0
}
fn default_virtual_max() -> u64 {
    DEFAULT_VIRTUAL_MAX_COUNTER
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::RaplSysfs {
            domain: default_rapl_domain(),
        }
    }
}

impl BackendConfig {
    pub fn kind(&self) -> BackendKind {
        match self {
            BackendConfig::RaplSysfs { .. } => BackendKind::RaplSysfs,
            BackendConfig::ReplayTrace { .. } => BackendKind::ReplayTrace,
            BackendConfig::SyntheticSampler { .. } => BackendKind::SyntheticSampler,
        }
    }

    /// Instantiates the backend; relative paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Box<dyn PowerBackend>, MeterError> {
        Ok(match self {
            BackendConfig::RaplSysfs { domain } => Box::new(RaplSysfs::open(base_dir.join(domain))?),
            BackendConfig::ReplayTrace {
                path,
                seconds_per_run,
                cycle,
                max_counter,
            } => Box::new(ReplayTrace::from_file(base_dir.join(path), *max_counter, *seconds_per_run)?.cycling(*cycle)),
            BackendConfig::SyntheticSampler {
                idle_power_w,
                energy_j,
                stddev_j,
                seconds_per_run,
                seed,
            } => Box::new(SyntheticSampler::new(
                *idle_power_w,
                *energy_j,
                *stddev_j,
                *seconds_per_run,
                *seed,
            )?),
        })
    }
}
