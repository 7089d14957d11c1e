use std::time::{SystemTime, UNIX_EPOCH};

use log::warn;
use serde::{Deserialize, Serialize};

use super::backend::{counter_delta, read_counter, PowerBackend, Workload};
use super::stats::{confidence_check, StoppingRule};
use super::MeterError;

/// Idle power draw of the machine, subtracted from every measured run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdleBaseline {
    pub idle_power_w: f64,
    pub calibration_duration_s: f64,
    /// Seconds since the Unix epoch.
    pub captured_at: u64,
}

impl IdleBaseline {
    /// A baseline supplied by the user instead of calibrated.
    pub fn fixed(idle_power_w: f64) -> Result<Self, MeterError> {
        if !(idle_power_w >= 0.0) || !idle_power_w.is_finite() {
            return Err(MeterError::InvalidArgument(format!(
                "idle power {idle_power_w} W must be finite and non-negative"
            )));
        }
        Ok(Self {
            idle_power_w,
            calibration_duration_s: f64::MIN_POSITIVE,
            captured_at: now_unix(),
        })
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Measures the idle draw over a window of `duration_s` seconds.
///
/// The caller must make sure nothing else is being benchmarked meanwhile.
pub fn calibrate_idle(backend: &mut dyn PowerBackend, duration_s: f64) -> Result<IdleBaseline, MeterError> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(MeterError::InvalidArgument(format!(
            "idle calibration duration {duration_s} s must be positive"
        )));
    }
    let before = read_counter(backend)?;
    let elapsed = backend.idle(duration_s);
    let after = read_counter(backend)?;
    let joules = counter_delta(before, after, backend.max_counter()) as f64 * 1e-6;
    let window = if elapsed > 0.0 { elapsed } else { duration_s };
    Ok(IdleBaseline {
        idle_power_w: joules / window,
        calibration_duration_s: window,
        captured_at: now_unix(),
    })
}

/// One idle-corrected run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub energy_j: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleOutcome {
    Valid(Sample),
    /// Idle subtraction went below zero; the baseline has probably drifted.
    NegativeEnergy(Sample),
}

/// Runs the workload once and subtracts idle energy over its lifetime.
pub fn measure_once(
    backend: &mut dyn PowerBackend,
    baseline: &IdleBaseline,
    workload: &mut dyn Workload,
) -> Result<SampleOutcome, MeterError> {
    let before = read_counter(backend)?;
    let elapsed = backend.run_workload(workload)?;
    let after = read_counter(backend)?;
    let raw = counter_delta(before, after, backend.max_counter()) as f64 * 1e-6;
    let sample = Sample {
        energy_j: raw - baseline.idle_power_w * elapsed,
        time_s: elapsed,
    };
    if sample.energy_j < 0.0 {
        warn!(
            "negative energy after idle subtraction ({:.6} J over {:.3} s); sample excluded",
            sample.energy_j, sample.time_s
        );
        Ok(SampleOutcome::NegativeEnergy(sample))
    } else {
        Ok(SampleOutcome::Valid(sample))
    }
}

/// Validated mean decoding energy and time of one bitstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyMeasurement {
    pub mean_energy_j: f64,
    pub mean_time_s: f64,
    pub sample_count: usize,
    pub half_width_j: f64,
    pub confident: bool,
    #[serde(default)]
    pub rejected_samples: usize,
    pub samples: Vec<Sample>,
}

/// Repeats [`measure_once`] until the stopping rule accepts the mean.
///
/// Reaching `max_iterations` valid samples without confidence is not an
/// error: the measurement comes back with `confident == false`. Negative
/// samples are dropped and counted; more than `max_iterations` of them
/// aborts with [`MeterError::TooManyRejected`].
pub fn measure_until_confident(
    backend: &mut dyn PowerBackend,
    baseline: &IdleBaseline,
    workload: &mut dyn Workload,
    rule: &StoppingRule,
) -> Result<EnergyMeasurement, MeterError> {
    rule.validate()?;
    let mut samples: Vec<Sample> = Vec::new();
    let mut rejected = 0usize;
    let mut last_check = None;

    while samples.len() < rule.max_iterations {
        match measure_once(backend, baseline, workload)? {
            SampleOutcome::Valid(s) => samples.push(s),
            SampleOutcome::NegativeEnergy(_) => {
                rejected += 1;
                if rejected > rule.max_iterations {
                    return Err(MeterError::TooManyRejected {
                        rejected,
                        kept: samples.len(),
                    });
                }
                continue;
            }
        }
        if samples.len() >= rule.min_iterations {
            let energies: Vec<f64> = samples.iter().map(|s| s.energy_j).collect();
            let check = confidence_check(&energies, rule)?;
            last_check = Some(check);
            if check.confident {
                break;
            }
        }
    }

    let check = last_check.expect("max_iterations >= min_iterations >= 2");
    if !check.confident {
        warn!(
            "measurement did not converge after {} samples (half-width {:.4} J > {:.4} J)",
            samples.len(),
            check.half_width,
            rule.beta * check.mean
        );
    }
    let n = samples.len() as f64;
    Ok(EnergyMeasurement {
        mean_energy_j: check.mean,
        mean_time_s: samples.iter().map(|s| s.time_s).sum::<f64>() / n,
        sample_count: samples.len(),
        half_width_j: check.half_width,
        confident: check.confident,
        rejected_samples: rejected,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meter::backend::{ReplayTrace, SyntheticSampler};

    fn noop() -> Result<(), MeterError> {
        Ok(())
    }

    fn baseline(w: f64) -> IdleBaseline {
        IdleBaseline::fixed(w).unwrap()
    }

    #[test]
    fn calibrate_from_replay() {
        let mut trace = ReplayTrace::new(vec![0, 10_000_000], 1 << 40, 1.0).unwrap();
        let b = calibrate_idle(&mut trace, 5.0).unwrap();
        assert_eq!(b.idle_power_w, 2.0);
        assert_eq!(b.calibration_duration_s, 5.0);

        let mut trace = ReplayTrace::new(vec![42, 42], 1 << 40, 1.0).unwrap();
        assert_eq!(calibrate_idle(&mut trace, 5.0).unwrap().idle_power_w, 0.0);
    }

    #[test]
    fn calibrate_from_synthetic() {
        let mut s = SyntheticSampler::idle_only(1.5).unwrap();
        let b = calibrate_idle(&mut s, 10.0).unwrap();
        assert!((b.idle_power_w - 1.5).abs() < 1e-12);
    }

    #[test]
    fn calibrate_rejects_non_positive_duration() {
        let mut s = SyntheticSampler::idle_only(1.5).unwrap();
        assert!(matches!(
            calibrate_idle(&mut s, 0.0),
            Err(MeterError::InvalidArgument(_))
        ));
        assert!(calibrate_idle(&mut s, -1.0).is_err());
    }

    #[test]
    fn idle_subtraction() {
        let mut trace = ReplayTrace::new(vec![0, 10_000_000], 1 << 40, 2.0).unwrap();
        assert_eq!(
            measure_once(&mut trace, &baseline(2.0), &mut noop).unwrap(),
            SampleOutcome::Valid(Sample {
                energy_j: 6.0,
                time_s: 2.0
            })
        );

        let mut trace = ReplayTrace::new(vec![0, 4_000_000], 1 << 40, 2.0).unwrap();
        assert_eq!(
            measure_once(&mut trace, &baseline(2.0), &mut noop).unwrap(),
            SampleOutcome::Valid(Sample {
                energy_j: 0.0,
                time_s: 2.0
            })
        );

        let mut trace = ReplayTrace::new(vec![0, 3_000_000], 1 << 40, 2.0).unwrap();
        assert!(matches!(
            measure_once(&mut trace, &baseline(2.0), &mut noop).unwrap(),
            SampleOutcome::NegativeEnergy(s) if (s.energy_j + 1.0).abs() < 1e-12
        ));
    }

    #[test]
    fn workload_failure_propagates() {
        let mut s = SyntheticSampler::new(0.0, 1.0, 0.0, 1.0, 0).unwrap();
        let mut failing = || -> Result<(), MeterError> {
            Err(MeterError::DecodeFailed {
                status: Some(1),
                output: "boom".into(),
            })
        };
        assert!(matches!(
            measure_once(&mut s, &baseline(0.0), &mut failing),
            Err(MeterError::DecodeFailed { .. })
        ));
    }

    #[test]
    fn constant_workload_stops_at_min_iterations() {
        let mut s = SyntheticSampler::new(0.0, 6.0, 0.0, 1.0, 0).unwrap();
        let rule = StoppingRule {
            min_iterations: 2,
            ..StoppingRule::default()
        };
        let m = measure_until_confident(&mut s, &baseline(0.0), &mut noop, &rule).unwrap();
        assert_eq!(m.sample_count, 2);
        assert_eq!(m.mean_energy_j, 6.0);
        assert!(m.confident);
        assert_eq!(m.half_width_j, 0.0);
    }

    #[test]
    fn gaussian_workload_converges() {
        let mut s = SyntheticSampler::new(3.0, 100.0, 1.0, 2.0, 7).unwrap();
        let rule = StoppingRule::default();
        let m = measure_until_confident(&mut s, &baseline(3.0), &mut noop, &rule).unwrap();
        assert!(m.confident);
        assert!(m.half_width_j <= 2.0);
        assert!(m.sample_count >= rule.min_iterations);
        let mean = m.samples.iter().map(|s| s.energy_j).sum::<f64>() / m.sample_count as f64;
        assert!(((mean - m.mean_energy_j) / mean).abs() < 1e-9);
    }

    #[test]
    fn noisy_workload_does_not_converge() {
        let mut s = SyntheticSampler::new(0.0, 100.0, 50.0, 1.0, 3).unwrap();
        let rule = StoppingRule {
            max_iterations: 5,
            ..StoppingRule::default()
        };
        let m = measure_until_confident(&mut s, &baseline(0.0), &mut noop, &rule).unwrap();
        assert!(!m.confident);
        assert_eq!(m.sample_count, 5);
        assert!(m.half_width_j > rule.beta * m.mean_energy_j);
    }

    #[test]
    fn negative_samples_are_excluded() {
        // Raw deltas: 1 J, 6 J, 6 J, 6 J with 2 W idle over 1 s.
        let trace = vec![0, 1_000_000, 0, 6_000_000, 0, 6_000_000, 0, 6_000_000];
        let mut t = ReplayTrace::new(trace, 1 << 40, 1.0).unwrap();
        let m = measure_until_confident(&mut t, &baseline(2.0), &mut noop, &StoppingRule::default()).unwrap();
        assert_eq!(m.rejected_samples, 1);
        assert_eq!(m.sample_count, 3);
        assert_eq!(m.mean_energy_j, 4.0);
    }

    #[test]
    fn persistent_negative_samples_abort() {
        let mut t = ReplayTrace::new(vec![0, 0], 1 << 40, 1.0).unwrap().cycling(true);
        let rule = StoppingRule {
            max_iterations: 4,
            ..StoppingRule::default()
        };
        assert!(matches!(
            measure_until_confident(&mut t, &baseline(1.0), &mut noop, &rule),
            Err(MeterError::TooManyRejected { rejected: 5, kept: 0 })
        ));
    }

    #[test]
    fn repeat_runs_are_bit_identical() {
        let run = || {
            let mut s = SyntheticSampler::new(1.0, 100.0, 2.0, 1.5, 99).unwrap();
            measure_until_confident(&mut s, &baseline(1.0), &mut noop, &StoppingRule::default()).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
