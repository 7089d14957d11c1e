//! Machine-wide exclusion for measured decodes.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::MeterError;

/// Environment variable overriding the lock file location.
pub const LOCK_ENV: &str = "CODEC_ENERGY_LOCK";

pub fn default_lock_path() -> PathBuf {
    match std::env::var_os(LOCK_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => std::env::temp_dir().join("codec-energy-measure.lock"),
    }
}

/// Held for the duration of one measured decode.
///
/// Backed by an advisory `flock`, so the lock disappears with the process
/// even if it crashes. When a log path is set, every acquire and release is
/// appended to it while the lock is held.
#[derive(Debug)]
pub struct MeasurementLock {
    file: File,
    log: Option<PathBuf>,
    holder: String,
}

impl MeasurementLock {
    /// Blocks until the lock at `path` is free.
    pub fn acquire(path: &Path, log: Option<&Path>) -> Result<Self, MeterError> {
        let lock_err = |e: std::io::Error| MeterError::Lock {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(lock_err)?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path)
            .map_err(lock_err)?;
        file.lock().map_err(lock_err)?;
        let holder = format!("{}:{:?}", std::process::id(), std::thread::current().id());
        let lock = Self {
            file,
            log: log.map(Path::to_path_buf),
            holder,
        };
        lock.append_log("acquire")?;
        Ok(lock)
    }

    fn append_log(&self, event: &str) -> Result<(), MeterError> {
        let Some(log) = &self.log else {
            return Ok(());
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(log)
            .map_err(|e| MeterError::Lock {
                path: log.clone(),
                reason: e.to_string(),
            })?;
        writeln!(f, "{event} {}", self.holder).map_err(|e| MeterError::Lock {
            path: log.clone(),
            reason: e.to_string(),
        })
    }
}

impl Drop for MeasurementLock {
    fn drop(&mut self) {
        let _ = self.append_log("release");
        let _ = self.file.unlock();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::time::Duration;

    #[test]
    fn holders_never_overlap() {
        let dir = tempfile::tempdir().unwrap();
        let lock_path = dir.path().join("m.lock");
        let log_path = dir.path().join("m.log");
        let inside = Arc::new(AtomicUsize::new(0));

        std::thread::scope(|scope| {
            for _ in 0..4 {
                let (lock_path, log_path, inside) = (&lock_path, &log_path, inside.clone());
                scope.spawn(move || {
                    for _ in 0..3 {
                        let _guard = MeasurementLock::acquire(lock_path, Some(log_path)).unwrap();
                        assert_eq!(inside.fetch_add(1, Ordering::SeqCst), 0);
                        std::thread::sleep(Duration::from_millis(5));
                        inside.fetch_sub(1, Ordering::SeqCst);
                    }
                });
            }
        });

        let log = std::fs::read_to_string(&log_path).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert_eq!(lines.len(), 24);
        for pair in lines.chunks(2) {
            let acquire = pair[0].strip_prefix("acquire ").unwrap();
            let release = pair[1].strip_prefix("release ").unwrap();
            assert_eq!(acquire, release);
        }
    }

    #[test]
    fn env_override() {
        // Only checks the fallback shape; mutating the environment would race other tests.
        let p = default_lock_path();
        assert!(p.file_name().is_some());
    }
}
