use std::ffi::OsString;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use super::backend::Workload;
use super::MeterError;

/// A decoder run as an argument vector, never through a shell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderInvocation {
    pub program: OsString,
    pub args: Vec<OsString>,
    /// Working directory of the decoder; inherited when unset.
    pub current_dir: Option<PathBuf>,
}

impl DecoderInvocation {
    pub fn from_argv<I, S>(argv: I) -> Result<Self, MeterError>
    where
        I: IntoIterator<Item = S>,
        S: Into<OsString>,
    {
        let mut it = argv.into_iter().map(Into::into);
        let program = it
            .next()
            .ok_or_else(|| MeterError::InvalidArgument("empty decoder command".into()))?;
        Ok(Self {
            program,
            args: it.collect(),
            current_dir: None,
        })
    }

    pub fn in_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.current_dir = Some(dir.into());
        self
    }
}

impl Workload for DecoderInvocation {
    fn run(&mut self) -> Result<(), MeterError> {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args).stdin(Stdio::null());
        if let Some(dir) = &self.current_dir {
            cmd.current_dir(dir);
        }
        let output = cmd.output().map_err(|e| MeterError::DecodeFailed {
            status: None,
            output: format!("failed to spawn {:?}: {e}", self.program),
        })?;
        if output.status.success() {
            return Ok(());
        }
        let mut captured = String::from_utf8_lossy(&output.stderr).into_owned();
        let stdout = String::from_utf8_lossy(&output.stdout);
        if !stdout.trim().is_empty() {
            captured.push_str(&stdout);
        }
        Err(MeterError::DecodeFailed {
            status: output.status.code(),
            output: captured,
        })
    }
}
