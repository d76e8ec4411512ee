use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::CliError;

pub const VERSION: &str = env!("BITGEO_BUILD_VERSION");

/// Record of one run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub threads: usize,
    /// The parsed arguments, enough to repeat the run.
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    /// Subcommand-specific headline numbers.
    pub results: serde_json::Value,
    pub wall_clock_seconds: f64,
}

pub struct Run {
    started: Instant,
    manifest: RunManifest,
}

impl Run {
    pub fn start(subcommand: &'static str, config: &impl Serialize, seed: Option<u64>) -> Result<Self, CliError> {
        Ok(Self {
            started: Instant::now(),
            manifest: RunManifest {
                subcommand,
                version: VERSION,
                seed,
                threads: rayon::current_num_threads(),
                config: serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?,
                outputs: Vec::new(),
                results: serde_json::Value::Null,
                wall_clock_seconds: 0.0,
            },
        })
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.manifest.outputs.push(path.into());
    }

    pub fn results(&mut self, value: impl Serialize) -> Result<(), CliError> {
        self.manifest.results = serde_json::to_value(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(())
    }

    pub fn finish(mut self, path: &Path) -> Result<RunManifest, CliError> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        bitgeo::diagnostics::write_json(path, &self.manifest)?;
        Ok(self.manifest)
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}
