//! Trajectory tables, ensemble reports and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use beable_core::verification::EnsembleReport;
use beable_core::Trajectory;

use crate::config::{to_json, ModelConfig};
use crate::{CliError, SCHEMA_VERSION};

/// `t, lambda_0..lambda_{L-1}, xi_0..xi_{L-1}`
pub fn trajectory_csv(traj: &Trajectory, n_beables: usize) -> String {
    let mut s = String::from("t");
    for l in 0..n_beables {
        write!(s, ",lambda_{l}").unwrap();
    }
    for l in 0..n_beables {
        write!(s, ",xi_{l}").unwrap();
    }
    s.push('\n');
    for sample in &traj.samples {
        write!(s, "{}", sample.t).unwrap();
        for v in sample.lambdas.iter().chain(&sample.xis) {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// One row per probe time and cell tuple, for plotting.
pub fn ensemble_long_csv(report: &EnsembleReport) -> String {
    let n_beables = report.cells.first().map_or(0, Vec::len);
    let mut s = String::from("t");
    for l in 0..n_beables {
        write!(s, ",cell_{l}").unwrap();
    }
    s.push_str(",empirical_count,empirical_fraction,quantum_probability,z_score\n");
    for (k, &t) in report.times.iter().enumerate() {
        for (j, cells) in report.cells.iter().enumerate() {
            write!(s, "{t}").unwrap();
            for c in cells {
                write!(s, ",{c}").unwrap();
            }
            let z = report.z_scores[k][j].map(|z| z.to_string()).unwrap_or_default();
            writeln!(
                s,
                ",{},{},{},{z}",
                report.empirical[k][j],
                report.empirical_fraction(k, j),
                report.quantum[k][j]
            )
            .unwrap();
        }
    }
    s
}

#[derive(Debug, Serialize)]
pub struct TrajectorySummary<'a> {
    pub schema_version: u32,
    pub labels: Vec<String>,
    pub lambda0: &'a [f64],
    #[serde(flatten)]
    pub trajectory: &'a Trajectory,
}

#[derive(Debug, Serialize)]
pub struct EnsembleDocument<'a> {
    pub schema_version: u32,
    pub labels: Vec<String>,
    #[serde(flatten)]
    pub report: &'a EnsembleReport,
}

pub fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub artifact_version: &'static str,
    pub command: &'static str,
    pub config_sha256: String,
    pub seed: Option<u64>,
    /// Command-line parameters that together with `config` determine the outputs.
    pub parameters: Value,
    pub config: Value,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Writes the named files into `dir`, then a `manifest.json` listing them.
pub struct OutputDir {
    dir: PathBuf,
    outputs: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.outputs.push(OutputFile {
            file: name.to_string(),
            bytes: contents.len(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    pub fn finish(
        self,
        command: &'static str,
        config: &ModelConfig,
        seed: Option<u64>,
        parameters: Value,
        started_unix: u64,
    ) -> Result<(), CliError> {
        let canonical = to_json(config);
        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            artifact_version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256: sha256_hex(canonical.as_bytes()),
            seed,
            parameters,
            config: serde_json::to_value(config).expect("config serializes"),
            started_unix,
            finished_unix: unix_now(),
            outputs: self.outputs,
        };
        let path = self.dir.join("manifest.json");
        fs::write(&path, pretty_json(&manifest)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}
