//! Result rows, run metadata and weight hashes.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub const RESULT_HEADER: [&str; 8] = ["run_id", "policy", "scenario", "N", "seed", "t", "metric_name", "value"];

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub run_id: String,
    pub policy: String,
    pub scenario: String,
    pub n: usize,
    pub seed: u64,
    pub t: f64,
    pub metric_name: String,
    pub value: f64,
}

/// Rows of one episode: the metric at every step of `trace`.
pub struct Episode {
    pub seed: u64,
    pub trace: Vec<f64>,
}

pub struct RunLabels<'a> {
    pub run_id: &'a str,
    pub policy: &'a str,
    pub scenario: &'a str,
    pub n: usize,
    pub dt: f64,
    pub metric_name: &'a str,
}

pub fn write_results(path: &Path, labels: &RunLabels<'_>, episodes: &[Episode]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(RESULT_HEADER)?;
    for ep in episodes {
        for (step, v) in ep.trace.iter().enumerate() {
            let row = ResultRow {
                run_id: labels.run_id.to_string(),
                policy: labels.policy.to_string(),
                scenario: labels.scenario.to_string(),
                n: labels.n,
                seed: ep.seed,
                t: step as f64 * labels.dt,
                metric_name: labels.metric_name.to_string(),
                value: *v,
            };
            w.write_record([
                row.run_id,
                row.policy,
                row.scenario,
                row.n.to_string(),
                row.seed.to_string(),
                row.t.to_string(),
                row.metric_name,
                row.value.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Content hash in the style of a git blob object, with SHA-256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Short, stable identifier for a run from everything that determines it.
pub fn run_id(command: &str, material: &str) -> String {
    let digest = Sha256::digest(material.as_bytes());
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("{command}-{hex}")
}

/// `path` with `suffix` appended to its file name.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// TOML metadata: `run.*` facts followed by the resolved configuration.
pub fn write_meta(path: &Path, run: &[(&str, String)], resolved: &str) -> Result<()> {
    let mut f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    for (k, v) in run {
        writeln!(f, "run.{k} = {}", toml::Value::String(v.clone()))?;
    }
    f.write_all(resolved.as_bytes())?;
    Ok(())
}
