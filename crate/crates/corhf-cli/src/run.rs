//! Experiment execution and result persistence.
//!
//! A run writes two files into the output directory, both named by the
//! first eight characters of the effective config digest: the per-step
//! results CSV and a JSON manifest describing how the CSV was produced.
//! The CSV body is a pure function of the config, so re-running the same
//! document with the same seed reproduces it byte for byte; timestamps and
//! other non-reproducible context live only in the manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use corhf::experiments::run_trials;
use serde::{Deserialize, Serialize};

use crate::config::{run_id, ConfigFile};
use crate::Failure;

pub const RESULTS_HEADER: &str =
    "trial,step,filter,n_ens,rmse_forecast,rmse_analysis,degenerate_count";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_digest: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Leading steps the summary statistics must exclude.
    pub n_spinup: usize,
    /// File names (relative to the manifest's directory) this run wrote.
    pub outputs: Vec<String>,
    pub failures: Vec<FailureNote>,
}

/// A filter that died mid-trial; the results CSV simply stops carrying its
/// rows at `step`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailureNote {
    pub trial: usize,
    pub filter: String,
    pub n_ens: usize,
    pub step: usize,
    pub message: String,
}

pub struct RunOutput {
    pub results_path: PathBuf,
    pub manifest_path: PathBuf,
    pub failures: Vec<FailureNote>,
}

pub fn cmd_run(config: &ConfigFile, jobs: usize, out_dir: &Path) -> Result<RunOutput, Failure> {
    let experiment = config.to_experiment().map_err(Failure::Usage)?;
    experiment
        .validate()
        .map_err(|e| Failure::Usage(format!("invalid config: {e}")))?;

    let digest = config.digest();
    let id = run_id(&digest);
    fs::create_dir_all(out_dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;

    let started_unix = unix_now();
    let results = run_trials(&experiment, jobs).map_err(|e| Failure::Runtime(e.to_string()))?;
    let finished_unix = unix_now();

    let mut body = String::from(RESULTS_HEADER);
    body.push('\n');
    let mut failures = Vec::new();
    for trial in &results {
        for run in &trial.runs {
            let name = run.kind.name();
            for (step, s) in run.steps.iter().enumerate() {
                writeln!(
                    body,
                    "{},{},{},{},{},{},{}",
                    trial.trial, step, name, run.n_ens, s.rmse_forecast, s.rmse_analysis,
                    s.degenerate_count
                )
                .expect("writing to a String cannot fail");
            }
            if let Some(f) = &run.failure {
                failures.push(FailureNote {
                    trial: trial.trial,
                    filter: name.to_string(),
                    n_ens: run.n_ens,
                    step: f.step,
                    message: f.message.clone(),
                });
            }
        }
    }

    let results_name = format!("results_{id}.csv");
    let manifest_name = format!("manifest_{id}.json");
    let results_path = out_dir.join(&results_name);
    let manifest_path = out_dir.join(&manifest_name);

    let manifest = RunManifest {
        run_id: id.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config_digest: digest.clone(),
        started_unix,
        finished_unix,
        n_spinup: config.n_spinup,
        outputs: vec![results_name],
        failures: failures.clone(),
    };

    write_file(&results_path, &body)?;
    let mut manifest_text =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_text.push('\n');
    write_file(&manifest_path, &manifest_text)?;

    Ok(RunOutput {
        results_path,
        manifest_path,
        failures,
    })
}

/// Looks for the manifest written alongside a results file, following the
/// `results_<id>.csv` / `manifest_<id>.json` naming convention.
pub fn sibling_manifest(results_path: &Path) -> Option<PathBuf> {
    let name = results_path.file_name()?.to_str()?;
    let id = name.strip_prefix("results_")?.strip_suffix(".csv")?;
    let candidate = results_path.with_file_name(format!("manifest_{id}.json"));
    candidate.exists().then_some(candidate)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
