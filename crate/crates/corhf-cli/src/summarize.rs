//! Aggregation of results CSVs into per-(filter, n_ens) RMSE statistics.
//!
//! Each trial contributes one aggregate RMSE over its post-spinup steps;
//! the summary reports the mean and sample standard deviation of those
//! per-trial values. The spinup length comes from the manifest written
//! next to each results file, falling back to zero (with a warning) for
//! files of unknown provenance. Trial values are sorted before
//! accumulation, so the output is exactly invariant to the order in which
//! input files are named.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use corhf::experiments::aggregate_rmse;

use crate::run::{sibling_manifest, RunManifest, RESULTS_HEADER};
use crate::Failure;

pub const SUMMARY_HEADER: &str = "filter,n_ens,mean_rmse_analysis,stddev_rmse_analysis,\
                                  mean_rmse_forecast,stddev_rmse_forecast,n_trials";

/// A filter at one ensemble size: one output row.
type GroupKey = (String, usize);
/// One trial's (forecast, analysis) aggregate RMSE.
type TrialValue = (f64, f64);

pub fn cmd_summarize(patterns: &[PathBuf], out: Option<&Path>) -> Result<(), Failure> {
    let files = expand(patterns)?;
    let summary = summarize_files(&files)?;
    match out {
        None => {
            print!("{summary}");
            Ok(())
        }
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| {
                Failure::Runtime(format!("cannot create {}: {e}", dir.display()))
            })?;
            let path = dir.join("summary.csv");
            fs::write(&path, &summary)
                .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

/// Expands glob patterns, verifies plain paths exist, and deduplicates, so
/// overlapping patterns never double-count a trial.
fn expand(patterns: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = BTreeSet::new();
    for pattern in patterns {
        let text = pattern.to_string_lossy();
        if text.contains(['*', '?', '[']) {
            let matched = glob::glob(&text)
                .map_err(|e| Failure::Usage(format!("bad pattern {text:?}: {e}")))?;
            let mut matched_any = false;
            for entry in matched {
                let path =
                    entry.map_err(|e| Failure::Runtime(format!("cannot read {e}")))?;
                matched_any = true;
                files.insert(canonical(&path)?);
            }
            if !matched_any {
                return Err(Failure::Usage(format!("no results match {text:?}")));
            }
        } else {
            if !pattern.exists() {
                return Err(Failure::Usage(format!(
                    "results file not found: {}",
                    pattern.display()
                )));
            }
            files.insert(canonical(pattern)?);
        }
    }
    if files.is_empty() {
        return Err(Failure::Usage("no results files given".to_string()));
    }
    Ok(files.into_iter().collect())
}

fn canonical(path: &Path) -> Result<PathBuf, Failure> {
    fs::canonicalize(path)
        .map_err(|e| Failure::Runtime(format!("cannot resolve {}: {e}", path.display())))
}

pub fn summarize_files(files: &[PathBuf]) -> Result<String, Failure> {
    let mut groups: BTreeMap<GroupKey, Vec<TrialValue>> = BTreeMap::new();
    for path in files {
        let n_spinup = spinup_for(path)?;
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        for (key, trial_value) in per_trial_aggregates(&text, n_spinup, path)? {
            groups.entry(key).or_default().push(trial_value);
        }
    }

    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for ((filter, n_ens), mut trials) in groups {
        trials.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let forecasts: Vec<f64> = trials.iter().map(|t| t.0).collect();
        let analyses: Vec<f64> = trials.iter().map(|t| t.1).collect();
        let (mf, sf) = mean_stddev(&forecasts);
        let (ma, sa) = mean_stddev(&analyses);
        writeln!(out, "{filter},{n_ens},{ma},{sa},{mf},{sf},{}", trials.len())
            .expect("writing to a String cannot fail");
    }
    Ok(out)
}

fn spinup_for(results_path: &Path) -> Result<usize, Failure> {
    let Some(manifest_path) = sibling_manifest(results_path) else {
        eprintln!(
            "warning: no manifest next to {}; treating every step as scored",
            results_path.display()
        );
        return Ok(0);
    };
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("malformed manifest {}: {e}", manifest_path.display())))?;
    Ok(manifest.n_spinup)
}

/// One (filter, n_ens) -> aggregate RMSE pair per trial appearing in the
/// file, spinup steps excluded. Trials whose rows all fall inside the
/// spinup window contribute nothing.
fn per_trial_aggregates(
    text: &str,
    n_spinup: usize,
    path: &Path,
) -> Result<Vec<(GroupKey, TrialValue)>, Failure> {
    let mut lines = text.lines();
    let header = lines.next().map(str::trim_end);
    if header != Some(RESULTS_HEADER) {
        return Err(Failure::Usage(format!(
            "{} is not a results file (unexpected header)",
            path.display()
        )));
    }
    // Keyed by (filter, n_ens, trial); scores stay in file (= step) order.
    type StepSeries = (Vec<f64>, Vec<f64>);
    let mut steps: BTreeMap<(GroupKey, usize), StepSeries> = BTreeMap::new();
    for (idx, line) in lines.enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let row = parse_row(line).map_err(|why| {
            Failure::Usage(format!("{} line {}: {why}", path.display(), idx + 2))
        })?;
        if row.step < n_spinup {
            continue;
        }
        let entry = steps
            .entry(((row.filter, row.n_ens), row.trial))
            .or_default();
        entry.0.push(row.rmse_forecast);
        entry.1.push(row.rmse_analysis);
    }
    Ok(steps
        .into_iter()
        .map(|((key, _), (f, a))| {
            let forecast = aggregate_rmse(&f).expect("nonempty by construction");
            let analysis = aggregate_rmse(&a).expect("nonempty by construction");
            (key, (forecast, analysis))
        })
        .collect())
}

struct Row {
    trial: usize,
    step: usize,
    filter: String,
    n_ens: usize,
    rmse_forecast: f64,
    rmse_analysis: f64,
}

fn parse_row(line: &str) -> Result<Row, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 7 {
        return Err(format!("expected 7 fields, found {}", fields.len()));
    }
    let parse_usize =
        |s: &str, name| s.parse::<usize>().map_err(|e| format!("bad {name} {s:?}: {e}"));
    let parse_f64 =
        |s: &str, name| s.parse::<f64>().map_err(|e| format!("bad {name} {s:?}: {e}"));
    Ok(Row {
        trial: parse_usize(fields[0], "trial")?,
        step: parse_usize(fields[1], "step")?,
        filter: fields[2].to_string(),
        n_ens: parse_usize(fields[3], "n_ens")?,
        rmse_forecast: parse_f64(fields[4], "rmse_forecast")?,
        rmse_analysis: parse_f64(fields[5], "rmse_analysis")?,
    })
}

/// Mean and sample standard deviation; a single value has deviation zero.
fn mean_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn results_file(dir: &Path, name: &str, rows: &str) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, format!("{RESULTS_HEADER}\n{rows}")).unwrap();
        path
    }

    #[test]
    fn hand_case_mean_and_sample_stddev() {
        // Two trials with analysis RMSE 1 and 3: mean 2, stddev sqrt(2).
        let dir = tempfile::tempdir().unwrap();
        let path = results_file(
            dir.path(),
            "by_hand.csv",
            "0,0,rhf,10,2.0,1.0,0\n1,0,rhf,10,4.0,3.0,0\n",
        );
        let summary = summarize_files(&[path]).unwrap();
        let mut lines = summary.lines();
        assert_eq!(lines.next(), Some(SUMMARY_HEADER));
        let row = lines.next().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(&fields[..2], ["rhf", "10"]);
        assert_eq!(fields[2].parse::<f64>().unwrap(), 2.0);
        assert!((fields[3].parse::<f64>().unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(fields[4].parse::<f64>().unwrap(), 3.0);
        assert_eq!(fields[6], "2");
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn single_trial_reports_zero_stddev() {
        let dir = tempfile::tempdir().unwrap();
        let path = results_file(dir.path(), "one.csv", "0,0,enkf,20,1.5,0.5,0\n");
        let summary = summarize_files(&[path]).unwrap();
        let row = summary.lines().nth(1).unwrap();
        assert_eq!(row, "enkf,20,0.5,0,1.5,0,1");
    }

    #[test]
    fn file_order_does_not_change_the_output() {
        let dir = tempfile::tempdir().unwrap();
        let a = results_file(dir.path(), "a.csv", "0,0,corhf,40,1.0,0.9,0\n");
        let b = results_file(dir.path(), "b.csv", "0,0,corhf,40,1.2,1.1,0\n");
        let c = results_file(dir.path(), "c.csv", "0,0,corhf,40,0.8,0.7,1\n");
        let fwd = summarize_files(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let rev = summarize_files(&[c, b, a]).unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn spinup_steps_are_excluded_via_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = results_file(
            dir.path(),
            "results_deadbeef.csv",
            "0,0,rhf,10,9.0,9.0,0\n0,1,rhf,10,1.0,2.0,0\n",
        );
        let manifest = r#"{
            "run_id": "deadbeef", "tool_version": "0", "seed": 0,
            "config_digest": "deadbeef", "started_unix": 0, "finished_unix": 0,
            "n_spinup": 1, "outputs": ["results_deadbeef.csv"], "failures": []
        }"#;
        fs::write(dir.path().join("manifest_deadbeef.json"), manifest).unwrap();
        let summary = summarize_files(&[path]).unwrap();
        let row = summary.lines().nth(1).unwrap();
        // Only the step-1 row survives the spinup cut.
        assert_eq!(row, "rhf,10,2,0,1,0,1");
    }

    #[test]
    fn trials_with_equal_indices_in_different_files_stay_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let a = results_file(dir.path(), "run1.csv", "0,0,bpf,30,1.0,1.0,0\n");
        let b = results_file(dir.path(), "run2.csv", "0,0,bpf,30,3.0,3.0,0\n");
        let summary = summarize_files(&[a, b]).unwrap();
        let row = summary.lines().nth(1).unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[6], "2", "two trials, not a merged one: {row}");
        assert_eq!(fields[2].parse::<f64>().unwrap(), 2.0);
    }

    #[test]
    fn alien_headers_are_rejected_with_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("notes.csv");
        fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        let err = summarize_files(&[path]).unwrap_err();
        assert!(matches!(&err, Failure::Usage(m) if m.contains("notes.csv")), "{err:?}");
    }
}
