//! Scatter-data emission for the demonstration scenarios.
//!
//! Each invocation writes two CSV files, one for the prior cloud and one
//! for the analysis cloud, with identical (x1, x2, role) columns so they
//! can be concatenated or plotted separately without consulting the file
//! name.

use std::fs;
use std::path::{Path, PathBuf};

use corhf::experiments::{run_demo, DemoScenario};
use corhf::filters::FilterKind;
use corhf::rng::RngStream;
use corhf::Real;

use crate::config::VALID_FILTERS;
use crate::Failure;

pub const SCENARIOS: &str = "normal-beta, scalar";

#[derive(Debug)]
pub struct DemoFiles {
    pub prior_path: PathBuf,
    pub analysis_path: PathBuf,
    pub observations: Vec<Real>,
}

pub fn cmd_demo(
    scenario: &str,
    filter: &str,
    n_ens: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DemoFiles, Failure> {
    let spec: DemoScenario = match scenario {
        "normal-beta" => DemoScenario::normal_beta(),
        "scalar" => DemoScenario::scalar(),
        other => {
            return Err(Failure::Usage(format!(
                "unknown scenario {other:?}; valid names: {SCENARIOS}"
            )))
        }
    };
    let kind = FilterKind::from_name(filter).ok_or_else(|| {
        Failure::Usage(format!("unknown filter {filter:?}; valid names: {VALID_FILTERS}"))
    })?;

    let mut rng = RngStream::new(seed);
    let output =
        run_demo(&spec, kind, n_ens, &mut rng).map_err(|e| Failure::Runtime(e.to_string()))?;

    fs::create_dir_all(out_dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let prior_path = out_dir.join(format!("demo_{scenario}_{filter}_prior.csv"));
    let analysis_path = out_dir.join(format!("demo_{scenario}_{filter}_analysis.csv"));
    write_points(&prior_path, &output.prior, "prior")?;
    write_points(&analysis_path, &output.analysis, "analysis")?;

    Ok(DemoFiles {
        prior_path,
        analysis_path,
        observations: output.observations,
    })
}

fn write_points(path: &Path, points: &[[Real; 2]], role: &str) -> Result<(), Failure> {
    let mut body = String::from("x1,x2,role\n");
    for p in points {
        body.push_str(&format!("{},{},{role}\n", p[0], p[1]));
    }
    fs::write(path, body)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}
