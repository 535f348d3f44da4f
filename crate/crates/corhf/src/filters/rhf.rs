//! Rank histogram filter: univariate observable updates plus linear
//! regression of the states onto each observable increment.

use super::{
    shifted_exp, tail_length, validate_analysis_inputs, AnalysisDiagnostics, AnalysisResult,
    FilterConfig, VariablePrior,
};
use crate::ensemble::{covariance, Ensemble, ObservableEnsemble};
use crate::error::{Error, Result};
use crate::models::ObservationError;
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::univariate::draw_quantiles;

/// One RHF analysis step.
///
/// Observables are processed serially: observable `j` is updated through its
/// own rank histogram prior scaled by the likelihood at each particle, then
/// every state receives the regression increment
/// `cov(x_i, z_j)/var(z_j) · (z_j_analysis - z_j_forecast)`, with state
/// covariances recomputed from the current (partially updated) ensemble.
/// Observables regress only onto the states, never onto each other.
pub fn rhf_analysis<R: Scalar>(
    x: &Ensemble<R>,
    z: &ObservableEnsemble<R>,
    y: &[R],
    err: &ObservationError<R>,
    cfg: &FilterConfig<R>,
    rng: &mut RngStream,
) -> Result<AnalysisResult<R>> {
    validate_analysis_inputs(x, z, y)?;
    let n = x.n_members();
    let mut x_a = x.clone();
    let mut z_a = z.clone();
    let mut diagnostics = AnalysisDiagnostics::default();

    for (j, &datum) in y.iter().enumerate() {
        let samples = z.variable(j);
        let tail = tail_length(cfg.tails, &samples, Some(datum))?;
        let vp = VariablePrior::build(&samples, tail)?;
        let log_g: Vec<R> = samples.iter().map(|&v| err.log_pdf(datum - v)).collect();
        let g = shifted_exp(&log_g).ok_or(Error::FilterFailure {
            filter: "rhf",
            message: format!("likelihood for observable {j} is not finite"),
        })?;
        let quantiles = draw_quantiles(cfg.sampling, n, rng);
        let z_new = vp.update(&g, &quantiles)?;

        let var_z = covariance(&samples, &samples)?;
        if var_z == R::zero() {
            diagnostics.skipped_regressions += 1;
        } else {
            for i in 0..x.n_vars() {
                let xi = x_a.variable(i);
                let slope = covariance(&xi, &samples)? / var_z;
                for e in 0..n {
                    let inc = slope * (z_new[e] - samples[e]);
                    x_a.set(i, e, x_a.get(i, e) + inc);
                }
            }
        }
        for (e, &v) in z_new.iter().enumerate() {
            z_a.set(j, e, v);
        }
    }

    x_a.check_finite()?;
    z_a.check_finite()?;
    Ok(AnalysisResult {
        states: x_a,
        observables: z_a,
        diagnostics,
    })
}
