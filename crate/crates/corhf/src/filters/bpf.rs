//! Bootstrap particle filter.
//!
//! Importance weights from the observation likelihood, systematic
//! resampling every step. No effective-sample-size gate: the resample
//! always runs, and with exactly equal weights it reproduces the forecast
//! ensemble member for member.

use super::{shifted_exp, validate_analysis_inputs, AnalysisDiagnostics, AnalysisResult};
use crate::ensemble::{Ensemble, ObservableEnsemble};
use crate::error::Result;
use crate::models::ObservationError;
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// One bootstrap particle filter step: weight, then systematically
/// resample both the states and their observables.
pub fn bpf_analysis<R: Scalar>(
    x: &Ensemble<R>,
    z: &ObservableEnsemble<R>,
    y: &[R],
    err: &ObservationError<R>,
    rng: &mut RngStream,
) -> Result<AnalysisResult<R>> {
    validate_analysis_inputs(x, z, y)?;
    let n = x.n_members();
    let mut diagnostics = AnalysisDiagnostics::default();

    let mut log_w = vec![R::zero(); n];
    for (e, lw) in log_w.iter_mut().enumerate() {
        let mut s = R::zero();
        for (j, &obs) in y.iter().enumerate() {
            s += err.log_pdf(obs - z.get(j, e));
        }
        *lw = s;
    }
    let weights = match shifted_exp(&log_w) {
        Some(w) => w,
        None => {
            // Every particle is impossible under the data (or the data are
            // not finite). Fall back to uniform weights rather than abort
            // the trial.
            diagnostics.uniform_weight_fallbacks += 1;
            vec![R::one(); n]
        }
    };
    let total: R = weights.iter().copied().sum();

    // Systematic resampling: one uniform offset, n evenly spaced points
    // through the cumulative weights.
    let offset: R = rng.uniform();
    let n_r = R::of(n as f64);
    let mut selected = Vec::with_capacity(n);
    let mut cum = R::zero();
    let mut e = 0usize;
    for k in 0..n {
        let point = (offset + R::of(k as f64)) / n_r * total;
        while cum + weights[e] < point && e + 1 < n {
            cum += weights[e];
            e += 1;
        }
        selected.push(e);
    }

    let mut x_a = Ensemble::zeros(x.n_vars(), n);
    let mut z_a = ObservableEnsemble::zeros(z.n_vars(), n);
    for (k, &src) in selected.iter().enumerate() {
        for i in 0..x.n_vars() {
            x_a.set(i, k, x.get(i, src));
        }
        for j in 0..z.n_vars() {
            z_a.set(j, k, z.get(j, src));
        }
    }

    Ok(AnalysisResult {
        states: x_a,
        observables: z_a,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err() -> ObservationError<f64> {
        ObservationError::HalfGaussian { variance: 1.0 }
    }

    #[test]
    fn equal_weights_reproduce_the_forecast_exactly() {
        // Members equidistant from the datum carry identical weights, and
        // systematic resampling with equal weights is the identity
        // selection regardless of the offset draw.
        let x = Ensemble::from_columns(&[vec![10.0], vec![20.0], vec![30.0], vec![40.0]]).unwrap();
        let z = ObservableEnsemble::from_columns(&[vec![1.0], vec![3.0], vec![1.0], vec![3.0]])
            .unwrap();
        let out = bpf_analysis(&x, &z, &[2.0], &err(), &mut RngStream::new(7)).unwrap();
        assert_eq!(out.states, x);
        assert_eq!(out.observables, z);
        assert_eq!(out.diagnostics.total(), 0);
    }

    #[test]
    fn an_overwhelming_weight_captures_every_slot() {
        // One particle sits on the datum, the rest are ~40 sigma away:
        // after resampling every member is a copy of the good particle.
        let x = Ensemble::from_columns(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let z = ObservableEnsemble::from_columns(&[vec![40.0], vec![0.0], vec![40.0]]).unwrap();
        let out = bpf_analysis(&x, &z, &[0.0], &err(), &mut RngStream::new(1)).unwrap();
        for e in 0..3 {
            assert_eq!(out.states.get(0, e), 2.0);
            assert_eq!(out.observables.get(0, e), 0.0);
        }
    }

    #[test]
    fn posterior_mean_matches_quadrature() {
        // Prior N(0,1) via a large sample, likelihood centered at y = 1
        // with variance 1. Resampled mean should approach the conjugate
        // posterior mean 0.5.
        let n = 50_000;
        let mut rng = RngStream::new(21);
        let cols: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.standard_normal::<f64>()]).collect();
        let x = Ensemble::from_columns(&cols).unwrap();
        let z = ObservableEnsemble::from_columns(&cols).unwrap();
        let out = bpf_analysis(&x, &z, &[1.0], &err(), &mut rng).unwrap();
        let mean = out.states.mean()[0];
        assert!((mean - 0.5).abs() < 0.02, "resampled mean {mean}");
    }

    #[test]
    fn impossible_data_fall_back_to_uniform_weights() {
        let x = Ensemble::from_columns(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let z = ObservableEnsemble::from_columns(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let out = bpf_analysis(&x, &z, &[f64::INFINITY], &err(), &mut RngStream::new(2)).unwrap();
        assert_eq!(out.diagnostics.uniform_weight_fallbacks, 1);
        assert_eq!(out.states, x);
    }

    #[test]
    fn resampling_respects_the_weight_proportions() {
        // Weights 3:1:1:1 over four members, so half the mass sits on the
        // first particle. Systematic resampling allocates slots in
        // proportion with sub-multinomial variance; over many offsets the
        // selection fraction has to sit right on one half.
        let x = Ensemble::from_columns(
            &(0..4)
                .map(|e| vec![if e == 0 { 5.0 } else { -5.0 }])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        // First member's observable sits on the datum, others offset so
        // their weight is about a third of the first's.
        let r = (2.0f64 * (3.0f64).ln()).sqrt();
        let z = ObservableEnsemble::from_columns(&[vec![0.0], vec![r], vec![r], vec![r]]).unwrap();
        let mut hits = 0usize;
        let total = 400usize;
        for seed in 0..total as u64 {
            let out = bpf_analysis(&x, &z, &[0.0], &err(), &mut RngStream::new(seed)).unwrap();
            for e in 0..4 {
                if out.states.get(0, e) == 5.0 {
                    hits += 1;
                }
            }
        }
        // Weight of the on-datum particle is 3/(3+3) = 1/2.
        let frac = hits as f64 / (4 * total) as f64;
        assert!((frac - 0.5).abs() < 0.05, "selection fraction {frac}");
    }
}
