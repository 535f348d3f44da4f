//! Quantile-conserving ensemble filter: observable updates as in the RHF,
//! state updates by linear regression in probit space.
//!
//! Each variable is mapped through its own rank histogram CDF and then the
//! standard normal quantile function, giving every member a probit
//! coordinate; forecast members sit exactly at the probits of their rank
//! quantiles. State probits receive the regression of the observable probit
//! increment and are mapped back through the same prior, so the marginal
//! shape is carried by the histogram while the update itself is Gaussian in
//! the transformed space.

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

/// Clamp a quantile into the same open band the probit transform uses, so
/// the inverse map never sees 0 or 1 after an aggressive increment.
fn clamp_band<R: Scalar>(u: R, n: usize) -> R {
    let delta = R::of(1.0 / (10.0 * (n + 1) as f64));
    u.max(delta).min(R::one() - delta)
}

/// One QCEFF analysis step.
pub fn qceff_analysis<R: Scalar>(
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
            filter: "qceff",
            message: format!("likelihood for observable {j} is not finite"),
        })?;
        let quantiles = draw_quantiles(cfg.sampling, n, rng);
        let z_new = vp.update(&g, &quantiles)?;

        // Probits of the forecast members are exactly the probits of their
        // rank quantiles; analysis probits go through the prior CDF.
        let pz: Vec<R> = (0..n)
            .map(|e| vp.member_quantile(e).norm_quantile())
            .collect();
        let pza: Vec<R> = z_new
            .iter()
            .map(|&v| vp.value_quantile(v).norm_quantile())
            .collect();

        let var_pz = covariance(&pz, &pz)?;
        if var_pz == R::zero() {
            diagnostics.skipped_regressions += 1;
        } else {
            for i in 0..x.n_vars() {
                let xi = x_a.variable(i);
                let tail_x = tail_length(cfg.tails, &xi, None)?;
                let vpx = VariablePrior::build(&xi, tail_x)?;
                let px: Vec<R> = (0..n)
                    .map(|e| vpx.member_quantile(e).norm_quantile())
                    .collect();
                let beta = covariance(&px, &pz)? / var_pz;
                for e in 0..n {
                    let inc = beta * (pza[e] - pz[e]);
                    if inc == R::zero() {
                        continue;
                    }
                    let u = clamp_band((px[e] + inc).norm_cdf(), n);
                    x_a.set(i, e, vpx.prior.inverse_cdf(u)?);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::FilterKind;

    fn gaussian(variance: f64) -> ObservationError<f64> {
        ObservationError::HalfGaussian { variance }
    }

    fn cfg() -> FilterConfig<f64> {
        FilterConfig::for_kind(FilterKind::Qceff)
    }

    #[test]
    fn probit_round_trip_recovers_particles() {
        let samples = [0.4f64, -1.9, 2.3, 0.0, 7.7];
        let vp = VariablePrior::build(&samples, 1.5).unwrap();
        for (e, &v) in samples.iter().enumerate() {
            let probit = vp.member_quantile(e).norm_quantile();
            let back = vp
                .prior
                .inverse_cdf(clamp_band(probit.norm_cdf(), 5))
                .unwrap();
            assert!((back - v).abs() < 1e-9, "member {e}: {back} vs {v}");
        }
    }

    #[test]
    fn constant_likelihood_leaves_everything_in_place() {
        // Equidistant observables: identity posterior, zero probit
        // increment, and the short-circuit keeps the states bitwise.
        let x = Ensemble::from_columns(&[vec![0.3, -2.0], vec![1.7, 5.0]]).unwrap();
        let z = ObservableEnsemble::from_columns(&[vec![1.0], vec![5.0]]).unwrap();
        let mut rng = RngStream::new(0);
        let out = qceff_analysis(&x, &z, &[3.0], &gaussian(1.0), &cfg(), &mut rng).unwrap();
        assert_eq!(out.states, x);
        assert_eq!(out.observables, z);
    }

    #[test]
    fn rank_identical_state_follows_the_observable_quantile() {
        // x = z^3 shares the observable's ranks, so the probit regression
        // coefficient is exactly 1 and the state's posterior quantile
        // equals the observable's.
        let z_vals = [0.1f64, 1.3, -0.7, 2.2, 0.6, -1.4, 0.9];
        let x =
            Ensemble::from_columns(&z_vals.iter().map(|&v| vec![v * v * v]).collect::<Vec<_>>())
                .unwrap();
        let z =
            ObservableEnsemble::from_columns(&z_vals.iter().map(|&v| vec![v]).collect::<Vec<_>>())
                .unwrap();
        let mut rng = RngStream::new(0);
        let out = qceff_analysis(&x, &z, &[1.5], &gaussian(0.5), &cfg(), &mut rng).unwrap();
        let vpz = VariablePrior::build(
            &z.variable(0),
            tail_length(cfg().tails, &z.variable(0), Some(1.5)).unwrap(),
        )
        .unwrap();
        let xf = x.variable(0);
        let vpx = VariablePrior::build(&xf, tail_length(cfg().tails, &xf, None).unwrap()).unwrap();
        for e in 0..7 {
            let uz = vpz.value_quantile(out.observables.get(0, e));
            let ux = vpx.value_quantile(out.states.get(0, e));
            assert!((uz - ux).abs() < 1e-6, "member {e}: {uz} vs {ux}");
        }
    }

    #[test]
    fn gaussian_posterior_mean_matches_conjugate_oracle() {
        let n = 10_000;
        let mut rng = RngStream::new(43);
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![1.0 + rng.standard_normal::<f64>()])
            .collect();
        let x = Ensemble::from_columns(&cols).unwrap();
        let z = x.clone();
        let out = qceff_analysis(&x, &z, &[2.0], &gaussian(1.0), &cfg(), &mut rng).unwrap();
        let mean = crate::ensemble::mean(&out.states.variable(0));
        assert!((mean - 1.5).abs() < 0.02 * 1.5, "posterior mean {mean}");
    }

    #[test]
    fn strong_update_stays_inside_the_prior_support() {
        // A datum far outside the forecast spread drives large probit
        // increments; the band clamp must keep the inverse map finite and
        // inside the support.
        let x = Ensemble::from_columns(&[vec![0.0], vec![0.1], vec![0.2], vec![0.3]]).unwrap();
        let z = x.clone();
        let mut rng = RngStream::new(0);
        let out = qceff_analysis(&x, &z, &[50.0], &gaussian(0.01), &cfg(), &mut rng).unwrap();
        out.states.check_finite().unwrap();
        let fx = x.variable(0);
        let vpx = VariablePrior::build(&fx, tail_length(cfg().tails, &fx, None).unwrap()).unwrap();
        let (lo, hi) = vpx.prior.support();
        for e in 0..4 {
            let v = out.states.get(0, e);
            assert!(
                v >= lo && v <= hi,
                "member {e} value {v} outside [{lo}, {hi}]"
            );
        }
    }
}
