//! Stochastic ensemble Kalman filter with perturbed observations.
//!
//! Each member is shifted by the Kalman gain applied to its own innovation,
//! with the gain built from ensemble sample covariances. The observation
//! perturbations are not drawn here: they enter through the inflated
//! observables the caller hands in, so the innovation `y - z[e]` already
//! carries the perturbed-observation spread.

use super::{validate_analysis_inputs, AnalysisDiagnostics, AnalysisResult, FilterConfig};
use crate::ensemble::{covariance, Ensemble, ObservableEnsemble};
use crate::error::{Error, Result};
use crate::models::ObservationError;
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// One perturbed-observation EnKF analysis step.
///
/// The observation error model and sampling config play no role beyond the
/// shared signature: perturbations are baked into `z` and the update is the
/// linear Kalman shift. Observables are passed through unchanged; there is
/// no observable-space analysis to report.
pub fn enkf_analysis<R: Scalar>(
    x: &Ensemble<R>,
    z: &ObservableEnsemble<R>,
    y: &[R],
    _err: &ObservationError<R>,
    _cfg: &FilterConfig<R>,
    _rng: &mut RngStream,
) -> Result<AnalysisResult<R>> {
    validate_analysis_inputs(x, z, y)?;
    if x.n_members() < 2 {
        return Err(Error::TooFewSamples {
            min: 2,
            got: x.n_members(),
        });
    }
    let n = x.n_members();
    let m = z.n_vars();
    let n_states = x.n_vars();

    let z_vars: Vec<Vec<R>> = (0..m).map(|j| z.variable(j)).collect();
    let mut c_zz = vec![R::zero(); m * m];
    for j in 0..m {
        for k in j..m {
            let c = covariance(&z_vars[j], &z_vars[k])?;
            c_zz[j * m + k] = c;
            c_zz[k * m + j] = c;
        }
    }
    let mut c_xz = vec![R::zero(); n_states * m];
    for i in 0..n_states {
        let xi = x.variable(i);
        for (j, zj) in z_vars.iter().enumerate() {
            c_xz[i * m + j] = covariance(&xi, zj)?;
        }
    }

    // Factor the observable covariance, retrying once with a small
    // diagonal jitter when the ensemble makes it singular.
    let chol = match cholesky(&c_zz, m) {
        Some(l) => l,
        None => {
            let eps = R::of(1e-10);
            let mut jittered = c_zz.clone();
            for j in 0..m {
                jittered[j * m + j] += eps;
            }
            cholesky(&jittered, m).ok_or(Error::FilterFailure {
                filter: "enkf",
                message: "observable covariance is singular".to_string(),
            })?
        }
    };

    let mut x_a = x.clone();
    let mut d = vec![R::zero(); m];
    for e in 0..n {
        for j in 0..m {
            d[j] = y[j] - z.get(j, e);
        }
        cholesky_solve_in_place(&chol, m, &mut d);
        let member = x_a.member_mut(e);
        for i in 0..n_states {
            let row = &c_xz[i * m..(i + 1) * m];
            let shift: R = row.iter().zip(&d).map(|(&c, &s)| c * s).sum();
            member[i] += shift;
        }
    }
    x_a.check_finite()?;

    Ok(AnalysisResult {
        states: x_a,
        observables: z.clone(),
        diagnostics: AnalysisDiagnostics::default(),
    })
}

/// Lower-triangular Cholesky factor of a symmetric matrix in row-major
/// order, or `None` when a pivot is not strictly positive. Sized for the
/// handful of observables these experiments use, not for large `m`.
fn cholesky<R: Scalar>(a: &[R], m: usize) -> Option<Vec<R>> {
    let mut l = vec![R::zero(); m * m];
    for i in 0..m {
        for j in 0..=i {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            if i == j {
                if s <= R::zero() {
                    return None;
                }
                l[i * m + i] = s.sqrt();
            } else {
                l[i * m + j] = s / l[j * m + j];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T v = b` in place given the lower factor.
fn cholesky_solve_in_place<R: Scalar>(l: &[R], m: usize, b: &mut [R]) {
    for i in 0..m {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * m + k] * b[k];
        }
        b[i] = s / l[i * m + i];
    }
    for i in (0..m).rev() {
        let mut s = b[i];
        for k in i + 1..m {
            s -= l[k * m + i] * b[k];
        }
        b[i] = s / l[i * m + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::FilterKind;

    fn cfg() -> FilterConfig<f64> {
        FilterConfig::for_kind(FilterKind::Enkf)
    }

    fn err() -> ObservationError<f64> {
        ObservationError::Gaussian { variance: 1.0 }
    }

    #[test]
    fn cholesky_recovers_a_known_factor() {
        // A = L L^T with L = [[2,0],[1,3]].
        let a = [4.0f64, 2.0, 2.0, 10.0];
        let l = cholesky(&a, 2).unwrap();
        assert!((l[0] - 2.0).abs() < 1e-14);
        assert!((l[2] - 1.0).abs() < 1e-14);
        assert!((l[3] - 3.0).abs() < 1e-14);
        let mut b = [8.0f64, 26.0];
        cholesky_solve_in_place(&l, 2, &mut b);
        assert!((4.0 * b[0] + 2.0 * b[1] - 8.0).abs() < 1e-12);
        assert!((2.0 * b[0] + 10.0 * b[1] - 26.0).abs() < 1e-12);
    }

    #[test]
    fn zero_innovations_leave_the_states_alone() {
        // Observables pinned to the datum for every member: innovations are
        // exactly zero, so the analysis is the forecast bitwise. The
        // constant observable also makes the covariance singular, which
        // exercises the jitter retry.
        let x =
            Ensemble::from_columns(&[vec![0.3, -1.2], vec![1.7, 0.4], vec![-0.8, 2.1]]).unwrap();
        let z = ObservableEnsemble::from_columns(&[vec![2.0], vec![2.0], vec![2.0]]).unwrap();
        let out = enkf_analysis(&x, &z, &[2.0], &err(), &cfg(), &mut RngStream::new(0)).unwrap();
        assert_eq!(out.states, x);
        assert_eq!(out.observables, z);
    }

    #[test]
    fn scalar_update_matches_the_kalman_formula() {
        // Direct observation of a scalar state with z = x and no
        // perturbations: the gain is cov(x,z)/var(z) = 1 and every member
        // lands exactly on the datum.
        let cols = vec![vec![0.0], vec![1.0], vec![2.0], vec![5.0]];
        let x = Ensemble::from_columns(&cols).unwrap();
        let z = ObservableEnsemble::from_columns(&cols).unwrap();
        let y = [3.0];
        let out = enkf_analysis(&x, &z, &y, &err(), &cfg(), &mut RngStream::new(0)).unwrap();
        let xs: Vec<f64> = cols.iter().map(|c| c[0]).collect();
        let var = covariance(&xs, &xs).unwrap();
        let gain = var / var;
        for (e, c) in cols.iter().enumerate() {
            let want = c[0] + gain * (y[0] - c[0]);
            assert!((out.states.get(0, e) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_mean_approaches_the_conjugate_answer() {
        // x ~ N(1,1) ensemble, z[e] = x[e] + eta[e] with eta ~ N(0,1)
        // (caller-side perturbed observations), y = 2. Conjugate posterior
        // mean is 1.5; the sample answer should land within a couple
        // percent at this size.
        let n = 20_000;
        let mut rng = RngStream::new(11);
        let mut x_cols = Vec::with_capacity(n);
        let mut z_cols = Vec::with_capacity(n);
        for _ in 0..n {
            let xv = 1.0 + rng.standard_normal::<f64>();
            x_cols.push(vec![xv]);
            z_cols.push(vec![xv + rng.standard_normal::<f64>()]);
        }
        let x = Ensemble::from_columns(&x_cols).unwrap();
        let z = ObservableEnsemble::from_columns(&z_cols).unwrap();
        let out = enkf_analysis(&x, &z, &[2.0], &err(), &cfg(), &mut RngStream::new(0)).unwrap();
        let mean = out.states.mean()[0];
        assert!(
            (mean - 1.5).abs() < 0.03,
            "posterior mean {mean} vs conjugate 1.5"
        );
    }

    #[test]
    fn uncorrelated_state_is_untouched() {
        // Second state constant across members: zero covariance with every
        // observable, so its analysis equals its forecast exactly.
        let x = Ensemble::from_columns(&[
            vec![0.3, 7.0],
            vec![1.7, 7.0],
            vec![-0.8, 7.0],
            vec![0.9, 7.0],
        ])
        .unwrap();
        let z = ObservableEnsemble::from_columns(&[vec![0.2], vec![1.5], vec![-0.9], vec![1.0]])
            .unwrap();
        let out = enkf_analysis(&x, &z, &[1.0], &err(), &cfg(), &mut RngStream::new(0)).unwrap();
        for e in 0..4 {
            assert_eq!(out.states.get(1, e), 7.0);
        }
    }

    #[test]
    fn two_observables_stay_finite_and_shift_toward_the_data() {
        let mut rng = RngStream::new(3);
        let cols: Vec<Vec<f64>> = (0..50)
            .map(|_| {
                let a = rng.standard_normal::<f64>();
                let b = 2.0 * rng.standard_normal::<f64>();
                vec![a, b]
            })
            .collect();
        let x = Ensemble::from_columns(&cols).unwrap();
        let z_cols: Vec<Vec<f64>> = cols
            .iter()
            .map(|c| vec![c[0] + 0.1 * rng.standard_normal::<f64>(), c[1]])
            .collect();
        let z = ObservableEnsemble::from_columns(&z_cols).unwrap();
        let y = [4.0, -3.0];
        let out = enkf_analysis(&x, &z, &y, &err(), &cfg(), &mut RngStream::new(0)).unwrap();
        out.states.check_finite().unwrap();
        let mean_before = x.mean();
        let mean_after = out.states.mean();
        assert!((mean_after[0] - y[0]).abs() < (mean_before[0] - y[0]).abs());
        assert!((mean_after[1] - y[1]).abs() < (mean_before[1] - y[1]).abs());
    }
}
