//! Copula rank histogram filter.
//!
//! The analysis is a triangular transport: observables first, then states,
//! each through a univariate rank-histogram update. What distinguishes the
//! CoRHF from the plain RHF is the scaling of each variable's prior. For
//! observable `i` past the first, member `e`'s posterior is scaled by the
//! likelihood times an empirical conditional copula density conditioned on
//! that member's already-computed observable analyses; for state `i` the
//! scaling is the conditional copula alone, conditioned on all observable
//! analyses and the earlier state analyses. Conditioning enters through
//! quantiles: analysis values are pushed through their variable's prior CDF
//! (clamped away from 0 and 1), while forecast particles sit at the
//! canonical grid by construction.
//!
//! All kernel evaluations go through the canonical-grid cache: the particle
//! kernel matrix is exponentiated once per analysis, and each conditioning
//! variable contributes one kernel row per member. Conditioning weights are
//! max-shifted per member before exponentiation, which changes the copula
//! factor only by a member-constant and therefore leaves the normalized
//! posterior untouched.

use super::{
    shifted_exp, tail_length, validate_analysis_inputs, AnalysisDiagnostics, AnalysisResult,
    FilterConfig, VariablePrior,
};
use crate::copula::{bandwidth, CanonicalGridKernel, KernelSpec};
use crate::ensemble::{Ensemble, ObservableEnsemble};
use crate::error::{Error, Result};
use crate::models::ObservationError;
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::univariate::{draw_quantiles, PiecewiseDensity, PiecewiseScaling};

/// A variable whose analysis is complete, kept for conditioning later
/// variables: each member's rank in it, each member's analysis quantile
/// under its prior, and its position for localization.
struct Conditioned<R> {
    ranks: Vec<usize>,
    analysis_quantiles: Vec<R>,
    position: Option<R>,
}

/// One CoRHF analysis step.
pub fn corhf_analysis<R: Scalar>(
    x: &Ensemble<R>,
    z: &ObservableEnsemble<R>,
    y: &[R],
    err: &ObservationError<R>,
    cfg: &FilterConfig<R>,
    rng: &mut RngStream,
) -> Result<AnalysisResult<R>> {
    validate_analysis_inputs(x, z, y)?;
    let copula = cfg.copula.as_ref().ok_or(Error::FilterFailure {
        filter: "corhf",
        message: "missing copula config".to_string(),
    })?;
    if let Some(loc) = &cfg.localization {
        if loc.n_obs() != z.n_vars() || loc.n_states() != x.n_vars() {
            return Err(Error::DimensionMismatch {
                what: "localization positions",
                got: loc.n_obs() + loc.n_states(),
                expected: z.n_vars() + x.n_vars(),
            });
        }
    }
    let n = x.n_members();
    let h = bandwidth(copula.bandwidth_multiplier, n)?;
    let kernel = KernelSpec::new(copula.kernel, h)?;
    let ckern = CanonicalGridKernel::new(kernel, n);
    // The particle-to-particle kernel matrix, exponentiated once. Entries
    // are bounded by the kernel's peak height, so this cannot overflow.
    let exp_table: Vec<R> = (0..n * n)
        .map(|idx| ckern.log_sigma_grid(idx / n, idx % n).exp())
        .collect();

    let obs_position = |j: usize| cfg.localization.as_ref().map(|l| l.obs_position(j));
    let state_position = |i: usize| cfg.localization.as_ref().map(|l| l.state_position(i));
    let taper_between = |a: Option<R>, b: Option<R>| match (&cfg.localization, a, b) {
        (Some(loc), Some(pa), Some(pb)) => loc.taper(pa, pb),
        _ => R::one(),
    };

    let mut x_a = x.clone();
    let mut z_a = z.clone();
    let mut diagnostics = AnalysisDiagnostics::default();
    let mut done: Vec<Conditioned<R>> = Vec::with_capacity(z.n_vars() + x.n_vars());
    let mut scratch = Scratch::new(n);

    for (j, &datum) in y.iter().enumerate() {
        let samples = z.variable(j);
        let tail = tail_length(cfg.tails, &samples, Some(datum))?;
        let vp = VariablePrior::build(&samples, tail)?;
        let log_lik: Vec<R> = samples.iter().map(|&v| err.log_pdf(datum - v)).collect();
        let position = obs_position(j);
        let conds: Vec<(usize, R)> = (0..j)
            .filter_map(|prev| {
                let t = taper_between(position, done[prev].position);
                (t > R::zero()).then_some((prev, t))
            })
            .collect();
        let quantiles = draw_quantiles(cfg.sampling, n, rng);

        let z_new = if conds.is_empty() {
            // No conditioning: the conditional copula factor is identically
            // one and this is a plain likelihood update shared by all
            // members.
            let g = shifted_exp(&log_lik).ok_or(Error::FilterFailure {
                filter: "corhf",
                message: format!("likelihood for observable {j} is not finite"),
            })?;
            vp.update(&g, &quantiles)?
        } else {
            let mut log_lik_ranked = vec![R::zero(); n];
            for (e, &r) in vp.ranks.iter().enumerate() {
                log_lik_ranked[r] = log_lik[e];
            }
            let fallback = LazyPosterior::new(&vp.prior, &log_lik_ranked);
            per_member_updates(
                &vp,
                &conds,
                &done,
                &ckern,
                &exp_table,
                Some(&log_lik_ranked),
                &quantiles,
                fallback,
                &mut scratch,
                &mut diagnostics,
            )?
        };

        let analysis_quantiles = z_new.iter().map(|&v| vp.value_quantile(v)).collect();
        for (e, &v) in z_new.iter().enumerate() {
            z_a.set(j, e, v);
        }
        done.push(Conditioned {
            ranks: vp.ranks,
            analysis_quantiles,
            position,
        });
    }

    for i in 0..x.n_vars() {
        let samples = x.variable(i);
        let tail = tail_length(cfg.tails, &samples, None)?;
        let vp = VariablePrior::build(&samples, tail)?;
        let position = state_position(i);
        let conds: Vec<(usize, R)> = (0..done.len())
            .filter_map(|prev| {
                let t = taper_between(position, done[prev].position);
                (t > R::zero()).then_some((prev, t))
            })
            .collect();

        let x_new = if conds.is_empty() {
            // Nothing to condition on: the copula factor is one and the
            // posterior equals the prior, so every member keeps its value.
            samples.clone()
        } else {
            let quantiles = draw_quantiles(cfg.sampling, n, rng);
            per_member_updates(
                &vp,
                &conds,
                &done,
                &ckern,
                &exp_table,
                None,
                &quantiles,
                LazyPosterior::keep_forecast(&samples),
                &mut scratch,
                &mut diagnostics,
            )?
        };

        let analysis_quantiles = x_new.iter().map(|&v| vp.value_quantile(v)).collect();
        for (e, &v) in x_new.iter().enumerate() {
            x_a.set(i, e, v);
        }
        done.push(Conditioned {
            ranks: vp.ranks,
            analysis_quantiles,
            position,
        });
    }

    x_a.check_finite()?;
    z_a.check_finite()?;
    Ok(AnalysisResult {
        states: x_a,
        observables: z_a,
        diagnostics,
    })
}

/// Per-member working buffers, reused across every variable of the step.
struct Scratch<R> {
    row: Vec<R>,
    log_gamma: Vec<R>,
    weight_ranked: Vec<R>,
    log_g_ranked: Vec<R>,
}

impl<R: Scalar> Scratch<R> {
    fn new(n: usize) -> Self {
        Self {
            row: vec![R::zero(); n],
            log_gamma: vec![R::zero(); n],
            weight_ranked: vec![R::zero(); n],
            log_g_ranked: vec![R::zero(); n],
        }
    }
}

/// What a member falls back to when its conditioning weights are unusable:
/// the likelihood-only posterior for observables, the forecast value for
/// states.
enum LazyPosterior<'a, R: Scalar> {
    LikelihoodOnly {
        prior: &'a PiecewiseDensity<R>,
        log_g_ranked: &'a [R],
        cached: Option<PiecewiseDensity<R>>,
    },
    KeepForecast(&'a [R]),
}

impl<'a, R: Scalar> LazyPosterior<'a, R> {
    fn new(prior: &'a PiecewiseDensity<R>, log_g_ranked: &'a [R]) -> Self {
        LazyPosterior::LikelihoodOnly {
            prior,
            log_g_ranked,
            cached: None,
        }
    }

    fn keep_forecast(samples: &'a [R]) -> Self {
        LazyPosterior::KeepForecast(samples)
    }

    fn value(&mut self, member: usize, quantile: R) -> Result<R> {
        match self {
            LazyPosterior::KeepForecast(samples) => Ok(samples[member]),
            LazyPosterior::LikelihoodOnly {
                prior,
                log_g_ranked,
                cached,
            } => {
                if cached.is_none() {
                    let g = shifted_exp(log_g_ranked).ok_or(Error::FilterFailure {
                        filter: "corhf",
                        message: "likelihood fallback is not finite".to_string(),
                    })?;
                    *cached = Some(prior.scaled(&PiecewiseScaling::from_particle_values(&g)?)?);
                }
                cached.as_ref().unwrap().inverse_cdf(quantile)
            }
        }
    }
}

/// Runs the member-specific posterior construction for one variable: builds
/// each member's conditioning weights, evaluates the conditional copula at
/// every particle quantile, combines with the optional ranked log
/// likelihood, and inverts the member's posterior at its rank-matched
/// quantile.
#[allow(clippy::too_many_arguments)]
fn per_member_updates<R: Scalar>(
    vp: &VariablePrior<R>,
    conds: &[(usize, R)],
    done: &[Conditioned<R>],
    ckern: &CanonicalGridKernel<R>,
    exp_table: &[R],
    log_lik_ranked: Option<&[R]>,
    quantiles: &[R],
    mut fallback: LazyPosterior<'_, R>,
    scratch: &mut Scratch<R>,
    diagnostics: &mut AnalysisDiagnostics,
) -> Result<Vec<R>> {
    let n = vp.n();
    let mut out = vec![R::zero(); n];
    for (e, out_e) in out.iter_mut().enumerate() {
        let rank_e = vp.ranks[e];
        let quantile_e = quantiles[rank_e];

        scratch.log_gamma.fill(R::zero());
        for &(prev, taper) in conds {
            let d = &done[prev];
            ckern.log_sigma_row(d.analysis_quantiles[e], &mut scratch.row);
            for (lg, &r) in scratch.log_gamma.iter_mut().zip(&d.ranks) {
                *lg += taper * scratch.row[r];
            }
        }

        let max_lg = scratch
            .log_gamma
            .iter()
            .copied()
            .fold(R::neg_infinity(), R::max);
        if !max_lg.is_finite() {
            diagnostics.degenerate_conditioning += 1;
            *out_e = fallback.value(e, quantile_e)?;
            continue;
        }
        for (eps, &lg) in scratch.log_gamma.iter().enumerate() {
            scratch.weight_ranked[vp.ranks[eps]] = (lg - max_lg).exp();
        }
        for t in 0..n {
            let row = &exp_table[t * n..(t + 1) * n];
            let c: R = row
                .iter()
                .zip(&scratch.weight_ranked)
                .map(|(&k, &w)| k * w)
                .sum();
            scratch.log_g_ranked[t] = match log_lik_ranked {
                Some(ll) => ll[t] + c.ln(),
                None => c.ln(),
            };
        }

        let Some(g) = shifted_exp(&scratch.log_g_ranked) else {
            diagnostics.degenerate_conditioning += 1;
            *out_e = fallback.value(e, quantile_e)?;
            continue;
        };
        let scaling = PiecewiseScaling::from_particle_values(&g)?;
        match vp.prior.scaled(&scaling) {
            Ok(posterior) => *out_e = posterior.inverse_cdf(quantile_e)?,
            Err(Error::DegenerateScaling) => {
                diagnostics.degenerate_scaling += 1;
                *out_e = fallback.value(e, quantile_e)?;
            }
            Err(other) => return Err(other),
        }
    }
    Ok(out)
}
