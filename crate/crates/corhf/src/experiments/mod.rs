//! Twin-experiment orchestration.
//!
//! A trial generates one truth trajectory with observations, then runs every
//! configured filter at every ensemble size against that identical data
//! stream. Randomness is split into substreams keyed by purpose and indices,
//! so adding filters, resizing ensembles, or reordering work never perturbs
//! the truth another filter sees. Scores are spatiotemporal RMSEs of the
//! ensemble mean against the truth, recorded per step and aggregated over
//! the post-spinup window.

mod demo;
mod trial;

pub use self::demo::{run_demo, DemoOutput, DemoScenario};
pub use self::trial::{
    generate_truth_and_observations, initial_ensemble, run_trial, run_trials, FailureRecord,
    FilterRun, StepScore, TrialResult, WindowSeries,
};

use crate::copula::LocalizationSpec;
use crate::ensemble::compensated_sum;
use crate::error::{Error, Result};
use crate::filters::{FilterConfig, FilterKind, TailPolicy};
use crate::models::{ModelKind, ModelSpec, ObservationSpec};
use crate::scalar::Scalar;

/// Full description of a twin experiment: the model, what is observed, which
/// filters compete at which ensemble sizes, and the trial budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig<R = crate::Real> {
    pub model: ModelSpec<R>,
    pub observation: ObservationSpec<R>,
    pub filters: Vec<FilterKind>,
    pub n_ens: Vec<usize>,
    /// Assimilation steps per trial, spinup included.
    pub n_steps: usize,
    /// Leading steps excluded from aggregate scores (still recorded).
    pub n_spinup: usize,
    pub n_trials: usize,
    pub seed: u64,
    /// Tail rule applied to every rank-histogram prior in every filter.
    pub tails: TailPolicy<R>,
    /// Copula kernel bandwidth multiplier.
    pub alpha: R,
    /// Localization radius for the copula conditioning, in state-index
    /// units on the Lorenz '96 ring; ignored for Lorenz '63, which has no
    /// spatial structure to localize over.
    pub r_loc: Option<R>,
}

impl<R: Scalar> ExperimentConfig<R> {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials < 1 {
            return Err(Error::InvalidParameter {
                name: "n_trials",
                value: self.n_trials as f64,
                requirement: "at least 1",
            });
        }
        if self.n_spinup >= self.n_steps {
            return Err(Error::InvalidParameter {
                name: "n_spinup",
                value: self.n_spinup as f64,
                requirement: "less than n_steps",
            });
        }
        if self.filters.is_empty() {
            return Err(Error::InvalidParameter {
                name: "filters",
                value: 0.0,
                requirement: "at least one filter",
            });
        }
        if self.n_ens.is_empty() || self.n_ens.iter().any(|&n| n < 2) {
            return Err(Error::InvalidParameter {
                name: "n_ens",
                value: self.n_ens.first().copied().unwrap_or(0) as f64,
                requirement: "a nonempty list of sizes >= 2",
            });
        }
        if !(self.alpha.is_finite() && self.alpha > R::zero()) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                value: self.alpha.as_f64(),
                requirement: "finite and positive",
            });
        }
        Ok(())
    }

    /// Materializes the analysis config for one filter: the per-kind
    /// defaults, with this experiment's tail rule, bandwidth multiplier,
    /// and (on the Lorenz '96 ring) copula localization stamped in.
    pub fn filter_config(&self, kind: FilterKind) -> Result<FilterConfig<R>> {
        let mut cfg = FilterConfig::for_kind(kind);
        cfg.tails = self.tails;
        if let Some(copula) = cfg.copula.as_mut() {
            copula.bandwidth_multiplier = self.alpha;
        }
        if let (Some(r_loc), ModelKind::Lorenz96 { n_states, .. }) = (self.r_loc, self.model.kind) {
            let state_positions: Vec<R> = (0..n_states).map(|i| R::of(i as f64)).collect();
            let obs_positions: Vec<R> = (0..n_states).step_by(2).map(|i| R::of(i as f64)).collect();
            cfg.localization = Some(LocalizationSpec::new(
                r_loc,
                obs_positions,
                state_positions,
                Some(R::of(n_states as f64)),
            )?);
        }
        Ok(cfg)
    }
}

/// Spatiotemporal RMSE of a sequence of state estimates against the truth:
/// the square root of the squared error summed over all steps and
/// components, divided by (steps x components).
pub fn rmse<R: Scalar>(truths: &[Vec<R>], estimates: &[Vec<R>]) -> Result<R> {
    if truths.len() != estimates.len() || truths.is_empty() {
        return Err(Error::LengthMismatch {
            what: "rmse sequences",
            got: estimates.len(),
            expected: truths.len().max(1),
        });
    }
    let n_st = truths[0].len();
    let mut squares = Vec::with_capacity(truths.len());
    for (t, e) in truths.iter().zip(estimates) {
        if t.len() != n_st || e.len() != n_st {
            return Err(Error::LengthMismatch {
                what: "rmse states",
                got: e.len(),
                expected: n_st,
            });
        }
        squares.push(compensated_sum(
            t.iter().zip(e).map(|(&a, &b)| (a - b) * (a - b)),
        ));
    }
    let total = compensated_sum(squares.into_iter());
    Ok((total / R::of((truths.len() * n_st) as f64)).sqrt())
}

/// RMSE of a single state estimate, the one-step case of [`rmse`].
pub fn step_rmse<R: Scalar>(truth: &[R], estimate: &[R]) -> Result<R> {
    if truth.len() != estimate.len() || truth.is_empty() {
        return Err(Error::LengthMismatch {
            what: "rmse states",
            got: estimate.len(),
            expected: truth.len().max(1),
        });
    }
    let total = compensated_sum(truth.iter().zip(estimate).map(|(&a, &b)| (a - b) * (a - b)));
    Ok((total / R::of(truth.len() as f64)).sqrt())
}

/// Root mean square of per-step RMSEs, which equals the spatiotemporal RMSE
/// over the same window because every step carries the same number of
/// components.
pub fn aggregate_rmse<R: Scalar>(step_values: &[R]) -> Option<R> {
    if step_values.is_empty() {
        return None;
    }
    let total = compensated_sum(step_values.iter().map(|&v| v * v));
    Some((total / R::of(step_values.len() as f64)).sqrt())
}
