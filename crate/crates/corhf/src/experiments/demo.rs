//! Small demonstration scenarios: a 2-D prior with a bounded-support
//! marginal, and a scalar state observed through two nonlinear functions.
//! Both produce plot-ready point sets for the prior and the analysis.

use crate::ensemble::{Ensemble, ObservableEnsemble};
use crate::error::Result;
use crate::filters::{analyze, FilterConfig, FilterKind, TailPolicy};
use crate::models::ObservationError;
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// A demonstration setup. Parameters carry their customary defaults via
/// [`DemoScenario::normal_beta`] and [`DemoScenario::scalar`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DemoScenario<R = crate::Real> {
    /// State (x1, x2) with x2 = 4·Beta(2,3) and x1 | x2 ~ Normal(x2, 1);
    /// x1 is observed directly with unit Gaussian error. The x2 marginal
    /// lives on [0, 4], so an analysis has no business leaving it.
    NormalBeta {
        /// The observed x1 value. The default sits below the prior mean so
        /// the update drags the ensemble toward the support boundary,
        /// which is the regime that separates the filters.
        observation: R,
        /// Tail rule for the rank histogram priors. Kept short by default
        /// so the histogram support honestly reflects the bounded prior.
        tails: TailPolicy<R>,
    },
    /// Scalar state with symmetric Normal(0, 1) prior, observed through
    /// |x| and optionally sin(x), each with Gaussian(0.04) error. |x| alone
    /// cannot distinguish sign; the sine observable breaks the tie.
    Scalar { truth: R, include_sine: bool },
}

impl<R: Scalar> DemoScenario<R> {
    pub fn normal_beta() -> Self {
        DemoScenario::NormalBeta {
            observation: R::zero(),
            tails: TailPolicy::FixedMultiple(R::of(0.02)),
        }
    }

    pub fn scalar() -> Self {
        DemoScenario::Scalar {
            truth: R::of(1.5),
            include_sine: true,
        }
    }
}

/// Scatter data from one demonstration run. Points are (x1, x2) for the
/// 2-D scenario and (x, sin x) for the scalar one.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutput<R = crate::Real> {
    pub prior: Vec<[R; 2]>,
    pub analysis: Vec<[R; 2]>,
    /// The data vector the analysis assimilated.
    pub observations: Vec<R>,
}

/// Draws `n` members from the 2-D prior: x2 = 4·Beta(2,3), x1 = x2 plus
/// standard normal noise.
pub fn sample_normal_beta_prior<R: Scalar>(n: usize, rng: &mut RngStream) -> Vec<[R; 2]> {
    (0..n)
        .map(|_| {
            let x2 = R::of(4.0) * rng.beta::<R>(2.0, 3.0);
            let x1 = x2 + rng.standard_normal();
            [x1, x2]
        })
        .collect()
}

/// Runs one clean analysis of the scenario under the chosen filter and
/// returns the prior and analysis point clouds. Inflation is disabled:
/// the demonstrations are single exact Bayesian updates.
pub fn run_demo<R: Scalar>(
    scenario: &DemoScenario<R>,
    kind: FilterKind,
    n_ens: usize,
    rng: &mut RngStream,
) -> Result<DemoOutput<R>> {
    match *scenario {
        DemoScenario::NormalBeta { observation, tails } => {
            let prior = sample_normal_beta_prior::<R>(n_ens, rng);
            let columns: Vec<Vec<R>> = prior.iter().map(|p| p.to_vec()).collect();
            let x = Ensemble::from_columns(&columns)?;
            let z_columns: Vec<Vec<R>> = prior.iter().map(|p| vec![p[0]]).collect();
            let z = ObservableEnsemble::from_columns(&z_columns)?;
            let err = ObservationError::Gaussian { variance: R::one() };
            let cfg = demo_config(kind, tails);
            let result = analyze(&x, &z, &[observation], &err, &cfg, rng)?;
            let analysis = (0..n_ens)
                .map(|e| [result.states.get(0, e), result.states.get(1, e)])
                .collect();
            Ok(DemoOutput {
                prior,
                analysis,
                observations: vec![observation],
            })
        }
        DemoScenario::Scalar {
            truth,
            include_sine,
        } => {
            let err = ObservationError::Gaussian {
                variance: R::of(0.04),
            };
            let y = {
                let mut y = vec![truth.abs() + err.sample(rng)];
                if include_sine {
                    y.push(truth.sin() + err.sample(rng));
                }
                y
            };
            let states: Vec<R> = (0..n_ens).map(|_| rng.standard_normal()).collect();
            let columns: Vec<Vec<R>> = states.iter().map(|&v| vec![v]).collect();
            let x = Ensemble::from_columns(&columns)?;
            let z_columns: Vec<Vec<R>> = states
                .iter()
                .map(|&v| {
                    if include_sine {
                        vec![v.abs(), v.sin()]
                    } else {
                        vec![v.abs()]
                    }
                })
                .collect();
            let z = ObservableEnsemble::from_columns(&z_columns)?;
            let cfg = demo_config(kind, TailPolicy::default());
            let result = analyze(&x, &z, &y, &err, &cfg, rng)?;
            let project = |v: R| [v, v.sin()];
            Ok(DemoOutput {
                prior: states.iter().map(|&v| project(v)).collect(),
                analysis: (0..n_ens)
                    .map(|e| project(result.states.get(0, e)))
                    .collect(),
                observations: y,
            })
        }
    }
}

fn demo_config<R: Scalar>(kind: FilterKind, tails: TailPolicy<R>) -> FilterConfig<R> {
    let mut cfg = FilterConfig::for_kind(kind);
    cfg.tails = tails;
    cfg.inflate = false;
    cfg
}
