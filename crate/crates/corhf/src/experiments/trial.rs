//! Single-trial execution and the multi-trial driver.

use std::sync::mpsc;
use std::time::{Duration, Instant};

use super::{step_rmse, ExperimentConfig};
use crate::ensemble::{Ensemble, ObservableEnsemble};
use crate::error::Result;
use crate::filters::{analyze, AnalysisDiagnostics, FilterKind};
use crate::models::{spun_up_truth, Integrator};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Scores for one assimilation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepScore<R = crate::Real> {
    pub rmse_forecast: R,
    pub rmse_analysis: R,
    /// Total defensive fallbacks the analysis took this step.
    pub degenerate_count: usize,
}

/// Where and why a filter died mid-trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureRecord {
    pub step: usize,
    pub message: String,
}

/// One filter's trajectory through a trial.
#[derive(Debug, Clone)]
pub struct FilterRun<R = crate::Real> {
    pub kind: FilterKind,
    pub n_ens: usize,
    /// One entry per completed step; shorter than `n_steps` after a failure.
    pub steps: Vec<StepScore<R>>,
    pub failure: Option<FailureRecord>,
    pub diagnostics: AnalysisDiagnostics,
    pub wall: Duration,
}

impl<R: Scalar> FilterRun<R> {
    /// Aggregate (forecast, analysis) RMSE over the post-spinup window, or
    /// `None` when the run produced no scoreable steps.
    pub fn aggregate(&self, n_spinup: usize) -> Option<(R, R)> {
        if self.steps.len() <= n_spinup {
            return None;
        }
        let window = &self.steps[n_spinup..];
        let f: Vec<R> = window.iter().map(|s| s.rmse_forecast).collect();
        let a: Vec<R> = window.iter().map(|s| s.rmse_analysis).collect();
        Some((
            super::aggregate_rmse(&f).unwrap(),
            super::aggregate_rmse(&a).unwrap(),
        ))
    }
}

/// Everything one trial produced.
#[derive(Debug, Clone)]
pub struct TrialResult<R = crate::Real> {
    pub trial: usize,
    pub runs: Vec<FilterRun<R>>,
}

impl<R: Scalar> TrialResult<R> {
    pub fn has_failure(&self) -> bool {
        self.runs.iter().any(|r| r.failure.is_some())
    }
}

/// One vector per assimilation window, in window order.
pub type WindowSeries<R> = Vec<Vec<R>>;

/// The truth trajectory and its noisy observations for one trial,
/// deterministic in (seed, trial) alone. Index `k` holds the state and
/// observation at the end of assimilation window `k`.
pub fn generate_truth_and_observations<R: Scalar>(
    cfg: &ExperimentConfig<R>,
    trial: usize,
) -> Result<(WindowSeries<R>, WindowSeries<R>)> {
    let mut rng = RngStream::new(cfg.seed).substream("truth", &[trial as u64]);
    let mut state = spun_up_truth(&cfg.model, &mut rng)?;
    let n_obs = cfg.observation.n_obs(cfg.model.n_states());
    let mut integrator = Integrator::new(cfg.model.n_states());
    let mut truths = Vec::with_capacity(cfg.n_steps);
    let mut observations = Vec::with_capacity(cfg.n_steps);
    for _ in 0..cfg.n_steps {
        integrator.integrate(&cfg.model, &mut state, cfg.model.dt_assimilation)?;
        truths.push(state.clone());
        let mut y = cfg.observation.observe(&cfg.model, &state)?;
        let noise = cfg.observation.sample_error(n_obs, &mut rng);
        for (obs, eta) in y.iter_mut().zip(noise) {
            *obs += eta;
        }
        observations.push(y);
    }
    Ok((truths, observations))
}

/// The shared initial ensemble for one (trial, ensemble size): the spun-up
/// initial truth plus independent standard-normal perturbations. Every
/// filter of the same size starts from the identical ensemble.
pub fn initial_ensemble<R: Scalar>(
    cfg: &ExperimentConfig<R>,
    trial: usize,
    n_ens: usize,
) -> Result<Ensemble<R>> {
    let mut truth_rng = RngStream::new(cfg.seed).substream("truth", &[trial as u64]);
    let x0 = spun_up_truth(&cfg.model, &mut truth_rng)?;
    let mut rng = RngStream::new(cfg.seed).substream("init", &[trial as u64, n_ens as u64]);
    let columns: Vec<Vec<R>> = (0..n_ens)
        .map(|_| x0.iter().map(|&v| v + rng.standard_normal()).collect())
        .collect();
    Ensemble::from_columns(&columns)
}

/// Runs every configured filter at every ensemble size against this trial's
/// shared truth and observations. A filter failure is recorded on its run
/// and stops only that run.
pub fn run_trial<R: Scalar>(cfg: &ExperimentConfig<R>, trial: usize) -> Result<TrialResult<R>> {
    cfg.validate()?;
    let (truths, observations) = generate_truth_and_observations(cfg, trial)?;
    let mut runs = Vec::with_capacity(cfg.n_ens.len() * cfg.filters.len());
    for &n_ens in &cfg.n_ens {
        let init = initial_ensemble(cfg, trial, n_ens)?;
        for (fi, &kind) in cfg.filters.iter().enumerate() {
            runs.push(run_filter(
                cfg,
                trial,
                fi,
                kind,
                n_ens,
                &init,
                &truths,
                &observations,
            )?);
        }
    }
    Ok(TrialResult { trial, runs })
}

#[allow(clippy::too_many_arguments)]
fn run_filter<R: Scalar>(
    cfg: &ExperimentConfig<R>,
    trial: usize,
    filter_index: usize,
    kind: FilterKind,
    n_ens: usize,
    init: &Ensemble<R>,
    truths: &[Vec<R>],
    observations: &[Vec<R>],
) -> Result<FilterRun<R>> {
    let filter_cfg = cfg.filter_config(kind)?;
    let mut rng = RngStream::new(cfg.seed)
        .substream("filter", &[trial as u64, filter_index as u64, n_ens as u64]);
    let n_states = cfg.model.n_states();
    let n_obs = cfg.observation.n_obs(n_states);
    let mut integrator = Integrator::new(n_states);
    let mut ensemble = init.clone();
    let mut steps = Vec::with_capacity(cfg.n_steps);
    let mut failure = None;
    let mut diagnostics = AnalysisDiagnostics::default();
    let started = Instant::now();

    let mut obs_buf = vec![R::zero(); n_obs];
    'cycle: for (k, (truth, y)) in truths.iter().zip(observations).enumerate() {
        for e in 0..n_ens {
            if let Err(err) = integrator.integrate(
                &cfg.model,
                ensemble.member_mut(e),
                cfg.model.dt_assimilation,
            ) {
                failure = Some(FailureRecord {
                    step: k,
                    message: err.to_string(),
                });
                break 'cycle;
            }
        }
        let rmse_forecast = step_rmse(truth, &ensemble.mean())?;

        let mut observables = ObservableEnsemble::zeros(n_obs, n_ens);
        let mut projected = Ok(());
        for e in 0..n_ens {
            projected = cfg
                .observation
                .observe_into(&cfg.model, ensemble.member(e), &mut obs_buf);
            if projected.is_err() {
                break;
            }
            for (j, &v) in obs_buf.iter().enumerate() {
                observables.set(j, e, v);
            }
        }
        let analysis = projected.and_then(|()| {
            analyze(
                &ensemble,
                &observables,
                y,
                &cfg.observation.error,
                &filter_cfg,
                &mut rng,
            )
        });
        match analysis {
            Ok(result) => {
                diagnostics.absorb(&result.diagnostics);
                let rmse_analysis = step_rmse(truth, &result.states.mean())?;
                ensemble = result.states;
                steps.push(StepScore {
                    rmse_forecast,
                    rmse_analysis,
                    degenerate_count: result.diagnostics.total(),
                });
            }
            Err(err) => {
                failure = Some(FailureRecord {
                    step: k,
                    message: err.to_string(),
                });
                break;
            }
        }
    }

    Ok(FilterRun {
        kind,
        n_ens,
        steps,
        failure,
        diagnostics,
        wall: started.elapsed(),
    })
}

/// Runs all `cfg.n_trials` trials on up to `jobs` worker threads, returning
/// results ordered by trial index. Per-filter failures live inside the
/// results; an error here means the configuration itself is unusable.
pub fn run_trials<R: Scalar + Send>(
    cfg: &ExperimentConfig<R>,
    jobs: usize,
) -> Result<Vec<TrialResult<R>>> {
    cfg.validate()?;
    let jobs = jobs.clamp(1, cfg.n_trials);
    if jobs == 1 {
        return (0..cfg.n_trials).map(|t| run_trial(cfg, t)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let t = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if t >= cfg.n_trials {
                    break;
                }
                if tx.send((t, run_trial(cfg, t))).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut slots: Vec<Option<TrialResult<R>>> = (0..cfg.n_trials).map(|_| None).collect();
    for (t, result) in rx {
        slots[t] = Some(result?);
    }
    Ok(slots.into_iter().map(Option::unwrap).collect())
}
