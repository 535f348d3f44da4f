//! Analysis-step algorithms.
//!
//! Five filters share one calling convention: given a forecast state
//! ensemble, the matching forecast observable ensemble, one observation
//! vector, and an observation error model, produce an analysis ensemble of
//! the same shape. [`analyze`] dispatches on [`FilterKind`] and applies the
//! stochastic observable inflation first when the config asks for it.
//!
//! The serial filters (RHF, QCEFF, CoRHF) process variables one at a time
//! through the rank-histogram machinery in [`crate::univariate`]; member
//! `e`'s posterior quantile is always the one matching its prior rank, so an
//! uninformative update leaves every member in place.

mod bpf;
mod corhf;
mod enkf;
mod qceff;
mod rhf;

pub use self::bpf::bpf_analysis;
pub use self::corhf::corhf_analysis;
pub use self::enkf::enkf_analysis;
pub use self::qceff::qceff_analysis;
pub use self::rhf::rhf_analysis;

use crate::copula::{KernelKind, LocalizationSpec};
use crate::ensemble::{stddev_population, Ensemble, ObservableEnsemble};
use crate::error::{Error, Result};
use crate::models::ObservationError;
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::univariate::{sort_with_ranks, PiecewiseDensity, PiecewiseScaling, SamplingMethod};

/// The analysis algorithms this crate provides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterKind {
    Enkf,
    Rhf,
    Qceff,
    Corhf,
    Bpf,
}

impl FilterKind {
    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Enkf => "enkf",
            FilterKind::Rhf => "rhf",
            FilterKind::Qceff => "qceff",
            FilterKind::Corhf => "corhf",
            FilterKind::Bpf => "bpf",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "enkf" => Some(FilterKind::Enkf),
            "rhf" => Some(FilterKind::Rhf),
            "qceff" => Some(FilterKind::Qceff),
            "corhf" => Some(FilterKind::Corhf),
            "bpf" => Some(FilterKind::Bpf),
            _ => None,
        }
    }
}

/// Kernel choice and bandwidth rule for the conditional copula estimator.
/// The actual bandwidth is `multiplier · stddev(canonical grid) · n^(-2/5)`,
/// recomputed from the ensemble size at each analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopulaConfig<R = crate::Real> {
    pub kernel: KernelKind,
    pub bandwidth_multiplier: R,
}

impl<R: Scalar> Default for CopulaConfig<R> {
    fn default() -> Self {
        Self {
            kernel: KernelKind::BoundaryCorrectedBeta,
            bandwidth_multiplier: R::one(),
        }
    }
}

/// Flat-tail length rule for rank histogram priors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailPolicy<R = crate::Real> {
    /// Tail length = multiplier × population stddev of the samples.
    FixedMultiple(R),
    /// Start from twice the stddev and grow by factors of 1.2 until the
    /// datum lies inside the support; used where a squared-distance
    /// observation can land far outside the forecast spread. Variables
    /// without a datum (hidden states) fall back to twice the stddev.
    /// `capped` clips the result back to twice the stddev, which disables
    /// the growth entirely; it exists to reproduce that (inert) variant.
    Adaptive { capped: bool },
}

impl<R: Scalar> Default for TailPolicy<R> {
    fn default() -> Self {
        TailPolicy::FixedMultiple(R::of(2.0))
    }
}

/// Tail length for one variable's prior. `datum` is the observation the
/// adaptive rule must keep inside the support; pass `None` for variables
/// that are not directly observed.
pub fn tail_length<R: Scalar>(policy: TailPolicy<R>, samples: &[R], datum: Option<R>) -> Result<R> {
    let spread = stddev_population(samples)?;
    // A collapsed ensemble still needs a positive support; any tiny width
    // keeps the histogram valid without influencing a healthy one.
    let spread = if spread > R::zero() {
        spread
    } else {
        let scale = samples[0].abs().max(R::one());
        scale * R::of(1e-12)
    };
    match policy {
        TailPolicy::FixedMultiple(m) => {
            if !(m.is_finite() && m > R::zero()) {
                return Err(Error::InvalidParameter {
                    name: "tail multiple",
                    value: m.as_f64(),
                    requirement: "finite and positive",
                });
            }
            Ok(m * spread)
        }
        TailPolicy::Adaptive { capped } => {
            let base = R::of(2.0) * spread;
            let Some(y) = datum else {
                return Ok(base);
            };
            let lo = samples.iter().copied().fold(R::infinity(), R::min);
            let hi = samples.iter().copied().fold(R::neg_infinity(), R::max);
            let mut len = base;
            // 1.2^400 exceeds 1e31, enough for any datum a finite state can
            // produce; beyond that the posterior is flat anyway.
            for _ in 0..400 {
                if y >= lo - len && y <= hi + len {
                    break;
                }
                len *= R::of(1.2);
            }
            Ok(if capped { len.min(base) } else { len })
        }
    }
}

/// Everything an analysis needs besides the data itself.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig<R = crate::Real> {
    pub kind: FilterKind,
    /// How posterior quantiles are drawn in the serial filters.
    pub sampling: SamplingMethod,
    pub tails: TailPolicy<R>,
    /// Required for CoRHF, ignored by the other filters.
    pub copula: Option<CopulaConfig<R>>,
    /// Distance-based tapering of the copula conditioning (CoRHF only).
    pub localization: Option<LocalizationSpec<R>>,
    /// Perturb forecast observables with draws from the observation error
    /// model before the analysis.
    pub inflate: bool,
}

impl<R: Scalar> FilterConfig<R> {
    /// The canonical configuration for each filter: deterministic quantiles
    /// for RHF and QCEFF, a random grid permutation for CoRHF, inflation
    /// everywhere except the particle filter (which weights the raw
    /// forecast observables instead).
    pub fn for_kind(kind: FilterKind) -> Self {
        let sampling = match kind {
            FilterKind::Corhf => SamplingMethod::QuantileStochastic {
                with_replacement: false,
            },
            _ => SamplingMethod::QuantileDeterministic,
        };
        Self {
            kind,
            sampling,
            tails: TailPolicy::default(),
            copula: (kind == FilterKind::Corhf).then(CopulaConfig::default),
            localization: None,
            inflate: kind != FilterKind::Bpf,
        }
    }
}

/// Counts of the defensive fallbacks an analysis had to take. All zero on
/// healthy steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnalysisDiagnostics {
    /// Copula conditioning carried no usable weight; the member fell back
    /// to a likelihood-only update (observables) or kept its forecast
    /// value (states).
    pub degenerate_conditioning: usize,
    /// A scaled posterior had zero total mass and a fallback was used.
    pub degenerate_scaling: usize,
    /// Regressions skipped because the observable ensemble had zero
    /// variance.
    pub skipped_regressions: usize,
    /// Particle weights were unusable and uniform weights were substituted.
    pub uniform_weight_fallbacks: usize,
}

impl AnalysisDiagnostics {
    pub fn total(&self) -> usize {
        self.degenerate_conditioning
            + self.degenerate_scaling
            + self.skipped_regressions
            + self.uniform_weight_fallbacks
    }

    pub fn absorb(&mut self, other: &AnalysisDiagnostics) {
        self.degenerate_conditioning += other.degenerate_conditioning;
        self.degenerate_scaling += other.degenerate_scaling;
        self.skipped_regressions += other.skipped_regressions;
        self.uniform_weight_fallbacks += other.uniform_weight_fallbacks;
    }
}

/// One analysis step's output.
#[derive(Debug, Clone)]
pub struct AnalysisResult<R = crate::Real> {
    pub states: Ensemble<R>,
    /// Analysis observables where the filter produces them (the serial
    /// filters and the particle filter); the EnKF reports its input
    /// observables since its update has no observable-space analysis.
    pub observables: ObservableEnsemble<R>,
    pub diagnostics: AnalysisDiagnostics,
}

/// Adds an independent draw from the observation error model to every entry
/// of the observable ensemble (member-major draw order).
pub fn inflate_observables<R: Scalar>(
    z: &ObservableEnsemble<R>,
    err: &ObservationError<R>,
    rng: &mut RngStream,
) -> ObservableEnsemble<R> {
    let mut out = z.clone();
    for e in 0..z.n_members() {
        for i in 0..z.n_vars() {
            let eta = err.sample(rng);
            out.set(i, e, out.get(i, e) + eta);
        }
    }
    out
}

/// Runs one analysis step: optional observable inflation, then the filter
/// selected by the config.
pub fn analyze<R: Scalar>(
    x: &Ensemble<R>,
    z: &ObservableEnsemble<R>,
    y: &[R],
    err: &ObservationError<R>,
    cfg: &FilterConfig<R>,
    rng: &mut RngStream,
) -> Result<AnalysisResult<R>> {
    validate_analysis_inputs(x, z, y)?;
    let inflated;
    let z_used = if cfg.inflate {
        inflated = inflate_observables(z, err, rng);
        &inflated
    } else {
        z
    };
    match cfg.kind {
        FilterKind::Enkf => enkf_analysis(x, z_used, y, err, cfg, rng),
        FilterKind::Rhf => rhf_analysis(x, z_used, y, err, cfg, rng),
        FilterKind::Qceff => qceff_analysis(x, z_used, y, err, cfg, rng),
        FilterKind::Corhf => corhf_analysis(x, z_used, y, err, cfg, rng),
        FilterKind::Bpf => bpf_analysis(x, z_used, y, err, rng),
    }
}

pub(crate) fn validate_analysis_inputs<R: Scalar>(
    x: &Ensemble<R>,
    z: &ObservableEnsemble<R>,
    y: &[R],
) -> Result<()> {
    if z.n_members() != x.n_members() {
        return Err(Error::DimensionMismatch {
            what: "observable ensemble members",
            got: z.n_members(),
            expected: x.n_members(),
        });
    }
    if y.len() != z.n_vars() {
        return Err(Error::LengthMismatch {
            what: "observation vector",
            got: y.len(),
            expected: z.n_vars(),
        });
    }
    Ok(())
}

/// One variable's rank histogram prior together with the member-to-rank map,
/// the working unit of every serial filter here.
#[derive(Debug, Clone)]
pub(crate) struct VariablePrior<R = crate::Real> {
    pub ranks: Vec<usize>,
    pub prior: PiecewiseDensity<R>,
}

impl<R: Scalar> VariablePrior<R> {
    pub fn build(samples: &[R], tail: R) -> Result<Self> {
        let (knots, ranks) = sort_with_ranks(samples)?;
        let prior = PiecewiseDensity::from_sorted_knots(knots, tail, tail)?;
        Ok(Self { ranks, prior })
    }

    pub fn n(&self) -> usize {
        self.ranks.len()
    }

    /// Scales the prior by per-member values `g` and inverts the posterior
    /// at each member's rank-matched quantile, so member `e` receives
    /// `quantiles[rank(e)]`.
    pub fn update(&self, g_by_member: &[R], quantiles: &[R]) -> Result<Vec<R>> {
        let mut g_ranked = vec![R::zero(); self.n()];
        for (e, &r) in self.ranks.iter().enumerate() {
            g_ranked[r] = g_by_member[e];
        }
        self.update_ranked(&g_ranked, quantiles)
    }

    /// As [`update`](Self::update) with `g` already in rank order.
    pub fn update_ranked(&self, g_ranked: &[R], quantiles: &[R]) -> Result<Vec<R>> {
        let posterior = self
            .prior
            .scaled(&PiecewiseScaling::from_particle_values(g_ranked)?)?;
        self.ranks
            .iter()
            .map(|&r| posterior.inverse_cdf(quantiles[r]))
            .collect()
    }

    /// The canonical prior quantile of member `e`.
    pub fn member_quantile(&self, e: usize) -> R {
        R::of((self.ranks[e] + 1) as f64 / (self.n() + 1) as f64)
    }

    /// The prior quantile of an arbitrary value, clamped away from 0 and 1
    /// so probits and copula kernels stay finite.
    pub fn value_quantile(&self, value: R) -> R {
        self.prior.clamped_cdf(value)
    }
}

/// `exp(v - max v)` elementwise: scale-free weights that cannot all
/// underflow. Returns `None` when the maximum itself is not finite (every
/// entry `-inf`, or a NaN crept in).
pub(crate) fn shifted_exp<R: Scalar>(log_values: &[R]) -> Option<Vec<R>> {
    if log_values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let m = log_values.iter().copied().fold(R::neg_infinity(), R::max);
    if !m.is_finite() {
        return None;
    }
    Some(log_values.iter().map(|&l| (l - m).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_multiple_tail_is_scaled_stddev() {
        // Samples {0, 1}: population stddev 1/2.
        let t = tail_length(TailPolicy::FixedMultiple(2.0), &[0.0, 1.0], None).unwrap();
        assert_eq!(t, 1.0);
        let t = tail_length(TailPolicy::FixedMultiple(0.02), &[0.0, 1.0], Some(5.0)).unwrap();
        assert_eq!(t, 0.01);
    }

    #[test]
    fn adaptive_tail_grows_until_datum_contained() {
        // Samples {0, 1}, datum 10: base length 1 must grow to at least 9,
        // reached after 13 growth steps of 1.2.
        let t = tail_length(
            TailPolicy::Adaptive { capped: false },
            &[0.0, 1.0],
            Some(10.0),
        )
        .unwrap();
        assert!((t - 1.2f64.powi(13)).abs() < 1e-12);
        assert!(1.0 + t >= 10.0);
        // Datum already inside the base support: no growth.
        let t = tail_length(
            TailPolicy::Adaptive { capped: false },
            &[0.0, 1.0],
            Some(1.5),
        )
        .unwrap();
        assert_eq!(t, 1.0);
        // No datum: base length.
        let t = tail_length(TailPolicy::Adaptive { capped: false }, &[0.0, 1.0], None).unwrap();
        assert_eq!(t, 1.0);
    }

    #[test]
    fn capped_adaptive_tail_never_grows() {
        let t = tail_length(
            TailPolicy::Adaptive { capped: true },
            &[0.0, 1.0],
            Some(10.0),
        )
        .unwrap();
        assert_eq!(t, 1.0);
    }

    #[test]
    fn collapsed_ensemble_still_gets_positive_tail() {
        let t = tail_length(TailPolicy::default(), &[3.0, 3.0, 3.0], None).unwrap();
        assert!(t > 0.0 && t < 1e-9);
    }

    #[test]
    fn tail_errors() {
        assert!(tail_length(TailPolicy::FixedMultiple(0.0), &[0.0, 1.0], None).is_err());
        assert!(tail_length::<f64>(TailPolicy::default(), &[], None).is_err());
    }

    #[test]
    fn inflation_adds_nonnegative_half_gaussian_noise() {
        let z = ObservableEnsemble::from_columns(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let err = ObservationError::HalfGaussian { variance: 1.0 };
        let mut rng = RngStream::new(3);
        let inflated = inflate_observables(&z, &err, &mut rng);
        for e in 0..2 {
            for i in 0..2 {
                assert!(inflated.get(i, e) >= z.get(i, e));
            }
        }
    }

    #[test]
    fn zero_variance_noise_is_identity() {
        let z = ObservableEnsemble::from_columns(&[vec![1.0], vec![2.0]]).unwrap();
        let err = ObservationError::HalfGaussian { variance: 0.0 };
        let mut rng = RngStream::new(3);
        assert_eq!(inflate_observables(&z, &err, &mut rng), z);
    }

    #[test]
    fn inflation_noise_variance_matches_folded_gaussian() {
        // Var |N(0, R)| = R (1 - 2/pi).
        let n = 100_000;
        let z = ObservableEnsemble::zeros(1, n);
        let err = ObservationError::HalfGaussian { variance: 4.0 };
        let mut rng = RngStream::new(11);
        let inflated = inflate_observables(&z, &err, &mut rng);
        let draws = inflated.variable(0);
        let mean = crate::ensemble::mean(&draws);
        let var = draws.iter().map(|&d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
        let want = 4.0 * (1.0 - 2.0 / std::f64::consts::PI);
        assert!((var - want).abs() < 0.02 * want, "var {var} vs {want}");
    }

    #[test]
    fn inflation_is_reproducible() {
        let z = ObservableEnsemble::from_columns(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let err = ObservationError::HalfCauchy { scale: 0.1 };
        let a = inflate_observables(&z, &err, &mut RngStream::new(7));
        let b = inflate_observables(&z, &err, &mut RngStream::new(7));
        assert_eq!(a, b);
    }

    #[test]
    fn variable_prior_rank_matching_round_trip() {
        // Uninformative update with deterministic quantiles returns every
        // member's own value bitwise.
        let samples = [3.0f64, -1.0, 0.5, 2.0];
        let vp = VariablePrior::build(&samples, 1.0).unwrap();
        let grid = crate::univariate::canonical_quantiles::<f64>(4);
        let out = vp.update(&[1.0; 4], &grid).unwrap();
        assert_eq!(out, samples);
    }

    #[test]
    fn default_configs_per_kind() {
        let c = FilterConfig::<f64>::for_kind(FilterKind::Corhf);
        assert!(c.copula.is_some());
        assert!(c.inflate);
        assert_eq!(
            c.sampling,
            SamplingMethod::QuantileStochastic {
                with_replacement: false
            }
        );
        let b = FilterConfig::<f64>::for_kind(FilterKind::Bpf);
        assert!(!b.inflate);
        let r = FilterConfig::<f64>::for_kind(FilterKind::Rhf);
        assert!(r.copula.is_none());
        assert_eq!(r.sampling, SamplingMethod::QuantileDeterministic);
    }

    #[test]
    fn shifted_exp_handles_extremes() {
        let w = shifted_exp(&[-1e4f64, -1e4 + 1.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(w[1], 1.0);
        assert!((w[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(w[2], 0.0);
        assert!(shifted_exp(&[f64::NEG_INFINITY; 3]).is_none());
        assert!(shifted_exp(&[0.0, f64::NAN]).is_none());
    }

    #[test]
    fn filter_names_round_trip() {
        for kind in [
            FilterKind::Enkf,
            FilterKind::Rhf,
            FilterKind::Qceff,
            FilterKind::Corhf,
            FilterKind::Bpf,
        ] {
            assert_eq!(FilterKind::from_name(kind.name()), Some(kind));
        }
        assert_eq!(FilterKind::from_name("engmf"), None);
    }
}
