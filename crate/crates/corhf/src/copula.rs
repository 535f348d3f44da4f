//! Kernel density machinery on the unit interval and empirical conditional
//! copula densities.
//!
//! The serial copula filter needs the density of one marginal uniform
//! conditioned on already-updated marginals. Following the empirical copula
//! construction, that conditional density is a kernel density estimate over
//! the prior quantiles where each particle `ε` carries a weight
//!
//! ```text
//! γ^[ε] = Π_i σ'(u_i = u_i^a; u_i^[ε]) ^ ρ_i
//! ```
//!
//! the product over conditioning variables of the kernel evaluated at the
//! member's analysis quantile, tapered by a localization weight ρ_i. The
//! products are assembled in log space: beta kernels hit gamma-function
//! overflow long before the weights themselves become meaningless.
//!
//! Kernels are supported on [0, 1] and zero elsewhere. The truncated
//! Gaussian is kept exactly as defined, without renormalizing the mass lost
//! to truncation, so it is not a density near the boundary; the beta kernels
//! are.

use crate::ensemble::stddev_population;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::univariate::canonical_quantiles;

/// Kernel families for density estimation on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// Gaussian bump truncated to [0, 1]; biased near the boundary.
    TruncatedGaussian,
    /// Beta density in the center argument with exponents `u/h` and
    /// `(1-u)/h` (plus one).
    Beta,
    /// Beta kernel with Chen's boundary correction: near each edge the
    /// shape parameter is replaced by a root curve that keeps the estimate
    /// from collapsing onto the boundary.
    BoundaryCorrectedBeta,
}

/// A kernel family with its bandwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec<R = crate::Real> {
    kind: KernelKind,
    h: R,
}

impl<R: Scalar> KernelSpec<R> {
    pub fn new(kind: KernelKind, h: R) -> Result<Self> {
        if !(h.is_finite() && h > R::zero()) {
            return Err(Error::InvalidParameter {
                name: "bandwidth",
                value: h.as_f64(),
                requirement: "finite and > 0",
            });
        }
        // The boundary correction splits [0,1] into [0,2h), [2h,1-2h],
        // (1-2h,1]; h < 1/4 keeps the interior region nonempty.
        if kind == KernelKind::BoundaryCorrectedBeta && h >= R::of(0.25) {
            return Err(Error::InvalidParameter {
                name: "bandwidth",
                value: h.as_f64(),
                requirement: "< 1/4 for the boundary-corrected beta kernel",
            });
        }
        Ok(Self { kind, h })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn h(&self) -> R {
        self.h
    }
}

/// Bandwidth rule `h = alpha · stddev(canonical quantiles) · n^(-2/5)`.
///
/// The standard deviation (population convention) is taken over the grid
/// `{e/(n+1)}`, which tends to `12^(-1/2)` for large ensembles.
pub fn bandwidth<R: Scalar>(alpha: R, n_ens: usize) -> Result<R> {
    if !(alpha.is_finite() && alpha > R::zero()) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            value: alpha.as_f64(),
            requirement: "finite and > 0",
        });
    }
    if n_ens < 2 {
        return Err(Error::TooFewSamples { min: 2, got: n_ens });
    }
    let grid = canonical_quantiles::<R>(n_ens);
    Ok(alpha * stddev_population(&grid)? * R::of((n_ens as f64).powf(-0.4)))
}

fn check_unit_interval<R: Scalar>(value: R, name: &'static str) -> Result<()> {
    if !(value >= R::zero() && value <= R::one()) {
        return Err(Error::InvalidParameter {
            name,
            value: value.as_f64(),
            requirement: "in [0, 1]",
        });
    }
    Ok(())
}

/// Chen's boundary shape curve; maps `u ∈ [0, 2h]` to an exponent in
/// `[1, 2]`, with `rho(0, h) = 1` and `rho(2h, h) = 2` so the corrected
/// kernel meets the interior branch continuously.
fn rho_boundary<R: Scalar>(u: R, h: R) -> R {
    let two = R::of(2.0);
    let h2 = h * h;
    two * h2 + R::of(2.5)
        - (R::of(4.0) * h2 * h2 + R::of(6.0) * h2 + R::of(2.25) - u * u - u / h).sqrt()
}

/// Shape parameters (alpha, beta) of the beta density the kernel evaluates,
/// as a function of the evaluation point `u`.
fn beta_shape<R: Scalar>(kind: KernelKind, u: R, h: R) -> (R, R) {
    let one = R::one();
    match kind {
        KernelKind::Beta => (u / h + one, (one - u) / h + one),
        KernelKind::BoundaryCorrectedBeta => {
            let two_h = R::of(2.0) * h;
            if u < two_h {
                (rho_boundary(u, h), (one - u) / h)
            } else if u > one - two_h {
                (u / h, rho_boundary(one - u, h))
            } else {
                (u / h, (one - u) / h)
            }
        }
        KernelKind::TruncatedGaussian => unreachable!("not a beta kernel"),
    }
}

/// Log of the beta density `x^(a-1) (1-x)^(b-1) / B(a, b)`.
///
/// Total on x ∈ [0, 1] for a, b ≥ 1: returns negative infinity where the
/// density vanishes at the boundary. A zero exponent contributes nothing
/// even at the boundary (the density is then flat there, not zero).
fn log_beta_density<R: Scalar>(x: R, a: R, b: R) -> R {
    let log_b = a.lgamma() + b.lgamma() - (a + b).lgamma();
    let am1 = a - R::one();
    let bm1 = b - R::one();
    let t1 = if am1 == R::zero() {
        R::zero()
    } else {
        am1 * x.ln()
    };
    let t2 = if bm1 == R::zero() {
        R::zero()
    } else {
        bm1 * (R::one() - x).ln()
    };
    t1 + t2 - log_b
}

/// Beta density via direct gamma functions. Kept deliberately naive: for
/// extreme shape parameters the gamma factors overflow and the result is
/// non-finite, which is exactly the failure mode the log-space route exists
/// to avoid.
fn beta_density_direct<R: Scalar>(x: R, a: R, b: R) -> R {
    let gamma = |v: R| R::of(statrs::function::gamma::gamma(v.as_f64()));
    let norm = gamma(a + b) / (gamma(a) * gamma(b));
    let am1 = a - R::one();
    let bm1 = b - R::one();
    let p1 = if am1 == R::zero() {
        R::one()
    } else {
        x.powf(am1)
    };
    let p2 = if bm1 == R::zero() {
        R::one()
    } else {
        (R::one() - x).powf(bm1)
    };
    p1 * p2 * norm
}

/// Kernel value σ'(u; u_e) by direct evaluation.
///
/// Both arguments must lie in [0, 1]. The beta kernels use the gamma
/// function directly and overflow to a non-finite value for extreme
/// bandwidths; use [`log_kernel_eval`] where that matters.
pub fn kernel_eval<R: Scalar>(k: &KernelSpec<R>, u: R, u_e: R) -> Result<R> {
    check_unit_interval(u, "kernel evaluation point")?;
    check_unit_interval(u_e, "kernel center")?;
    match k.kind {
        KernelKind::TruncatedGaussian => {
            let z = (u - u_e) / k.h;
            let norm = (k.h * R::of((2.0 * std::f64::consts::PI).sqrt())).recip();
            Ok(norm * (-z * z / R::of(2.0)).exp())
        }
        KernelKind::Beta | KernelKind::BoundaryCorrectedBeta => {
            let (a, b) = beta_shape(k.kind, u, k.h);
            Ok(beta_density_direct(u_e, a, b))
        }
    }
}

/// Natural log of the kernel value, computed through log-gamma so extreme
/// bandwidths stay finite.
///
/// Where the kernel is exactly zero (a boundary center `u_e ∈ {0, 1}` with
/// a positive exponent) the result is negative infinity, which composes
/// correctly with downstream sums and `exp`.
pub fn log_kernel_eval<R: Scalar>(k: &KernelSpec<R>, u: R, u_e: R) -> Result<R> {
    check_unit_interval(u, "kernel evaluation point")?;
    check_unit_interval(u_e, "kernel center")?;
    match k.kind {
        KernelKind::TruncatedGaussian => {
            let z = (u - u_e) / k.h;
            let norm = k.h * R::of((2.0 * std::f64::consts::PI).sqrt());
            Ok(-norm.ln() - z * z / R::of(2.0))
        }
        KernelKind::Beta | KernelKind::BoundaryCorrectedBeta => {
            let (a, b) = beta_shape(k.kind, u, k.h);
            Ok(log_beta_density(u_e, a, b))
        }
    }
}

/// Gaspari-Cohn compactly supported correlation function.
///
/// A piecewise quintic on [0, 2]: 1 at the origin, 5/24 at 1 from both
/// sides, identically 0 from 2 on. Used as the localization taper with
/// `zeta = distance / r_loc`.
pub fn gaspari_cohn<R: Scalar>(zeta: R) -> Result<R> {
    if !(zeta.is_finite() && zeta >= R::zero()) {
        return Err(Error::InvalidParameter {
            name: "zeta",
            value: zeta.as_f64(),
            requirement: "finite and >= 0",
        });
    }
    let z = zeta;
    let z2 = z * z;
    let z3 = z2 * z;
    let z4 = z2 * z2;
    let z5 = z4 * z;
    if z < R::one() {
        Ok(
            -z5 / R::of(4.0) + z4 / R::of(2.0) + z3 * R::of(5.0 / 8.0) - z2 * R::of(5.0 / 3.0)
                + R::one(),
        )
    } else if z < R::of(2.0) {
        Ok(
            z5 / R::of(12.0) - z4 / R::of(2.0) + z3 * R::of(5.0 / 8.0) + z2 * R::of(5.0 / 3.0)
                - z * R::of(5.0)
                + R::of(4.0)
                - R::of(2.0 / 3.0) / z,
        )
    } else {
        Ok(R::zero())
    }
}

/// Distance-based localization for the copula conditioning weights.
///
/// Every observable and every state variable is assigned a position on a
/// line (optionally periodic with period `cycle`); the taper between two
/// variables is the Gaspari-Cohn function of their distance over `r_loc`,
/// so influence vanishes entirely beyond `2 r_loc`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationSpec<R = crate::Real> {
    r_loc: R,
    obs_positions: Vec<R>,
    state_positions: Vec<R>,
    cycle: Option<R>,
}

impl<R: Scalar> LocalizationSpec<R> {
    pub fn new(
        r_loc: R,
        obs_positions: Vec<R>,
        state_positions: Vec<R>,
        cycle: Option<R>,
    ) -> Result<Self> {
        if !(r_loc.is_finite() && r_loc > R::zero()) {
            return Err(Error::InvalidParameter {
                name: "r_loc",
                value: r_loc.as_f64(),
                requirement: "finite and > 0",
            });
        }
        if let Some(p) = cycle {
            if !(p.is_finite() && p > R::zero()) {
                return Err(Error::InvalidParameter {
                    name: "cycle",
                    value: p.as_f64(),
                    requirement: "finite and > 0",
                });
            }
        }
        if obs_positions
            .iter()
            .chain(&state_positions)
            .any(|p| !p.is_finite())
        {
            return Err(Error::NonFinite {
                context: "localization positions",
            });
        }
        Ok(Self {
            r_loc,
            obs_positions,
            state_positions,
            cycle,
        })
    }

    pub fn r_loc(&self) -> R {
        self.r_loc
    }

    pub fn n_obs(&self) -> usize {
        self.obs_positions.len()
    }

    pub fn n_states(&self) -> usize {
        self.state_positions.len()
    }

    pub fn obs_position(&self, j: usize) -> R {
        self.obs_positions[j]
    }

    pub fn state_position(&self, i: usize) -> R {
        self.state_positions[i]
    }

    /// Distance between two positions, around the cycle if one is set.
    pub fn distance(&self, a: R, b: R) -> R {
        let d = (a - b).abs();
        match self.cycle {
            Some(p) => d.min(p - d),
            None => d,
        }
    }

    /// Gaspari-Cohn taper between two positions.
    pub fn taper(&self, a: R, b: R) -> R {
        gaspari_cohn(self.distance(a, b) / self.r_loc)
            .expect("distance/r_loc is finite and nonnegative")
    }
}

/// One conditioning variable for a conditional copula density: the target
/// member's analysis quantile in that variable, the prior quantiles of all
/// particles in it, and the localization taper toward the target variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningVariable<R = crate::Real> {
    /// The member's analysis quantile `u_i^a` being conditioned on.
    pub analysis_quantile: R,
    /// Prior quantile of every particle in this variable, particle order.
    pub prior_quantiles: Vec<R>,
    /// Localization taper weight toward the target variable, in [0, 1].
    pub taper: R,
}

fn validate_conditioning<R: Scalar>(
    conditioning: &[ConditioningVariable<R>],
    n_ens: usize,
) -> Result<()> {
    for cv in conditioning {
        if cv.prior_quantiles.len() != n_ens {
            return Err(Error::LengthMismatch {
                what: "conditioning prior quantiles",
                got: cv.prior_quantiles.len(),
                expected: n_ens,
            });
        }
        if !(cv.analysis_quantile > R::zero() && cv.analysis_quantile < R::one()) {
            return Err(Error::QuantileRange(cv.analysis_quantile.as_f64()));
        }
        for &q in &cv.prior_quantiles {
            if !(q > R::zero() && q < R::one()) {
                return Err(Error::QuantileRange(q.as_f64()));
            }
        }
        if !(cv.taper >= R::zero() && cv.taper <= R::one()) {
            return Err(Error::InvalidParameter {
                name: "taper",
                value: cv.taper.as_f64(),
                requirement: "in [0, 1]",
            });
        }
    }
    Ok(())
}

/// Log conditioning weights `log γ^[ε]`, one per particle. Taper-zero
/// variables are skipped outright, so an empty or fully tapered-out
/// conditioning set yields exactly zero (γ ≡ 1).
fn log_conditioning_weights<R: Scalar>(
    conditioning: &[ConditioningVariable<R>],
    kernel: &KernelSpec<R>,
    n_ens: usize,
) -> Result<Vec<R>> {
    validate_conditioning(conditioning, n_ens)?;
    let mut log_gamma = vec![R::zero(); n_ens];
    for cv in conditioning {
        if cv.taper == R::zero() {
            continue;
        }
        for (eps, &q) in cv.prior_quantiles.iter().enumerate() {
            log_gamma[eps] += cv.taper * log_kernel_eval(kernel, cv.analysis_quantile, q)?;
        }
    }
    Ok(log_gamma)
}

/// Conditioning weights `γ^[ε] = Π_i σ'(u_i^a; u_i^[ε])^ρ_i`, assembled in
/// log space and exponentiated. Values are the literal products, not
/// normalized in any way.
///
/// Fails with a degenerate-conditioning error when every weight underflows
/// to zero; callers fall back to an untempered update (γ ≡ 1) per their own
/// policy.
pub fn conditional_copula_weights<R: Scalar>(
    conditioning: &[ConditioningVariable<R>],
    kernel: &KernelSpec<R>,
    n_ens: usize,
) -> Result<Vec<R>> {
    let gamma: Vec<R> = log_conditioning_weights(conditioning, kernel, n_ens)?
        .into_iter()
        .map(|lg| lg.exp())
        .collect();
    if gamma.iter().all(|&g| g == R::zero()) {
        return Err(Error::DegenerateConditioning);
    }
    Ok(gamma)
}

fn log_sum_exp<R: Scalar>(terms: &[R]) -> R {
    let m = terms.iter().copied().fold(R::neg_infinity(), R::max);
    if !m.is_finite() {
        // Either every term is -inf (total weight zero) or something
        // overflowed upstream; both propagate faithfully.
        return m;
    }
    let sum = terms
        .iter()
        .map(|&t| (t - m).exp())
        .fold(R::zero(), |a, b| a + b);
    m + sum.ln()
}

/// Conditional copula density (up to its constant denominator) evaluated at
/// the given target quantiles:
///
/// ```text
/// c(q_m) = (1/n) Σ_ε σ'(q_m; q_ε) γ^[ε]
/// ```
///
/// where `target_quantiles` serves both as kernel centers (particle order,
/// aligned with the conditioning prior quantiles) and as the evaluation
/// points, so entry `m` is the density at particle `m`'s own quantile. The
/// sum is assembled with a log-sum-exp, so intermediate weights may
/// under- or overflow without poisoning the result; only the final value is
/// materialized.
pub fn conditional_copula_at_particles<R: Scalar>(
    conditioning: &[ConditioningVariable<R>],
    kernel: &KernelSpec<R>,
    target_quantiles: &[R],
) -> Result<Vec<R>> {
    Ok(
        log_conditional_copula_at_particles(conditioning, kernel, target_quantiles)?
            .into_iter()
            .map(|l| l.exp())
            .collect(),
    )
}

/// Log of [`conditional_copula_at_particles`], for callers that combine the
/// copula factor with a log-likelihood before exponentiating.
pub fn log_conditional_copula_at_particles<R: Scalar>(
    conditioning: &[ConditioningVariable<R>],
    kernel: &KernelSpec<R>,
    target_quantiles: &[R],
) -> Result<Vec<R>> {
    let n = target_quantiles.len();
    for &q in target_quantiles {
        if !(q > R::zero() && q < R::one()) {
            return Err(Error::QuantileRange(q.as_f64()));
        }
    }
    let log_gamma = log_conditioning_weights(conditioning, kernel, n)?;
    if log_gamma.iter().all(|&lg| lg == R::neg_infinity()) {
        return Err(Error::DegenerateConditioning);
    }
    let ln_n = R::of(n as f64).ln();
    let mut terms = vec![R::zero(); n];
    let mut out = vec![R::zero(); n];
    for m in 0..n {
        for eps in 0..n {
            terms[eps] = log_kernel_eval(kernel, target_quantiles[m], target_quantiles[eps])?
                + log_gamma[eps];
        }
        out[m] = log_sum_exp(&terms) - ln_n;
    }
    Ok(out)
}

/// Precomputed kernel logs on the canonical quantile grid.
///
/// In a rank histogram prior every particle's quantile is a grid point
/// `rank/(n+1)`, so the kernel matrix between particles is a fixed `n × n`
/// table per analysis step, and a kernel row against a continuous analysis
/// quantile costs one log-beta normalization plus `n` multiply-adds on the
/// cached grid logs. The serial copula filter leans on both.
#[derive(Debug, Clone)]
pub struct CanonicalGridKernel<R = crate::Real> {
    kernel: KernelSpec<R>,
    grid: Vec<R>,
    ln_grid: Vec<R>,
    ln_grid_complement: Vec<R>,
    log_table: Vec<R>,
}

impl<R: Scalar> CanonicalGridKernel<R> {
    pub fn new(kernel: KernelSpec<R>, n_ens: usize) -> Self {
        let grid = canonical_quantiles::<R>(n_ens);
        let ln_grid: Vec<R> = grid.iter().map(|&q| q.ln()).collect();
        let ln_grid_complement: Vec<R> = grid.iter().map(|&q| (R::one() - q).ln()).collect();
        let mut table = Vec::with_capacity(n_ens * n_ens);
        let mut row = vec![R::zero(); n_ens];
        for t in 0..n_ens {
            log_kernel_row(
                &kernel,
                grid[t],
                &grid,
                &ln_grid,
                &ln_grid_complement,
                &mut row,
            );
            table.extend_from_slice(&row);
        }
        Self {
            kernel,
            grid,
            ln_grid,
            ln_grid_complement,
            log_table: table,
        }
    }

    pub fn n_ens(&self) -> usize {
        self.grid.len()
    }

    pub fn kernel(&self) -> &KernelSpec<R> {
        &self.kernel
    }

    pub fn grid(&self) -> &[R] {
        &self.grid
    }

    /// `log σ'(grid[t]; grid[c])` from the table.
    pub fn log_sigma_grid(&self, t: usize, c: usize) -> R {
        self.log_table[t * self.grid.len() + c]
    }

    /// Fills `out[c] = log σ'(u; grid[c])` for a continuous evaluation
    /// point `u` in [0, 1].
    pub fn log_sigma_row(&self, u: R, out: &mut [R]) {
        log_kernel_row(
            &self.kernel,
            u,
            &self.grid,
            &self.ln_grid,
            &self.ln_grid_complement,
            out,
        );
    }
}

fn log_kernel_row<R: Scalar>(
    kernel: &KernelSpec<R>,
    u: R,
    grid: &[R],
    ln_grid: &[R],
    ln_grid_complement: &[R],
    out: &mut [R],
) {
    debug_assert_eq!(out.len(), grid.len());
    match kernel.kind {
        KernelKind::TruncatedGaussian => {
            let norm = kernel.h * R::of((2.0 * std::f64::consts::PI).sqrt());
            let neg_ln_norm = -norm.ln();
            let half = R::of(0.5);
            for (o, &q) in out.iter_mut().zip(grid) {
                let z = (u - q) / kernel.h;
                *o = neg_ln_norm - half * z * z;
            }
        }
        KernelKind::Beta | KernelKind::BoundaryCorrectedBeta => {
            let (a, b) = beta_shape(kernel.kind, u, kernel.h);
            let log_b = a.lgamma() + b.lgamma() - (a + b).lgamma();
            let am1 = a - R::one();
            let bm1 = b - R::one();
            for ((o, &lq), &lc) in out.iter_mut().zip(ln_grid).zip(ln_grid_complement) {
                *o = am1 * lq + bm1 * lc - log_b;
            }
        }
    }
}
