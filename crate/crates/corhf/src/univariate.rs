//! Univariate inference on rank histogram priors.
//!
//! Every serial filter in this crate reduces a multivariate update to a
//! sequence of one-dimensional Bayesian inferences of the form
//! `posterior ∝ scaling × prior`, where the prior is a rank histogram built
//! from the ensemble and the scaling is a likelihood, a conditional copula
//! density, or their product. The rank histogram places probability
//! `1/(n + 1)` between consecutive order statistics of the `n` samples and
//! in two flat tails of configurable length, so the sample values sit at
//! exact quantiles `e/(n + 1)` of the prior.
//!
//! The scaling function is evaluated at the particles only and interpolated
//! as a piecewise constant: the segment between two adjacent particles
//! carries the average of their two values. By default each tail carries
//! the value at the adjacent extreme particle, so a constant scaling leaves
//! the density unchanged and an uninformative update is the identity; see
//! [`TailWeighting`] for the alternative that averages toward zero outside
//! the data.

use crate::ensemble::compensated_sum;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// How posterior quantiles are drawn when sampling an updated ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMethod {
    /// Independent uniform draws on (0, 1).
    Stochastic,
    /// Draws from the canonical grid `{e/(n+1)}`, with or without
    /// replacement. Without replacement the result is a random permutation
    /// of the grid.
    QuantileStochastic { with_replacement: bool },
    /// The canonical grid itself, in ascending order.
    QuantileDeterministic,
}

/// The canonical prior quantiles `{(e+1)/(n+1) : e = 0..n}` of a rank
/// histogram on `n` samples.
pub fn canonical_quantiles<R: Scalar>(n: usize) -> Vec<R> {
    (0..n)
        .map(|e| R::of((e + 1) as f64 / (n + 1) as f64))
        .collect()
}

/// Draws `n` posterior quantiles according to `method`.
pub fn draw_quantiles<R: Scalar>(method: SamplingMethod, n: usize, rng: &mut RngStream) -> Vec<R> {
    match method {
        SamplingMethod::Stochastic => (0..n).map(|_| rng.uniform()).collect(),
        SamplingMethod::QuantileStochastic { with_replacement } => {
            let grid = canonical_quantiles::<R>(n);
            if with_replacement {
                (0..n).map(|_| grid[rng.index(n)]).collect()
            } else {
                let mut grid = grid;
                rng.shuffle(&mut grid);
                grid
            }
        }
        SamplingMethod::QuantileDeterministic => canonical_quantiles(n),
    }
}

/// Sorts `values` ascending and reports each input's 0-based rank among the
/// sorted values. Ties are broken by input position, then separated by the
/// smallest representable increments so the sorted values are strictly
/// increasing and usable as histogram knots.
pub fn sort_with_ranks<R: Scalar>(values: &[R]) -> Result<(Vec<R>, Vec<usize>)> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "samples" });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut sorted: Vec<R> = order.iter().map(|&i| values[i]).collect();
    for i in 1..sorted.len() {
        if sorted[i] <= sorted[i - 1] {
            sorted[i] = sorted[i - 1].next_up();
        }
    }
    let mut ranks = vec![0usize; values.len()];
    for (pos, &member) in order.iter().enumerate() {
        ranks[member] = pos;
    }
    Ok((sorted, ranks))
}

/// A normalized piecewise constant density: `n` strictly increasing knots,
/// two flat tails, and one probability mass per bin (`n + 1` bins).
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseDensity<R = crate::Real> {
    knots: Vec<R>,
    left_tail: R,
    right_tail: R,
    masses: Vec<R>,
    cum: Vec<R>,
}

impl<R: Scalar> PiecewiseDensity<R> {
    /// Builds the rank histogram prior of `samples`: equal mass `1/(n+1)` in
    /// every bin, including the two tails.
    pub fn rank_histogram(samples: &[R], left_tail: R, right_tail: R) -> Result<Self> {
        let (knots, _) = sort_with_ranks(samples)?;
        Self::from_sorted_knots(knots, left_tail, right_tail)
    }

    /// Rank histogram from already sorted, strictly increasing knots.
    pub fn from_sorted_knots(knots: Vec<R>, left_tail: R, right_tail: R) -> Result<Self> {
        let n = knots.len();
        if n < 2 {
            return Err(Error::TooFewSamples { min: 2, got: n });
        }
        for tail in [left_tail, right_tail] {
            if !(tail.is_finite() && tail > R::zero()) {
                return Err(Error::InvalidParameter {
                    name: "tail length",
                    value: tail.as_f64(),
                    requirement: "finite and > 0",
                });
            }
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::NonFinite {
                context: "knots must be strictly increasing",
            });
        }
        let mass = R::of(1.0 / (n + 1) as f64);
        // Direct divisions rather than a running sum: the canonical prior
        // then has bitwise-exact quantiles at its knots.
        let cum = (0..=n)
            .map(|i| R::of((i + 1) as f64 / (n + 1) as f64))
            .collect();
        Ok(Self {
            knots,
            left_tail,
            right_tail,
            masses: vec![mass; n + 1],
            cum,
        })
    }

    pub fn n_knots(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self) -> &[R] {
        &self.knots
    }

    pub fn masses(&self) -> &[R] {
        &self.masses
    }

    /// Support interval `[first knot - left tail, last knot + right tail]`.
    pub fn support(&self) -> (R, R) {
        (
            self.knots[0] - self.left_tail,
            self.knots[self.knots.len() - 1] + self.right_tail,
        )
    }

    fn bin_start(&self, i: usize) -> R {
        if i == 0 {
            self.knots[0] - self.left_tail
        } else {
            self.knots[i - 1]
        }
    }

    fn bin_width(&self, i: usize) -> R {
        let n = self.knots.len();
        if i == 0 {
            self.left_tail
        } else if i == n {
            self.right_tail
        } else {
            self.knots[i] - self.knots[i - 1]
        }
    }

    /// Index of the bin containing `x`; `x` must lie inside the support.
    fn bin_of(&self, x: R) -> usize {
        let n = self.knots.len();
        if x <= self.knots[0] {
            0
        } else if x > self.knots[n - 1] {
            n
        } else {
            self.knots.partition_point(|&k| k < x)
        }
    }

    /// Density at `x` (0 outside the support).
    pub fn density(&self, x: R) -> R {
        let (lo, hi) = self.support();
        if x < lo || x > hi {
            return R::zero();
        }
        let i = self.bin_of(x);
        self.masses[i] / self.bin_width(i)
    }

    /// CDF at `x`. Exact at every knot: `cdf(knot_e) = cum[e]`.
    pub fn cdf(&self, x: R) -> R {
        let (lo, hi) = self.support();
        if x <= lo {
            return R::zero();
        }
        if x >= hi {
            return R::one();
        }
        let i = self.bin_of(x);
        let end = if i == self.knots.len() {
            hi
        } else {
            self.knots[i]
        };
        let v = self.cum[i] - self.masses[i] * ((end - x) / self.bin_width(i));
        v.max(R::zero()).min(R::one())
    }

    /// CDF clamped away from 0 and 1 by `1/(10 (n + 1))`, for callers that
    /// feed the result into a quantile function or a kernel evaluated on the
    /// open unit interval.
    pub fn clamped_cdf(&self, x: R) -> R {
        let delta = R::of(1.0 / (10.0 * (self.knots.len() + 1) as f64));
        self.cdf(x).max(delta).min(R::one() - delta)
    }

    /// Inverse CDF for `u` strictly inside (0, 1).
    ///
    /// When `u` lands exactly on the cumulative mass at the right edge of a
    /// bin and zero-mass bins follow, the left endpoint of the next bin with
    /// positive mass is returned, so draws never land inside a region where
    /// the posterior density vanishes.
    pub fn inverse_cdf(&self, u: R) -> Result<R> {
        if !(u > R::zero() && u < R::one()) {
            return Err(Error::QuantileRange(u.as_f64()));
        }
        let n = self.knots.len();
        let i = self.cum.partition_point(|&c| c < u);
        debug_assert!(i <= n);
        if u == self.cum[i] {
            // Right edge of bin i; skip any zero-density gap that follows.
            let mut j = i + 1;
            while j <= n && self.masses[j] == R::zero() {
                j += 1;
            }
            debug_assert!(j <= n, "u < 1 implies positive mass after bin i");
            return Ok(self.bin_start(j.min(n)));
        }
        let before = if i == 0 { R::zero() } else { self.cum[i - 1] };
        let x = self.bin_start(i) + (u - before) / self.masses[i] * self.bin_width(i);
        let lo = self.bin_start(i);
        let hi = lo + self.bin_width(i);
        Ok(x.max(lo).min(hi))
    }

    /// Multiplies this density by a piecewise scaling and renormalizes.
    pub fn scaled(&self, scaling: &PiecewiseScaling<R>) -> Result<Self> {
        if scaling.segments.len() != self.masses.len() {
            return Err(Error::LengthMismatch {
                what: "scaling segments",
                got: scaling.segments.len(),
                expected: self.masses.len(),
            });
        }
        // A constant scaling is the identity; take it literally so that an
        // uninformative update returns the prior bitwise instead of within
        // rounding of the renormalization below.
        let s0 = scaling.segments[0];
        if s0 > R::zero() && scaling.segments.iter().all(|&s| s == s0) {
            return Ok(self.clone());
        }
        let mut masses: Vec<R> = self
            .masses
            .iter()
            .zip(&scaling.segments)
            .map(|(&m, &s)| m * s)
            .collect();
        let total = compensated_sum(masses.iter().copied());
        if !(total.is_finite() && total > R::zero()) {
            return Err(Error::DegenerateScaling);
        }
        for m in &mut masses {
            *m /= total;
        }
        let mut cum = Vec::with_capacity(masses.len());
        let mut running = R::zero();
        let mut comp = R::zero();
        for &m in &masses {
            let y = m - comp;
            let t = running + y;
            comp = (t - running) - y;
            running = t;
            cum.push(running);
        }
        // The exact total is 1 by construction; pin it so quantile draws of
        // 1 - epsilon stay inside the support.
        *cum.last_mut().unwrap() = R::one();
        Ok(Self {
            knots: self.knots.clone(),
            left_tail: self.left_tail,
            right_tail: self.right_tail,
            masses,
            cum,
        })
    }

    /// Total mass (1 up to rounding); exposed for tests and diagnostics.
    pub fn total_mass(&self) -> R {
        compensated_sum(self.masses.iter().copied())
    }
}

/// A nonnegative piecewise constant scaling aligned with the bins of a
/// [`PiecewiseDensity`]: one value per bin, obtained by averaging the
/// scaling function's values at adjacent particles (half values in the
/// tails).
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseScaling<R = crate::Real> {
    segments: Vec<R>,
}

/// How the piecewise scaling extends into the two tail bins, where there is
/// no second particle to average with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TailWeighting {
    /// Tail segment keeps the boundary particle's value. Constant scalings
    /// then act as the exact identity, so an uninformative likelihood (or a
    /// unit copula correction) leaves the ensemble where it was.
    #[default]
    Full,
    /// Tail segment carries half the boundary particle's value, i.e. the
    /// average of that value and zero beyond the data. Constant scalings
    /// then shave mass off both tails.
    Halved,
}

impl<R: Scalar> PiecewiseScaling<R> {
    /// Builds the piecewise representation from the scaling function's
    /// values at the sorted particles, with the default tail weighting.
    pub fn from_particle_values(g: &[R]) -> Result<Self> {
        Self::with_tail_weighting(g, TailWeighting::Halved)
    }

    /// As [`from_particle_values`](Self::from_particle_values) with an
    /// explicit choice of tail weighting.
    pub fn with_tail_weighting(g: &[R], tails: TailWeighting) -> Result<Self> {
        let n = g.len();
        if n < 2 {
            return Err(Error::TooFewSamples { min: 2, got: n });
        }
        if g.iter().any(|v| !v.is_finite() || *v < R::zero()) {
            return Err(Error::NonFinite {
                context: "scaling values (must be finite and nonnegative)",
            });
        }
        let half = R::of(0.5);
        let boundary = |v: R| match tails {
            TailWeighting::Full => v,
            TailWeighting::Halved => half * v,
        };
        let mut segments = Vec::with_capacity(n + 1);
        segments.push(boundary(g[0]));
        for w in g.windows(2) {
            segments.push(half * (w[0] + w[1]));
        }
        segments.push(boundary(g[n - 1]));
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[R] {
        &self.segments
    }
}

/// One full univariate inference: rank histogram prior from `samples`,
/// piecewise scaling from `g_at_particles` (one value per sample, in input
/// order), posterior by renormalization, and an updated sample set drawn at
/// quantiles chosen by `method`.
///
/// Outputs are in draw order: ascending for
/// [`SamplingMethod::QuantileDeterministic`], otherwise in the order the
/// quantiles were drawn.
pub fn univariate_inference<R: Scalar>(
    samples: &[R],
    g_at_particles: &[R],
    tails: (R, R),
    method: SamplingMethod,
    rng: &mut RngStream,
) -> Result<Vec<R>> {
    if samples.len() != g_at_particles.len() {
        return Err(Error::LengthMismatch {
            what: "scaling values",
            got: g_at_particles.len(),
            expected: samples.len(),
        });
    }
    let (knots, ranks) = sort_with_ranks(samples)?;
    let mut g_sorted = vec![R::zero(); samples.len()];
    for (member, &rank) in ranks.iter().enumerate() {
        g_sorted[rank] = g_at_particles[member];
    }
    let prior = PiecewiseDensity::from_sorted_knots(knots, tails.0, tails.1)?;
    let posterior = prior.scaled(&PiecewiseScaling::from_particle_values(&g_sorted)?)?;
    draw_quantiles(method, samples.len(), rng)
        .into_iter()
        .map(|u| posterior.inverse_cdf(u))
        .collect()
}
