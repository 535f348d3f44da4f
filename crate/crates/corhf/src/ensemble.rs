//! Ensemble storage and the handful of statistics the filters need.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// An ensemble of state vectors, stored column-major: one contiguous column
/// per member, `n_vars` entries each.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<R = crate::Real> {
    data: Vec<R>,
    n_vars: usize,
    n_members: usize,
}

/// An ensemble of observable vectors; same layout as [`Ensemble`], kept as a
/// separate name so signatures say which space they live in.
pub type ObservableEnsemble<R = crate::Real> = Ensemble<R>;

impl<R: Scalar> Ensemble<R> {
    pub fn zeros(n_vars: usize, n_members: usize) -> Self {
        Self {
            data: vec![R::zero(); n_vars * n_members],
            n_vars,
            n_members,
        }
    }

    /// Builds an ensemble from per-member columns. All columns must have the
    /// same length and contain only finite values.
    pub fn from_columns(columns: &[Vec<R>]) -> Result<Self> {
        let n_members = columns.len();
        if n_members == 0 {
            return Err(Error::TooFewSamples { min: 1, got: 0 });
        }
        let n_vars = columns[0].len();
        let mut data = Vec::with_capacity(n_vars * n_members);
        for col in columns {
            if col.len() != n_vars {
                return Err(Error::LengthMismatch {
                    what: "ensemble member",
                    got: col.len(),
                    expected: n_vars,
                });
            }
            data.extend_from_slice(col);
        }
        let ens = Self {
            data,
            n_vars,
            n_members,
        };
        ens.check_finite()?;
        Ok(ens)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    pub fn member(&self, e: usize) -> &[R] {
        &self.data[e * self.n_vars..(e + 1) * self.n_vars]
    }

    pub fn member_mut(&mut self, e: usize) -> &mut [R] {
        &mut self.data[e * self.n_vars..(e + 1) * self.n_vars]
    }

    pub fn get(&self, var: usize, member: usize) -> R {
        self.data[member * self.n_vars + var]
    }

    pub fn set(&mut self, var: usize, member: usize, value: R) {
        self.data[member * self.n_vars + var] = value;
    }

    /// Copies the values of one variable across all members.
    pub fn variable(&self, var: usize) -> Vec<R> {
        (0..self.n_members).map(|e| self.get(var, e)).collect()
    }

    /// Per-variable mean over members.
    pub fn mean(&self) -> Vec<R> {
        let scale = R::of(1.0 / self.n_members as f64);
        let mut out = vec![R::zero(); self.n_vars];
        for e in 0..self.n_members {
            for (acc, &v) in out.iter_mut().zip(self.member(e)) {
                *acc += v;
            }
        }
        for v in &mut out {
            *v *= scale;
        }
        out
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: "ensemble",
            })
        }
    }
}

/// Arithmetic mean of a slice.
pub fn mean<R: Scalar>(xs: &[R]) -> R {
    compensated_sum(xs.iter().copied()) / R::of(xs.len() as f64)
}

/// Standard deviation with the population convention (divide by n). Used for
/// bandwidth and tail-length rules, where the spread of a fixed grid is
/// wanted rather than an unbiased estimate.
pub fn stddev_population<R: Scalar>(xs: &[R]) -> Result<R> {
    if xs.is_empty() {
        return Err(Error::TooFewSamples { min: 1, got: 0 });
    }
    let m = mean(xs);
    let ss = compensated_sum(xs.iter().map(|&x| (x - m) * (x - m)));
    Ok((ss / R::of(xs.len() as f64)).sqrt())
}

/// Standard deviation with the sample convention (divide by n - 1), matching
/// the covariance convention used for regression.
pub fn stddev_sample<R: Scalar>(xs: &[R]) -> Result<R> {
    Ok(covariance(xs, xs)?.sqrt())
}

/// Sample covariance (divide by n - 1), the convention used for all
/// regression coefficients.
pub fn covariance<R: Scalar>(a: &[R], b: &[R]) -> Result<R> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "covariance input",
            got: b.len(),
            expected: a.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::TooFewSamples {
            min: 2,
            got: a.len(),
        });
    }
    let ma = mean(a);
    let mb = mean(b);
    let ss = compensated_sum(a.iter().zip(b).map(|(&x, &y)| (x - ma) * (y - mb)));
    Ok(ss / R::of((a.len() - 1) as f64))
}

/// Kahan-compensated summation.
pub fn compensated_sum<R: Scalar>(xs: impl Iterator<Item = R>) -> R {
    let mut sum = R::zero();
    let mut c = R::zero();
    for x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_is_per_variable() {
        let ens = Ensemble::from_columns(&[vec![0.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(ens.mean(), vec![1.0, 3.0]);
    }

    #[test]
    fn mean_is_permutation_invariant() {
        let a = Ensemble::from_columns(&[vec![1.0], vec![5.0], vec![-3.0]]).unwrap();
        let b = Ensemble::from_columns(&[vec![-3.0], vec![1.0], vec![5.0]]).unwrap();
        assert_eq!(a.mean(), b.mean());
    }

    #[test]
    fn stddev_conventions_on_zero_one() {
        let xs = [0.0f64, 1.0];
        assert!((stddev_population(&xs).unwrap() - 0.5).abs() < 1e-15);
        assert!((stddev_sample(&xs).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn covariance_of_scaled_vector() {
        let a = [0.0f64, 1.0, 2.0];
        let b = [0.0f64, 2.0, 4.0];
        // cov(a, 2a) = 2 var(a) with the sample convention.
        assert!((covariance(&a, &b).unwrap() - 2.0).abs() < 1e-15);
        assert!((covariance(&a, &a).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn covariance_is_symmetric() {
        let a = [1.0f64, -2.0, 0.5, 3.0];
        let b = [0.3f64, 1.2, -0.7, 2.2];
        assert_eq!(covariance(&a, &b).unwrap(), covariance(&b, &a).unwrap());
    }

    #[test]
    fn non_finite_members_are_rejected() {
        let err = Ensemble::from_columns(&[vec![0.0, f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn works_at_f32() {
        let ens: Ensemble<f32> =
            Ensemble::from_columns(&[vec![0.0f32, 2.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(ens.mean(), vec![1.0f32, 3.0]);
    }
}
