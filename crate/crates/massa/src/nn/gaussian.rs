//! Diagonal Gaussian heads: reparameterized sampling, log-density, entropy.
//!
//! A head's raw network output is `[mean | log_std]`; `log_std` is clamped
//! to `[LOG_STD_MIN, LOG_STD_MAX]` before exponentiation so densities stay
//! finite.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

pub const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// Clamp a raw log-std into `(LOG_STD_MIN, LOG_STD_MAX)` with a C1
/// boundary: identity on `[MIN+1, MAX-1]`, exponential saturation
/// outside. Returns the clamped value and its derivative.
///
/// A hard clamp zeroes the gradient beyond the boundary, which makes the
/// saturated region absorbing under momentum-based optimizers: once an
/// entropy-style drift parks a coordinate past the edge nothing can pull
/// it back. The smooth boundary attenuates both the inward and outward
/// forces equally, so whichever dominates still decides the direction.
#[inline]
pub fn clamp_log_std(x: f64) -> (f64, f64) {
    if x > LOG_STD_MAX - 1.0 {
        let e = (-(x - (LOG_STD_MAX - 1.0))).exp();
        (LOG_STD_MAX - e, e)
    } else if x < LOG_STD_MIN + 1.0 {
        let e = (x - (LOG_STD_MIN + 1.0)).exp();
        (LOG_STD_MIN + e, e)
    } else {
        (x, 1.0)
    }
}

/// Mean/stddev pair of a diagonal Gaussian. `std` is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl GaussianParams {
    pub fn new(mean: Array1<f64>, std: Array1<f64>) -> Self {
        assert_eq!(mean.len(), std.len(), "mean/std length mismatch");
        assert!(std.iter().all(|&s| s > 0.0), "std must be strictly positive");
        Self { mean, std }
    }

    /// Split a raw head output `[mean | log_std]`, clamp, exponentiate.
    pub fn from_raw(raw: ArrayView1<f64>) -> Self {
        assert!(raw.len() % 2 == 0, "raw head output must have even length");
        let d = raw.len() / 2;
        let mean = raw.slice(ndarray::s![..d]).to_owned();
        let std = raw
            .slice(ndarray::s![d..])
            .mapv(|l| clamp_log_std(l).0.exp());
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Reparameterized sample: `mean + eps * std`, elementwise.
    pub fn sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        if eps.len() != self.dim() {
            return Err(Error::DimMismatch {
                context: "GaussianParams::sample noise",
                expected: self.dim(),
                got: eps.len(),
            });
        }
        Ok(self
            .mean
            .iter()
            .zip(self.std.iter())
            .zip(eps.iter())
            .map(|((m, s), e)| m + e * s)
            .collect())
    }

    /// Diagonal Gaussian log-density at `x`.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                context: "GaussianParams::log_prob point",
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut acc = 0.0;
        for ((m, s), v) in self.mean.iter().zip(self.std.iter()).zip(x.iter()) {
            let z = (v - m) / s;
            acc += -0.5 * LN_2PI - s.ln() - 0.5 * z * z;
        }
        Ok(acc)
    }

    /// Closed-form entropy: `sum_j 1/2 + 1/2 ln(2 pi) + ln sigma_j`.
    pub fn entropy(&self) -> f64 {
        self.std
            .iter()
            .map(|&s| 0.5 + 0.5 * LN_2PI + s.ln())
            .sum()
    }
}

/// Batched raw-head split: `raw` is `B x 2d`. Returns `(mean, log_std,
/// clamp_deriv)`, each `B x d`; the third matrix is the derivative of the
/// clamp at each raw log-std (1 on the interior, decaying toward the
/// saturation bounds).
pub fn split_raw_batch(raw: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let d = raw.ncols() / 2;
    let mean = raw.slice(ndarray::s![.., ..d]).to_owned();
    let raw_ls = raw.slice(ndarray::s![.., d..]);
    let log_std = raw_ls.mapv(|l| clamp_log_std(l).0);
    let mask = raw_ls.mapv(|l| clamp_log_std(l).1);
    (mean, log_std, mask)
}

/// Batched reparameterized sample `mean + eps * exp(log_std)`.
pub fn sample_batch(mean: &Array2<f64>, log_std: &Array2<f64>, eps: &Array2<f64>) -> Array2<f64> {
    let mut out = mean.clone();
    out.zip_mut_with(&(eps * &log_std.mapv(f64::exp)), |o, &a| *o += a);
    out
}

/// Per-row log-density of the reparameterized sample itself:
/// `log p(mean + eps*sigma) = sum_j -1/2 ln(2 pi) - log_std_j - eps_j^2/2`.
pub fn log_prob_reparam_batch(log_std: &Array2<f64>, eps: &Array2<f64>) -> Array1<f64> {
    let d = log_std.ncols() as f64;
    let mut out = Array1::zeros(log_std.nrows());
    let ls_sum = log_std.sum_axis(Axis(1));
    let e2_sum = eps.mapv(|e| e * e).sum_axis(Axis(1));
    out.zip_mut_with(&ls_sum, |o, &s| *o -= s);
    out.zip_mut_with(&e2_sum, |o, &s| *o -= 0.5 * s);
    out.mapv_inplace(|v| v - 0.5 * d * LN_2PI);
    out
}

/// Per-row closed-form entropy from batched `log_std`.
pub fn entropy_batch(log_std: &Array2<f64>) -> Array1<f64> {
    let d = log_std.ncols() as f64;
    log_std.sum_axis(Axis(1)).mapv(|s| s + d * (0.5 + 0.5 * LN_2PI))
}
