//! Two-parameter Weibull distribution used as the predictive head.
//!
//! Density `f(x) = (b/a)·(x/a)^(b-1)·exp(-(x/a)^b)` with scale `a` and
//! shape `b`. The training loss is the batch-mean negative log-likelihood.

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Targets below this are clamped before evaluating the density; enveloped
/// amplitudes can be exactly zero, where the log-density diverges for `b < 1`.
pub const TARGET_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullParams {
    pub scale: f64,
    pub shape: f64,
}

impl WeibullParams {
    pub fn new(scale: f64, shape: f64) -> Result<Self> {
        let p = Self { scale, shape };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Domain(format!("scale must be positive, got {}", self.scale)));
        }
        if !(self.shape > 0.0 && self.shape.is_finite()) {
            return Err(Error::Domain(format!("shape must be positive, got {}", self.shape)));
        }
        Ok(())
    }

    pub fn log_pdf(&self, x: f64) -> Result<f64> {
        self.check()?;
        Ok(self.log_pdf_unchecked(x))
    }

    #[inline]
    pub(crate) fn log_pdf_unchecked(&self, x: f64) -> f64 {
        let (a, b) = (self.scale, self.shape);
        let r = x.max(TARGET_FLOOR) / a;
        let lr = r.ln();
        (b / a).ln() + (b - 1.0) * lr - (b * lr).exp()
    }

    /// Partial derivatives of `-log_pdf(x)` with respect to (scale, shape).
    pub fn nll_grad(&self, x: f64) -> Result<(f64, f64)> {
        self.check()?;
        Ok(self.nll_grad_unchecked(x))
    }

    #[inline]
    pub(crate) fn nll_grad_unchecked(&self, x: f64) -> (f64, f64) {
        let (a, b) = (self.scale, self.shape);
        let lr = (x.max(TARGET_FLOOR) / a).ln();
        let rb = (b * lr).exp();
        let d_scale = b / a * (1.0 - rb);
        let d_shape = -1.0 / b - lr + rb * lr;
        (d_scale, d_shape)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        -(-(x / self.scale).powf(self.shape)).exp_m1()
    }

    pub fn mean(&self) -> f64 {
        self.scale * gamma(1.0 + 1.0 / self.shape)
    }

    pub fn quantile(&self, c: f64) -> Result<f64> {
        if !(c > 0.0 && c < 1.0) {
            return Err(Error::arg("confidence", format!("{c} is outside (0, 1)")));
        }
        self.check()?;
        Ok(self.quantile_unchecked(c))
    }

    #[inline]
    pub(crate) fn quantile_unchecked(&self, c: f64) -> f64 {
        self.scale * (-(-c).ln_1p()).powf(1.0 / self.shape)
    }
}

/// Batch-mean negative log-likelihood.
pub fn nll(xs: &[f64], ps: &[WeibullParams]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::arg("xs", "empty batch"));
    }
    if xs.len() != ps.len() {
        return Err(Error::arg(
            "ps",
            format!("{} targets but {} parameter pairs", xs.len(), ps.len()),
        ));
    }
    let mut sum = 0.0;
    for (x, p) in xs.iter().zip(ps) {
        sum -= p.log_pdf(*x)?;
    }
    Ok(sum / xs.len() as f64)
}
