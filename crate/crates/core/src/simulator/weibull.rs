//! Weibull time-to-DLT pinned by two quantiles: `P(T <= tau) = p` and
//! `P(T <= (1 - gamma) tau) = (1 - alpha) p`, so a fraction `alpha` of
//! in-window DLTs fall in the last `gamma` share of the window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub shape: f64,
    pub scale: f64,
}

impl WeibullParams {
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        -(-(t / self.scale).powf(self.shape)).exp_m1()
    }

    /// Inverse CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        self.scale * (-(-u).ln_1p()).powf(1.0 / self.shape)
    }
}

pub fn weibull_params(p: f64, alpha: f64, gamma: f64, tau: f64) -> Result<WeibullParams> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "DLT probability {p} must lie in (0, 1)"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0 && gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {alpha} and gamma {gamma} must lie in (0, 1)"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("tau must be positive".into()));
    }
    let h_full = -(-p).ln_1p();
    let h_early = -(-(p - alpha * p)).ln_1p();
    let shape = (h_full / h_early).ln() / (1.0 / (1.0 - gamma)).ln();
    let scale = tau / h_full.powf(1.0 / shape);
    Ok(WeibullParams { shape, scale })
}

/// DLT-time generator for one dose; `p = 0` never produces a DLT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DltTimeModel {
    pub p: f64,
    pub weibull: Option<WeibullParams>,
}

impl DltTimeModel {
    pub fn new(p: f64, alpha: f64, gamma: f64, tau: f64) -> Result<Self> {
        if p == 0.0 {
            return Ok(Self { p, weibull: None });
        }
        Ok(Self {
            p,
            weibull: Some(weibull_params(p, alpha, gamma, tau)?),
        })
    }

    /// Time to DLT from a uniform draw; `T <= tau` exactly when `u <= p`
    /// up to rounding.
    pub fn time(&self, u: f64) -> f64 {
        match self.weibull {
            Some(w) => w.quantile(u),
            None => f64::INFINITY,
        }
    }
}
