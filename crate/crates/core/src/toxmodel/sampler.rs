//! Metropolis-within-Gibbs sampler for `(p, w)`.
//!
//! Each `p_d` moves by a Gaussian random walk on the logit scale; `w` moves
//! jointly by a random walk on its additive log-ratio coordinates. Step
//! sizes are tuned during burn-in and frozen afterwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ToxData;
use crate::error::{Error, Result};
use crate::trial::{BetaPrior, DesignParams};

const ADAPT_EVERY: usize = 50;
const ACCEPT_LOW: f64 = 0.25;
const ACCEPT_HIGH: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    /// Total iterations, burn-in included.
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub step_p: f64,
    pub step_w: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iter: 3000,
            burn_in: 1000,
            thin: 1,
            seed: 1,
            step_p: 0.6,
            step_w: 0.4,
        }
    }
}

impl McmcConfig {
    /// Smaller budget used inside simulation campaigns.
    pub fn simulation() -> Self {
        Self {
            n_iter: 1500,
            burn_in: 500,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn n_kept(&self) -> usize {
        (self.n_iter - self.burn_in).div_ceil(self.thin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter <= self.burn_in || self.thin == 0 {
            return Err(Error::InvalidArgument(format!(
                "need n_iter > burn_in and thin >= 1 (got {}, {}, {})",
                self.n_iter, self.burn_in, self.thin
            )));
        }
        if !(self.step_p > 0.0 && self.step_w > 0.0) {
            return Err(Error::InvalidArgument("proposal steps must be positive".into()));
        }
        Ok(())
    }
}

/// Beta priors on `p` and the Dirichlet prior on `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    pub theta: Vec<BetaPrior>,
    pub eta: Vec<f64>,
}

impl Priors {
    pub fn uniform(n_doses: usize, n_bins: usize) -> Self {
        Self {
            theta: vec![BetaPrior::default(); n_doses],
            eta: vec![1.0; n_bins],
        }
    }

    pub fn from_params(params: &DesignParams) -> Self {
        Self {
            theta: params.theta.clone(),
            eta: params.eta.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub p: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerStats {
    /// Post-burn-in acceptance rate of each `p_d` update.
    pub accept_p: Vec<f64>,
    pub accept_w: f64,
    /// Step sizes after adaptation.
    pub step_p: Vec<f64>,
    pub step_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub draws: Vec<Draw>,
    pub config: McmcConfig,
    pub stats: SamplerStats,
}

impl PosteriorDraws {
    /// Draws as CSV rows `iter,p_1..p_D,w_1..w_K`.
    pub fn to_csv(&self) -> String {
        let (d, k) = match self.draws.first() {
            Some(first) => (first.p.len(), first.w.len()),
            None => (0, 0),
        };
        let mut out = String::from("iter");
        for i in 1..=d {
            out.push_str(&format!(",p_{i}"));
        }
        for i in 1..=k {
            out.push_str(&format!(",w_{i}"));
        }
        out.push('\n');
        for (i, draw) in self.draws.iter().enumerate() {
            out.push_str(&i.to_string());
            for x in draw.p.iter().chain(&draw.w) {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `w` from additive log-ratio coordinates (last bin is the reference).
fn alr_inverse(phi: &[f64], w: &mut [f64]) {
    let max = phi.iter().copied().fold(0.0, f64::max);
    let mut total = (-max).exp();
    for (wk, &x) in w.iter_mut().zip(phi) {
        *wk = (x - max).exp();
        total += *wk;
    }
    let last = w.len() - 1;
    w[last] = (-max).exp();
    for wk in w.iter_mut() {
        *wk /= total;
    }
}

struct Target<'a> {
    data: &'a ToxData,
    priors: &'a Priors,
}

impl Target<'_> {
    /// Conditional log density of `logit(p_d)` given `w`, pending survival
    /// sums `s` at that dose already computed.
    fn dose_term(&self, d: usize, p: f64, sums: &[f64]) -> f64 {
        let dose = &self.data.doses[d];
        let prior = self.priors.theta[d];
        // Beta prior times the logit Jacobian p(1 - p)
        let mut lp = (prior.a + dose.n as f64) * p.ln() + (prior.b + dose.m as f64) * (-p).ln_1p();
        for &s in sums {
            let factor = 1.0 - p * s;
            if !(factor > 0.0) {
                return f64::NEG_INFINITY;
            }
            lp += factor.ln();
        }
        lp
    }

    /// Conditional log density of the ALR coordinates of `w` given `p`.
    fn weight_term(&self, w: &[f64], p: &[f64]) -> f64 {
        let mut lp = 0.0;
        for ((&wk, &eta), &count) in w.iter().zip(&self.priors.eta).zip(&self.data.bin_dlts) {
            if !(wk > 0.0) {
                return f64::NEG_INFINITY;
            }
            // Dirichlet prior times the ALR Jacobian prod_k w_k
            lp += (eta + count as f64) * wk.ln();
        }
        for (dose, &pd) in self.data.doses.iter().zip(p) {
            for frac in &dose.pending_fractions {
                let factor = 1.0 - pd * super::dot(w, frac);
                if !(factor > 0.0) {
                    return f64::NEG_INFINITY;
                }
                lp += factor.ln();
            }
        }
        lp
    }
}

fn pending_sums(data: &ToxData, w: &[f64]) -> Vec<Vec<f64>> {
    data.doses
        .iter()
        .map(|d| d.pending_fractions.iter().map(|f| super::dot(w, f)).collect())
        .collect()
}

fn adapt(step: &mut f64, accepted: usize, tried: usize) {
    let rate = accepted as f64 / tried as f64;
    if rate < ACCEPT_LOW {
        *step *= 0.8;
    } else if rate > ACCEPT_HIGH {
        *step *= 1.25;
    }
}

/// Runs the chain and returns the retained draws. Deterministic given
/// `config.seed`.
pub fn sample_posterior(data: &ToxData, priors: &Priors, config: &McmcConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let n_doses = data.doses.len();
    let k = data.grid.n_bins();
    if priors.theta.len() != n_doses || priors.eta.len() != k {
        return Err(Error::InvalidArgument("prior dimensions do not match data".into()));
    }
    if data.n_patients() == 0 {
        return Err(Error::InvalidArgument("no patients enrolled".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let target = Target { data, priors };

    let mut p: Vec<f64> = data
        .doses
        .iter()
        .map(|d| (d.n as f64 + 0.5) / (d.n as f64 + d.m as f64 + 1.0))
        .collect();
    let eta_total: f64 = priors.eta.iter().sum();
    let mut w: Vec<f64> = priors.eta.iter().map(|e| e / eta_total).collect();
    let mut phi: Vec<f64> = w[..k - 1].iter().map(|wk| (wk / w[k - 1]).ln()).collect();

    let mut sums = pending_sums(data, &w);
    let mut dose_lp: Vec<f64> = (0..n_doses).map(|d| target.dose_term(d, p[d], &sums[d])).collect();
    let mut weight_lp = target.weight_term(&w, &p);
    if dose_lp.iter().any(|x| !x.is_finite()) || !weight_lp.is_finite() {
        return Err(Error::Numerical("non-finite log posterior at initialization".into()));
    }

    let mut step_p = vec![config.step_p; n_doses];
    let mut step_w = config.step_w;
    let mut acc_p = vec![0usize; n_doses];
    let mut acc_w = 0usize;
    let mut kept_acc_p = vec![0usize; n_doses];
    let mut kept_acc_w = 0usize;

    let mut draws = Vec::with_capacity(config.n_kept());
    let mut w_prop = vec![0.0; k];
    let mut phi_prop = vec![0.0; k.saturating_sub(1)];

    for iter in 0..config.n_iter {
        let burning = iter < config.burn_in;

        for d in 0..n_doses {
            let z: f64 = rng.sample(StandardNormal);
            let x = logit(p[d]) + step_p[d] * z;
            let cand = expit(x);
            if !(cand > 0.0 && cand < 1.0) {
                continue;
            }
            let lp = target.dose_term(d, cand, &sums[d]);
            if rng.random::<f64>().ln() < lp - dose_lp[d] {
                p[d] = cand;
                dose_lp[d] = lp;
                acc_p[d] += 1;
                if !burning {
                    kept_acc_p[d] += 1;
                }
            }
        }

        if k > 1 {
            for (xp, &x) in phi_prop.iter_mut().zip(&phi) {
                let z: f64 = rng.sample(StandardNormal);
                *xp = x + step_w * z;
            }
            alr_inverse(&phi_prop, &mut w_prop);
            // p moved since the last w update
            weight_lp = target.weight_term(&w, &p);
            let lp = target.weight_term(&w_prop, &p);
            if rng.random::<f64>().ln() < lp - weight_lp {
                w.copy_from_slice(&w_prop);
                phi.copy_from_slice(&phi_prop);
                acc_w += 1;
                if !burning {
                    kept_acc_w += 1;
                }
                sums = pending_sums(data, &w);
                for d in 0..n_doses {
                    dose_lp[d] = target.dose_term(d, p[d], &sums[d]);
                }
            }
        }

        if burning && (iter + 1) % ADAPT_EVERY == 0 {
            for d in 0..n_doses {
                adapt(&mut step_p[d], acc_p[d], ADAPT_EVERY);
                acc_p[d] = 0;
            }
            adapt(&mut step_w, acc_w, ADAPT_EVERY);
            acc_w = 0;
        }

        if !burning && (iter - config.burn_in).is_multiple_of(config.thin) {
            draws.push(Draw {
                p: p.clone(),
                w: w.clone(),
            });
        }
    }

    let kept = (config.n_iter - config.burn_in) as f64;
    Ok(PosteriorDraws {
        draws,
        config: *config,
        stats: SamplerStats {
            accept_p: kept_acc_p.iter().map(|&a| a as f64 / kept).collect(),
            accept_w: kept_acc_w as f64 / kept,
            step_p,
            step_w,
        },
    })
}
