//! Time-to-toxicity model for pending outcomes.
//!
//! A DLT happens within the window with probability `p_d`; given that it
//! happens, its time is piecewise uniform over `K` bins with weights `w`
//! shared by all doses. Pending patients enter through their survival
//! factor `1 - p_d * sum_k w_k * frac(v, k)`. From posterior draws of
//! `(p, w)` this module derives the distribution of the number of pending
//! DLTs at a dose and the induced probability of each decision.

mod sampler;

pub use sampler::{sample_posterior, Draw, McmcConfig, PosteriorDraws, Priors, SamplerStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::{Decision, Outcome, TrialState};

/// Bin boundaries `0 = h_0 < h_1 < ... < h_K = tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    bounds: Vec<f64>,
}

impl TimeGrid {
    /// `K` equal bins over `(0, tau]`.
    pub fn uniform(tau: f64, n_bins: usize) -> Result<Self> {
        if !(tau > 0.0) || n_bins == 0 {
            return Err(Error::InvalidArgument(format!(
                "need tau > 0 and at least one bin, got tau = {tau}, K = {n_bins}"
            )));
        }
        let bounds = (0..=n_bins)
            .map(|k| if k == n_bins { tau } else { k as f64 * tau / n_bins as f64 })
            .collect();
        Ok(Self { bounds })
    }

    pub fn from_bounds(bounds: Vec<f64>) -> Result<Self> {
        if bounds.len() < 2 || bounds[0] != 0.0 || bounds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "bin boundaries must start at 0 and increase strictly".into(),
            ));
        }
        Ok(Self { bounds })
    }

    pub fn n_bins(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn tau(&self) -> f64 {
        *self.bounds.last().expect("at least two bounds")
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    /// Fraction of bin `bin` (0-based) elapsed by time `t`: 1 once `t` is
    /// past the bin, linear inside `(h_{k-1}, h_k]`, 0 before it.
    pub fn fraction(&self, t: f64, bin: usize) -> Result<f64> {
        if !(0.0..=self.tau()).contains(&t) {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside [0, {}]",
                self.tau()
            )));
        }
        if bin >= self.n_bins() {
            return Err(Error::InvalidArgument(format!("bin {bin} out of range")));
        }
        Ok(self.fraction_unchecked(t, bin))
    }

    fn fraction_unchecked(&self, t: f64, bin: usize) -> f64 {
        let lo = self.bounds[bin];
        let hi = self.bounds[bin + 1];
        if t > hi {
            1.0
        } else if t > lo {
            (t - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    /// Elapsed fraction of every bin at time `t`.
    pub fn fractions(&self, t: f64) -> Result<Vec<f64>> {
        (0..self.n_bins()).map(|k| self.fraction(t, k)).collect()
    }

    /// 0-based bin holding a DLT at time `t` (bins are `(h_{k-1}, h_k]`;
    /// `t = 0` is placed in the first bin).
    pub fn bin_of(&self, t: f64) -> usize {
        self.bounds[1..]
            .iter()
            .position(|&h| t <= h)
            .unwrap_or(self.n_bins() - 1)
    }
}

/// Observed data at a single dose in likelihood-ready form.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DoseData {
    pub n: u32,
    pub m: u32,
    pub follow_ups: Vec<f64>,
    /// Elapsed bin fractions for each pending patient.
    pub pending_fractions: Vec<Vec<f64>>,
}

/// Everything the likelihood needs, across all doses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxData {
    pub grid: TimeGrid,
    pub doses: Vec<DoseData>,
    /// DLT counts per time bin, pooled over doses.
    pub bin_dlts: Vec<u32>,
}

impl ToxData {
    pub fn new(grid: TimeGrid, n_doses: usize) -> Self {
        let k = grid.n_bins();
        Self {
            grid,
            doses: vec![DoseData::default(); n_doses],
            bin_dlts: vec![0; k],
        }
    }

    /// Adds one patient's outcome at `dose` (1-based).
    pub fn add(&mut self, dose: usize, outcome: Outcome) -> Result<()> {
        let n_doses = self.doses.len();
        let slot = dose
            .checked_sub(1)
            .and_then(|i| self.doses.get_mut(i))
            .ok_or(Error::DoseOutOfRange { dose, n_doses })?;
        match outcome {
            Outcome::Dlt { time } => {
                slot.n += 1;
                let bin = self.grid.bin_of(time);
                self.bin_dlts[bin] += 1;
            }
            Outcome::NoDlt => slot.m += 1,
            Outcome::Pending { followup } => {
                if !(followup >= 0.0 && followup < self.grid.tau()) {
                    return Err(Error::InvalidArgument(format!(
                        "pending follow-up {followup} outside [0, tau)"
                    )));
                }
                slot.follow_ups.push(followup);
                slot.pending_fractions.push(self.grid.fractions(followup)?);
            }
        }
        Ok(())
    }

    pub fn from_state(state: &TrialState) -> Result<Self> {
        let grid = TimeGrid::uniform(state.params.tau, state.params.n_bins)?;
        let mut data = Self::new(grid, state.params.n_doses);
        for p in &state.patients {
            data.add(p.dose, state.outcome_of(p))?;
        }
        Ok(data)
    }

    pub fn n_patients(&self) -> usize {
        self.doses
            .iter()
            .map(|d| (d.n + d.m) as usize + d.follow_ups.len())
            .sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-likelihood of `(p, w)`.
///
/// `sum_k n_k log w_k + sum_d [n_d log p_d + m_d log(1 - p_d)
///  + sum_{pending i} log(1 - p_d sum_k w_k frac(v_i, k))]`.
pub fn log_likelihood(p: &[f64], w: &[f64], data: &ToxData) -> Result<f64> {
    if p.len() != data.doses.len() || w.len() != data.grid.n_bins() {
        return Err(Error::InvalidArgument("parameter dimensions do not match data".into()));
    }
    let mut ll = 0.0;
    for (&count, &wk) in data.bin_dlts.iter().zip(w) {
        if count > 0 {
            ll += count as f64 * wk.ln();
        }
    }
    for (dose, &pd) in data.doses.iter().zip(p) {
        if dose.n > 0 {
            ll += dose.n as f64 * pd.ln();
        }
        if dose.m > 0 {
            ll += dose.m as f64 * (-pd).ln_1p();
        }
        for frac in &dose.pending_fractions {
            let factor = 1.0 - pd * dot(w, frac);
            if !(factor > 0.0) {
                return Err(Error::Numerical(format!(
                    "non-positive survival factor {factor}"
                )));
            }
            ll += factor.ln();
        }
    }
    Ok(ll)
}

/// Gradient of [`log_likelihood`] with respect to `logit(p_d)` and the
/// softmax parameters `phi` of `w = softmax(phi)`.
pub fn log_likelihood_grad(p: &[f64], w: &[f64], data: &ToxData) -> (Vec<f64>, Vec<f64>) {
    let k = w.len();
    let mut grad_w = vec![0.0; k];
    for (g, (&count, &wk)) in grad_w.iter_mut().zip(data.bin_dlts.iter().zip(w)) {
        *g += count as f64 / wk;
    }
    let mut grad_logit = Vec::with_capacity(p.len());
    for (dose, &pd) in data.doses.iter().zip(p) {
        let mut dp = dose.n as f64 / pd - dose.m as f64 / (1.0 - pd);
        for frac in &dose.pending_fractions {
            let s = dot(w, frac);
            let factor = 1.0 - pd * s;
            dp -= s / factor;
            for (g, &f) in grad_w.iter_mut().zip(frac) {
                *g -= pd * f / factor;
            }
        }
        grad_logit.push(dp * pd * (1.0 - pd));
    }
    let mean = dot(w, &grad_w);
    let grad_phi = w.iter().zip(&grad_w).map(|(&wj, &gj)| wj * (gj - mean)).collect();
    (grad_logit, grad_phi)
}

/// Probability that a patient pending after `followup` days eventually has
/// a DLT inside the window.
pub fn conditional_dlt_prob(followup: f64, p: f64, w: &[f64], grid: &TimeGrid) -> Result<f64> {
    if !(followup >= 0.0 && followup < grid.tau()) {
        return Err(Error::InvalidArgument(format!(
            "follow-up {followup} outside [0, {})",
            grid.tau()
        )));
    }
    let frac = grid.fractions(followup)?;
    Ok(q_from_fractions(p, w, &frac))
}

fn q_from_fractions(p: f64, w: &[f64], frac: &[f64]) -> f64 {
    let remaining = (1.0 - dot(w, frac)).max(0.0);
    let num = remaining * p;
    num / (num + (1.0 - p))
}

/// Exact Poisson-binomial pmf over `0..=q.len()`, by folding in one
/// Bernoulli at a time.
pub fn poisson_binomial_pmf(q: &[f64]) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(q.len() + 1);
    pmf.push(1.0);
    for &qi in q {
        pmf.push(0.0);
        for s in (1..pmf.len()).rev() {
            pmf[s] = pmf[s] * (1.0 - qi) + pmf[s - 1] * qi;
        }
        pmf[0] *= 1.0 - qi;
    }
    pmf
}

/// How posterior draws are combined into the distribution of the number
/// of pending DLTs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SEstimator {
    /// Average each pending patient's DLT probability over the draws, then
    /// take the Poisson-binomial of those marginal probabilities.
    #[default]
    MarginalQ,
    /// Average the per-draw Poisson-binomial pmfs (full posterior predictive).
    Mixture,
}

/// Posterior pmf of the number of DLTs among pending patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SPosterior {
    pub pmf: Vec<f64>,
    /// Posterior mean DLT probability of each pending patient.
    pub q_mean: Vec<f64>,
    pub estimator: SEstimator,
}

impl SPosterior {
    /// Point mass at zero, for a dose without pending patients.
    pub fn none_pending() -> Self {
        Self {
            pmf: vec![1.0],
            q_mean: Vec::new(),
            estimator: SEstimator::default(),
        }
    }

    pub fn r(&self) -> u32 {
        (self.pmf.len() - 1) as u32
    }
}

/// Distribution of the pending DLT count at `dose` (1-based).
pub fn s_posterior(
    draws: &PosteriorDraws,
    dose: usize,
    follow_ups: &[f64],
    grid: &TimeGrid,
    estimator: SEstimator,
) -> Result<SPosterior> {
    if draws.draws.is_empty() {
        return Err(Error::InvalidArgument("no posterior draws".into()));
    }
    let d = dose
        .checked_sub(1)
        .filter(|&i| i < draws.draws[0].p.len())
        .ok_or(Error::DoseOutOfRange {
            dose,
            n_doses: draws.draws[0].p.len(),
        })?;
    let fracs = follow_ups
        .iter()
        .map(|&v| {
            if v >= 0.0 && v < grid.tau() {
                grid.fractions(v)
            } else {
                Err(Error::InvalidArgument(format!("follow-up {v} outside [0, tau)")))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let r = follow_ups.len();
    let n_draws = draws.draws.len() as f64;
    let mut q_mean = vec![0.0; r];
    let mut mixture = vec![0.0; r + 1];
    let mut q = vec![0.0; r];
    for draw in &draws.draws {
        for (qi, frac) in q.iter_mut().zip(&fracs) {
            *qi = q_from_fractions(draw.p[d], &draw.w, frac);
        }
        for (acc, qi) in q_mean.iter_mut().zip(&q) {
            *acc += qi / n_draws;
        }
        if estimator == SEstimator::Mixture {
            for (acc, x) in mixture.iter_mut().zip(poisson_binomial_pmf(&q)) {
                *acc += x / n_draws;
            }
        }
    }
    let pmf = match estimator {
        SEstimator::MarginalQ => poisson_binomial_pmf(&q_mean),
        SEstimator::Mixture => mixture,
    };
    Ok(SPosterior {
        pmf,
        q_mean,
        estimator,
    })
}

/// Probability of each decision, keyed `"-1"`, `"0"`, `"1"` on the wire.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Gamma {
    #[serde(rename = "-1")]
    pub de_escalate: f64,
    #[serde(rename = "0")]
    pub stay: f64,
    #[serde(rename = "1")]
    pub escalate: f64,
}

impl Gamma {
    pub fn get(&self, d: Decision) -> f64 {
        match d {
            Decision::DeEscalate => self.de_escalate,
            Decision::Stay => self.stay,
            Decision::Escalate => self.escalate,
        }
    }

    fn slot(&mut self, d: Decision) -> &mut f64 {
        match d {
            Decision::DeEscalate => &mut self.de_escalate,
            Decision::Stay => &mut self.stay,
            Decision::Escalate => &mut self.escalate,
        }
    }

    pub fn sum(&self) -> f64 {
        self.de_escalate + self.stay + self.escalate
    }
}

/// One term of the decision distribution: `s` pending DLTs lead to `decision`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SOutcome {
    pub s: u32,
    pub decision: Decision,
    pub prob: f64,
}

/// Posterior distribution over the complete-data decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionDistribution {
    pub gamma: Gamma,
    pub a_star: Decision,
    /// Decisions produced by at least one `s` in `0..=r`; each of these
    /// has strictly positive probability.
    pub reachable: Vec<Decision>,
    pub by_s: Vec<SOutcome>,
}

impl DecisionDistribution {
    /// Point mass on `decision` (no pending patients).
    pub fn certain(decision: Decision) -> Self {
        let mut gamma = Gamma::default();
        *gamma.slot(decision) = 1.0;
        Self {
            gamma,
            a_star: decision,
            reachable: vec![decision],
            by_s: vec![SOutcome {
                s: 0,
                decision,
                prob: 1.0,
            }],
        }
    }

    pub fn is_reachable(&self, d: Decision) -> bool {
        self.reachable.contains(&d)
    }
}

const GAMMA_TIE: f64 = 1e-12;

/// Decision probabilities from the pending-DLT posterior:
/// `gamma_a = sum over s with A(n + s, m + r - s) = a of P(S = s)`.
pub fn pod<F>(
    s_post: &SPosterior,
    n: u32,
    m: u32,
    r: u32,
    decide_fn: F,
) -> Result<DecisionDistribution>
where
    F: Fn(u32, u32) -> Decision,
{
    if s_post.pmf.len() != r as usize + 1 {
        return Err(Error::InvalidArgument(format!(
            "pmf has {} entries, expected {}",
            s_post.pmf.len(),
            r + 1
        )));
    }
    let total: f64 = s_post.pmf.iter().sum();
    if !(total > 0.0) || s_post.pmf.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Numerical("invalid pending-DLT pmf".into()));
    }

    let mut gamma = Gamma::default();
    let mut reachable = Vec::new();
    let mut by_s = Vec::with_capacity(r as usize + 1);
    for (s, &mass) in s_post.pmf.iter().enumerate() {
        let s = s as u32;
        let decision = decide_fn(n + s, m + r - s);
        let prob = mass / total;
        *gamma.slot(decision) += prob;
        if !reachable.contains(&decision) {
            reachable.push(decision);
        }
        by_s.push(SOutcome { s, decision, prob });
    }
    reachable.sort();
    if reachable.len() == 1 {
        gamma = Gamma::default();
        *gamma.slot(reachable[0]) = 1.0;
    }

    let best = Decision::ALL
        .iter()
        .map(|&d| gamma.get(d))
        .fold(f64::NEG_INFINITY, f64::max);
    let a_star = Decision::ALL
        .into_iter()
        .find(|&d| gamma.get(d) >= best - GAMMA_TIE)
        .expect("one decision attains the maximum");

    Ok(DecisionDistribution {
        gamma,
        a_star,
        reachable,
        by_s,
    })
}
