//! End-of-trial MTD selection.
//!
//! Posterior means (under the design's nearly flat selection prior,
//! Beta(0.005, 0.005) by default) are smoothed by weighted isotonic
//! regression with inverse posterior variances as weights. The dose is
//! then chosen from the equivalence interval, falling back to the highest
//! underdosing dose.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mtpi2::IntervalPartition;
use crate::trial::{TrialState, TrialStatus};

/// Slack for interval membership: PAVA averages and `p_T - eps` both land
/// on boundaries up to rounding.
const BOUNDARY_TOL: f64 = 1e-12;

/// Mean and variance of Beta(`a + n`, `b + m`).
pub fn posterior_mean_var(n: u32, m: u32, a: f64, b: f64) -> (f64, f64) {
    let a = a + n as f64;
    let b = b + m as f64;
    let s = a + b;
    (a / s, a * b / (s * s * (s + 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicFit {
    pub p_hat: Vec<f64>,
    pub weights: Vec<f64>,
    /// Half-open index ranges `[start, end)` of pooled blocks.
    pub blocks: Vec<(usize, usize)>,
}

/// Weighted least-squares projection of `values` onto non-decreasing
/// sequences (pool adjacent violators).
pub fn pava(values: &[f64], weights: &[f64]) -> Result<IsotonicFit> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::InvalidArgument(
            "values and weights must be non-empty and of equal length".into(),
        ));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidArgument("weights must be positive".into()));
    }
    // (weighted mean, total weight, start index)
    let mut stack: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (i, (&v, &w)) in values.iter().zip(weights).enumerate() {
        let mut block = (v, w, i);
        while let Some(&(mean, weight, start)) = stack.last() {
            if mean <= block.0 {
                break;
            }
            stack.pop();
            let total = weight + block.1;
            block = ((mean * weight + block.0 * block.1) / total, total, start);
        }
        stack.push(block);
    }
    let mut p_hat = vec![0.0; values.len()];
    let mut blocks = Vec::with_capacity(stack.len());
    for (j, &(mean, _, start)) in stack.iter().enumerate() {
        let end = stack.get(j + 1).map_or(values.len(), |b| b.2);
        p_hat[start..end].fill(mean);
        blocks.push((start, end));
    }
    Ok(IsotonicFit {
        p_hat,
        weights: weights.to_vec(),
        blocks,
    })
}

/// Which branch of the selection rule produced the answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Exactly one dose in the equivalence interval.
    SingleEquivalent,
    /// Several doses in the EI; closest to target (unique).
    ClosestToTarget,
    /// Several equally close; highest of those at or below the target.
    TieBelowTarget,
    /// Several equally close, none below the target; lowest of them.
    TieLowest,
    /// None in the EI; highest underdosing dose.
    HighestUnderdosing,
    /// None in the EI or below it.
    NoneAcceptable,
    /// The trial stopped under the lowest-dose safety rule.
    TerminatedUnsafe,
    /// No eligible dose was ever treated.
    NoData,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// 1-based dose, or `None` for no MTD.
    pub dose: Option<usize>,
    pub branch: Branch,
}

fn in_ei(p: f64, part: &IntervalPartition) -> bool {
    p >= part.ei.lo - BOUNDARY_TOL && p <= part.ei.hi + BOUNDARY_TOL
}

/// Selection among candidate doses. `doses[i]` is the 1-based label of
/// `p_hat[i]`; `p_hat` must be non-decreasing.
pub fn select_among(doses: &[usize], p_hat: &[f64], part: &IntervalPartition) -> Result<Selection> {
    if doses.len() != p_hat.len() {
        return Err(Error::InvalidArgument("doses and estimates differ in length".into()));
    }
    if p_hat.windows(2).any(|w| w[1] < w[0] - BOUNDARY_TOL) {
        return Err(Error::InvalidArgument("estimates must be non-decreasing".into()));
    }
    let pt = part.p_target;
    let equiv: Vec<usize> = (0..p_hat.len()).filter(|&i| in_ei(p_hat[i], part)).collect();
    let pick = |i: usize, branch| Selection {
        dose: Some(doses[i]),
        branch,
    };
    match equiv.len() {
        0 => {
            let under = (0..p_hat.len())
                .rev()
                .find(|&i| p_hat[i] < part.ei.lo - BOUNDARY_TOL);
            Ok(match under {
                Some(i) => pick(i, Branch::HighestUnderdosing),
                None => Selection {
                    dose: None,
                    branch: Branch::NoneAcceptable,
                },
            })
        }
        1 => Ok(pick(equiv[0], Branch::SingleEquivalent)),
        _ => {
            let dist = |i: usize| (p_hat[i] - pt).abs();
            let best = equiv.iter().map(|&i| dist(i)).fold(f64::INFINITY, f64::min);
            let closest: Vec<usize> = equiv
                .iter()
                .copied()
                .filter(|&i| dist(i) <= best + BOUNDARY_TOL)
                .collect();
            if closest.len() == 1 {
                return Ok(pick(closest[0], Branch::ClosestToTarget));
            }
            match closest.iter().rev().find(|&&i| p_hat[i] <= pt + BOUNDARY_TOL) {
                Some(&i) => Ok(pick(i, Branch::TieBelowTarget)),
                None => Ok(pick(closest[0], Branch::TieLowest)),
            }
        }
    }
}

/// Selection over doses `1..=p_hat.len()`.
pub fn select_mtd(p_hat: &[f64], part: &IntervalPartition) -> Result<Selection> {
    let doses: Vec<usize> = (1..=p_hat.len()).collect();
    select_among(&doses, p_hat, part)
}

/// End-of-trial report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtdReport {
    pub selected: Option<usize>,
    /// Doses entering the fit (treated and not excluded at the end).
    pub doses: Vec<usize>,
    pub p_tilde: Vec<f64>,
    pub nu: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub branch: Branch,
    pub note: String,
}

const LAST_DOSE_NOTE: &str =
    "the dose recommended for the last patient need not equal the selected MTD";

/// MTD selection from a finished trial with every outcome observed.
pub fn finalize(state: &TrialState) -> Result<MtdReport> {
    if state.n_pending() > 0 {
        return Err(Error::InvalidArgument(
            "MTD selection needs every outcome to be observed".into(),
        ));
    }
    let empty = |branch| MtdReport {
        selected: None,
        doses: vec![],
        p_tilde: vec![],
        nu: vec![],
        p_hat: vec![],
        branch,
        note: LAST_DOSE_NOTE.into(),
    };
    let safety = crate::engine::apply_safety_rules(state)?;
    if state.status == TrialStatus::TerminatedUnsafe || safety.terminate {
        return Ok(empty(Branch::TerminatedUnsafe));
    }
    let part = IntervalPartition::new(state.params.p_target, state.params.eps1, state.params.eps2)?;
    let mut doses = Vec::new();
    let mut p_tilde = Vec::new();
    let mut nu = Vec::new();
    for (i, t) in state.tallies().iter().enumerate() {
        let dose = i + 1;
        if t.evaluated() == 0 || safety.excluded.contains(&dose) {
            continue;
        }
        let prior = state.params.selection_prior;
        let (mean, var) = posterior_mean_var(t.n, t.m, prior.a, prior.b);
        doses.push(dose);
        p_tilde.push(mean);
        nu.push(var);
    }
    if doses.is_empty() {
        return Ok(empty(Branch::NoData));
    }
    let weights: Vec<f64> = nu.iter().map(|v| 1.0 / v).collect();
    let fit = pava(&p_tilde, &weights)?;
    let sel = select_among(&doses, &fit.p_hat, &part)?;
    Ok(MtdReport {
        selected: sel.dose,
        doses,
        p_tilde,
        nu,
        p_hat: fit.p_hat,
        branch: sel.branch,
        note: LAST_DOSE_NOTE.into(),
    })
}
