//! Complete-data mTPI-2 decisions.
//!
//! The unit interval is cut into the equivalence interval (EI) plus
//! equal-width sub-intervals below and above it. Each piece is a candidate
//! model carrying a truncated Beta(1, 1) prior and equal prior mass; the
//! decision follows the model with the largest posterior probability.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::special::{beta_interval_mass, beta_reg_tails};
use crate::trial::Decision;

/// Boundary pieces shorter than this are merged into their neighbour.
const SNAP: f64 = 1e-9;
/// Relative gap under which two model posteriors are treated as tied.
const TIE_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0.0
    }
}

/// Partition of `[0, 1]` into the EI and its under/overdosing sub-intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalPartition {
    pub p_target: f64,
    /// Closed equivalence interval.
    pub ei: Interval,
    /// Right-open pieces, descending from the EI toward 0.
    pub under: Vec<Interval>,
    /// Left-open pieces, ascending from the EI toward 1.
    pub over: Vec<Interval>,
}

/// Which part of the partition a candidate model covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Under(usize),
    Equivalence,
    Over(usize),
}

impl ModelKind {
    pub fn decision(self) -> Decision {
        match self {
            ModelKind::Under(_) => Decision::Escalate,
            ModelKind::Equivalence => Decision::Stay,
            ModelKind::Over(_) => Decision::DeEscalate,
        }
    }
}

impl IntervalPartition {
    pub fn new(p_target: f64, eps1: f64, eps2: f64) -> Result<Self> {
        let lo = p_target - eps1;
        let hi = p_target + eps2;
        if !(eps1 > 0.0 && eps2 > 0.0) {
            return Err(invalid("eps1", "half-widths must be positive"));
        }
        if !(lo > 0.0 && hi < 1.0) {
            return Err(invalid(
                "p_target",
                format!("equivalence interval [{lo}, {hi}] not strictly inside (0, 1)"),
            ));
        }
        let width = eps1 + eps2;

        let mut under = Vec::new();
        let mut top = lo;
        while top > 0.0 {
            let mut bottom = top - width;
            if bottom < SNAP {
                bottom = 0.0;
            }
            under.push(Interval {
                lo: bottom,
                hi: top,
            });
            top = bottom;
        }

        let mut over = Vec::new();
        let mut bottom = hi;
        while bottom < 1.0 {
            let mut top = bottom + width;
            if top > 1.0 - SNAP {
                top = 1.0;
            }
            over.push(Interval { lo: bottom, hi: top });
            bottom = top;
        }

        Ok(Self {
            p_target,
            ei: Interval { lo, hi },
            under,
            over,
        })
    }

    pub fn k_under(&self) -> usize {
        self.under.len()
    }

    pub fn k_over(&self) -> usize {
        self.over.len()
    }

    pub fn n_models(&self) -> usize {
        self.under.len() + 1 + self.over.len()
    }

    /// Candidate models in ascending order of toxicity.
    pub fn models(&self) -> Vec<(ModelKind, Interval)> {
        let mut out = Vec::with_capacity(self.n_models());
        for (i, iv) in self.under.iter().enumerate().rev() {
            out.push((ModelKind::Under(i), *iv));
        }
        out.push((ModelKind::Equivalence, self.ei));
        for (i, iv) in self.over.iter().enumerate() {
            out.push((ModelKind::Over(i), *iv));
        }
        out
    }

    /// `p` lies in the closed EI.
    pub fn in_equivalence(&self, p: f64) -> bool {
        p >= self.ei.lo && p <= self.ei.hi
    }

    /// `p` lies in the underdosing interval `[0, ei.lo)`.
    pub fn in_under(&self, p: f64) -> bool {
        p < self.ei.lo
    }
}

/// Posterior probability of each candidate model, in [`IntervalPartition::models`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPosterior {
    pub models: Vec<ModelKind>,
    pub probs: Vec<f64>,
}

impl ModelPosterior {
    /// Index set of the models tied for the largest posterior.
    pub fn argmax_set(&self) -> Vec<usize> {
        let max = self.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p >= max * (1.0 - TIE_REL))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Posterior over the candidate models after `n` DLTs and `m` non-DLTs.
///
/// Model `j` scores `(1 / |I_j|) * P(p in I_j)` under Beta(1 + n, 1 + m);
/// the complete beta function and the uniform model prior cancel on
/// normalization.
pub fn model_posterior(n: u32, m: u32, part: &IntervalPartition) -> Result<ModelPosterior> {
    let a = n as f64 + 1.0;
    let b = m as f64 + 1.0;
    let models = part.models();
    let mut scores = Vec::with_capacity(models.len());
    for (_, iv) in &models {
        if iv.is_empty() {
            return Err(Error::Numerical(format!(
                "degenerate interval [{}, {}]",
                iv.lo, iv.hi
            )));
        }
        scores.push(beta_interval_mass(a, b, iv.lo, iv.hi) / iv.len());
    }
    let total: f64 = scores.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numerical(format!(
            "model posterior underflow at (n, m) = ({n}, {m})"
        )));
    }
    Ok(ModelPosterior {
        models: models.into_iter().map(|(k, _)| k).collect(),
        probs: scores.into_iter().map(|s| s / total).collect(),
    })
}

/// The deterministic mTPI-2 decision `A(n, m)`. Ties between models resolve
/// to the safest decision.
pub fn decide(n: u32, m: u32, part: &IntervalPartition) -> Decision {
    let post = model_posterior(n, m, part).expect("valid partition");
    post.argmax_set()
        .into_iter()
        .map(|i| post.models[i].decision())
        .min()
        .expect("non-empty argmax")
}

/// One row of an exported decision table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub n: u32,
    pub m: u32,
    pub decision: Decision,
}

/// `A(n, m)` for every `1 <= n + m <= n_max`, ordered by total then `n`.
pub fn decision_table(part: &IntervalPartition, n_max: u32) -> Vec<TableEntry> {
    let mut rows = Vec::new();
    for total in 1..=n_max {
        for n in 0..=total {
            let m = total - n;
            rows.push(TableEntry {
                n,
                m,
                decision: decide(n, m, part),
            });
        }
    }
    rows
}

/// Memoized `A(n, m)` for repeated lookups in the trial loop.
#[derive(Debug, Clone)]
pub struct DecisionCache {
    part: IntervalPartition,
    max_total: u32,
    table: Vec<Decision>,
}

impl DecisionCache {
    pub fn new(part: IntervalPartition, max_total: u32) -> Self {
        let mut table = Vec::new();
        for total in 0..=max_total {
            for n in 0..=total {
                table.push(decide(n, total - n, &part));
            }
        }
        Self {
            part,
            max_total,
            table,
        }
    }

    pub fn partition(&self) -> &IntervalPartition {
        &self.part
    }

    pub fn decide(&self, n: u32, m: u32) -> Decision {
        let total = n + m;
        if total > self.max_total {
            return decide(n, m, &self.part);
        }
        self.table[(total * (total + 1) / 2 + n) as usize]
    }
}

/// `P(p > p_target)` under Beta(1 + n, 1 + m), as used by the safety rules.
pub fn prob_exceeds_target(n: u32, m: u32, p_target: f64) -> Result<f64> {
    if !(p_target > 0.0 && p_target < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target {p_target} outside (0, 1)"
        )));
    }
    Ok(beta_reg_tails(n as f64 + 1.0, m as f64 + 1.0, p_target).1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    fn bounds(v: &[Interval]) -> Vec<(f64, f64)> {
        v.iter().map(|i| (i.lo, i.hi)).collect()
    }

    #[test]
    fn partition_target_030() {
        let p = IntervalPartition::new(0.30, 0.05, 0.05).unwrap();
        assert!(close(p.ei.lo, 0.25) && close(p.ei.hi, 0.35));
        assert_eq!(p.k_under(), 3);
        assert_eq!(p.k_over(), 7);
        let want_under = [(0.15, 0.25), (0.05, 0.15), (0.0, 0.05)];
        for (got, want) in bounds(&p.under).iter().zip(want_under) {
            assert!(close(got.0, want.0) && close(got.1, want.1), "{got:?}");
        }
        let want_over = [
            (0.35, 0.45),
            (0.45, 0.55),
            (0.55, 0.65),
            (0.65, 0.75),
            (0.75, 0.85),
            (0.85, 0.95),
            (0.95, 1.0),
        ];
        for (got, want) in bounds(&p.over).iter().zip(want_over) {
            assert!(close(got.0, want.0) && close(got.1, want.1), "{got:?}");
        }
    }

    #[test]
    fn partition_target_010() {
        let p = IntervalPartition::new(0.10, 0.03, 0.03).unwrap();
        assert!(close(p.ei.lo, 0.07) && close(p.ei.hi, 0.13));
        assert_eq!(p.k_under(), 2);
        assert!(close(p.under[0].lo, 0.01) && close(p.under[1].lo, 0.0));
        assert_eq!(p.k_over(), 15);
        assert!(close(p.over[0].hi, 0.19));
        assert!(close(p.over[14].lo, 0.97) && p.over[14].hi == 1.0);
    }

    #[test]
    fn partition_target_017() {
        let p = IntervalPartition::new(0.17, 0.05, 0.05).unwrap();
        assert!(close(p.ei.lo, 0.12) && close(p.ei.hi, 0.22));
        assert_eq!(p.k_under(), 2);
        assert!(close(p.under[1].hi, 0.02) && p.under[1].lo == 0.0);
        assert_eq!(p.k_over(), 8);
        assert!(close(p.over[7].lo, 0.92) && p.over[7].hi == 1.0);
    }

    #[test]
    fn partition_covers_unit_interval() {
        for &(pt, e1, e2) in &[(0.3, 0.05, 0.05), (0.1, 0.03, 0.03), (0.2, 0.07, 0.02)] {
            let p = IntervalPartition::new(pt, e1, e2).unwrap();
            let models = p.models();
            assert_eq!(models[0].1.lo, 0.0);
            assert_eq!(models.last().unwrap().1.hi, 1.0);
            for w in models.windows(2) {
                assert_eq!(w[0].1.hi, w[1].1.lo);
            }
        }
    }

    #[test]
    fn partition_rejects_ei_outside_unit_interval() {
        assert!(IntervalPartition::new(0.04, 0.05, 0.05).is_err());
        assert!(IntervalPartition::new(0.97, 0.01, 0.05).is_err());
    }

    #[test]
    fn no_data_posterior_is_uniform() {
        let p = IntervalPartition::new(0.30, 0.05, 0.05).unwrap();
        let post = model_posterior(0, 0, &p).unwrap();
        assert_eq!(post.probs.len(), 11);
        for &x in &post.probs {
            assert!((x - 1.0 / 11.0).abs() < 1e-12);
        }
        // every model ties, so the safety-first rule de-escalates
        assert_eq!(decide(0, 0, &p), Decision::DeEscalate);
    }

    #[test]
    fn published_decision_anchors() {
        let p = IntervalPartition::new(0.30, 0.05, 0.05).unwrap();
        assert_eq!(decide(0, 3, &p), Decision::Escalate);
        assert_eq!(decide(1, 2, &p), Decision::Stay);
        assert_eq!(decide(2, 1, &p), Decision::DeEscalate);
        assert_eq!(decide(3, 0, &p), Decision::DeEscalate);
        assert_eq!(decide(1, 5, &p), Decision::Escalate);
    }

    #[test]
    fn table_rows() {
        let p = IntervalPartition::new(0.30, 0.05, 0.05).unwrap();
        assert!(decision_table(&p, 0).is_empty());
        let t = decision_table(&p, 3);
        assert_eq!(t.len(), 2 + 3 + 4);
        let last: Vec<_> = t[5..].iter().map(|e| (e.n, e.m, e.decision.code())).collect();
        assert_eq!(last, vec![(0, 3, 1), (1, 2, 0), (2, 1, -1), (3, 0, -1)]);
    }

    #[test]
    fn cache_matches_direct() {
        let p = IntervalPartition::new(0.17, 0.05, 0.05).unwrap();
        let cache = DecisionCache::new(p.clone(), 20);
        for n in 0..15 {
            for m in 0..15 {
                assert_eq!(cache.decide(n, m), decide(n, m, &p));
            }
        }
    }

    #[test]
    fn exceedance_closed_forms() {
        assert!((prob_exceeds_target(0, 0, 0.3).unwrap() - 0.7).abs() < 1e-14);
        let v = prob_exceeds_target(3, 0, 0.3).unwrap();
        assert!((v - (1.0 - 0.3f64.powi(4))).abs() < 1e-14);
        assert!(v > 0.95);
        assert!((prob_exceeds_target(0, 3, 0.3).unwrap() - 0.2401).abs() < 1e-14);
        assert!(prob_exceeds_target(1, 1, 1.0).is_err());
    }

    #[test]
    fn large_counts_stay_normalized() {
        let p = IntervalPartition::new(0.3, 0.05, 0.05).unwrap();
        let post = model_posterior(60, 140, &p).unwrap();
        assert!((post.probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert_eq!(decide(60, 140, &p), Decision::Stay);
    }
}
