//! Dose-toxicity scenarios and accrual/DLT-timing settings.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trial::DesignParams;

const CATALOGUE: &str = include_str!("../../data/scenarios.csv");

/// A true dose-toxicity curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u32,
    pub p_target: f64,
    pub probs: Vec<f64>,
}

impl ScenarioSpec {
    pub fn new(id: u32, p_target: f64, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::InvalidArgument(format!(
                "scenario {id}: probabilities must lie in [0, 1)"
            )));
        }
        if probs.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(format!(
                "scenario {id}: probabilities must be non-decreasing"
            )));
        }
        if !(p_target > 0.0 && p_target < 1.0) {
            return Err(Error::InvalidArgument(format!("scenario {id}: bad target")));
        }
        Ok(Self { id, p_target, probs })
    }

    pub fn n_doses(&self) -> usize {
        self.probs.len()
    }

    /// Half-width of the equivalence interval used in the numerical
    /// studies: 0.03 for a 10% target, 0.05 otherwise.
    pub fn default_eps(&self) -> f64 {
        if (self.p_target - 0.10).abs() < 1e-9 {
            0.03
        } else {
            0.05
        }
    }

    /// Design parameters for this scenario with the study defaults.
    pub fn design_params(&self) -> DesignParams {
        DesignParams::new(self.p_target, self.default_eps(), self.n_doses())
    }

    /// Dose with probability closest to the target (ties to the lower
    /// dose), or `None` when every dose exceeds `p_target + eps2`.
    pub fn true_mtd(&self, eps2: f64) -> Option<usize> {
        if self.probs[0] > self.p_target + eps2 + 1e-12 {
            return None;
        }
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if (p - self.p_target).abs() < (self.probs[best] - self.p_target).abs() - 1e-12 {
                best = i;
            }
        }
        Some(best + 1)
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    scn: u32,
    #[serde(rename = "pT")]
    p_target: f64,
    #[serde(rename = "D")]
    n_doses: usize,
    p1: Option<f64>,
    p2: Option<f64>,
    p3: Option<f64>,
    p4: Option<f64>,
    p5: Option<f64>,
    p6: Option<f64>,
}

/// Parses `scn,pT,D,p1..p6` CSV.
pub fn parse_scenarios<R: Read>(reader: R) -> Result<Vec<ScenarioSpec>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: Row = row.map_err(|e| Error::InvalidArgument(format!("scenario CSV: {e}")))?;
        let all = [row.p1, row.p2, row.p3, row.p4, row.p5, row.p6];
        if row.n_doses == 0 || row.n_doses > all.len() {
            return Err(Error::InvalidArgument(format!(
                "scenario {}: D = {} unsupported",
                row.scn, row.n_doses
            )));
        }
        let probs = all[..row.n_doses]
            .iter()
            .map(|p| {
                p.ok_or_else(|| {
                    Error::InvalidArgument(format!("scenario {}: missing probability", row.scn))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(ScenarioSpec::new(row.scn, row.p_target, probs)?);
    }
    Ok(out)
}

/// The 60 bundled scenarios.
pub fn catalogue() -> Vec<ScenarioSpec> {
    parse_scenarios(CATALOGUE.as_bytes()).expect("bundled catalogue parses")
}

pub fn scenario(id: u32) -> Result<ScenarioSpec> {
    catalogue()
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario {id}")))
}

/// Accrual rate and DLT-timing profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccrualToxSetting {
    pub label: u8,
    /// Arrivals per day.
    pub delta: f64,
    /// Share of in-window DLTs that fall late.
    pub alpha: f64,
    /// Late share of the window.
    pub gamma: f64,
}

impl AccrualToxSetting {
    pub fn new(label: u8, delta: f64, alpha: f64, gamma: f64) -> Result<Self> {
        if !(delta > 0.0) || !(alpha > 0.0 && alpha < 1.0) || !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidArgument(
                "need delta > 0 and alpha, gamma in (0, 1)".into(),
            ));
        }
        Ok(Self {
            label,
            delta,
            alpha,
            gamma,
        })
    }

    /// Settings 1-4: 10- or 5-day mean inter-arrival, with half of the
    /// DLTs in the second half of the window or 80% in the last quarter.
    pub fn standard(label: u8) -> Result<Self> {
        match label {
            1 => Self::new(1, 0.1, 0.5, 0.5),
            2 => Self::new(2, 0.2, 0.5, 0.5),
            3 => Self::new(3, 0.1, 0.8, 0.25),
            4 => Self::new(4, 0.2, 0.8, 0.25),
            other => Err(Error::InvalidArgument(format!("unknown setting {other}"))),
        }
    }
}
