//! Tally files for the one-shot `whatif` command.
//!
//! A tally file lists, per dose, the observed DLT times, the number of
//! completed non-DLT patients and the follow-up of each pending patient:
//!
//! ```json
//! {
//!   "params": {"p_target": 0.3, "eps1": 0.05, "eps2": 0.05, "n_doses": 3},
//!   "current_dose": 2,
//!   "doses": [{"dose": 2, "dlt_times": [9, 26], "non_dlt": 2, "pending": [15, 8]}],
//!   "seed": 2020
//! }
//! ```

use podtpi::engine::{refresh_safety, AuditRecord, Engine};
use podtpi::toxmodel::{McmcConfig, SEstimator};
use podtpi::trial::sort_events;
use podtpi::{DesignParams, Event, TrialState};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TallyFile {
    pub params: DesignParams,
    pub current_dose: usize,
    pub doses: Vec<DoseEntry>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mcmc: Option<McmcConfig>,
    #[serde(default)]
    pub estimator: SEstimator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseEntry {
    pub dose: usize,
    /// Days from enrollment to each observed DLT.
    #[serde(default)]
    pub dlt_times: Vec<f64>,
    #[serde(default)]
    pub non_dlt: u32,
    /// Current follow-up of each pending patient.
    #[serde(default)]
    pub pending: Vec<f64>,
}

impl TallyFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid tally file: {e}")))
    }

    /// A trial state with exactly these tallies: completed patients are
    /// enrolled at day 0 and the clock stops at the window length, so
    /// pending patients enroll `tau - v` days in.
    pub fn to_state(&self) -> CliResult<TrialState> {
        let usage = |m: String| CliError::Usage(format!("invalid tally file: {m}"));
        let params = self.params.clone().normalized().map_err(|e| usage(e.to_string()))?;
        let tau = params.tau;
        params.check_dose(self.current_dose).map_err(|e| usage(e.to_string()))?;
        let mut events = Vec::new();
        let mut id = 0u32;
        for entry in &self.doses {
            params.check_dose(entry.dose).map_err(|e| usage(e.to_string()))?;
            for &t in &entry.dlt_times {
                if !(0.0..=tau).contains(&t) {
                    return Err(usage(format!("DLT time {t} outside [0, {tau}]")));
                }
                events.push(Event::Enrollment { time: 0.0, patient_id: id, dose: entry.dose });
                events.push(Event::DltObserved { time: t, patient_id: id, dlt_time: Some(t) });
                id += 1;
            }
            for _ in 0..entry.non_dlt {
                events.push(Event::Enrollment { time: 0.0, patient_id: id, dose: entry.dose });
                events.push(Event::AssessmentCompleted { time: tau, patient_id: id });
                id += 1;
            }
            for &v in &entry.pending {
                if !(v >= 0.0 && v < tau) {
                    return Err(usage(format!("pending follow-up {v} outside [0, {tau})")));
                }
                events.push(Event::Enrollment { time: tau - v, patient_id: id, dose: entry.dose });
                id += 1;
            }
        }
        sort_events(&mut events);
        events.push(Event::ClockAdvance { time: tau });
        let mut state = TrialState::replay(params, &events).map_err(|e| usage(e.to_string()))?;
        state.current_dose = self.current_dose;
        Ok(refresh_safety(&state)?)
    }

    pub fn evaluate(&self, seed_override: Option<u64>) -> CliResult<AuditRecord> {
        let state = self.to_state()?;
        let mut engine = Engine::new(&state.params)?.with_mcmc(self.mcmc.unwrap_or_default());
        engine.estimator = self.estimator;
        let seed = seed_override.or(self.seed).unwrap_or(engine.mcmc.seed);
        let (_, record) = engine.evaluate(&state, seed)?;
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const WORKED_EXAMPLE: &str = r#"{
        "params": {"p_target": 0.3, "eps1": 0.05, "eps2": 0.05, "n_doses": 3},
        "current_dose": 2,
        "doses": [{"dose": 2, "dlt_times": [9, 26], "non_dlt": 2, "pending": [15, 8]}],
        "seed": 2020
    }"#;

    #[test]
    fn state_has_the_listed_tallies() {
        let f = TallyFile::parse(WORKED_EXAMPLE).unwrap();
        let s = f.to_state().unwrap();
        let t = s.tally(2).unwrap();
        assert_eq!((t.n, t.m, t.r), (2, 2, 2));
        let mut v = t.follow_ups.clone();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![8.0, 15.0]);
        assert_eq!(s.current_dose, 2);
    }

    #[test]
    fn bad_entries_are_usage_errors() {
        let bad = WORKED_EXAMPLE.replace("[15, 8]", "[28]");
        assert!(matches!(TallyFile::parse(&bad).unwrap().to_state(), Err(CliError::Usage(_))));
        let bad = WORKED_EXAMPLE.replace("\"dose\": 2,", "\"dose\": 7,");
        assert!(matches!(TallyFile::parse(&bad).unwrap().to_state(), Err(CliError::Usage(_))));
        assert!(matches!(TallyFile::parse("{}"), Err(CliError::Usage(_))));
    }
}
