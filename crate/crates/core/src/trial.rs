//! Trial bookkeeping: design parameters, patient records, timestamped events
//! and the per-dose tallies every decision is computed from.
//!
//! Doses are 1-based throughout (`1..=n_doses`). Follow-up is never stored;
//! it is derived from the trial clock whenever a tally is requested.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Slack on window arithmetic: `(enroll + tau) - enroll` need not equal `tau`.
const TIME_EPS: f64 = 1e-9;

/// A dose-assignment decision relative to the current dose.
///
/// Ordered from most to least conservative, so `min` picks the safer one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Decision {
    DeEscalate,
    Stay,
    Escalate,
}

impl Decision {
    pub const ALL: [Decision; 3] = [Decision::DeEscalate, Decision::Stay, Decision::Escalate];

    pub fn code(self) -> i8 {
        match self {
            Decision::DeEscalate => -1,
            Decision::Stay => 0,
            Decision::Escalate => 1,
        }
    }

    /// Position in `ALL`.
    pub fn index(self) -> usize {
        (self.code() + 1) as usize
    }

    /// Single-letter code used in decision tables.
    pub fn letter(self) -> char {
        match self {
            Decision::DeEscalate => 'D',
            Decision::Stay => 'S',
            Decision::Escalate => 'E',
        }
    }
}

impl From<Decision> for i8 {
    fn from(d: Decision) -> i8 {
        d.code()
    }
}

impl TryFrom<i8> for Decision {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, Self::Error> {
        match v {
            -1 => Ok(Decision::DeEscalate),
            0 => Ok(Decision::Stay),
            1 => Ok(Decision::Escalate),
            other => Err(format!("decision must be -1, 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::DeEscalate => "de-escalate",
            Decision::Stay => "stay",
            Decision::Escalate => "escalate",
        })
    }
}

/// Beta prior on a dose's DLT probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

impl Default for BetaPrior {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0 }
    }
}

/// Every tunable of the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignParams {
    /// Target DLT probability.
    pub p_target: f64,
    /// Equivalence interval is `[p_target - eps1, p_target + eps2]`.
    pub eps1: f64,
    pub eps2: f64,
    /// Assessment window length in days.
    #[serde(default = "defaults::tau")]
    pub tau: f64,
    /// Number of equal sub-intervals of the assessment window.
    #[serde(default = "defaults::n_bins")]
    pub n_bins: usize,
    /// Escalation confidence threshold.
    #[serde(default = "defaults::pi_e")]
    pub pi_e: f64,
    /// De-escalation caution threshold.
    #[serde(default = "defaults::pi_d")]
    pub pi_d: f64,
    /// Per-dose Beta priors; empty means Beta(1, 1) for every dose.
    #[serde(default)]
    pub theta: Vec<BetaPrior>,
    /// Dirichlet weights for the time-to-DLT bins; empty means all ones.
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default = "defaults::cohort_size")]
    pub cohort_size: usize,
    /// Maximum sample size; 0 means `6 * n_doses`.
    #[serde(default)]
    pub max_n: usize,
    pub n_doses: usize,
    #[serde(default = "defaults::start_dose")]
    pub start_dose: usize,
    #[serde(default = "defaults::safety_cutoff")]
    pub safety_cutoff: f64,
    #[serde(default = "defaults::safety_min_n")]
    pub safety_min_n: u32,
    /// Beta prior behind the posterior means fed to the isotonic fit at
    /// MTD selection. Nearly flat so that `p_tilde` tracks `n / (n + m)`.
    #[serde(default = "defaults::selection_prior")]
    pub selection_prior: BetaPrior,
}

mod defaults {
    pub fn tau() -> f64 {
        28.0
    }
    pub fn n_bins() -> usize {
        3
    }
    pub fn pi_e() -> f64 {
        1.0
    }
    pub fn pi_d() -> f64 {
        0.15
    }
    pub fn cohort_size() -> usize {
        3
    }
    pub fn start_dose() -> usize {
        1
    }
    pub fn safety_cutoff() -> f64 {
        0.95
    }
    pub fn selection_prior() -> super::BetaPrior {
        super::BetaPrior { a: 0.005, b: 0.005 }
    }
    pub fn safety_min_n() -> u32 {
        3
    }
}

impl DesignParams {
    /// Defaults used throughout the numerical studies: 28-day window, three
    /// bins, `pi_e = 1`, `pi_d = 0.15`, uniform priors, cohorts of three and
    /// a maximum of `6 * n_doses` patients.
    pub fn new(p_target: f64, eps: f64, n_doses: usize) -> Self {
        Self {
            p_target,
            eps1: eps,
            eps2: eps,
            tau: defaults::tau(),
            n_bins: defaults::n_bins(),
            pi_e: defaults::pi_e(),
            pi_d: defaults::pi_d(),
            theta: vec![BetaPrior::default(); n_doses],
            eta: vec![1.0; defaults::n_bins()],
            cohort_size: defaults::cohort_size(),
            max_n: 6 * n_doses,
            n_doses,
            start_dose: defaults::start_dose(),
            safety_cutoff: defaults::safety_cutoff(),
            safety_min_n: defaults::safety_min_n(),
            selection_prior: defaults::selection_prior(),
        }
    }

    /// Fills empty/zero fields with their derived defaults and validates.
    pub fn normalized(mut self) -> Result<Self> {
        if self.theta.is_empty() {
            self.theta = vec![BetaPrior::default(); self.n_doses];
        }
        if self.eta.is_empty() {
            self.eta = vec![1.0; self.n_bins];
        }
        if self.max_n == 0 {
            self.max_n = 6 * self.n_doses;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p_target;
        if !(p > 0.0 && p < 1.0) {
            return Err(invalid("p_target", format!("{p} not in (0, 1)")));
        }
        for (name, e) in [("eps1", self.eps1), ("eps2", self.eps2)] {
            if !(e > 0.0 && e < 1.0) {
                return Err(invalid(name, format!("{e} not in (0, 1)")));
            }
        }
        if p - self.eps1 <= 0.0 || p + self.eps2 >= 1.0 {
            return Err(invalid(
                "eps1",
                "equivalence interval must lie strictly inside (0, 1)",
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid("tau", "must be positive"));
        }
        if self.n_bins == 0 {
            return Err(invalid("n_bins", "must be at least 1"));
        }
        if !(0.33..=1.0).contains(&self.pi_e) {
            return Err(invalid("pi_e", format!("{} not in [0.33, 1]", self.pi_e)));
        }
        if !(0.0..=0.5).contains(&self.pi_d) {
            return Err(invalid("pi_d", format!("{} not in [0, 0.5]", self.pi_d)));
        }
        if self.n_doses == 0 {
            return Err(invalid("n_doses", "must be at least 1"));
        }
        if self.theta.len() != self.n_doses {
            return Err(invalid("theta", "need one Beta prior per dose"));
        }
        let sp = self.selection_prior;
        if !(sp.a > 0.0 && sp.b > 0.0) {
            return Err(invalid("selection_prior", "hyperparameters must be positive"));
        }
        if self.theta.iter().any(|t| !(t.a > 0.0 && t.b > 0.0)) {
            return Err(invalid("theta", "hyperparameters must be positive"));
        }
        if self.eta.len() != self.n_bins {
            return Err(invalid("eta", "need one Dirichlet weight per bin"));
        }
        if self.eta.iter().any(|&e| !(e > 0.0)) {
            return Err(invalid("eta", "weights must be positive"));
        }
        if self.cohort_size == 0 {
            return Err(invalid("cohort_size", "must be at least 1"));
        }
        if self.max_n < self.cohort_size {
            return Err(invalid("max_n", "must be at least the cohort size"));
        }
        if !(1..=self.n_doses).contains(&self.start_dose) {
            return Err(invalid("start_dose", "outside 1..=n_doses"));
        }
        if !(self.safety_cutoff > 0.0 && self.safety_cutoff < 1.0) {
            return Err(invalid("safety_cutoff", "must be in (0, 1)"));
        }
        Ok(())
    }

    pub fn check_dose(&self, dose: usize) -> Result<()> {
        if (1..=self.n_doses).contains(&dose) {
            Ok(())
        } else {
            Err(Error::DoseOutOfRange {
                dose,
                n_doses: self.n_doses,
            })
        }
    }
}

/// Outcome of a patient as seen at a given clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    /// DLT observed `time` days after enrollment.
    Dlt { time: f64 },
    /// Followed for the full window without DLT.
    NoDlt,
    /// Still inside the window after `followup` days.
    Pending { followup: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: u32,
    pub dose: usize,
    pub enroll_time: f64,
    /// Time from enrollment to DLT, once reported.
    pub dlt_time: Option<f64>,
    /// Set when an explicit assessment-completed event was recorded.
    #[serde(default)]
    pub completed: bool,
}

impl PatientRecord {
    pub fn outcome(&self, clock: f64, tau: f64) -> Outcome {
        if let Some(t) = self.dlt_time {
            return Outcome::Dlt { time: t };
        }
        let followup = (clock - self.enroll_time).min(tau);
        if self.completed || followup >= tau - TIME_EPS {
            Outcome::NoDlt
        } else {
            Outcome::Pending {
                followup: followup.max(0.0),
            }
        }
    }

    fn is_resolved(&self, clock: f64, tau: f64) -> bool {
        !matches!(self.outcome(clock, tau), Outcome::Pending { .. })
    }
}

/// Observed data at one dose.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DoseTally {
    /// Observed DLTs.
    pub n: u32,
    /// Observed non-DLTs.
    pub m: u32,
    /// Pending patients.
    pub r: u32,
    /// Follow-up of each pending patient, aligned with `pending_ids`.
    pub follow_ups: Vec<f64>,
    pub pending_ids: Vec<u32>,
}

impl DoseTally {
    pub fn evaluated(&self) -> u32 {
        self.n + self.m
    }

    pub fn total(&self) -> u32 {
        self.n + self.m + self.r
    }
}

/// Why enrollment is currently suspended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SuspendReason {
    #[serde(rename = "escalation-confidence")]
    EscalationConfidence,
    #[serde(rename = "m_d-zero")]
    NoCompletedNonDlt,
    #[serde(rename = "de-escalation-risk")]
    DeEscalationRisk,
    #[serde(rename = "lowest-dose-safety-pending")]
    LowestDoseSafetyPending,
    /// Used only by the complete-data baseline, which waits for every outcome.
    #[serde(rename = "awaiting-complete-data")]
    AwaitingCompleteData,
}

impl SuspendReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SuspendReason::EscalationConfidence => "escalation-confidence",
            SuspendReason::NoCompletedNonDlt => "m_d-zero",
            SuspendReason::DeEscalationRisk => "de-escalation-risk",
            SuspendReason::LowestDoseSafetyPending => "lowest-dose-safety-pending",
            SuspendReason::AwaitingCompleteData => "awaiting-complete-data",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason", rename_all = "snake_case")]
pub enum TrialStatus {
    Enrolling,
    Suspended(SuspendReason),
    TerminatedUnsafe,
    Completed,
}

impl TrialStatus {
    pub fn is_closed(self) -> bool {
        matches!(self, TrialStatus::TerminatedUnsafe | TrialStatus::Completed)
    }
}

/// A timestamped trial event. `time` is days since trial start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Event {
    Enrollment {
        time: f64,
        patient_id: u32,
        dose: usize,
    },
    /// DLT observed. `dlt_time` (days since enrollment) defaults to the
    /// elapsed time at `time`.
    #[serde(alias = "dlt")]
    DltObserved {
        time: f64,
        patient_id: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dlt_time: Option<f64>,
    },
    #[serde(alias = "completion")]
    AssessmentCompleted { time: f64, patient_id: u32 },
    #[serde(alias = "clock")]
    ClockAdvance { time: f64 },
}

impl Event {
    pub fn time(&self) -> f64 {
        match *self {
            Event::Enrollment { time, .. }
            | Event::DltObserved { time, .. }
            | Event::AssessmentCompleted { time, .. }
            | Event::ClockAdvance { time } => time,
        }
    }

    pub fn patient_id(&self) -> Option<u32> {
        match *self {
            Event::Enrollment { patient_id, .. }
            | Event::DltObserved { patient_id, .. }
            | Event::AssessmentCompleted { patient_id, .. } => Some(patient_id),
            Event::ClockAdvance { .. } => None,
        }
    }

    /// Total order for simultaneous events: by time, then patient id, with
    /// clock-only events first.
    pub fn order_key(&self) -> (f64, Option<u32>) {
        (self.time(), self.patient_id())
    }
}

/// Sorts events into the canonical replay order (stable).
pub fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| {
        let (ta, pa) = a.order_key();
        let (tb, pb) = b.order_key();
        ta.total_cmp(&tb).then(pa.cmp(&pb))
    });
}

/// Full trial state. Immutable by convention: transitions return new values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub clock: f64,
    pub params: DesignParams,
    pub patients: Vec<PatientRecord>,
    pub current_dose: usize,
    pub status: TrialStatus,
    pub excluded_doses: BTreeSet<usize>,
}

impl TrialState {
    pub fn new(params: DesignParams) -> Result<Self> {
        let params = params.normalized()?;
        Ok(Self {
            clock: 0.0,
            current_dose: params.start_dose,
            params,
            patients: Vec::new(),
            status: TrialStatus::Enrolling,
            excluded_doses: BTreeSet::new(),
        })
    }

    pub fn n_enrolled(&self) -> usize {
        self.patients.len()
    }

    pub fn patient(&self, id: u32) -> Option<&PatientRecord> {
        self.patients.iter().find(|p| p.id == id)
    }

    pub fn outcome_of(&self, patient: &PatientRecord) -> Outcome {
        patient.outcome(self.clock, self.params.tau)
    }

    /// Folds one event into the state, returning the new state.
    pub fn apply_event(&self, event: &Event) -> Result<TrialState> {
        let mut next = self.clone();
        next.apply_in_place(event)?;
        Ok(next)
    }

    /// In-place variant of [`apply_event`](Self::apply_event); leaves the
    /// state untouched on error.
    pub fn apply_in_place(&mut self, event: &Event) -> Result<()> {
        let time = event.time();
        if !time.is_finite() || time < self.clock {
            return Err(Error::OutOfOrder {
                event_time: time,
                clock: self.clock,
            });
        }
        let tau = self.params.tau;
        match *event {
            Event::Enrollment {
                patient_id, dose, ..
            } => {
                self.params.check_dose(dose)?;
                if self.status.is_closed() {
                    return Err(Error::TrialClosed(match self.status {
                        TrialStatus::Completed => "completed",
                        _ => "terminated",
                    }));
                }
                if self.patients.len() >= self.params.max_n {
                    return Err(Error::TrialClosed("maximum sample size reached"));
                }
                if self.excluded_doses.contains(&dose) {
                    return Err(Error::DoseExcluded(dose));
                }
                if self.patient(patient_id).is_some() {
                    return Err(Error::DuplicatePatient(patient_id));
                }
                self.patients.push(PatientRecord {
                    id: patient_id,
                    dose,
                    enroll_time: time,
                    dlt_time: None,
                    completed: false,
                });
                self.current_dose = dose;
                if self.patients.len() >= self.params.max_n {
                    self.status = TrialStatus::Completed;
                }
            }
            Event::DltObserved {
                patient_id,
                dlt_time,
                ..
            } => {
                let p = self
                    .patients
                    .iter()
                    .find(|p| p.id == patient_id)
                    .ok_or(Error::UnknownPatient(patient_id))?;
                let elapsed = time - p.enroll_time;
                if p.dlt_time.is_some() || p.completed || elapsed > tau + TIME_EPS {
                    return Err(Error::AlreadyResolved(patient_id));
                }
                let t = dlt_time.unwrap_or(elapsed);
                if !(t >= 0.0 && t <= tau) {
                    return Err(Error::InvalidDltTime {
                        patient: patient_id,
                        time: t,
                        message: format!("must lie in [0, {tau}]"),
                    });
                }
                if t > elapsed + TIME_EPS {
                    return Err(Error::InvalidDltTime {
                        patient: patient_id,
                        time: t,
                        message: "reported before it occurred".into(),
                    });
                }
                let p = self
                    .patients
                    .iter_mut()
                    .find(|p| p.id == patient_id)
                    .expect("checked above");
                p.dlt_time = Some(t);
            }
            Event::AssessmentCompleted { patient_id, .. } => {
                let p = self
                    .patients
                    .iter()
                    .find(|p| p.id == patient_id)
                    .ok_or(Error::UnknownPatient(patient_id))?;
                if p.dlt_time.is_some() || p.completed {
                    return Err(Error::AlreadyResolved(patient_id));
                }
                let followup = time - p.enroll_time;
                if followup < tau - TIME_EPS {
                    return Err(Error::EarlyCompletion {
                        patient: patient_id,
                        followup,
                        tau,
                    });
                }
                let p = self
                    .patients
                    .iter_mut()
                    .find(|p| p.id == patient_id)
                    .expect("checked above");
                p.completed = true;
            }
            Event::ClockAdvance { .. } => {}
        }
        self.clock = time;
        Ok(())
    }

    /// Replays an event log from a fresh state.
    pub fn replay(params: DesignParams, events: &[Event]) -> Result<TrialState> {
        let mut state = TrialState::new(params)?;
        for ev in events {
            state.apply_in_place(ev)?;
        }
        Ok(state)
    }

    /// Event log reproducing this state's patients and clock.
    pub fn to_event_log(&self) -> Vec<Event> {
        let mut events = Vec::new();
        for p in &self.patients {
            events.push(Event::Enrollment {
                time: p.enroll_time,
                patient_id: p.id,
                dose: p.dose,
            });
            if let Some(t) = p.dlt_time {
                events.push(Event::DltObserved {
                    time: p.enroll_time + t,
                    patient_id: p.id,
                    dlt_time: Some(t),
                });
            }
            if p.completed {
                events.push(Event::AssessmentCompleted {
                    time: p.enroll_time + self.params.tau,
                    patient_id: p.id,
                });
            }
        }
        sort_events(&mut events);
        events.push(Event::ClockAdvance { time: self.clock });
        events
    }

    /// Per-dose counts at the current clock.
    pub fn tally(&self, dose: usize) -> Result<DoseTally> {
        self.params.check_dose(dose)?;
        let mut tally = DoseTally::default();
        for p in self.patients.iter().filter(|p| p.dose == dose) {
            match self.outcome_of(p) {
                Outcome::Dlt { .. } => tally.n += 1,
                Outcome::NoDlt => tally.m += 1,
                Outcome::Pending { followup } => {
                    tally.r += 1;
                    tally.follow_ups.push(followup);
                    tally.pending_ids.push(p.id);
                }
            }
        }
        Ok(tally)
    }

    pub fn tallies(&self) -> Vec<DoseTally> {
        (1..=self.params.n_doses)
            .map(|d| self.tally(d).expect("dose in range"))
            .collect()
    }

    pub fn n_pending(&self) -> usize {
        self.patients
            .iter()
            .filter(|p| !p.is_resolved(self.clock, self.params.tau))
            .count()
    }

    /// Clock at which every enrolled patient's outcome is known, assuming no
    /// further DLTs are reported.
    pub fn all_resolved_at(&self) -> f64 {
        self.patients
            .iter()
            .map(|p| match p.dlt_time {
                Some(t) => p.enroll_time + t,
                None => p.enroll_time + self.params.tau,
            })
            .fold(self.clock, f64::max)
    }
}
