//! The PoD-TPI dose-assignment state machine.
//!
//! At each decision point the engine first applies the safety rules, then
//! either takes the complete-data mTPI-2 decision (nothing pending at the
//! current dose) or the PoD-optimal decision subject to the suspension
//! thresholds `pi_e` / `pi_d`. Every evaluation yields an [`AuditRecord`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mtpi2::{prob_exceeds_target, DecisionCache, IntervalPartition};
use crate::toxmodel::{
    pod, s_posterior, sample_posterior, DecisionDistribution, Gamma, McmcConfig, Priors,
    SEstimator, ToxData,
};
use crate::trial::{Decision, DesignParams, Event, SuspendReason, TrialState, TrialStatus};

/// What to do with the next arriving patient or cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Assign { dose: usize },
    Suspend { reason: SuspendReason },
    Terminate,
}

/// Identifiers of the rules that shaped a recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    StartDose,
    /// Nothing pending at the current dose; plain mTPI-2.
    CompleteData,
    /// PoD-optimal decision taken by the suspension rules.
    PodOptimal,
    EscalationConfidence,
    #[serde(rename = "m_d-zero")]
    MdZero,
    DeEscalationRisk,
    SafetyRule1,
    SafetyRule2,
    LowestDoseSafetyPending,
    ExcludedCurrentDose,
    ClampRange,
    ClampExcluded,
    /// Complete-data baseline waiting for every outcome.
    AwaitingCompleteData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub action: Action,
    /// The unclamped decision `A*` (or `A(n, m)`) when one was executed;
    /// `None` for suspensions and forced moves.
    pub decision: Option<Decision>,
    pub gamma: Option<Gamma>,
    pub a_star: Option<Decision>,
    pub rules: Vec<Rule>,
}

/// Which moves away from the current dose are possible. At the ends of
/// the dose range, or below an excluded dose, the blocked move is kept at
/// the current dose (`A = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Moves {
    pub up: bool,
    pub down: bool,
    /// The dose above exists but is excluded.
    #[serde(default)]
    pub above_excluded: bool,
}

impl Default for Moves {
    fn default() -> Self {
        Moves {
            up: true,
            down: true,
            above_excluded: false,
        }
    }
}

impl Moves {
    pub fn at(state: &TrialState) -> Result<Moves> {
        let d = state.current_dose;
        let excluded = apply_safety_rules(state)?.excluded;
        let above_excluded = d < state.params.n_doses && excluded.contains(&(d + 1));
        Ok(Moves {
            up: d < state.params.n_doses && !above_excluded,
            down: d > 1,
            above_excluded,
        })
    }

    /// Maps a decision onto the move that can be executed, noting the rule
    /// that did it.
    pub fn executable(self, decision: Decision, rules: &mut Vec<Rule>) -> Decision {
        match decision {
            Decision::Escalate if !self.up => {
                rules.push(if self.above_excluded {
                    Rule::ClampExcluded
                } else {
                    Rule::ClampRange
                });
                Decision::Stay
            }
            Decision::DeEscalate if !self.down => {
                rules.push(Rule::ClampRange);
                Decision::Stay
            }
            d => d,
        }
    }

    /// Same mapping without the rule trail.
    pub fn map(self, decision: Decision) -> Decision {
        self.executable(decision, &mut Vec::new())
    }
}

/// Result of the safety rules at the current clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyCheck {
    /// Lowest dose violating the posterior-toxicity rule, if any.
    pub first_violation: Option<usize>,
    pub excluded: BTreeSet<usize>,
    pub terminate: bool,
    /// Dose 1 violates but still has pending patients.
    pub suspend_lowest: bool,
}

/// Safety rules, recomputed from scratch: a dose with at least
/// `safety_min_n` evaluated patients and `P(p_d > p_T | data) > cutoff`
/// is excluded together with every higher dose. A violation at dose 1
/// ends the trial, unless dose-1 outcomes are still pending.
pub fn apply_safety_rules(state: &TrialState) -> Result<SafetyCheck> {
    let params = &state.params;
    let mut first = None;
    for dose in 1..=params.n_doses {
        let t = state.tally(dose)?;
        if t.evaluated() >= params.safety_min_n
            && prob_exceeds_target(t.n, t.m, params.p_target)? > params.safety_cutoff
        {
            first = Some(dose);
            break;
        }
    }
    let excluded: BTreeSet<usize> = match first {
        Some(d) => (d..=params.n_doses).collect(),
        None => BTreeSet::new(),
    };
    let (terminate, suspend_lowest) = match first {
        Some(1) => {
            let pending = state.tally(1)?.r > 0;
            (!pending, pending)
        }
        _ => (false, false),
    };
    Ok(SafetyCheck {
        first_violation: first,
        excluded,
        terminate,
        suspend_lowest,
    })
}

/// Writes the current exclusions (and termination) into the state.
pub fn refresh_safety(state: &TrialState) -> Result<TrialState> {
    let check = apply_safety_rules(state)?;
    let mut next = state.clone();
    next.excluded_doses = check.excluded;
    if check.terminate && !next.status.is_closed() {
        next.status = TrialStatus::TerminatedUnsafe;
    }
    Ok(next)
}

/// Structured record of one decision point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub time: f64,
    pub dose: usize,
    pub n: u32,
    pub m: u32,
    pub r: u32,
    pub follow_ups: Vec<f64>,
    pub pending_ids: Vec<u32>,
    pub gamma: Option<Gamma>,
    pub a_star: Option<Decision>,
    pub action: Action,
    pub decision: Option<Decision>,
    pub rules: Vec<Rule>,
    /// Moves open at the decision point; executed decisions are already
    /// mapped through it.
    #[serde(default)]
    pub moves: Moves,
    pub seed: Option<u64>,
    pub n_draws: usize,
    pub s_pmf: Option<Vec<f64>>,
    /// Per-`s` decomposition of the decision probabilities.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub by_s: Vec<crate::toxmodel::SOutcome>,
}

/// Decision engine bound to one set of design parameters.
#[derive(Debug, Clone)]
pub struct Engine {
    params: DesignParams,
    cache: DecisionCache,
    pub mcmc: McmcConfig,
    pub estimator: SEstimator,
    /// Skip the sampler when every possible `s` leads to the same decision.
    pub skip_degenerate: bool,
}

impl Engine {
    pub fn new(params: &DesignParams) -> Result<Self> {
        let params = params.clone().normalized()?;
        let part = IntervalPartition::new(params.p_target, params.eps1, params.eps2)?;
        let cache = DecisionCache::new(part, params.max_n as u32);
        Ok(Self {
            params,
            cache,
            mcmc: McmcConfig::default(),
            estimator: SEstimator::default(),
            skip_degenerate: false,
        })
    }

    pub fn with_mcmc(mut self, mcmc: McmcConfig) -> Self {
        self.mcmc = mcmc;
        self
    }

    pub fn params(&self) -> &DesignParams {
        &self.params
    }

    pub fn decide(&self, n: u32, m: u32) -> Decision {
        self.cache.decide(n, m)
    }

    /// PoD at the current dose. Returns the distribution, the pending-DLT
    /// pmf when it was estimated, and the number of draws used.
    pub fn decision_distribution(
        &self,
        state: &TrialState,
        seed: u64,
    ) -> Result<(DecisionDistribution, Option<Vec<f64>>, usize)> {
        let tally = state.tally(state.current_dose)?;
        if tally.r == 0 {
            let d = self.decide(tally.n, tally.m);
            return Ok((DecisionDistribution::certain(d), Some(vec![1.0]), 0));
        }
        let decide = |n, m| self.decide(n, m);
        if self.skip_degenerate {
            let first = decide(tally.n, tally.m + tally.r);
            if (1..=tally.r).all(|s| decide(tally.n + s, tally.m + tally.r - s) == first) {
                return Ok((DecisionDistribution::certain(first), None, 0));
            }
        }
        let data = ToxData::from_state(state)?;
        let priors = Priors::from_params(&state.params);
        let draws = sample_posterior(&data, &priors, &self.mcmc.with_seed(seed))?;
        let s_post = s_posterior(
            &draws,
            state.current_dose,
            &tally.follow_ups,
            &data.grid,
            self.estimator,
        )?;
        let dist = pod(&s_post, tally.n, tally.m, tally.r, decide)?;
        Ok((dist, Some(s_post.pmf), draws.draws.len()))
    }

    /// Actions that do not depend on the decision distribution: safety
    /// stops, the first cohort, and leaving an excluded current dose.
    pub fn forced_action(&self, state: &TrialState) -> Result<Option<(Action, Vec<Rule>)>> {
        if state.status.is_closed() {
            return Err(Error::TrialClosed(match state.status {
                TrialStatus::Completed => "completed",
                _ => "terminated",
            }));
        }
        let safety = apply_safety_rules(state)?;
        if safety.terminate {
            return Ok(Some((Action::Terminate, vec![Rule::SafetyRule1])));
        }
        if safety.suspend_lowest {
            return Ok(Some((
                Action::Suspend {
                    reason: SuspendReason::LowestDoseSafetyPending,
                },
                vec![Rule::SafetyRule1, Rule::LowestDoseSafetyPending],
            )));
        }
        if state.patients.is_empty() {
            return Ok(Some((
                Action::Assign {
                    dose: state.params.start_dose,
                },
                vec![Rule::StartDose],
            )));
        }
        let d = state.current_dose;
        if safety.excluded.contains(&d) {
            // dose 1 is never excluded here: that case stopped above
            let target = (1..d).rev().find(|x| !safety.excluded.contains(x)).unwrap_or(1);
            return Ok(Some((
                Action::Assign { dose: target },
                vec![Rule::SafetyRule2, Rule::ExcludedCurrentDose],
            )));
        }
        Ok(None)
    }

    /// The PoD decision rule on top of the safety rules.
    pub fn recommend(&self, state: &TrialState, dist: &DecisionDistribution) -> Result<Recommendation> {
        if let Some((action, rules)) = self.forced_action(state)? {
            return Ok(Recommendation {
                action,
                decision: None,
                gamma: None,
                a_star: None,
                rules,
            });
        }
        if (dist.gamma.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("decision distribution is not normalized".into()));
        }
        let params = &state.params;
        let tally = state.tally(state.current_dose)?;
        let mut rules = Vec::new();
        let suspend = |reason, rules: Vec<Rule>| Recommendation {
            action: Action::Suspend { reason },
            decision: None,
            gamma: Some(dist.gamma),
            a_star: Some(dist.a_star),
            rules,
        };

        let moves = Moves::at(state)?;
        let decision = if tally.r == 0 {
            rules.push(Rule::CompleteData);
            moves.executable(self.decide(tally.n, tally.m), &mut rules)
        } else {
            rules.push(Rule::PodOptimal);
            // the decision rule runs on the move that can actually be made
            match moves.executable(dist.a_star, &mut rules) {
                Decision::Escalate => {
                    let confident = dist.gamma.escalate >= params.pi_e
                        && !(params.pi_e >= 1.0 && dist.reachable.len() > 1);
                    if !confident {
                        rules.push(Rule::EscalationConfidence);
                        return Ok(suspend(SuspendReason::EscalationConfidence, rules));
                    }
                    if tally.m == 0 {
                        rules.push(Rule::MdZero);
                        return Ok(suspend(SuspendReason::NoCompletedNonDlt, rules));
                    }
                    Decision::Escalate
                }
                Decision::Stay => {
                    // at the lowest dose a de-escalation is a stay anyway
                    let risky = moves.down
                        && (dist.gamma.de_escalate > params.pi_d
                            || (params.pi_d <= 0.0 && dist.is_reachable(Decision::DeEscalate)));
                    if risky {
                        rules.push(Rule::DeEscalationRisk);
                        return Ok(suspend(SuspendReason::DeEscalationRisk, rules));
                    }
                    Decision::Stay
                }
                Decision::DeEscalate => Decision::DeEscalate,
            }
        };
        let target = (state.current_dose as i64 + decision.code() as i64) as usize;

        Ok(Recommendation {
            action: Action::Assign { dose: target },
            decision: Some(decision),
            gamma: Some(dist.gamma),
            a_star: Some(dist.a_star),
            rules,
        })
    }

    /// Full evaluation at the state's clock: safety rules, PoD (sampling
    /// only when needed) and the recommendation, as an audit record.
    pub fn evaluate(&self, state: &TrialState, seed: u64) -> Result<(Recommendation, AuditRecord)> {
        let tally = state.tally(state.current_dose)?;
        let mut record = AuditRecord {
            time: state.clock,
            dose: state.current_dose,
            n: tally.n,
            m: tally.m,
            r: tally.r,
            follow_ups: tally.follow_ups.clone(),
            pending_ids: tally.pending_ids.clone(),
            gamma: None,
            a_star: None,
            action: Action::Terminate,
            decision: None,
            rules: Vec::new(),
            moves: Moves::at(state)?,
            seed: None,
            n_draws: 0,
            s_pmf: None,
            by_s: Vec::new(),
        };
        let rec = match self.forced_action(state)? {
            Some((action, rules)) => Recommendation {
                action,
                decision: None,
                gamma: None,
                a_star: None,
                rules,
            },
            None => {
                let (dist, pmf, n_draws) = self.decision_distribution(state, seed)?;
                if n_draws > 0 {
                    record.seed = Some(seed);
                }
                record.n_draws = n_draws;
                record.s_pmf = pmf;
                record.by_s = dist.by_s.clone();
                self.recommend(state, &dist)?
            }
        };
        record.gamma = rec.gamma;
        record.a_star = rec.a_star;
        record.action = rec.action;
        record.decision = rec.decision;
        record.rules = rec.rules.clone();
        Ok((rec, record))
    }
}

/// Convenience wrapper: builds an [`Engine`] for the state's parameters.
pub fn recommend(state: &TrialState, dist: &DecisionDistribution) -> Result<Recommendation> {
    Engine::new(&state.params)?.recommend(state, dist)
}

/// Moves the trial forward at an arrival: advances the clock, refreshes
/// the exclusions and either enrolls `patient_ids` at the recommended dose
/// or records the suspension (arrivals are turned away) or termination.
pub fn step_trial(
    state: &TrialState,
    rec: &Recommendation,
    arrival_time: f64,
    patient_ids: &[u32],
) -> Result<TrialState> {
    if state.status.is_closed() {
        return Err(Error::TrialClosed(match state.status {
            TrialStatus::Completed => "completed",
            _ => "terminated",
        }));
    }
    let mut next = state.apply_event(&Event::ClockAdvance { time: arrival_time })?;
    next = refresh_safety(&next)?;
    match rec.action {
        Action::Assign { dose } => {
            next.status = TrialStatus::Enrolling;
            next.current_dose = dose;
            for &id in patient_ids {
                if next.status.is_closed() {
                    break;
                }
                next.apply_in_place(&Event::Enrollment {
                    time: arrival_time,
                    patient_id: id,
                    dose,
                })?;
            }
        }
        Action::Suspend { reason } => next.status = TrialStatus::Suspended(reason),
        Action::Terminate => next.status = TrialStatus::TerminatedUnsafe,
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial::DesignParams;

    fn params(d: usize) -> DesignParams {
        DesignParams::new(0.3, 0.05, d)
    }

    fn enroll(state: &mut TrialState, time: f64, id: u32, dose: usize) {
        state
            .apply_in_place(&Event::Enrollment {
                time,
                patient_id: id,
                dose,
            })
            .unwrap();
    }

    fn dlt(state: &mut TrialState, time: f64, id: u32) {
        state
            .apply_in_place(&Event::DltObserved {
                time,
                patient_id: id,
                dlt_time: None,
            })
            .unwrap();
    }

    fn gamma(de: f64, stay: f64, esc: f64, a_star: Decision) -> DecisionDistribution {
        let mut reachable = Vec::new();
        for (d, g) in Decision::ALL.into_iter().zip([de, stay, esc]) {
            if g > 0.0 {
                reachable.push(d);
            }
        }
        DecisionDistribution {
            gamma: Gamma {
                de_escalate: de,
                stay,
                escalate: esc,
            },
            a_star,
            reachable,
            by_s: vec![],
        }
    }

    /// Dose 3 of 5 with two DLTs, two non-DLTs and two pending patients.
    fn pending_state(n_dlt: u32, n_ok: u32) -> TrialState {
        let mut s = TrialState::new(params(5)).unwrap();
        let mut id = 0;
        for _ in 0..n_dlt {
            enroll(&mut s, 0.0, id, 3);
            id += 1;
        }
        for _ in 0..n_ok {
            enroll(&mut s, 0.0, id, 3);
            id += 1;
        }
        for i in 0..n_dlt {
            dlt(&mut s, 5.0, i);
        }
        s.apply_in_place(&Event::ClockAdvance { time: 30.0 }).unwrap();
        enroll(&mut s, 30.0, 100, 3);
        enroll(&mut s, 32.0, 101, 3);
        s.apply_in_place(&Event::ClockAdvance { time: 40.0 }).unwrap();
        s
    }

    #[test]
    fn trial_one_de_escalates() {
        let s = pending_state(2, 2);
        let rec = recommend(&s, &gamma(0.58, 0.42, 0.0, Decision::DeEscalate)).unwrap();
        assert_eq!(rec.action, Action::Assign { dose: 2 });
        assert_eq!(rec.decision, Some(Decision::DeEscalate));
    }

    #[test]
    fn trial_two_suspends_for_confidence() {
        let s = pending_state(1, 3);
        let rec = recommend(&s, &gamma(0.03, 0.30, 0.67, Decision::Escalate)).unwrap();
        assert_eq!(
            rec.action,
            Action::Suspend {
                reason: SuspendReason::EscalationConfidence
            }
        );
        assert_eq!(rec.decision, None);
    }

    #[test]
    fn m_zero_guard_blocks_escalation() {
        let mut p = params(5);
        p.pi_e = 0.5;
        let mut s = TrialState::new(p).unwrap();
        enroll(&mut s, 0.0, 1, 2);
        enroll(&mut s, 1.0, 2, 2);
        s.apply_in_place(&Event::ClockAdvance { time: 5.0 }).unwrap();
        let rec = recommend(&s, &gamma(0.1, 0.1, 0.8, Decision::Escalate)).unwrap();
        assert_eq!(
            rec.action,
            Action::Suspend {
                reason: SuspendReason::NoCompletedNonDlt
            }
        );
    }

    #[test]
    fn stay_blocked_by_de_escalation_risk() {
        let s = pending_state(1, 3);
        let rec = recommend(&s, &gamma(0.2, 0.5, 0.3, Decision::Stay)).unwrap();
        assert_eq!(
            rec.action,
            Action::Suspend {
                reason: SuspendReason::DeEscalationRisk
            }
        );
        let rec = recommend(&s, &gamma(0.1, 0.6, 0.3, Decision::Stay)).unwrap();
        assert_eq!(rec.action, Action::Assign { dose: 3 });
    }

    #[test]
    fn complete_data_stay() {
        let mut s = TrialState::new(params(5)).unwrap();
        for id in 0..3 {
            enroll(&mut s, 0.0, id, 2);
        }
        dlt(&mut s, 5.0, 0);
        s.apply_in_place(&Event::ClockAdvance { time: 28.0 }).unwrap();
        let rec = recommend(&s, &DecisionDistribution::certain(Decision::Stay)).unwrap();
        assert_eq!(rec.action, Action::Assign { dose: 2 });
        assert_eq!(rec.rules, vec![Rule::CompleteData]);
    }

    #[test]
    fn first_cohort_goes_to_start_dose() {
        let s = TrialState::new(params(4)).unwrap();
        let rec = recommend(&s, &DecisionDistribution::certain(Decision::Escalate)).unwrap();
        assert_eq!(rec.action, Action::Assign { dose: 1 });
    }

    #[test]
    fn boundary_clamps() {
        // de-escalation at dose 1 stays at dose 1
        let mut s = TrialState::new(params(3)).unwrap();
        for id in 0..3 {
            enroll(&mut s, 0.0, id, 1);
        }
        dlt(&mut s, 3.0, 0);
        dlt(&mut s, 3.0, 1);
        s.apply_in_place(&Event::ClockAdvance { time: 28.0 }).unwrap();
        let rec = recommend(&s, &DecisionDistribution::certain(Decision::DeEscalate)).unwrap();
        assert_eq!(rec.action, Action::Assign { dose: 1 });
        assert!(rec.rules.contains(&Rule::ClampRange));
    }

    #[test]
    fn escalation_onto_excluded_dose_becomes_stay() {
        let mut s = TrialState::new(params(4)).unwrap();
        // dose 3 looks unsafe: 3 DLTs of 3
        for id in 0..3 {
            enroll(&mut s, 0.0, id, 3);
        }
        for id in 0..3 {
            dlt(&mut s, 2.0, id);
        }
        // dose 2 is clean
        for id in 10..13 {
            enroll(&mut s, 3.0, id, 2);
        }
        s.apply_in_place(&Event::ClockAdvance { time: 40.0 }).unwrap();
        s.current_dose = 2;
        let rec = recommend(&s, &DecisionDistribution::certain(Decision::Escalate)).unwrap();
        assert_eq!(rec.action, Action::Assign { dose: 2 });
        assert!(rec.rules.contains(&Rule::ClampExcluded));
    }

    #[test]
    fn safety_rule_one_terminates() {
        let mut s = TrialState::new(params(3)).unwrap();
        for id in 0..3 {
            enroll(&mut s, 0.0, id, 1);
        }
        for id in 0..3 {
            dlt(&mut s, 1.0, id);
        }
        let check = apply_safety_rules(&s).unwrap();
        assert!(check.terminate);
        assert_eq!(check.excluded, (1..=3).collect());
        let rec = recommend(&s, &DecisionDistribution::certain(Decision::DeEscalate)).unwrap();
        assert_eq!(rec.action, Action::Terminate);
    }

    #[test]
    fn safety_rule_one_waits_for_pending() {
        let mut s = TrialState::new(params(3)).unwrap();
        for id in 0..3 {
            enroll(&mut s, 0.0, id, 1);
        }
        for id in 0..3 {
            dlt(&mut s, 1.0, id);
        }
        enroll(&mut s, 1.0, 9, 1);
        let check = apply_safety_rules(&s).unwrap();
        assert!(!check.terminate && check.suspend_lowest);
    }

    #[test]
    fn safety_rule_two_recomputed() {
        let mut s = TrialState::new(params(5)).unwrap();
        for id in 0..3 {
            enroll(&mut s, 0.0, id, 3);
        }
        for id in 0..3 {
            dlt(&mut s, 1.0, id);
        }
        enroll(&mut s, 1.0, 3, 3);
        let check = apply_safety_rules(&s).unwrap();
        assert_eq!(check.excluded, (3..=5).collect());
        // resolving as non-DLT gives (3, 1): still above the cutoff
        s.apply_in_place(&Event::ClockAdvance { time: 29.0 }).unwrap();
        let t = s.tally(3).unwrap();
        assert_eq!((t.n, t.m), (3, 1));
        let p = prob_exceeds_target(3, 1, 0.3).unwrap();
        assert!((p - 0.969).abs() < 1e-3, "{p}");
        assert_eq!(apply_safety_rules(&s).unwrap().excluded, (3..=5).collect());
    }

    #[test]
    fn excluded_current_dose_forces_move_down() {
        let mut s = TrialState::new(params(5)).unwrap();
        for id in 0..3 {
            enroll(&mut s, 0.0, id, 3);
        }
        for id in 0..3 {
            dlt(&mut s, 1.0, id);
        }
        let rec = recommend(&s, &DecisionDistribution::certain(Decision::Stay)).unwrap();
        assert_eq!(rec.action, Action::Assign { dose: 2 });
        assert!(rec.rules.contains(&Rule::ExcludedCurrentDose));
        assert_eq!(rec.decision, None);
    }

    #[test]
    fn no_violation_without_dlts() {
        let mut s = TrialState::new(params(3)).unwrap();
        for id in 0..6 {
            enroll(&mut s, 0.0, id, 1 + (id as usize % 3));
        }
        s.apply_in_place(&Event::ClockAdvance { time: 30.0 }).unwrap();
        let check = apply_safety_rules(&s).unwrap();
        assert!(check.excluded.is_empty() && !check.terminate);
    }

    #[test]
    fn pi_e_one_requires_every_outcome_to_escalate() {
        let s = pending_state(1, 3);
        // numerically gamma_+1 == 1 but a stay is still possible
        let mut dist = gamma(0.0, 0.0, 1.0, Decision::Escalate);
        dist.reachable = vec![Decision::Stay, Decision::Escalate];
        let rec = recommend(&s, &dist).unwrap();
        assert!(matches!(rec.action, Action::Suspend { .. }));
    }

    #[test]
    fn step_enrolls_or_turns_away() {
        let s = TrialState::new(params(3)).unwrap();
        let engine = Engine::new(&s.params).unwrap();
        let (rec, audit) = engine.evaluate(&s, 7).unwrap();
        assert_eq!(audit.action, Action::Assign { dose: 1 });
        let s = step_trial(&s, &rec, 2.0, &[1, 2, 3]).unwrap();
        assert_eq!(s.n_enrolled(), 3);
        let suspend = Recommendation {
            action: Action::Suspend {
                reason: SuspendReason::EscalationConfidence,
            },
            decision: None,
            gamma: None,
            a_star: None,
            rules: vec![],
        };
        let s2 = step_trial(&s, &suspend, 3.0, &[4]).unwrap();
        assert_eq!(s2.n_enrolled(), 3);
        assert_eq!(s2.status, TrialStatus::Suspended(SuspendReason::EscalationConfidence));
    }

    #[test]
    fn step_after_completion_fails() {
        let mut p = params(1);
        p.max_n = 3;
        let s = TrialState::new(p).unwrap();
        let rec = recommend(&s, &DecisionDistribution::certain(Decision::Stay)).unwrap();
        let s = step_trial(&s, &rec, 0.0, &[1, 2, 3]).unwrap();
        assert_eq!(s.status, TrialStatus::Completed);
        assert!(step_trial(&s, &rec, 1.0, &[4]).is_err());
    }
}
