//! Operating-characteristic simulations.
//!
//! Each simulated trial draws exponential inter-arrival times and one
//! uniform per enrolled patient; the uniform is mapped through the dose's
//! Weibull quantile to a DLT time. Both designs consume the same two
//! streams, so PoD-TPI and the complete-data mTPI-2 baseline see the same
//! arrivals and the `k`-th enrollee's latent toxicity is shared.

mod scenarios;
mod weibull;

pub use scenarios::{catalogue, parse_scenarios, scenario, AccrualToxSetting, ScenarioSpec};
pub use weibull::{weibull_params, DltTimeModel, WeibullParams};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{refresh_safety, Action, AuditRecord, Engine, Moves, Rule};
use crate::error::{Error, Result};
use crate::mtdselect::finalize;
use crate::toxmodel::{McmcConfig, SEstimator};
use crate::trial::{Decision, DesignParams, Event, SuspendReason, TrialState, TrialStatus};

/// Guard against a trial that never fills (cannot happen with valid input).
const MAX_ARRIVALS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    PodTpi,
    /// mTPI-2 that waits for every outcome before the next cohort.
    Mtpi2,
}

impl DesignKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DesignKind::PodTpi => "pod-tpi",
            DesignKind::Mtpi2 => "mtpi2",
        }
    }
}

/// Tunables layered over each scenario's default design parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub pi_e: f64,
    pub pi_d: f64,
    pub cohort_size: usize,
    /// Maximum sample size per dose level; `max_n = max_n_per_dose * D`.
    pub max_n_per_dose: usize,
    pub tau: f64,
    pub mcmc: McmcConfig,
    pub estimator: SEstimator,
    /// Skip the sampler when the pending outcomes cannot change the decision.
    pub skip_degenerate: bool,
    pub keep_audit: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            pi_e: 1.0,
            pi_d: 0.15,
            cohort_size: 3,
            max_n_per_dose: 6,
            tau: 28.0,
            mcmc: McmcConfig::simulation(),
            estimator: SEstimator::default(),
            skip_degenerate: true,
            keep_audit: false,
        }
    }
}

impl SimOptions {
    pub fn design_params(&self, scenario: &ScenarioSpec) -> Result<DesignParams> {
        let mut p = scenario.design_params();
        p.pi_e = self.pi_e;
        p.pi_d = self.pi_d;
        p.cohort_size = self.cohort_size;
        p.max_n = self.max_n_per_dose * scenario.n_doses();
        p.tau = self.tau;
        p.normalized()
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` of scenario `scenario_id` in a campaign.
pub fn trial_seed(campaign: u64, scenario_id: u32, trial: u64) -> u64 {
    mix_seed(mix_seed(mix_seed(campaign) ^ scenario_id as u64) ^ trial)
}

const ARRIVAL_STREAM: u64 = 0xA11;
const TOX_STREAM: u64 = 0x70C;

fn decision_seed(trial_seed: u64, index: usize) -> u64 {
    mix_seed(trial_seed ^ mix_seed(0xDEC ^ index as u64))
}

/// Complete-data decision minus executed decision, as a taxonomy label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Inconsistency {
    Consistent,
    /// Should de-escalate, stayed.
    DS,
    /// Should de-escalate, escalated.
    DE,
    /// Should stay, escalated.
    SE,
    /// Should stay, de-escalated.
    SD,
    /// Should escalate, de-escalated.
    ED,
    /// Should escalate, stayed.
    ES,
}

impl Inconsistency {
    pub const TYPES: [Inconsistency; 6] = [
        Inconsistency::DS,
        Inconsistency::DE,
        Inconsistency::SE,
        Inconsistency::SD,
        Inconsistency::ED,
        Inconsistency::ES,
    ];

    pub fn of(complete: Decision, executed: Decision) -> Self {
        use Decision::*;
        match (complete, executed) {
            (DeEscalate, Stay) => Inconsistency::DS,
            (DeEscalate, Escalate) => Inconsistency::DE,
            (Stay, Escalate) => Inconsistency::SE,
            (Stay, DeEscalate) => Inconsistency::SD,
            (Escalate, DeEscalate) => Inconsistency::ED,
            (Escalate, Stay) => Inconsistency::ES,
            _ => Inconsistency::Consistent,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Inconsistency::Consistent => "consistent",
            Inconsistency::DS => "DS",
            Inconsistency::DE => "DE",
            Inconsistency::SE => "SE",
            Inconsistency::SD => "SD",
            Inconsistency::ED => "ED",
            Inconsistency::ES => "ES",
        }
    }
}

/// Classifies an executed decision against the mTPI-2 decision on the
/// completed data. `realized_s` is how many of the entry's pending
/// patients turned out to have a DLT. Entries without an executed
/// decision (suspensions, forced moves) are not classified.
pub fn classify_inconsistency(
    entry: &AuditRecord,
    realized_s: Option<u32>,
    decide: impl Fn(u32, u32) -> Decision,
) -> Result<Option<Inconsistency>> {
    let Some(executed) = entry.decision else {
        return Ok(None);
    };
    if entry.r == 0 {
        return Ok(Some(Inconsistency::Consistent));
    }
    let s = realized_s
        .ok_or_else(|| Error::InvalidArgument("realized pending outcomes missing".into()))?;
    if s > entry.r {
        return Err(Error::InvalidArgument(format!(
            "realized DLT count {s} exceeds pending count {}",
            entry.r
        )));
    }
    let complete = entry.moves.map(decide(entry.n + s, entry.m + entry.r - s));
    Ok(Some(Inconsistency::of(complete, executed)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InconsistencyCounts {
    pub ds: u32,
    pub de: u32,
    pub se: u32,
    pub sd: u32,
    pub ed: u32,
    pub es: u32,
}

impl InconsistencyCounts {
    pub fn add(&mut self, kind: Inconsistency) {
        match kind {
            Inconsistency::DS => self.ds += 1,
            Inconsistency::DE => self.de += 1,
            Inconsistency::SE => self.se += 1,
            Inconsistency::SD => self.sd += 1,
            Inconsistency::ED => self.ed += 1,
            Inconsistency::ES => self.es += 1,
            Inconsistency::Consistent => {}
        }
    }

    pub fn get(&self, kind: Inconsistency) -> u32 {
        match kind {
            Inconsistency::DS => self.ds,
            Inconsistency::DE => self.de,
            Inconsistency::SE => self.se,
            Inconsistency::SD => self.sd,
            Inconsistency::ED => self.ed,
            Inconsistency::ES => self.es,
            Inconsistency::Consistent => 0,
        }
    }

    pub fn total(&self) -> u32 {
        self.ds + self.de + self.se + self.sd + self.ed + self.es
    }

    fn merge(&mut self, other: &Self) {
        self.ds += other.ds;
        self.de += other.de;
        self.se += other.se;
        self.sd += other.sd;
        self.ed += other.ed;
        self.es += other.es;
    }
}

/// A decision point together with what its pending patients turned out to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPoint {
    pub audit: AuditRecord,
    pub realized_s: u32,
    pub class: Option<Inconsistency>,
}

/// Outcome of one simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub design: DesignKind,
    pub seed: u64,
    pub selected: Option<usize>,
    pub true_mtd: Option<usize>,
    pub n_per_dose: Vec<u32>,
    pub n_dlt: u32,
    pub duration: f64,
    pub terminated: bool,
    pub n_decisions: u32,
    pub n_turned_away: u32,
    pub inconsistencies: InconsistencyCounts,
    /// Every decision point, when `keep_audit` is set.
    pub audit: Vec<DecisionPoint>,
}

impl TrialResult {
    pub fn n_enrolled(&self) -> u32 {
        self.n_per_dose.iter().sum()
    }
}

struct Latent {
    enroll_time: f64,
    /// DLT time if it falls inside the window.
    dlt: Option<f64>,
}

/// Feeds every DLT that has happened by `time` into the state, then moves
/// the clock.
fn advance_to(state: &mut TrialState, latent: &[Latent], time: f64) -> Result<()> {
    let mut due: Vec<(f64, u32, f64)> = latent
        .iter()
        .enumerate()
        .filter_map(|(id, l)| {
            let t = l.dlt?;
            let at = l.enroll_time + t;
            let seen = state.patients[id].dlt_time.is_some();
            (!seen && at <= time).then_some((at, id as u32, t))
        })
        .collect();
    due.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (at, id, t) in due {
        state.apply_in_place(&Event::DltObserved {
            time: at.max(state.clock),
            patient_id: id,
            dlt_time: Some(t),
        })?;
    }
    state.apply_in_place(&Event::ClockAdvance { time })
}

/// Simulates one trial of `design` under a scenario and setting.
pub fn simulate_trial(
    scenario: &ScenarioSpec,
    setting: &AccrualToxSetting,
    design: DesignKind,
    opts: &SimOptions,
    seed: u64,
) -> Result<TrialResult> {
    let params = opts.design_params(scenario)?;
    let mut engine = Engine::new(&params)?.with_mcmc(opts.mcmc);
    engine.estimator = opts.estimator;
    engine.skip_degenerate = opts.skip_degenerate;
    simulate_with_engine(scenario, setting, design, &engine, opts.keep_audit, seed)
}

fn simulate_with_engine(
    scenario: &ScenarioSpec,
    setting: &AccrualToxSetting,
    design: DesignKind,
    engine: &Engine,
    keep_audit: bool,
    seed: u64,
) -> Result<TrialResult> {
    let params = engine.params().clone();
    let tau = params.tau;
    let models = scenario
        .probs
        .iter()
        .map(|&p| DltTimeModel::new(p, setting.alpha, setting.gamma, tau))
        .collect::<Result<Vec<_>>>()?;
    let gap = Exp::new(setting.delta).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut arrivals = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ ARRIVAL_STREAM));
    let mut tox = ChaCha8Rng::seed_from_u64(mix_seed(seed ^ TOX_STREAM));

    let mut state = TrialState::new(params.clone())?;
    let mut latent: Vec<Latent> = Vec::new();
    let mut points: Vec<(AuditRecord, Vec<u32>)> = Vec::new();
    let mut clock = 0.0;
    let mut cohort_left = 0usize;
    let mut cohort_dose = params.start_dose;
    let mut n_turned_away = 0u32;
    let mut n_decisions = 0usize;

    for _ in 0..MAX_ARRIVALS {
        if state.status.is_closed() {
            break;
        }
        clock += gap.sample(&mut arrivals);
        advance_to(&mut state, &latent, clock)?;
        state = refresh_safety(&state)?;
        if state.status.is_closed() {
            break;
        }

        let dose = if cohort_left > 0 && !state.excluded_doses.contains(&cohort_dose) {
            cohort_left -= 1;
            Some(cohort_dose)
        } else {
            cohort_left = 0;
            let (action, record) = decide_at(&state, engine, design, decision_seed(seed, n_decisions))?;
            n_decisions += 1;
            if record.decision.is_some() || keep_audit {
                points.push((record, Vec::new()));
            }
            match action {
                Action::Assign { dose } => {
                    cohort_left = params.cohort_size - 1;
                    cohort_dose = dose;
                    Some(dose)
                }
                Action::Suspend { reason } => {
                    state.status = TrialStatus::Suspended(reason);
                    n_turned_away += 1;
                    None
                }
                Action::Terminate => {
                    state.status = TrialStatus::TerminatedUnsafe;
                    None
                }
            }
        };

        if let Some(dose) = dose {
            let id = latent.len() as u32;
            let u: f64 = tox.random();
            let t = models[dose - 1].time(u);
            state.status = TrialStatus::Enrolling;
            state.apply_in_place(&Event::Enrollment {
                time: clock,
                patient_id: id,
                dose,
            })?;
            latent.push(Latent {
                enroll_time: clock,
                dlt: (t <= tau).then_some(t),
            });
        }
    }
    if !state.status.is_closed() {
        return Err(Error::Numerical("trial did not finish".into()));
    }

    // follow everyone to the end of their window
    let end = latent
        .iter()
        .map(|l| l.enroll_time + l.dlt.unwrap_or(tau))
        .fold(state.clock, f64::max);
    let terminated_early = state.status == TrialStatus::TerminatedUnsafe;
    advance_to(&mut state, &latent, end)?;
    let selected = if terminated_early {
        None
    } else {
        finalize(&state)?.selected
    };
    let terminated = terminated_early || crate::engine::apply_safety_rules(&state)?.terminate;
    let first = latent.first().map_or(0.0, |l| l.enroll_time);

    let mut inconsistencies = InconsistencyCounts::default();
    let mut audit = Vec::new();
    let mut n_exec = 0u32;
    for (record, _) in points {
        let realized = record
            .pending_ids
            .iter()
            .filter(|&&id| latent[id as usize].dlt.is_some())
            .count() as u32;
        let class = classify_inconsistency(&record, Some(realized), |n, m| engine.decide(n, m))?;
        if let Some(c) = class {
            n_exec += 1;
            inconsistencies.add(c);
        }
        if keep_audit {
            audit.push(DecisionPoint {
                audit: record,
                realized_s: realized,
                class,
            });
        }
    }

    let mut n_per_dose = vec![0u32; params.n_doses];
    for p in &state.patients {
        n_per_dose[p.dose - 1] += 1;
    }
    Ok(TrialResult {
        design,
        seed,
        selected,
        true_mtd: scenario.true_mtd(params.eps2),
        n_per_dose,
        n_dlt: latent.iter().filter(|l| l.dlt.is_some()).count() as u32,
        duration: if latent.is_empty() { 0.0 } else { end - first },
        terminated,
        n_decisions: n_exec,
        n_turned_away,
        inconsistencies,
        audit,
    })
}

fn decide_at(
    state: &TrialState,
    engine: &Engine,
    design: DesignKind,
    seed: u64,
) -> Result<(Action, AuditRecord)> {
    if design == DesignKind::Mtpi2 && engine.forced_action(state)?.is_none() && state.n_pending() > 0
    {
        let tally = state.tally(state.current_dose)?;
        let action = Action::Suspend {
            reason: SuspendReason::AwaitingCompleteData,
        };
        let record = AuditRecord {
            time: state.clock,
            dose: state.current_dose,
            n: tally.n,
            m: tally.m,
            r: tally.r,
            follow_ups: tally.follow_ups,
            pending_ids: tally.pending_ids,
            gamma: None,
            a_star: None,
            action,
            decision: None,
            rules: vec![Rule::AwaitingCompleteData],
            moves: Moves::at(state)?,
            seed: None,
            n_draws: 0,
            s_pmf: None,
            by_s: Vec::new(),
        };
        return Ok((action, record));
    }
    let (rec, record) = engine.evaluate(state, seed)?;
    Ok((rec.action, record))
}

/// Aggregated operating characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_trials: usize,
    /// Percent of trials selecting the true MTD (or correctly selecting none).
    pub pcs: f64,
    /// Mean percent of patients treated at the true MTD.
    pub pca: f64,
    /// Mean percent of patients treated above the true MTD.
    pub poa: f64,
    /// Percent of trials selecting a dose above the true MTD.
    pub pos: f64,
    /// Mean percent of patients with a DLT.
    pub pot: f64,
    pub duration: f64,
    pub termination_rate: f64,
    /// Executed decisions that were classified.
    pub n_decisions: u64,
    pub inconsistencies: InconsistencyCounts,
}

impl Metrics {
    pub fn from_trials(trials: &[TrialResult]) -> Self {
        let n = trials.len().max(1) as f64;
        let mut m = Metrics {
            n_trials: trials.len(),
            pcs: 0.0,
            pca: 0.0,
            poa: 0.0,
            pos: 0.0,
            pot: 0.0,
            duration: 0.0,
            termination_rate: 0.0,
            n_decisions: 0,
            inconsistencies: InconsistencyCounts::default(),
        };
        for t in trials {
            let enrolled = t.n_enrolled().max(1) as f64;
            if t.selected == t.true_mtd {
                m.pcs += 1.0;
            }
            let over_from = t.true_mtd.unwrap_or(0);
            if let Some(mtd) = t.true_mtd {
                m.pca += t.n_per_dose[mtd - 1] as f64 / enrolled;
            }
            m.poa += t.n_per_dose[over_from..].iter().sum::<u32>() as f64 / enrolled;
            if matches!(t.selected, Some(s) if s > over_from) {
                m.pos += 1.0;
            }
            m.pot += t.n_dlt as f64 / enrolled;
            m.duration += t.duration;
            if t.terminated {
                m.termination_rate += 1.0;
            }
            m.n_decisions += t.n_decisions as u64;
            m.inconsistencies.merge(&t.inconsistencies);
        }
        for x in [&mut m.pcs, &mut m.pca, &mut m.poa, &mut m.pos, &mut m.pot, &mut m.termination_rate] {
            *x *= 100.0 / n;
        }
        m.duration /= n;
        m
    }

    /// Inconsistencies of one kind per 1000 executed decisions.
    pub fn rate_per_1000(&self, kind: Inconsistency) -> f64 {
        if self.n_decisions == 0 {
            return 0.0;
        }
        1000.0 * self.inconsistencies.get(kind) as f64 / self.n_decisions as f64
    }

    /// Averages per-scenario metrics with equal scenario weights.
    pub fn average(all: &[Metrics]) -> Metrics {
        let k = all.len().max(1) as f64;
        let mean = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / k;
        let mut inconsistencies = InconsistencyCounts::default();
        for m in all {
            inconsistencies.merge(&m.inconsistencies);
        }
        Metrics {
            n_trials: all.iter().map(|m| m.n_trials).sum(),
            pcs: mean(|m| m.pcs),
            pca: mean(|m| m.pca),
            poa: mean(|m| m.poa),
            pos: mean(|m| m.pos),
            pot: mean(|m| m.pot),
            duration: mean(|m| m.duration),
            termination_rate: mean(|m| m.termination_rate),
            n_decisions: all.iter().map(|m| m.n_decisions).sum(),
            inconsistencies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: u32,
    pub pod: Metrics,
    pub baseline: Option<Metrics>,
    /// Per-trial results in trial-index order (kept for paired analyses).
    pub pod_trials: Vec<TrialResult>,
    pub baseline_trials: Vec<TrialResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub setting: AccrualToxSetting,
    pub seed: u64,
    pub n_trials: usize,
    pub scenarios: Vec<ScenarioResult>,
    pub pod_average: Metrics,
    pub baseline_average: Option<Metrics>,
}

/// Runs `n_trials` trials per scenario under PoD-TPI and, optionally, the
/// complete-data baseline on identical streams. Results do not depend on
/// thread scheduling.
pub fn run_oc(
    scenarios: &[ScenarioSpec],
    setting: &AccrualToxSetting,
    opts: &SimOptions,
    n_trials: usize,
    seed: u64,
    with_baseline: bool,
) -> Result<Campaign> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("n_trials must be at least 1".into()));
    }
    let engines = scenarios
        .iter()
        .map(|s| {
            let mut e = Engine::new(&opts.design_params(s)?)?.with_mcmc(opts.mcmc);
            e.estimator = opts.estimator;
            e.skip_degenerate = opts.skip_degenerate;
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut designs = vec![DesignKind::PodTpi];
    if with_baseline {
        designs.push(DesignKind::Mtpi2);
    }
    let jobs: Vec<(usize, DesignKind, usize)> = (0..scenarios.len())
        .flat_map(|i| {
            let designs = designs.clone();
            designs
                .into_iter()
                .flat_map(move |d| (0..n_trials).map(move |t| (i, d, t)))
        })
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(i, design, t)| {
            let s = &scenarios[i];
            let seed = trial_seed(seed, s.id, t as u64);
            simulate_with_engine(s, setting, design, &engines[i], opts.keep_audit, seed)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut chunks = results.chunks(n_trials);
    let mut per_scenario = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let pod_trials = chunks.next().expect("one chunk per design").to_vec();
        let baseline_trials = if with_baseline {
            chunks.next().expect("one chunk per design").to_vec()
        } else {
            Vec::new()
        };
        per_scenario.push(ScenarioResult {
            scenario: s.id,
            pod: Metrics::from_trials(&pod_trials),
            baseline: with_baseline.then(|| Metrics::from_trials(&baseline_trials)),
            pod_trials,
            baseline_trials,
        });
    }
    let pod_average = Metrics::average(&per_scenario.iter().map(|r| r.pod.clone()).collect::<Vec<_>>());
    let baseline_average = with_baseline.then(|| {
        Metrics::average(
            &per_scenario
                .iter()
                .filter_map(|r| r.baseline.clone())
                .collect::<Vec<_>>(),
        )
    });
    Ok(Campaign {
        setting: *setting,
        seed,
        n_trials,
        scenarios: per_scenario,
        pod_average,
        baseline_average,
    })
}

/// Header of the per-scenario and aggregate metrics CSV.
pub const METRICS_HEADER: [&str; 17] = [
    "scenario", "design", "n_trials", "pcs", "pca", "poa", "pos", "pot", "dur", "term",
    "decisions", "DS", "DE", "SE", "SD", "ED", "ES",
];

/// One CSV row; inconsistency columns are per 1000 executed decisions.
pub fn metrics_row(scenario: &str, design: DesignKind, m: &Metrics) -> Vec<String> {
    let mut row = vec![
        scenario.to_string(),
        design.as_str().to_string(),
        m.n_trials.to_string(),
    ];
    for x in [m.pcs, m.pca, m.poa, m.pos, m.pot, m.duration, m.termination_rate] {
        row.push(format!("{x:.2}"));
    }
    row.push(m.n_decisions.to_string());
    for kind in Inconsistency::TYPES {
        row.push(format!("{:.2}", m.rate_per_1000(kind)));
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_opts() -> SimOptions {
        SimOptions {
            mcmc: McmcConfig {
                n_iter: 300,
                burn_in: 100,
                ..McmcConfig::default()
            },
            keep_audit: true,
            ..SimOptions::default()
        }
    }

    #[test]
    fn classify_examples() {
        let mut rec = AuditRecord {
            time: 0.0,
            dose: 2,
            n: 1,
            m: 1,
            r: 1,
            follow_ups: vec![3.0],
            pending_ids: vec![4],
            gamma: None,
            a_star: None,
            action: Action::Assign { dose: 2 },
            decision: Some(Decision::Stay),
            rules: vec![],
            moves: Default::default(),
            seed: None,
            n_draws: 0,
            s_pmf: None,
            by_s: vec![],
        };
        let part = crate::mtpi2::IntervalPartition::new(0.3, 0.05, 0.05).unwrap();
        let decide = |n, m| crate::mtpi2::decide(n, m, &part);
        // (2, 1) de-escalates on complete data
        assert_eq!(
            classify_inconsistency(&rec, Some(1), decide).unwrap(),
            Some(Inconsistency::DS)
        );
        // (1, 2) stays
        assert_eq!(
            classify_inconsistency(&rec, Some(0), decide).unwrap(),
            Some(Inconsistency::Consistent)
        );
        assert!(classify_inconsistency(&rec, None, decide).is_err());
        rec.decision = None;
        assert_eq!(classify_inconsistency(&rec, Some(1), decide).unwrap(), None);
        rec.decision = Some(Decision::Escalate);
        rec.r = 0;
        assert_eq!(
            classify_inconsistency(&rec, None, decide).unwrap(),
            Some(Inconsistency::Consistent)
        );
    }

    #[test]
    fn deterministic_per_seed() {
        let s = scenario(41).unwrap();
        let setting = AccrualToxSetting::standard(1).unwrap();
        let a = simulate_trial(&s, &setting, DesignKind::PodTpi, &quick_opts(), 11).unwrap();
        let b = simulate_trial(&s, &setting, DesignKind::PodTpi, &quick_opts(), 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_enrolled() as usize, 18);
        assert!(a.audit.len() >= 6);
    }

    #[test]
    fn baseline_never_decides_with_pending() {
        let s = scenario(47).unwrap();
        let setting = AccrualToxSetting::standard(2).unwrap();
        let t = simulate_trial(&s, &setting, DesignKind::Mtpi2, &quick_opts(), 3).unwrap();
        for p in &t.audit {
            if p.audit.decision.is_some() {
                assert_eq!(p.audit.r, 0);
            }
        }
        assert_eq!(t.inconsistencies.total(), 0);
    }

    #[test]
    fn toxic_first_dose_terminates() {
        let s = ScenarioSpec::new(99, 0.3, vec![0.9, 0.95, 0.97]).unwrap();
        let setting = AccrualToxSetting::standard(1).unwrap();
        let t = simulate_trial(&s, &setting, DesignKind::PodTpi, &quick_opts(), 5).unwrap();
        assert!(t.terminated);
        assert_eq!(t.selected, None);
    }

    #[test]
    fn single_trial_metrics_are_indicators() {
        let s = scenario(41).unwrap();
        let setting = AccrualToxSetting::standard(1).unwrap();
        let t = simulate_trial(&s, &setting, DesignKind::PodTpi, &quick_opts(), 2).unwrap();
        let m = Metrics::from_trials(std::slice::from_ref(&t));
        assert!(m.pcs == 0.0 || m.pcs == 100.0);
        assert_eq!(m.duration, t.duration);
        let pca = 100.0 * t.n_per_dose[1] as f64 / t.n_enrolled() as f64;
        assert!((m.pca - pca).abs() < 1e-12);
    }

    #[test]
    fn campaign_is_schedule_independent() {
        let scenarios = vec![scenario(41).unwrap(), scenario(22).unwrap()];
        let setting = AccrualToxSetting::standard(1).unwrap();
        let opts = SimOptions {
            keep_audit: false,
            ..quick_opts()
        };
        let a = run_oc(&scenarios, &setting, &opts, 4, 9, true).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| run_oc(&scenarios, &setting, &opts, 4, 9, true).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.scenarios[0].pod_trials.len(), 4);
        assert!(run_oc(&scenarios, &setting, &opts, 0, 9, true).is_err());
    }
}
