//! Acceptance gate: one PASS/FAIL line per primary criterion.
//!
//! Runs as a plain binary (`harness = false`) so every line is printed
//! under `cargo test`; exits non-zero if any criterion fails.

use std::time::Instant;

use podtpi::engine::{Action, Engine};
use podtpi::mtdselect::pava;
use podtpi::mtpi2::{decide, model_posterior, prob_exceeds_target, IntervalPartition};
use podtpi::simulator::{
    catalogue, run_oc, weibull_params, AccrualToxSetting, Inconsistency, ScenarioSpec, SimOptions,
};
use podtpi::special::beta_reg;
use podtpi::toxmodel::{
    pod, poisson_binomial_pmf, sample_posterior, McmcConfig, Priors, SPosterior, SEstimator,
    TimeGrid, ToxData,
};
use podtpi::{Decision, DesignParams, Event, Outcome, SuspendReason, TrialState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Gate {
    failures: usize,
}

impl Gate {
    fn check(&mut self, name: &str, ok: bool, detail: String, started: Instant) {
        let secs = started.elapsed().as_secs_f64();
        println!(
            "{} {name}: {detail} [{secs:.1}s]",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            self.failures += 1;
        }
    }
}

/// Single-dose history at day 63: DLTs at `dlt_times` days after
/// enrollment, `n_ok` completed non-DLTs, and pending patients followed
/// for 15 and 8 days.
fn worked_example_state(dlt_times: &[f64], n_ok: usize) -> TrialState {
    let mut params = DesignParams::new(0.3, 0.05, 3);
    params.start_dose = 2;
    let mut state = TrialState::new(params).unwrap();
    let mut events = Vec::new();
    let mut id = 1;
    let mut t = 0.0;
    for &dlt in dlt_times {
        events.push(Event::Enrollment { time: t, patient_id: id, dose: 2 });
        events.push(Event::DltObserved { time: t + dlt, patient_id: id, dlt_time: Some(dlt) });
        id += 1;
        t += 5.0;
    }
    for _ in 0..n_ok {
        events.push(Event::Enrollment { time: t, patient_id: id, dose: 2 });
        id += 1;
        t += 5.0;
    }
    events.push(Event::Enrollment { time: 48.0, patient_id: id, dose: 2 });
    events.push(Event::Enrollment { time: 55.0, patient_id: id + 1, dose: 2 });
    events.push(Event::ClockAdvance { time: 63.0 });
    podtpi::trial::sort_events(&mut events);
    for e in &events {
        state.apply_in_place(e).unwrap();
    }
    state
}

fn worked_examples(gate: &mut Gate) {
    let started = Instant::now();
    let engine = Engine::new(&DesignParams::new(0.3, 0.05, 3)).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    let cases = [
        ("trial 1", worked_example_state(&[9.0, 26.0], 2), [0.42, 0.46, 0.12]),
        ("trial 2", worked_example_state(&[9.0], 3), [0.67, 0.30, 0.03]),
    ];
    for (name, state, want) in cases {
        let t = state.tally(2).unwrap();
        ok &= t.follow_ups == vec![15.0, 8.0];
        let (rec, audit) = engine.evaluate(&state, 2020).unwrap();
        let pmf = audit.s_pmf.clone().unwrap();
        let max_err = pmf.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ok &= max_err <= 0.05;
        let action_ok = match name {
            "trial 1" => rec.action == Action::Assign { dose: 1 },
            _ => {
                rec.action
                    == Action::Suspend {
                        reason: SuspendReason::EscalationConfidence,
                    }
            }
        };
        ok &= action_ok;
        detail.push(format!(
            "{name} (n,m,r)=({},{},{}) pmf=({:.3},{:.3},{:.3}) max|err|={max_err:.3} action={:?}",
            t.n, t.m, t.r, pmf[0], pmf[1], pmf[2], rec.action
        ));
    }
    gate.check("worked-example reproduction (+-0.05, 3000/1000 MCMC)", ok, detail.join("; "), started);
}

fn decision_anchors(gate: &mut Gate) {
    let started = Instant::now();
    let part = IntervalPartition::new(0.3, 0.05, 0.05).unwrap();
    let anchors = [
        ((0, 3), Decision::Escalate),
        ((1, 2), Decision::Stay),
        ((2, 1), Decision::DeEscalate),
        ((3, 0), Decision::DeEscalate),
    ];
    let got: Vec<Decision> = anchors.iter().map(|&((n, m), _)| decide(n, m, &part)).collect();
    let mut ok = anchors.iter().zip(&got).all(|((_, want), g)| want == g);
    let exceed = prob_exceeds_target(3, 0, 0.3).unwrap();
    ok &= (exceed - (1.0 - 0.3f64.powi(4))).abs() < 1e-12 && exceed > 0.95;
    let letters: String = got.iter().map(|d| d.letter()).collect();
    gate.check(
        "exact decision anchors and safety trigger",
        ok,
        format!("A(0,3),A(1,2),A(2,1),A(3,0) = {letters}; P(p>0.3|3,0) = {exceed:.6}"),
        started,
    );
}

fn safety_scenarios() -> Vec<ScenarioSpec> {
    let all = catalogue();
    [3, 14, 23, 30, 43, 50, 56]
        .iter()
        .map(|id| all.iter().find(|s| s.id == *id).unwrap().clone())
        .collect()
}

fn hard_safety(gate: &mut Gate) {
    let scenarios = safety_scenarios();
    for (label, pi_d) in [("pi_E=1", 0.15), ("pi_E=1, pi_D=0", 0.0)] {
        let started = Instant::now();
        let opts = SimOptions {
            pi_e: 1.0,
            pi_d,
            ..SimOptions::default()
        };
        let mut counts = [0u32; 6];
        let mut trials = 0;
        let mut decisions = 0;
        for setting in [1, 4] {
            let setting = AccrualToxSetting::standard(setting).unwrap();
            let c = run_oc(&scenarios, &setting, &opts, 30, 77, false).unwrap();
            for s in &c.scenarios {
                trials += s.pod_trials.len();
                decisions += s.pod.n_decisions;
                for (k, kind) in Inconsistency::TYPES.iter().enumerate() {
                    counts[k] += s.pod.inconsistencies.get(*kind);
                }
            }
        }
        let [ds, de, se, ..] = counts;
        let ok = de == 0 && se == 0 && (pi_d > 0.0 || ds == 0) && trials >= 200;
        gate.check(
            &format!("hard safety invariants ({label})"),
            ok,
            format!(
                "{trials} trials on {} scenarios, {decisions} executed decisions; DS={ds} DE={de} SE={se} SD={} ED={} ES={}",
                scenarios.len(),
                counts[3],
                counts[4],
                counts[5]
            ),
            started,
        );
    }
}

fn pb_oracle(gate: &mut Gate) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for r in 0..=12usize {
        for _ in 0..20 {
            let q: Vec<f64> = (0..r).map(|_| rng.random()).collect();
            let mut brute = vec![0.0; r + 1];
            for mask in 0u32..(1 << r) {
                let mut prob = 1.0;
                for (i, qi) in q.iter().enumerate() {
                    prob *= if mask >> i & 1 == 1 { *qi } else { 1.0 - qi };
                }
                brute[mask.count_ones() as usize] += prob;
            }
            let dp = poisson_binomial_pmf(&q);
            for (a, b) in dp.iter().zip(&brute) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    gate.check(
        "oracle: Poisson-binomial vs 2^r enumeration (r<=12, 1e-12)",
        worst <= 1e-12,
        format!("max abs diff {worst:.2e}"),
        started,
    );
}

/// Exact isotonic projection by enumerating every split into consecutive
/// blocks and keeping the best monotone one.
fn brute_isotonic(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let d = values.len();
    let mut best = (f64::INFINITY, vec![]);
    for cuts in 0u32..(1 << (d - 1)) {
        let mut fit = Vec::with_capacity(d);
        let mut start = 0;
        for i in 0..d {
            if i == d - 1 || cuts >> i & 1 == 1 {
                let w: f64 = weights[start..=i].iter().sum();
                let mean = (start..=i).map(|j| values[j] * weights[j]).sum::<f64>() / w;
                fit.extend(std::iter::repeat_n(mean, i + 1 - start));
                start = i + 1;
            }
        }
        if fit.windows(2).all(|w| w[0] <= w[1] + 1e-15) {
            let sse: f64 = (0..d).map(|j| weights[j] * (fit[j] - values[j]).powi(2)).sum();
            if sse < best.0 {
                best = (sse, fit);
            }
        }
    }
    best.1
}

fn pava_oracle(gate: &mut Gate) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..5000 {
        let d = rng.random_range(1..=6);
        let values: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        let weights: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..50.0)).collect();
        let fit = pava(&values, &weights).unwrap();
        for (a, b) in fit.p_hat.iter().zip(brute_isotonic(&values, &weights)) {
            worst = worst.max((a - b).abs());
        }
    }
    gate.check(
        "oracle: PAVA vs brute-force monotone projection (D<=6, 1e-8)",
        worst <= 1e-8,
        format!("max abs diff {worst:.2e} over 5000 instances"),
        started,
    );
}

fn riemann_oracle(gate: &mut Gate) {
    let started = Instant::now();
    const GRID: usize = 1_000_000;
    let mut worst = 0.0f64;
    let mut argmax_ok = true;
    for (pt, eps) in [(0.3, 0.05), (0.17, 0.05), (0.10, 0.03)] {
        let part = IntervalPartition::new(pt, eps, eps).unwrap();
        let models = part.models();
        for total in 0..=12u32 {
            for n in 0..=total {
                let m = total - n;
                let mut mass = vec![0.0; models.len()];
                let h = 1.0 / GRID as f64;
                let mut j = 0;
                for i in 0..GRID {
                    let p = (i as f64 + 0.5) * h;
                    while p > models[j].1.hi {
                        j += 1;
                    }
                    mass[j] += p.powi(n as i32) * (1.0 - p).powi(m as i32) * h;
                }
                let scores: Vec<f64> = mass.iter().zip(&models).map(|(x, (_, iv))| x / iv.len()).collect();
                let z: f64 = scores.iter().sum();
                let post = model_posterior(n, m, &part).unwrap();
                for (a, b) in post.probs.iter().zip(&scores) {
                    worst = worst.max((a - b / z).abs());
                }
                let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let riemann_decision = models
                    .iter()
                    .zip(&scores)
                    .filter(|(_, s)| **s >= best * (1.0 - 1e-9))
                    .map(|((k, _), _)| k.decision())
                    .min()
                    .unwrap();
                argmax_ok &= riemann_decision == decide(n, m, &part);
            }
        }
    }
    gate.check(
        "oracle: model posteriors vs 1e6-point Riemann sum (n+m<=12, 1e-6)",
        worst <= 1e-6 && argmax_ok,
        format!("max abs diff {worst:.2e}; decisions agree: {argmax_ok}"),
        started,
    );
}

fn mcmc_ks(gate: &mut Gate) {
    let started = Instant::now();
    let mut data = ToxData::new(TimeGrid::uniform(28.0, 3).unwrap(), 2);
    let (n, m) = (2u32, 7u32);
    for i in 0..n {
        data.add(1, Outcome::Dlt { time: 4.0 + 10.0 * i as f64 }).unwrap();
    }
    for _ in 0..m {
        data.add(1, Outcome::NoDlt).unwrap();
    }
    data.add(2, Outcome::NoDlt).unwrap();
    let cfg = McmcConfig {
        n_iter: 1000 + 4000 * 10,
        burn_in: 1000,
        thin: 10,
        seed: 4,
        ..McmcConfig::default()
    };
    let post = sample_posterior(&data, &Priors::uniform(2, 3), &cfg).unwrap();
    let mut xs: Vec<f64> = post.draws.iter().map(|d| d.p[0]).collect();
    xs.sort_by(f64::total_cmp);
    let len = xs.len() as f64;
    let (a, b) = (1.0 + n as f64, 1.0 + m as f64);
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = beta_reg(a, b, x);
            (f - i as f64 / len).abs().max(((i + 1) as f64 / len - f).abs())
        })
        .fold(0.0, f64::max);
    let critical = 1.628 / len.sqrt();
    gate.check(
        "oracle: MCMC vs conjugate Beta (KS, 1% level)",
        ks < critical,
        format!("D = {ks:.4} < {critical:.4} on {} thinned draws", xs.len()),
        started,
    );
}

fn generator(gate: &mut Gate) {
    let started = Instant::now();
    let tau = 28.0;
    let mut worst = 0.0f64;
    for &p in &[0.01, 0.05, 0.1, 0.17, 0.3, 0.45, 0.6, 0.86, 0.97] {
        for &alpha in &[0.1, 0.5, 0.8, 0.95] {
            for &gamma in &[0.1, 0.25, 0.5, 0.75] {
                let w = weibull_params(p, alpha, gamma, tau).unwrap();
                worst = worst.max((w.cdf(tau) - p).abs());
                worst = worst.max((w.cdf((1.0 - gamma) * tau) - (1.0 - alpha) * p).abs());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ci_ok = true;
    let mut fracs = Vec::new();
    for setting in [1u8, 3] {
        let s = AccrualToxSetting::standard(setting).unwrap();
        let p = 0.3;
        let w = weibull_params(p, s.alpha, s.gamma, tau).unwrap();
        let n = 10_000;
        let mut late = 0;
        let mut in_window = 0;
        while in_window < n {
            let t = w.quantile(rng.random());
            if t <= tau {
                in_window += 1;
                if t > (1.0 - s.gamma) * tau {
                    late += 1;
                }
            }
        }
        let frac = late as f64 / n as f64;
        let half = 1.96 * (s.alpha * (1.0 - s.alpha) / n as f64).sqrt();
        ci_ok &= (frac - s.alpha).abs() <= half;
        fracs.push(format!("alpha={} late={frac:.4} (+-{half:.4})", s.alpha));
    }
    gate.check(
        "generator: Weibull quantile constraints (1e-10) and late-DLT fraction",
        worst <= 1e-10 && ci_ok,
        format!("max constraint error {worst:.1e}; {}", fracs.join(", ")),
        started,
    );
}

fn desk_scale_oc(gate: &mut Gate) {
    let started = Instant::now();
    let all = catalogue();
    let ids = [9, 22, 27, 41, 47, 54];
    let scenarios: Vec<ScenarioSpec> = ids
        .iter()
        .map(|id| all.iter().find(|s| s.id == *id).unwrap().clone())
        .collect();
    let setting = AccrualToxSetting::standard(1).unwrap();
    let opts = SimOptions::default();
    let c = run_oc(&scenarios, &setting, &opts, 300, 2021, true).unwrap();
    let mut shorter = 0;
    let mut total = 0;
    let mut gap = 0.0;
    for s in &c.scenarios {
        for (a, b) in s.pod_trials.iter().zip(&s.baseline_trials) {
            total += 1;
            if a.duration < b.duration {
                shorter += 1;
            }
            gap += b.duration - a.duration;
        }
    }
    let share = shorter as f64 / total as f64;
    let gap = gap / total as f64;
    let base = c.baseline_average.as_ref().unwrap();
    let pod_m = &c.pod_average;
    let dpcs = (pod_m.pcs - base.pcs).abs();
    let ok = share >= 0.95 && gap >= 40.0 && dpcs <= 6.0;
    gate.check(
        "desk-scale OC (6 scenarios x 300 trials, setting 1)",
        ok,
        format!(
            "shorter in {:.1}% of trials, mean gap {gap:.1} d (PoD {:.1} vs mTPI-2 {:.1}); PCS {:.1} vs {:.1} (|diff| {dpcs:.1})",
            100.0 * share,
            pod_m.duration,
            base.duration,
            pod_m.pcs,
            base.pcs
        ),
        started,
    );
}

fn normalization(gate: &mut Gate) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let part = IntervalPartition::new(0.3, 0.05, 0.05).unwrap();
    let cache = podtpi::mtpi2::DecisionCache::new(part, 40);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let r = rng.random_range(0..=8u32);
        let n = rng.random_range(0..=12u32);
        let m = rng.random_range(0..=12u32);
        let mut pmf: Vec<f64> = (0..=r).map(|_| rng.random::<f64>()).collect();
        let z: f64 = pmf.iter().sum();
        pmf.iter_mut().for_each(|x| *x /= z);
        let s = SPosterior {
            pmf,
            q_mean: vec![],
            estimator: SEstimator::MarginalQ,
        };
        let dist = pod(&s, n, m, r, |a, b| cache.decide(a, b)).unwrap();
        worst = worst.max((dist.gamma.sum() - 1.0).abs());
    }
    gate.check(
        "normalization: sum of gamma = 1 (1e4 cases, 1e-9)",
        worst <= 1e-9,
        format!("max |sum - 1| = {worst:.1e}"),
        started,
    );
}

fn main() {
    let mut gate = Gate { failures: 0 };
    worked_examples(&mut gate);
    decision_anchors(&mut gate);
    hard_safety(&mut gate);
    pb_oracle(&mut gate);
    pava_oracle(&mut gate);
    riemann_oracle(&mut gate);
    mcmc_ks(&mut gate);
    generator(&mut gate);
    normalization(&mut gate);
    desk_scale_oc(&mut gate);
    if gate.failures > 0 {
        println!("{} acceptance criteria failed", gate.failures);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
