//! Batch subcommands: decision tables, simulation campaigns and reports.

use std::io::Write;
use std::path::{Path, PathBuf};

use podtpi::mtpi2::{decision_table, IntervalPartition};
use podtpi::simulator::{
    metrics_row, run_oc, DesignKind, Inconsistency, Metrics, ScenarioResult, METRICS_HEADER,
};
use serde::Serialize;

use crate::config::{Campaign, CampaignConfig};
use crate::error::{CliError, CliResult};

/// Writes `n,m,decision` for every `1 <= n + m <= n_max`.
pub fn write_decision_table(
    out: &mut dyn Write,
    p_target: f64,
    eps1: f64,
    eps2: f64,
    n_max: u32,
) -> CliResult<()> {
    let part = IntervalPartition::new(p_target, eps1, eps2).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "m", "decision"])?;
    for row in decision_table(&part, n_max) {
        w.write_record([row.n.to_string(), row.m.to_string(), row.decision.letter().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-scenario metrics without the per-trial payload.
#[derive(Debug, Serialize)]
struct ScenarioSummary<'a> {
    scenario: u32,
    pod: &'a Metrics,
    baseline: Option<&'a Metrics>,
}

#[derive(Debug, Serialize)]
struct CampaignSummary<'a> {
    config: &'a CampaignConfig,
    setting: &'a podtpi::simulator::AccrualToxSetting,
    true_mtd_rule: &'static str,
    scenarios: Vec<ScenarioSummary<'a>>,
    pod_average: &'a Metrics,
    baseline_average: Option<&'a Metrics>,
}

const TRUE_MTD_RULE: &str = "argmin |p_d - p_T| (ties to the lower dose); none when p_1 > p_T + eps2";

/// Files written by a campaign.
#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub metrics_csv: PathBuf,
    pub metrics_json: PathBuf,
    pub trials_csv: Option<PathBuf>,
}

/// Runs the campaign described by `config_path` and writes `metrics.csv`,
/// `metrics.json` (and `trials.csv` when asked) into `out_dir`.
pub fn simulate(config_path: &Path, out_dir: &Path, log: &mut dyn Write) -> CliResult<SimulateOutput> {
    let config = CampaignConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let Campaign {
        config,
        scenarios,
        setting,
        options,
    } = config.resolve(base)?;
    let result = run_oc(
        &scenarios,
        &setting,
        &options,
        config.n_trials,
        config.seed,
        config.baseline,
    )?;

    std::fs::create_dir_all(out_dir)?;
    let metrics_csv = out_dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&metrics_csv)?;
    w.write_record(METRICS_HEADER)?;
    for s in &result.scenarios {
        let label = s.scenario.to_string();
        w.write_record(metrics_row(&label, DesignKind::PodTpi, &s.pod))?;
        if let Some(b) = &s.baseline {
            w.write_record(metrics_row(&label, DesignKind::Mtpi2, b))?;
        }
    }
    w.write_record(metrics_row("average", DesignKind::PodTpi, &result.pod_average))?;
    if let Some(b) = &result.baseline_average {
        w.write_record(metrics_row("average", DesignKind::Mtpi2, b))?;
    }
    w.flush()?;

    let summary = CampaignSummary {
        config: &config,
        setting: &result.setting,
        true_mtd_rule: TRUE_MTD_RULE,
        scenarios: result
            .scenarios
            .iter()
            .map(|s| ScenarioSummary {
                scenario: s.scenario,
                pod: &s.pod,
                baseline: s.baseline.as_ref(),
            })
            .collect(),
        pod_average: &result.pod_average,
        baseline_average: result.baseline_average.as_ref(),
    };
    let metrics_json = out_dir.join("metrics.json");
    std::fs::write(&metrics_json, serde_json::to_string_pretty(&summary)?)?;

    let trials_csv = if config.write_trials {
        let path = out_dir.join("trials.csv");
        write_trials(&path, &result.scenarios)?;
        Some(path)
    } else {
        None
    };

    let mut rows = vec![ReportRow::new("pod-tpi", &result.pod_average)];
    if let Some(b) = &result.baseline_average {
        rows.push(ReportRow::new("mtpi2", b));
    }
    write_report_text(log, &format!("setting {}", setting.label), &rows)?;
    Ok(SimulateOutput {
        metrics_csv,
        metrics_json,
        trials_csv,
    })
}

fn write_trials(path: &Path, scenarios: &[ScenarioResult]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario", "trial", "design", "seed", "selected", "true_mtd", "n_enrolled", "n_dlt",
        "duration", "terminated", "turned_away",
    ])?;
    let opt = |x: Option<usize>| x.map_or_else(String::new, |d| d.to_string());
    for s in scenarios {
        for (i, t) in s.pod_trials.iter().chain(&s.baseline_trials).enumerate() {
            w.write_record([
                s.scenario.to_string(),
                (i % s.pod_trials.len().max(1)).to_string(),
                t.design.as_str().to_string(),
                t.seed.to_string(),
                opt(t.selected),
                opt(t.true_mtd),
                t.n_enrolled().to_string(),
                t.n_dlt.to_string(),
                format!("{:.3}", t.duration),
                t.terminated.to_string(),
                t.n_turned_away.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub values: [f64; 6],
    /// Per-1000 rates in `Inconsistency::TYPES` order.
    pub rates: [f64; 6],
}

impl ReportRow {
    pub fn new(label: &str, m: &Metrics) -> Self {
        Self {
            label: label.to_string(),
            values: [m.pcs, m.pca, m.poa, m.pos, m.pot, m.duration],
            rates: Inconsistency::TYPES.map(|k| m.rate_per_1000(k)),
        }
    }
}

/// Reads rows back from a `metrics.csv`. With `all_scenarios` unset only
/// the `average` rows are kept.
pub fn read_metrics_csv(path: &Path, all_scenarios: bool) -> CliResult<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let headers = r.headers()?.clone();
    if headers.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(CliError::Usage(format!("{} is not a metrics file", path.display())));
    }
    let run = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let scenario = &rec[0];
        if !all_scenarios && scenario != "average" {
            continue;
        }
        let num = |i: usize| -> CliResult<f64> {
            rec[i]
                .parse()
                .map_err(|_| CliError::Runtime(format!("{}: bad number {:?}", path.display(), &rec[i])))
        };
        let mut label = format!("{}/{}", scenario, &rec[1]);
        if !run.is_empty() {
            label = format!("{run}:{label}");
        }
        rows.push(ReportRow {
            label,
            values: [num(3)?, num(4)?, num(5)?, num(6)?, num(7)?, num(8)?],
            rates: [num(11)?, num(12)?, num(13)?, num(14)?, num(15)?, num(16)?],
        });
    }
    Ok(rows)
}

/// Aligned text table in the usual layout: accuracy and safety columns,
/// then the inconsistency rates per 1000 decisions.
pub fn write_report_text(out: &mut dyn Write, title: &str, rows: &[ReportRow]) -> CliResult<()> {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
    writeln!(out, "{title}")?;
    write!(out, "{:<width$}", "design")?;
    for h in ["PCS", "PCA", "POA", "POS", "POT", "Dur"] {
        write!(out, " {h:>7}")?;
    }
    write!(out, " |")?;
    for h in ["DS", "DE", "SE", "SD", "ED", "ES", "Sum"] {
        write!(out, " {h:>6}")?;
    }
    writeln!(out)?;
    for r in rows {
        write!(out, "{:<width$}", r.label)?;
        for v in r.values {
            write!(out, " {v:>7.1}")?;
        }
        write!(out, " |")?;
        for v in r.rates {
            write!(out, " {v:>6.1}")?;
        }
        writeln!(out, " {:>6.1}", r.rates.iter().sum::<f64>())?;
    }
    Ok(())
}

pub fn write_report_csv(out: &mut dyn Write, rows: &[ReportRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "design", "PCS", "PCA", "POA", "POS", "POT", "Dur", "DS", "DE", "SE", "SD", "ED", "ES", "Sum",
    ])?;
    for r in rows {
        let mut rec = vec![r.label.clone()];
        rec.extend(r.values.iter().map(|v| format!("{v:.2}")));
        rec.extend(r.rates.iter().map(|v| format!("{v:.2}")));
        rec.push(format!("{:.2}", r.rates.iter().sum::<f64>()));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}
