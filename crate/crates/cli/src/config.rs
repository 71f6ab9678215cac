//! Campaign configuration documents for `podtpi simulate`.
//!
//! ```toml
//! setting = 1          # accrual/toxicity setting 1..4
//! n_trials = 1000
//! seed = 2021
//! scenarios = [41, 42] # omit for the whole catalogue
//! baseline = true      # also run complete-data mTPI-2 on the same streams
//!
//! [design]
//! pi_e = 1.0
//! pi_d = 0.15
//!
//! [mcmc]
//! n_iter = 1500
//! burn_in = 500
//! ```

use std::path::{Path, PathBuf};

use podtpi::simulator::{catalogue, parse_scenarios, AccrualToxSetting, ScenarioSpec, SimOptions};
use podtpi::toxmodel::{McmcConfig, SEstimator};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default = "default_setting")]
    pub setting: u8,
    pub n_trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Scenario ids to run; empty means every scenario in the catalogue.
    #[serde(default)]
    pub scenarios: Vec<u32>,
    #[serde(default = "yes")]
    pub baseline: bool,
    /// Alternative catalogue (`scn,pT,D,p1..p6`). Relative paths resolve
    /// against the config file's directory.
    #[serde(default)]
    pub scenario_file: Option<PathBuf>,
    /// Overrides the accrual/toxicity constants; `setting` is then only
    /// a label.
    #[serde(default)]
    pub accrual: Option<AccrualSection>,
    #[serde(default)]
    pub design: DesignSection,
    #[serde(default)]
    pub mcmc: McmcSection,
    /// Write every paired trial to `trials.csv` as well.
    #[serde(default)]
    pub write_trials: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccrualSection {
    /// Arrival rate (patients per day).
    pub delta: f64,
    /// Share of DLTs in the late part of the window.
    pub alpha: f64,
    /// Late part of the window, as a fraction of it.
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSection {
    pub pi_e: f64,
    pub pi_d: f64,
    pub cohort_size: usize,
    pub max_n_per_dose: usize,
    pub tau: f64,
    pub estimator: SEstimator,
    pub skip_degenerate: bool,
}

impl Default for DesignSection {
    fn default() -> Self {
        let o = SimOptions::default();
        Self {
            pi_e: o.pi_e,
            pi_d: o.pi_d,
            cohort_size: o.cohort_size,
            max_n_per_dose: o.max_n_per_dose,
            tau: o.tau,
            estimator: o.estimator,
            skip_degenerate: o.skip_degenerate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcSection {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub step_p: f64,
    pub step_w: f64,
}

impl Default for McmcSection {
    fn default() -> Self {
        let m = McmcConfig::simulation();
        Self {
            n_iter: m.n_iter,
            burn_in: m.burn_in,
            thin: m.thin,
            step_p: m.step_p,
            step_w: m.step_w,
        }
    }
}

fn default_setting() -> u8 {
    1
}

fn yes() -> bool {
    true
}

/// Everything a campaign needs, resolved from a config document.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub config: CampaignConfig,
    pub scenarios: Vec<ScenarioSpec>,
    pub setting: AccrualToxSetting,
    pub options: SimOptions,
}

impl CampaignConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let config: CampaignConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {}", e.message())))?;
        if config.n_trials == 0 {
            return Err(CliError::Usage("invalid config: n_trials must be at least 1".into()));
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn options(&self) -> SimOptions {
        let d = &self.design;
        SimOptions {
            pi_e: d.pi_e,
            pi_d: d.pi_d,
            cohort_size: d.cohort_size,
            max_n_per_dose: d.max_n_per_dose,
            tau: d.tau,
            mcmc: McmcConfig {
                n_iter: self.mcmc.n_iter,
                burn_in: self.mcmc.burn_in,
                thin: self.mcmc.thin,
                step_p: self.mcmc.step_p,
                step_w: self.mcmc.step_w,
                ..McmcConfig::simulation()
            },
            estimator: d.estimator,
            skip_degenerate: d.skip_degenerate,
            keep_audit: false,
        }
    }

    /// Resolves scenarios and the setting. `base_dir` anchors a relative
    /// `scenario_file`.
    pub fn resolve(self, base_dir: &Path) -> CliResult<Campaign> {
        let all = match &self.scenario_file {
            Some(file) => {
                let path = base_dir.join(file);
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    CliError::Usage(format!("cannot read scenario file {}: {e}", path.display()))
                })?;
                parse_scenarios(text.as_bytes()).map_err(|e| CliError::Usage(e.to_string()))?
            }
            None => catalogue(),
        };
        let scenarios = if self.scenarios.is_empty() {
            all
        } else {
            self.scenarios
                .iter()
                .map(|id| {
                    all.iter()
                        .find(|s| s.id == *id)
                        .cloned()
                        .ok_or_else(|| CliError::Usage(format!("unknown scenario {id}")))
                })
                .collect::<CliResult<Vec<_>>>()?
        };
        let setting = match self.accrual {
            Some(a) => AccrualToxSetting::new(self.setting, a.delta, a.alpha, a.gamma),
            None => AccrualToxSetting::standard(self.setting),
        }
        .map_err(|e| CliError::Usage(e.to_string()))?;
        let options = self.options();
        // catch bad design values before any work is scheduled
        for s in &scenarios {
            options
                .design_params(s)
                .map_err(|e| CliError::Usage(format!("scenario {}: {e}", s.id)))?;
        }
        Ok(Campaign {
            config: self,
            scenarios,
            setting,
            options,
        })
    }
}
