//! One decision contract over every deployment policy.
//!
//! Sequential handles (pure as-you-go) answer one location at a time;
//! window handles (explore-forward and the learners) need the full `B × M`
//! outage matrix of a round.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::asyougo::{
    average_cost_limit, default_theta_schedule, optasyougo_decide, AygAction, HeuAsYouGo, HeuStep,
    ThresholdPolicy, DEFAULT_LIMIT_TOL,
};
use crate::channel::{dbm_to_mw, ChannelConfig, PowerSet};
use crate::error::{Error, Result};
use crate::explore::{
    default_lambda0, explorelim_decide, heu_explorelim_decide, policy_iteration, Decision, ExploreConfig,
    IndexPolicy, OutageMatrix, PolicyIterationOptions, Window,
};
use crate::learning::{
    select_projection_box, LearnerState, ProjectionBox, StepSchedule, Targets, DEFAULT_KAPPA,
};
use crate::simulator::MetricsSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    OptAyg,
    HeuAyg,
    OptEl,
    HeuEl,
    OelLearn,
    OelRatio,
    Oelal,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::OptAyg,
        PolicyKind::HeuAyg,
        PolicyKind::OptEl,
        PolicyKind::HeuEl,
        PolicyKind::OelLearn,
        PolicyKind::OelRatio,
        PolicyKind::Oelal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::OptAyg => "opt-ayg",
            PolicyKind::HeuAyg => "heu-ayg",
            PolicyKind::OptEl => "opt-el",
            PolicyKind::HeuEl => "heu-el",
            PolicyKind::OelLearn => "oel-learn",
            PolicyKind::OelRatio => "oel-ratio",
            PolicyKind::Oelal => "oelal",
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            PolicyKind::OptAyg | PolicyKind::HeuAyg => Mode::Sequential,
            _ => Mode::Window,
        }
    }

    pub fn is_learner(self) -> bool {
        matches!(
            self,
            PolicyKind::OelLearn | PolicyKind::OelRatio | PolicyKind::Oelal
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("policy", format!("unknown policy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sequential,
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    OptAyg { thresholds: ThresholdPolicy },
    HeuAyg { heuristic: HeuAsYouGo },
    OptEl { index: IndexPolicy },
    HeuEl { xi_out: f64, xi_relay: f64 },
    Learner { state: LearnerState },
}

/// How the fixed power of the as-you-go heuristic is derived from the mean
/// power per link of the optimal as-you-go policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerCalibration {
    /// Use the mean power itself, even if it is not an available level.
    #[default]
    Exact,
    /// Snap to the nearest available level (linear domain).
    SnapNearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuCalibration {
    pub fixed_power_mw: f64,
    pub target_outage: f64,
    pub mean_power_mw: f64,
    pub rule: PowerCalibration,
}

/// Fixed power and target outage for the as-you-go heuristic from the
/// optimal as-you-go policy's mean power and mean outage per link.
pub fn calibrate_heu_asyougo(
    opt_asyougo_stats: &MetricsSummary,
    powers: &PowerSet,
    rule: PowerCalibration,
) -> Result<HeuCalibration> {
    if opt_asyougo_stats.links == 0 {
        return Err(Error::domain(
            "calibration needs a nonempty optimal as-you-go run",
        ));
    }
    let mean_power = opt_asyougo_stats.mean_power_per_link_mw.value;
    let fixed = match rule {
        PowerCalibration::Exact => mean_power,
        PowerCalibration::SnapNearest => powers.levels()[powers.nearest(mean_power)],
    };
    Ok(HeuCalibration {
        fixed_power_mw: fixed,
        target_outage: opt_asyougo_stats.mean_outage_per_link.value,
        mean_power_mw: mean_power,
        rule,
    })
}

/// Declarative policy description; [`PolicySpec::build`] runs whatever
/// solver the kind needs against a channel configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    #[serde(default)]
    pub a_skip: u32,
    #[serde(default = "spec_defaults::b_window")]
    pub b_window: u32,
    #[serde(default = "spec_defaults::xi_out")]
    pub xi_out: f64,
    #[serde(default = "spec_defaults::xi_relay")]
    pub xi_relay: f64,
    /// Discount schedule for `opt-ayg`; defaults to `1e-2 · 2^-j`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_schedule: Option<Vec<f64>>,
    /// Learners: initial `λ`; defaults to `(P_1 + ξ_relay) / (A + B)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    /// `oel-learn` and `oelal`: `λ` step sizes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<StepSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_step: Option<StepSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relay_step: Option<StepSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Targets>,
    /// `oelal` projection box; chosen by [`select_projection_box`] when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<ProjectionBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// `heu-ayg`: fixed transmit power and outage target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_power_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_outage: Option<f64>,
}

mod spec_defaults {
    pub fn b_window() -> u32 {
        5
    }
    pub fn xi_out() -> f64 {
        100.0
    }
    pub fn xi_relay() -> f64 {
        1.0
    }
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        PolicySpec {
            kind,
            a_skip: 0,
            b_window: spec_defaults::b_window(),
            xi_out: spec_defaults::xi_out(),
            xi_relay: spec_defaults::xi_relay(),
            theta_schedule: None,
            lambda0: None,
            step: None,
            out_step: None,
            relay_step: None,
            targets: None,
            bounds: None,
            kappa: None,
            fixed_power_dbm: None,
            target_outage: None,
        }
    }

    pub fn window(&self) -> Window {
        Window {
            a_skip: self.a_skip,
            b_window: self.b_window,
        }
    }

    pub fn explore_config(&self) -> Result<ExploreConfig> {
        if self.b_window == 0 {
            return Err(Error::config("b_window", "must be at least 1"));
        }
        ExploreConfig::new(self.a_skip, self.b_window, self.xi_out, self.xi_relay)
            .map_err(|e| Error::config("xi_out/xi_relay", e.to_string()))
    }

    pub fn build(&self, channel: &ChannelConfig) -> Result<PolicyHandle> {
        self.solve(channel).map(|s| s.handle)
    }

    /// As [`Self::build`], also reporting the solver's average cost per step.
    pub fn solve(&self, channel: &ChannelConfig) -> Result<Solved> {
        channel.validate()?;
        let cfg = self.explore_config()?;
        let powers = channel.powers()?;
        let params = channel.params();
        let window = self.window();
        let lambda0 = self.lambda0.unwrap_or_else(|| default_lambda0(&cfg, &powers));
        let require = |v: Option<f64>, field: &str| v.ok_or_else(|| Error::config(field, "required"));
        let plain = |handle| Solved {
            handle,
            lambda_star: None,
            iterations: None,
            theta: None,
        };
        Ok(match self.kind {
            PolicyKind::OptEl => {
                let model = channel.solver_shadowing()?;
                let pi = policy_iteration(
                    &cfg,
                    &model,
                    &powers,
                    &params,
                    None,
                    PolicyIterationOptions::discretized(),
                )?;
                Solved {
                    handle: PolicyHandle::opt_el(window, pi.policy),
                    lambda_star: Some(pi.lambda_star),
                    iterations: Some(pi.iterations),
                    theta: None,
                }
            }
            PolicyKind::HeuEl => plain(PolicyHandle::heu_el(window, self.xi_out, self.xi_relay)),
            PolicyKind::OptAyg => {
                let model = channel.solver_shadowing()?;
                let schedule = self.theta_schedule.clone().unwrap_or_else(default_theta_schedule);
                let lim = average_cost_limit(&cfg, &model, &powers, &params, &schedule, DEFAULT_LIMIT_TOL)?;
                Solved {
                    handle: PolicyHandle::opt_ayg(lim.policy),
                    lambda_star: Some(lim.lambda),
                    iterations: None,
                    theta: Some(lim.theta),
                }
            }
            PolicyKind::HeuAyg => {
                let p = require(self.fixed_power_dbm, "fixed_power_dbm")?;
                let t = require(self.target_outage, "target_outage")?;
                let heu = HeuAsYouGo::new(dbm_to_mw(p), t, self.a_skip, self.b_window)
                    .map_err(|e| Error::config("fixed_power_dbm/target_outage", e.to_string()))?;
                plain(PolicyHandle::heu_ayg(heu)?)
            }
            PolicyKind::OelLearn => {
                let step = self.step.unwrap_or(StepSchedule::power_law(1.0, 1.0));
                plain(PolicyHandle::learner(
                    window,
                    LearnerState::general(lambda0, self.xi_out, self.xi_relay, step)?,
                ))
            }
            PolicyKind::OelRatio => plain(PolicyHandle::learner(
                window,
                LearnerState::ratio(lambda0, self.xi_out, self.xi_relay)?,
            )),
            PolicyKind::Oelal => {
                let targets = self
                    .targets
                    .ok_or_else(|| Error::config("targets", "required for oelal"))?;
                let bounds = match self.bounds {
                    Some(b) => b,
                    None => {
                        let model = channel.solver_shadowing()?;
                        select_projection_box(
                            &model,
                            &powers,
                            &params,
                            window,
                            targets.q_bar,
                            targets.n_bar,
                            self.kappa.unwrap_or(DEFAULT_KAPPA),
                        )?
                    }
                };
                let state = LearnerState::adaptive(
                    lambda0,
                    self.xi_out,
                    self.xi_relay,
                    self.step.unwrap_or(StepSchedule::power_law(1.0, 0.55)),
                    self.out_step.unwrap_or(StepSchedule::power_law(1e4, 0.8)),
                    self.relay_step.unwrap_or(StepSchedule::power_law(1.0, 0.8)),
                    targets,
                    bounds,
                )?;
                plain(PolicyHandle::learner(window, state))
            }
        })
    }
}

/// A built handle plus what the solver learned on the way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solved {
    pub handle: PolicyHandle,
    /// Optimal average cost per step (`opt-el`: policy iteration; `opt-ayg`: `θ → 0` limit).
    pub lambda_star: Option<f64>,
    /// Policy-iteration steps (`opt-el`).
    pub iterations: Option<usize>,
    /// Accepted discount (`opt-ayg`).
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyHandle {
    pub window: Window,
    pub policy: Policy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<HeuCalibration>,
}

impl PolicyHandle {
    pub fn opt_ayg(thresholds: ThresholdPolicy) -> Self {
        PolicyHandle {
            window: thresholds.window(),
            policy: Policy::OptAyg { thresholds },
            calibration: None,
        }
    }

    pub fn heu_ayg(heuristic: HeuAsYouGo) -> Result<Self> {
        heuristic.validate()?;
        Ok(PolicyHandle {
            window: heuristic.window(),
            policy: Policy::HeuAyg { heuristic },
            calibration: None,
        })
    }

    pub fn opt_el(window: Window, index: IndexPolicy) -> Self {
        PolicyHandle {
            window,
            policy: Policy::OptEl { index },
            calibration: None,
        }
    }

    pub fn heu_el(window: Window, xi_out: f64, xi_relay: f64) -> Self {
        PolicyHandle {
            window,
            policy: Policy::HeuEl { xi_out, xi_relay },
            calibration: None,
        }
    }

    pub fn learner(window: Window, state: LearnerState) -> Self {
        PolicyHandle {
            window,
            policy: Policy::Learner { state },
            calibration: None,
        }
    }

    pub fn kind(&self) -> PolicyKind {
        match &self.policy {
            Policy::OptAyg { .. } => PolicyKind::OptAyg,
            Policy::HeuAyg { .. } => PolicyKind::HeuAyg,
            Policy::OptEl { .. } => PolicyKind::OptEl,
            Policy::HeuEl { .. } => PolicyKind::HeuEl,
            Policy::Learner { state } => state.kind_name().parse().expect("learner names are policy kinds"),
        }
    }

    pub fn mode(&self) -> Mode {
        self.kind().mode()
    }

    pub fn learner_state(&self) -> Option<&LearnerState> {
        match &self.policy {
            Policy::Learner { state } => Some(state),
            _ => None,
        }
    }

    /// Power levels at which each location must be measured.
    pub fn measurement_levels(&self, powers: &PowerSet) -> Vec<f64> {
        match &self.policy {
            Policy::HeuAyg { heuristic } => vec![heuristic.fixed_power_mw],
            _ => powers.levels().to_vec(),
        }
    }

    /// Sequential decision. `readings[i]` holds the outages at location
    /// `A+1+i` for [`Self::measurement_levels`]; the last row is the current
    /// location. Returns `None` to continue.
    pub fn decide_sequential(&self, readings: &[Vec<f64>], powers: &PowerSet) -> Result<Option<Decision>> {
        let n = readings.len();
        if n == 0 || n > self.window.b_window as usize {
            return Err(Error::domain(format!(
                "expected between 1 and {} locations, got {n}",
                self.window.b_window
            )));
        }
        let levels = self.measurement_levels(powers);
        if let Some(row) = readings.iter().find(|row| row.len() != levels.len()) {
            return Err(Error::domain(format!(
                "expected {} readings per location, got {}",
                levels.len(),
                row.len()
            )));
        }
        let r = self.window.a_skip + n as u32;
        match &self.policy {
            Policy::OptAyg { thresholds } => {
                let row = &readings[n - 1];
                Ok(match optasyougo_decide(r, row, thresholds, powers)? {
                    AygAction::Continue => None,
                    AygAction::Place {
                        power_index,
                        gamma_mw,
                        ..
                    } => Some(Decision {
                        u: r,
                        power_index,
                        gamma_mw,
                        q_out: row[power_index],
                    }),
                })
            }
            Policy::HeuAyg { heuristic } => {
                let column: Vec<f64> = readings.iter().map(|row| row[0]).collect();
                if let Some(q) = column.iter().find(|q| !(0.0..=1.0).contains(*q)) {
                    return Err(Error::domain(format!("outage reading {q} outside [0, 1]")));
                }
                Ok(match heuristic.decide(&column)? {
                    HeuStep::Continue => None,
                    HeuStep::Place { u, q_out } => Some(Decision {
                        u,
                        power_index: 0,
                        gamma_mw: heuristic.fixed_power_mw,
                        q_out,
                    }),
                })
            }
            _ => Err(Error::domain(format!("{} is a window policy", self.kind()))),
        }
    }

    pub fn decide_window(&self, measured: &OutageMatrix, powers: &PowerSet) -> Result<Decision> {
        let a = self.window.a_skip;
        if measured.rows() != self.window.b_window as usize {
            return Err(Error::domain(format!(
                "expected {} locations, got {}",
                self.window.b_window,
                measured.rows()
            )));
        }
        match &self.policy {
            Policy::OptEl { index } => explorelim_decide(measured, index, powers, a),
            Policy::HeuEl { xi_out, xi_relay } => {
                heu_explorelim_decide(measured, *xi_out, *xi_relay, powers, a)
            }
            Policy::Learner { state } => state.decide(measured, powers, a),
            _ => Err(Error::domain(format!("{} is a sequential policy", self.kind()))),
        }
    }

    /// Records a realized placement; only learners change state.
    pub fn observe(&mut self, u: u32, gamma_mw: f64, q_out: f64) -> Result<()> {
        if let Policy::Learner { state } = &mut self.policy {
            state.observe(u, gamma_mw, q_out)?;
        }
        Ok(())
    }
}
