//! Model-free explore-forward deployment.
//!
//! The agent places relays with the index rule at its current estimate
//! `λ^(k)` and updates the estimate from the realized hop:
//!
//! - general step: `λ ← λ + a_k (γ + ξ_out Q + ξ_relay − λ u)`
//! - running ratio: `λ = Σ(γ_i + ξ_out Q_i + ξ_relay) / Σ u_i`
//! - adaptive: the general step with the multipliers themselves tracked on a
//!   slower timescale towards outage and relay-density targets, projected
//!   onto `[0, A2] × [0, A3]`.

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, PowerSet, ShadowingModel};
use crate::error::{Error, Result};
use crate::explore::{
    explorelim_decide, policy_iteration, Decision, ExploreConfig, HopTable, IndexPolicy, OutageMatrix,
    PolicyIterationOptions, Window,
};

/// Largest grid exponent tried when searching for `A2`.
pub const A2_GRID_MAX_EXPONENT: i32 = 6;
pub const DEFAULT_KAPPA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `scale · k^−exponent`.
    PowerLaw { scale: f64, exponent: f64 },
}

impl StepSchedule {
    pub fn power_law(scale: f64, exponent: f64) -> Self {
        StepSchedule::PowerLaw { scale, exponent }
    }

    pub fn value(&self, k: u64) -> f64 {
        match self {
            StepSchedule::PowerLaw { scale, exponent } => scale * (k as f64).powf(-exponent),
        }
    }

    pub fn exponent(&self) -> f64 {
        match self {
            StepSchedule::PowerLaw { exponent, .. } => *exponent,
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        let StepSchedule::PowerLaw { scale, exponent } = *self;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::config(
                format!("{field}.scale"),
                format!("must be positive, got {scale}"),
            ));
        }
        if !(exponent > 0.5 && exponent <= 1.0) {
            return Err(Error::config(
                format!("{field}.exponent"),
                format!("must lie in (1/2, 1], got {exponent}"),
            ));
        }
        Ok(())
    }
}

/// Upper bounds of the multiplier box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionBox {
    pub a2: f64,
    pub a3: f64,
}

/// Constraint targets: outage per step and relays per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub q_bar: f64,
    pub n_bar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerRule {
    GeneralStep {
        step: StepSchedule,
    },
    RunningRatio,
    Adaptive {
        step: StepSchedule,
        out_step: StepSchedule,
        relay_step: StepSchedule,
        targets: Targets,
        bounds: ProjectionBox,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DeploymentSums {
    pub power_mw: f64,
    pub outage: f64,
    pub distance: u64,
    /// Hop costs with the multipliers in force when each hop was placed.
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    pub rule: LearnerRule,
    pub lambda0: f64,
    pub lambda_hat: f64,
    pub xi_out_hat: f64,
    pub xi_relay_hat: f64,
    /// Relays placed so far.
    pub k: u64,
    pub sums: DeploymentSums,
}

impl LearnerState {
    fn with_rule(rule: LearnerRule, lambda0: f64, xi_out: f64, xi_relay: f64) -> Result<Self> {
        let s = LearnerState {
            rule,
            lambda0,
            lambda_hat: lambda0,
            xi_out_hat: xi_out,
            xi_relay_hat: xi_relay,
            k: 0,
            sums: DeploymentSums::default(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn general(lambda0: f64, xi_out: f64, xi_relay: f64, step: StepSchedule) -> Result<Self> {
        Self::with_rule(LearnerRule::GeneralStep { step }, lambda0, xi_out, xi_relay)
    }

    pub fn ratio(lambda0: f64, xi_out: f64, xi_relay: f64) -> Result<Self> {
        Self::with_rule(LearnerRule::RunningRatio, lambda0, xi_out, xi_relay)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn adaptive(
        lambda0: f64,
        xi_out0: f64,
        xi_relay0: f64,
        step: StepSchedule,
        out_step: StepSchedule,
        relay_step: StepSchedule,
        targets: Targets,
        bounds: ProjectionBox,
    ) -> Result<Self> {
        Self::with_rule(
            LearnerRule::Adaptive {
                step,
                out_step,
                relay_step,
                targets,
                bounds,
            },
            lambda0,
            xi_out0,
            xi_relay0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda0.is_finite() {
            return Err(Error::config("lambda0", "must be finite"));
        }
        for (field, v) in [("xi_out", self.xi_out_hat), ("xi_relay", self.xi_relay_hat)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(field, format!("must be nonnegative, got {v}")));
            }
        }
        match &self.rule {
            LearnerRule::GeneralStep { step } => step.validate("step"),
            LearnerRule::RunningRatio => Ok(()),
            LearnerRule::Adaptive {
                step,
                out_step,
                relay_step,
                targets,
                bounds,
            } => {
                step.validate("step")?;
                out_step.validate("out_step")?;
                relay_step.validate("relay_step")?;
                for (field, slow) in [("out_step", out_step), ("relay_step", relay_step)] {
                    if !(slow.exponent() > step.exponent()) {
                        return Err(Error::config(
                            format!("{field}.exponent"),
                            "slow schedule must decay faster than the lambda schedule (1/2 < n1 < n2 <= 1)",
                        ));
                    }
                }
                if !(targets.q_bar > 0.0) || !(targets.n_bar > 0.0) {
                    return Err(Error::config("targets", "q_bar and n_bar must be positive"));
                }
                if !(bounds.a2 > 0.0)
                    || !(bounds.a3 > 0.0)
                    || !bounds.a2.is_finite()
                    || !bounds.a3.is_finite()
                {
                    return Err(Error::config("bounds", "A2 and A3 must be positive and finite"));
                }
                if self.xi_out_hat > bounds.a2 || self.xi_relay_hat > bounds.a3 {
                    return Err(Error::config(
                        "bounds",
                        "initial multipliers lie outside the projection box",
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.rule {
            LearnerRule::GeneralStep { .. } => "oel-learn",
            LearnerRule::RunningRatio => "oel-ratio",
            LearnerRule::Adaptive { .. } => "oelal",
        }
    }

    pub fn index_policy(&self) -> IndexPolicy {
        IndexPolicy {
            lambda: self.lambda_hat,
            xi_out: self.xi_out_hat,
            xi_relay: self.xi_relay_hat,
        }
    }

    /// Placement for the next relay under the current estimates.
    pub fn decide(&self, measured: &OutageMatrix, powers: &PowerSet, a_skip: u32) -> Result<Decision> {
        explorelim_decide(measured, &self.index_policy(), powers, a_skip)
    }

    /// Applies the update for a realized hop `(u, γ, Q)`.
    pub fn observe(&mut self, u: u32, gamma_mw: f64, q_out: f64) -> Result<()> {
        if u == 0 {
            return Err(Error::domain("placement distance must be at least one step"));
        }
        if !(gamma_mw > 0.0) || !gamma_mw.is_finite() {
            return Err(Error::domain(format!("power must be positive, got {gamma_mw}")));
        }
        if !(0.0..=1.0).contains(&q_out) {
            return Err(Error::domain(format!("outage {q_out} outside [0, 1]")));
        }
        let uf = f64::from(u);
        let cost = gamma_mw + self.xi_out_hat * q_out + self.xi_relay_hat;
        self.k += 1;
        self.sums.power_mw += gamma_mw;
        self.sums.outage += q_out;
        self.sums.distance += u64::from(u);
        self.sums.cost += cost;
        match self.rule {
            LearnerRule::GeneralStep { step } => {
                self.lambda_hat += step.value(self.k) * (cost - self.lambda_hat * uf);
            }
            LearnerRule::RunningRatio => {
                self.lambda_hat = self.sums.cost / self.sums.distance as f64;
            }
            LearnerRule::Adaptive {
                step,
                out_step,
                relay_step,
                targets,
                bounds,
            } => {
                self.lambda_hat += step.value(self.k) * (cost - self.lambda_hat * uf);
                self.xi_out_hat = (self.xi_out_hat + out_step.value(self.k) * (q_out - targets.q_bar * uf))
                    .clamp(0.0, bounds.a2);
                self.xi_relay_hat = (self.xi_relay_hat
                    + relay_step.value(self.k) * (1.0 - targets.n_bar * uf))
                    .clamp(0.0, bounds.a3);
            }
        }
        Ok(())
    }

    /// Decide, then update from the decided hop.
    pub fn step(&mut self, measured: &OutageMatrix, powers: &PowerSet, a_skip: u32) -> Result<Decision> {
        let d = self.decide(measured, powers, a_skip)?;
        self.observe(d.u, d.gamma_mw, d.q_out)?;
        Ok(d)
    }

    /// `d = max(|λ^(0)|, P_M + A2 + A3) + 1` for the adaptive rule.
    pub fn lambda_bound(&self, p_max: f64) -> Option<f64> {
        match self.rule {
            LearnerRule::Adaptive { bounds, .. } => {
                Some(self.lambda0.abs().max(p_max + bounds.a2 + bounds.a3) + 1.0)
            }
            _ => None,
        }
    }
}

fn step_kind(
    state: &LearnerState,
    measured: &OutageMatrix,
    powers: &PowerSet,
    a_skip: u32,
    want: &str,
) -> Result<(Decision, LearnerState)> {
    if state.kind_name() != want {
        return Err(Error::domain(format!(
            "learner is {}, expected {want}",
            state.kind_name()
        )));
    }
    let mut next = *state;
    let d = next.step(measured, powers, a_skip)?;
    Ok((d, next))
}

pub fn oel_learn_step(
    state: &LearnerState,
    measured: &OutageMatrix,
    powers: &PowerSet,
    a_skip: u32,
) -> Result<(Decision, LearnerState)> {
    step_kind(state, measured, powers, a_skip, "oel-learn")
}

pub fn oel_learn_ratio_step(
    state: &LearnerState,
    measured: &OutageMatrix,
    powers: &PowerSet,
    a_skip: u32,
) -> Result<(Decision, LearnerState)> {
    step_kind(state, measured, powers, a_skip, "oel-ratio")
}

pub fn oelal_step(
    state: &LearnerState,
    measured: &OutageMatrix,
    powers: &PowerSet,
    a_skip: u32,
) -> Result<(Decision, LearnerState)> {
    step_kind(state, measured, powers, a_skip, "oelal")
}

/// Probability, under `W`, that `P_M` minimizes `γ + ξ_out Q(u, γ, W)`.
pub fn max_power_probability(
    u: u32,
    xi_out: f64,
    model: &ShadowingModel,
    powers: &PowerSet,
    params: &ChannelParams,
) -> Result<f64> {
    let shadow = model.as_finite()?;
    let table = HopTable::new(u, u, xi_out, shadow, powers, params);
    let top = powers.max();
    Ok((0..shadow.len())
        .filter(|w| powers.levels()[table.arg(u, *w)] == top)
        .map(|w| shadow.probs()[w])
        .sum())
}

/// Chooses `A2` as the smallest value (grid `10^j` refined by bisection in
/// `log10`) such that `P_M` is the preferred power with probability above
/// `1 − κ` at every candidate distance and the optimal policy at
/// `(ξ_out, ξ_relay) = (A2, 0)` meets the outage target; then
/// `A3 = 100 (A+B) (P_M + A2)`.
pub fn select_projection_box(
    model: &ShadowingModel,
    powers: &PowerSet,
    params: &ChannelParams,
    window: Window,
    q_bar: f64,
    n_bar: f64,
    kappa: f64,
) -> Result<ProjectionBox> {
    window.validate()?;
    let shadow = model.as_finite()?;
    if !(q_bar > 0.0) || !(n_bar > 0.0) {
        return Err(Error::config("targets", "q_bar and n_bar must be positive"));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::config("kappa", format!("must lie in (0, 1), got {kappa}")));
    }
    let span = f64::from(window.last());
    if n_bar * span < 1.0 - 1e-12 {
        return Err(Error::Infeasible(format!(
            "relay target {n_bar} per step is below 1/(A+B) = {}",
            1.0 / span
        )));
    }
    if n_bar * span <= 1.0 + 1e-12 {
        // Only "always place at A+B with P_M" meets the relay target.
        let table = HopTable::new(window.last(), window.last(), 0.0, shadow, powers, params);
        let m = powers.len() - 1;
        let mean_q: f64 = (0..shadow.len())
            .map(|w| shadow.probs()[w] * table.q(window.last(), m, w))
            .sum();
        if q_bar < mean_q / span {
            return Err(Error::Infeasible(format!(
                "the outage constraint cannot be satisfied: need at least {} per step, target {q_bar}",
                mean_q / span
            )));
        }
    }

    let meets = |a2: f64| -> Result<bool> {
        for u in window.locations() {
            if max_power_probability(u, a2, model, powers, params)? <= 1.0 - kappa {
                return Ok(false);
            }
        }
        let cfg = ExploreConfig::new(window.a_skip, window.b_window, a2, 0.0)?;
        let pi = policy_iteration(
            &cfg,
            model,
            powers,
            params,
            None,
            PolicyIterationOptions::discretized(),
        )?;
        Ok(pi.evaluation.mean_outage_per_step() <= q_bar)
    };

    for j in 0..=A2_GRID_MAX_EXPONENT {
        if !meets(10f64.powi(j))? {
            continue;
        }
        let mut hi = f64::from(j);
        if j > 0 {
            let mut lo = f64::from(j - 1);
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if meets(10f64.powf(mid))? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        }
        let a2 = 10f64.powf(hi);
        return Ok(ProjectionBox {
            a2,
            a3: 100.0 * span * (powers.max() + a2),
        });
    }
    Err(Error::Infeasible(format!(
        "no A2 up to 1e{A2_GRID_MAX_EXPONENT} meets the power-dominance and outage conditions"
    )))
}
