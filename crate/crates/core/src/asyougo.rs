//! Pure as-you-go deployment: the agent walks forward only and decides at
//! each location `r` whether to place a relay.
//!
//! The line ends after each step with probability `θ`. With
//! `h(r,w) = min_γ γ + ξ_out Q(r,γ,w)` and `H(r) = E_W h(r,W)`, the value
//! function reduces to `V(r) = E_W J(r,W)` on `r ∈ {A+1..A+B}` and `V(𝟎)`:
//!
//! ```text
//! J(r,w)   = min{ h(r,w) + ξ_relay + V(𝟎),  θ H(r+1) + (1−θ) V(r+1) }   r < A+B
//! J(A+B,w) = h(A+B,w) + ξ_relay + V(𝟎)
//! V(𝟎)     = Σ_{k=1..A+1} (1−θ)^{k−1} θ H(k) + (1−θ)^{A+1} V(A+1)
//! ```
//!
//! The optimal policy places at `r` iff `h(r,w) ≤ c_th(r)`.

use serde::{Deserialize, Serialize};

use crate::channel::{outage_probability, ChannelParams, FiniteShadowing, PowerSet, ShadowingModel};
use crate::error::{Error, Result};
use crate::explore::{min_hop_cost, validate_multipliers, ExploreConfig, HopTable, Window};

/// Sup-norm stopping tolerance for value iteration, mW.
pub const VALUE_ITERATION_TOL: f64 = 1e-10;
pub const VALUE_ITERATION_MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsYouGoConfig {
    pub a_skip: u32,
    pub b_window: u32,
    pub xi_out: f64,
    pub xi_relay: f64,
    /// Probability that the line ends at any given step.
    pub theta: f64,
}

impl AsYouGoConfig {
    pub fn new(a_skip: u32, b_window: u32, xi_out: f64, xi_relay: f64, theta: f64) -> Result<Self> {
        let cfg = AsYouGoConfig {
            a_skip,
            b_window,
            xi_out,
            xi_relay,
            theta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_explore(cfg: &ExploreConfig, theta: f64) -> Result<Self> {
        Self::new(cfg.a_skip, cfg.b_window, cfg.xi_out, cfg.xi_relay, theta)
    }

    pub fn validate(&self) -> Result<()> {
        self.window().validate()?;
        validate_multipliers(self.xi_out, self.xi_relay)?;
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::domain(format!(
                "theta must lie in (0, 1), got {}",
                self.theta
            )));
        }
        Ok(())
    }

    pub fn window(&self) -> Window {
        Window {
            a_skip: self.a_skip,
            b_window: self.b_window,
        }
    }
}

/// `(min_γ γ + ξ_out Q(r,γ,w), argmin γ)` with ties to the smallest power.
pub fn hop_cost_min(
    r_steps: u32,
    w: f64,
    xi_out: f64,
    powers: &PowerSet,
    params: &ChannelParams,
) -> Result<(f64, f64)> {
    if powers.is_empty() {
        return Err(Error::domain("power set is empty"));
    }
    let outages = powers
        .levels()
        .iter()
        .map(|g| outage_probability(r_steps, *g, w, params))
        .collect::<Result<Vec<_>>>()?;
    let (c, g) = min_hop_cost(powers.levels(), &outages, xi_out);
    Ok((c, powers.levels()[g]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEntry {
    pub r: u32,
    /// `V(r)`, mW.
    pub v: f64,
    /// `V(r) − V(𝟎)`, kept separately because `V` grows like `1/θ`.
    pub v_minus_v0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub theta: f64,
    pub units: String,
    /// `V(𝟎)`, mW.
    pub v0: f64,
    pub entries: Vec<ValueEntry>,
}

impl ValueTable {
    fn from_relative(theta: f64, v0: f64, first: u32, rel: &[f64]) -> Self {
        ValueTable {
            theta,
            units: "mW".into(),
            v0,
            entries: rel
                .iter()
                .enumerate()
                .map(|(i, d)| ValueEntry {
                    r: first + i as u32,
                    v: v0 + d,
                    v_minus_v0: *d,
                })
                .collect(),
        }
    }

    fn from_absolute(theta: f64, v0: f64, first: u32, v: &[f64]) -> Self {
        ValueTable {
            theta,
            units: "mW".into(),
            v0,
            entries: v
                .iter()
                .enumerate()
                .map(|(i, x)| ValueEntry {
                    r: first + i as u32,
                    v: *x,
                    v_minus_v0: x - v0,
                })
                .collect(),
        }
    }

    pub fn v(&self, r: u32) -> Option<f64> {
        self.entries.iter().find(|e| e.r == r).map(|e| e.v)
    }

    /// `θ V(𝟎)`, the discounted estimate of the average cost per step.
    pub fn scaled_v0(&self) -> f64 {
        self.theta * self.v0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub r: u32,
    /// mW.
    pub c_th: f64,
}

/// Place at `r < A+B` iff the minimal hop cost is at most `c_th(r)`; always place at `A+B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub a_skip: u32,
    pub b_window: u32,
    pub xi_out: f64,
    pub xi_relay: f64,
    pub theta: f64,
    pub units: String,
    pub thresholds: Vec<ThresholdEntry>,
}

impl ThresholdPolicy {
    pub fn window(&self) -> Window {
        Window {
            a_skip: self.a_skip,
            b_window: self.b_window,
        }
    }

    pub fn threshold(&self, r: u32) -> Option<f64> {
        self.thresholds.iter().find(|e| e.r == r).map(|e| e.c_th)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum AygAction {
    Continue,
    Place {
        power_index: usize,
        gamma_mw: f64,
        hop_cost: f64,
    },
}

/// Threshold decision from the outages measured at `r` (one per power level).
pub fn optasyougo_decide(
    r_steps: u32,
    measured: &[f64],
    policy: &ThresholdPolicy,
    powers: &PowerSet,
) -> Result<AygAction> {
    let window = policy.window();
    if !window.contains(r_steps) {
        return Err(Error::domain(format!(
            "location {r_steps} outside the window {}..={}",
            window.first(),
            window.last()
        )));
    }
    if measured.len() != powers.len() {
        return Err(Error::domain(format!(
            "expected {} outage readings, got {}",
            powers.len(),
            measured.len()
        )));
    }
    if let Some(q) = measured.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::domain(format!("outage reading {q} outside [0, 1]")));
    }
    let (cost, g) = min_hop_cost(powers.levels(), measured, policy.xi_out);
    let place = r_steps == window.last() || policy.threshold(r_steps).is_some_and(|c_th| cost <= c_th);
    Ok(if place {
        AygAction::Place {
            power_index: g,
            gamma_mw: powers.levels()[g],
            hop_cost: cost,
        }
    } else {
        AygAction::Continue
    })
}

/// Precomputed hop costs for `r = 1..=A+B`.
struct Chain<'a> {
    cfg: AsYouGoConfig,
    shadow: &'a FiniteShadowing,
    table: HopTable,
    /// `H(r)` indexed by `r - 1`.
    mean_h: Vec<f64>,
}

impl<'a> Chain<'a> {
    fn new(
        cfg: &AsYouGoConfig,
        model: &'a ShadowingModel,
        powers: &PowerSet,
        params: &ChannelParams,
    ) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        let shadow = model.as_finite()?;
        let last = cfg.a_skip + cfg.b_window;
        let table = HopTable::new(1, last, cfg.xi_out, shadow, powers, params);
        let mean_h = (1..=last).map(|r| table.mean_h(r, shadow.probs())).collect();
        Ok(Chain {
            cfg: *cfg,
            shadow,
            table,
            mean_h,
        })
    }

    fn big_h(&self, r: u32) -> f64 {
        self.mean_h[(r - 1) as usize]
    }

    /// `Σ_{k=1..A+1} (1−θ)^{k−1} θ H(k)`.
    fn skip_cost(&self) -> f64 {
        let th = self.cfg.theta;
        (1..=self.cfg.a_skip + 1)
            .map(|k| (1.0 - th).powi(k as i32 - 1) * th * self.big_h(k))
            .sum()
    }

    /// `(1−θ)^{A+1}` and its complement, accurate for tiny `θ`.
    fn survival(&self) -> (f64, f64) {
        let log_q = f64::from(self.cfg.a_skip + 1) * (-self.cfg.theta).ln_1p();
        (log_q.exp(), -log_q.exp_m1())
    }

    /// `E_W min(h(r,W) + ξ_relay + place_extra, cont)` and the probability of continuing.
    fn expected_min(&self, r: u32, place_extra: f64, cont: f64) -> (f64, f64) {
        let probs = self.shadow.probs();
        let mut value = 0.0;
        let mut p_cont = 0.0;
        for (w, pw) in probs.iter().enumerate() {
            let place = self.table.h(r, w) + self.cfg.xi_relay + place_extra;
            if place <= cont {
                value += pw * place;
            } else {
                value += pw * cont;
                p_cont += pw;
            }
        }
        (value, p_cont)
    }
}

/// Value iteration on the reduced recursion, Jacobi sweeps from `V ≡ 0`.
pub fn value_iteration(
    cfg: &AsYouGoConfig,
    model: &ShadowingModel,
    powers: &PowerSet,
    params: &ChannelParams,
    tol: f64,
) -> Result<ValueTable> {
    value_iteration_observed(cfg, model, powers, params, tol, |_| {})
}

/// As [`value_iteration`], calling `observe` with every iterate (starting at zero).
pub fn value_iteration_observed(
    cfg: &AsYouGoConfig,
    model: &ShadowingModel,
    powers: &PowerSet,
    params: &ChannelParams,
    tol: f64,
    mut observe: impl FnMut(&ValueTable),
) -> Result<ValueTable> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }
    let chain = Chain::new(cfg, model, powers, params)?;
    let th = cfg.theta;
    let first = cfg.a_skip + 1;
    let last = cfg.a_skip + cfg.b_window;
    let b = cfg.b_window as usize;
    let (q, _) = chain.survival();
    let skip = chain.skip_cost();

    let mut v = vec![0.0; b];
    let mut v0 = 0.0;
    let mut next = vec![0.0; b];
    observe(&ValueTable::from_absolute(th, v0, first, &v));
    let mut last_change = f64::INFINITY;
    for _ in 0..VALUE_ITERATION_MAX_SWEEPS {
        for (i, r) in (first..=last).enumerate() {
            next[i] = if r == last {
                chain.big_h(r) + cfg.xi_relay + v0
            } else {
                let cont = th * chain.big_h(r + 1) + (1.0 - th) * v[i + 1];
                chain.expected_min(r, v0, cont).0
            };
        }
        let next0 = skip + q * v[0];
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold((next0 - v0).abs(), f64::max);
        std::mem::swap(&mut v, &mut next);
        v0 = next0;
        observe(&ValueTable::from_absolute(th, v0, first, &v));
        last_change = change;
        if change < tol {
            return Ok(ValueTable::from_absolute(th, v0, first, &v));
        }
    }
    Err(Error::NonConvergence {
        iterations: VALUE_ITERATION_MAX_SWEEPS,
        previous: v0 - last_change,
        last: v0,
    })
}

/// Solves the same fixed point through the regeneration structure.
///
/// With `D(r) = V(r) − V(𝟎)` and `y = θ V(𝟎)`, the window recursion for `D`
/// depends on `V(𝟎)` only through `y`, and `y = Φ(y)` for a nonincreasing `Φ`.
/// The scalar root is found by safeguarded Newton steps; this stays accurate
/// for `θ` far below what plain value iteration can reach.
pub fn solve_discounted(
    cfg: &AsYouGoConfig,
    model: &ShadowingModel,
    powers: &PowerSet,
    params: &ChannelParams,
) -> Result<ValueTable> {
    let chain = Chain::new(cfg, model, powers, params)?;
    let th = cfg.theta;
    let first = cfg.a_skip + 1;
    let last = cfg.a_skip + cfg.b_window;
    let b = cfg.b_window as usize;
    let (q, one_minus_q) = chain.survival();
    let skip = chain.skip_cost();

    // Returns ψ(y) = y − Φ(y), ψ'(y), and D.
    let eval = |y: f64, d: &mut [f64]| -> (f64, f64) {
        d[b - 1] = chain.big_h(last) + cfg.xi_relay;
        let mut dd = 0.0;
        for i in (0..b - 1).rev() {
            let r = first + i as u32;
            let cont = th * chain.big_h(r + 1) + (1.0 - th) * d[i + 1] - y;
            let (value, p_cont) = chain.expected_min(r, 0.0, cont);
            d[i] = value;
            dd = p_cont * ((1.0 - th) * dd - 1.0);
        }
        let phi = th * (skip + q * d[0]) / one_minus_q;
        let dphi = th * q * dd / one_minus_q;
        (y - phi, 1.0 - dphi)
    };

    let mut d = vec![0.0; b];
    let mut lo = 0.0;
    let (psi0, _) = eval(lo, &mut d);
    if psi0 == 0.0 {
        return Ok(ValueTable::from_relative(th, 0.0, first, &d));
    }
    let mut hi = (-psi0).max(1.0);
    while eval(hi, &mut d).0 < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::domain("regenerative fixed point diverged"));
        }
    }
    let mut y = hi;
    for _ in 0..200 {
        let (psi, dpsi) = eval(y, &mut d);
        if psi == 0.0 {
            break;
        }
        if psi > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let mut cand = y - psi / dpsi;
        if !(cand > lo && cand < hi) {
            cand = 0.5 * (lo + hi);
        }
        if (cand - y).abs() <= 1e-15 * y.abs().max(1e-300) || hi - lo <= 4.0 * f64::EPSILON * hi {
            y = cand;
            break;
        }
        y = cand;
    }
    eval(y, &mut d);
    Ok(ValueTable::from_relative(th, y / th, first, &d))
}

/// `c_th(r) = θ H(r+1) + (1−θ) V(r+1) − ξ_relay − V(𝟎)` for `r = A+1..A+B−1`.
pub fn extract_thresholds(
    vt: &ValueTable,
    cfg: &AsYouGoConfig,
    model: &ShadowingModel,
    powers: &PowerSet,
    params: &ChannelParams,
) -> Result<ThresholdPolicy> {
    let chain = Chain::new(cfg, model, powers, params)?;
    let th = cfg.theta;
    if vt.entries.len() != cfg.b_window as usize {
        return Err(Error::domain("value table does not match the window"));
    }
    let first = cfg.a_skip + 1;
    let thresholds = (0..cfg.b_window as usize - 1)
        .map(|i| {
            let r = first + i as u32;
            ThresholdEntry {
                r,
                c_th: th * chain.big_h(r + 1) + (1.0 - th) * vt.entries[i + 1].v_minus_v0
                    - th * vt.v0
                    - cfg.xi_relay,
            }
        })
        .collect();
    Ok(ThresholdPolicy {
        a_skip: cfg.a_skip,
        b_window: cfg.b_window,
        xi_out: cfg.xi_out,
        xi_relay: cfg.xi_relay,
        theta: th,
        units: "mW".into(),
        thresholds,
    })
}

/// `θ_j = 10^-2 · 2^-j`, `j = 0..=20`.
pub fn default_theta_schedule() -> Vec<f64> {
    (0..=20).map(|j| 1e-2 * 0.5f64.powi(j)).collect()
}

pub const DEFAULT_LIMIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageCostLimit {
    /// `θ V_θ(𝟎)` at the accepted `θ`, mW per step.
    pub lambda: f64,
    /// Estimate at the previous schedule value.
    pub previous: f64,
    pub theta: f64,
    pub policy: ThresholdPolicy,
    pub values: ValueTable,
}

/// Average cost per step of pure as-you-go deployment as `θ → 0`.
pub fn average_cost_limit(
    cfg: &ExploreConfig,
    model: &ShadowingModel,
    powers: &PowerSet,
    params: &ChannelParams,
    theta_schedule: &[f64],
    tol: f64,
) -> Result<AverageCostLimit> {
    if theta_schedule.len() < 2 {
        return Err(Error::domain("theta schedule needs at least two values"));
    }
    if theta_schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::domain("theta schedule must be strictly decreasing"));
    }
    let mut previous: Option<f64> = None;
    let mut last = f64::NAN;
    for &theta in theta_schedule {
        let acfg = AsYouGoConfig::from_explore(cfg, theta)?;
        let vt = solve_discounted(&acfg, model, powers, params)?;
        let est = vt.scaled_v0();
        if let Some(prev) = previous {
            if (est - prev).abs() <= tol * est.abs() {
                let policy = extract_thresholds(&vt, &acfg, model, powers, params)?;
                return Ok(AverageCostLimit {
                    lambda: est,
                    previous: prev,
                    theta,
                    policy,
                    values: vt,
                });
            }
        }
        previous = Some(est);
        last = est;
    }
    let n = theta_schedule.len();
    let acfg = AsYouGoConfig::from_explore(cfg, theta_schedule[n - 2])?;
    let prev = solve_discounted(&acfg, model, powers, params)?.scaled_v0();
    Err(Error::NonConvergence {
        iterations: n,
        previous: prev,
        last,
    })
}

/// Fixed-power, fixed-target heuristic: place at the last location before the
/// target outage is first violated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuAsYouGo {
    pub fixed_power_mw: f64,
    pub target_outage: f64,
    pub a_skip: u32,
    pub b_window: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum HeuStep {
    Continue,
    Place { u: u32, q_out: f64 },
}

impl HeuAsYouGo {
    pub fn new(fixed_power_mw: f64, target_outage: f64, a_skip: u32, b_window: u32) -> Result<Self> {
        let h = HeuAsYouGo {
            fixed_power_mw,
            target_outage,
            a_skip,
            b_window,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        self.window().validate()?;
        if !(self.fixed_power_mw > 0.0) || !self.fixed_power_mw.is_finite() {
            return Err(Error::domain(format!(
                "fixed power must be positive, got {}",
                self.fixed_power_mw
            )));
        }
        if !(self.target_outage > 0.0 && self.target_outage < 1.0) {
            return Err(Error::domain(format!(
                "target outage must lie in (0, 1), got {}",
                self.target_outage
            )));
        }
        Ok(())
    }

    pub fn window(&self) -> Window {
        Window {
            a_skip: self.a_skip,
            b_window: self.b_window,
        }
    }

    /// `readings[i]` is the outage at the fixed power at location `A+1+i`;
    /// the last entry is the current location.
    pub fn decide(&self, readings: &[f64]) -> Result<HeuStep> {
        let n = readings.len();
        if n == 0 || n > self.b_window as usize {
            return Err(Error::domain(format!(
                "expected between 1 and {} readings, got {n}",
                self.b_window
            )));
        }
        let r = self.a_skip + n as u32;
        let current = readings[n - 1];
        Ok(if current > self.target_outage {
            if n == 1 {
                HeuStep::Place { u: r, q_out: current }
            } else {
                HeuStep::Place {
                    u: r - 1,
                    q_out: readings[n - 2],
                }
            }
        } else if r == self.a_skip + self.b_window {
            HeuStep::Place { u: r, q_out: current }
        } else {
            HeuStep::Continue
        })
    }
}

/// Runs `n_placements` rounds; `source(r)` yields the outage at location `r`
/// of the current round at the fixed power.
pub fn heu_asyougo_session(
    heu: &HeuAsYouGo,
    n_placements: usize,
    mut source: impl FnMut(u32) -> f64,
) -> Result<Vec<HeuStep>> {
    heu.validate()?;
    let mut placements = Vec::with_capacity(n_placements);
    let mut readings = Vec::with_capacity(heu.b_window as usize);
    for _ in 0..n_placements {
        readings.clear();
        for r in heu.window().locations() {
            readings.push(source(r));
            if let step @ HeuStep::Place { .. } = heu.decide(&readings)? {
                placements.push(step);
                break;
            }
        }
    }
    Ok(placements)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heu() -> HeuAsYouGo {
        HeuAsYouGo::new(1.0, 0.1, 0, 5).unwrap()
    }

    #[test]
    fn heu_scripted_rules() {
        assert_eq!(heu().decide(&[0.2]).unwrap(), HeuStep::Place { u: 1, q_out: 0.2 });
        assert_eq!(
            heu().decide(&[0.05, 0.08, 0.3]).unwrap(),
            HeuStep::Place { u: 2, q_out: 0.08 }
        );
        assert_eq!(
            heu().decide(&[0.01; 5]).unwrap(),
            HeuStep::Place { u: 5, q_out: 0.01 }
        );
        assert_eq!(heu().decide(&[0.01; 3]).unwrap(), HeuStep::Continue);
    }

    #[test]
    fn decide_rejects_out_of_window() {
        let p = ThresholdPolicy {
            a_skip: 1,
            b_window: 2,
            xi_out: 1.0,
            xi_relay: 1.0,
            theta: 0.1,
            units: "mW".into(),
            thresholds: vec![ThresholdEntry { r: 2, c_th: 0.0 }],
        };
        let s = PowerSet::new(vec![1.0]).unwrap();
        assert!(optasyougo_decide(1, &[0.0], &p, &s).is_err());
        assert!(optasyougo_decide(4, &[0.0], &p, &s).is_err());
        assert_eq!(optasyougo_decide(2, &[0.0], &p, &s).unwrap(), AygAction::Continue);
        assert!(matches!(
            optasyougo_decide(3, &[0.9], &p, &s).unwrap(),
            AygAction::Place { .. }
        ));
    }

    #[test]
    fn schedule_shape() {
        let s = default_theta_schedule();
        assert_eq!(s.len(), 21);
        assert_eq!(s[0], 1e-2);
    }
}
