//! Explore-forward deployment: the index rule, renewal-reward policy
//! evaluation (reduced and brute force), policy iteration, and the
//! ratio heuristic.
//!
//! After a placement the agent skips `A` steps, measures the `B` candidate
//! locations `A+1..=A+B` at every power level, and places the next relay at
//!
//! ```text
//! argmin_{u,γ} γ + ξ_out Q(u,γ,w_u) + ξ_relay − λ u
//! ```
//!
//! Ties go to the smallest `u`, then the smallest `γ`.

use serde::{Deserialize, Serialize};

use crate::channel::{outage_from_constant, ChannelParams, FiniteShadowing, PowerSet, ShadowingModel};
use crate::error::{Error, Result};

/// Largest `|W|^B` the brute-force evaluator will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

/// Skip and measurement window after each placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub a_skip: u32,
    pub b_window: u32,
}

impl Window {
    pub fn new(a_skip: u32, b_window: u32) -> Result<Self> {
        let w = Window { a_skip, b_window };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b_window == 0 {
            return Err(Error::domain(
                "window must contain at least one location (B >= 1)",
            ));
        }
        if self.a_skip.checked_add(self.b_window).is_none() {
            return Err(Error::domain("A + B overflows"));
        }
        Ok(())
    }

    pub fn first(&self) -> u32 {
        self.a_skip + 1
    }

    pub fn last(&self) -> u32 {
        self.a_skip + self.b_window
    }

    pub fn locations(&self) -> std::ops::RangeInclusive<u32> {
        self.first()..=self.last()
    }

    pub fn contains(&self, r: u32) -> bool {
        self.locations().contains(&r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExploreConfig {
    pub a_skip: u32,
    pub b_window: u32,
    /// mW per unit outage probability.
    pub xi_out: f64,
    /// mW per relay.
    pub xi_relay: f64,
}

impl ExploreConfig {
    pub fn new(a_skip: u32, b_window: u32, xi_out: f64, xi_relay: f64) -> Result<Self> {
        let cfg = ExploreConfig {
            a_skip,
            b_window,
            xi_out,
            xi_relay,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.window().validate()?;
        validate_multipliers(self.xi_out, self.xi_relay)
    }

    pub fn window(&self) -> Window {
        Window {
            a_skip: self.a_skip,
            b_window: self.b_window,
        }
    }
}

pub(crate) fn validate_multipliers(xi_out: f64, xi_relay: f64) -> Result<()> {
    if !(xi_out >= 0.0) || !xi_out.is_finite() {
        return Err(Error::domain(format!("xi_out must be nonnegative, got {xi_out}")));
    }
    if !(xi_relay >= 0.0) || !xi_relay.is_finite() {
        return Err(Error::domain(format!(
            "xi_relay must be nonnegative, got {xi_relay}"
        )));
    }
    Ok(())
}

/// The index rule with average cost `lambda` per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexPolicy {
    pub lambda: f64,
    pub xi_out: f64,
    pub xi_relay: f64,
}

/// Measured outage probabilities, one row per candidate location
/// `A+1..=A+B`, one column per power level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct OutageMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl OutageMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if r == 0 || c == 0 {
            return Err(Error::domain("outage matrix is empty"));
        }
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::domain("outage matrix rows differ in length"));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if let Some(q) = data.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return Err(Error::domain(format!("outage reading {q} outside [0, 1]")));
        }
        Ok(OutageMatrix {
            rows: r,
            cols: c,
            data,
        })
    }

    pub(crate) fn zeros(rows: usize, cols: usize) -> Self {
        OutageMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    fn check(&self, window: Window, powers: &PowerSet) -> Result<()> {
        if self.rows != window.b_window as usize || self.cols != powers.len() {
            return Err(Error::domain(format!(
                "outage matrix is {}x{}, expected {}x{}",
                self.rows,
                self.cols,
                window.b_window,
                powers.len()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for OutageMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        OutageMatrix::from_rows(rows)
    }
}

impl From<OutageMatrix> for Vec<Vec<f64>> {
    fn from(m: OutageMatrix) -> Self {
        m.to_rows()
    }
}

/// A placement choice: distance `u`, power level and the outage measured for it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub u: u32,
    pub power_index: usize,
    pub gamma_mw: f64,
    pub q_out: f64,
}

/// `min_γ γ + ξ_out q(γ)` and the index of the smallest minimizing level.
#[inline]
pub fn min_hop_cost(levels: &[f64], outages: &[f64], xi_out: f64) -> (f64, usize) {
    let mut best = levels[0] + xi_out * outages[0];
    let mut arg = 0;
    for j in 1..levels.len() {
        let c = levels[j] + xi_out * outages[j];
        if c < best {
            best = c;
            arg = j;
        }
    }
    (best, arg)
}

/// Index value compared across locations; `ξ_relay` is common to all and left out.
#[inline]
pub(crate) fn index_key(hop: f64, lambda: f64, u: u32) -> f64 {
    hop - lambda * f64::from(u)
}

pub fn explorelim_decide(
    measured: &OutageMatrix,
    policy: &IndexPolicy,
    powers: &PowerSet,
    a_skip: u32,
) -> Result<Decision> {
    let window = Window::new(a_skip, measured.rows() as u32)?;
    measured.check(window, powers)?;
    Ok(decide_by(measured, powers, a_skip, policy.xi_out, |h, u| {
        index_key(h, policy.lambda, u)
    }))
}

/// Ratio heuristic: `argmin_{u,γ} (γ + ξ_out Q + ξ_relay) / u`.
pub fn heu_explorelim_decide(
    measured: &OutageMatrix,
    xi_out: f64,
    xi_relay: f64,
    powers: &PowerSet,
    a_skip: u32,
) -> Result<Decision> {
    let window = Window::new(a_skip, measured.rows() as u32)?;
    measured.check(window, powers)?;
    Ok(decide_by(measured, powers, a_skip, xi_out, |h, u| {
        (h + xi_relay) / f64::from(u)
    }))
}

fn decide_by(
    measured: &OutageMatrix,
    powers: &PowerSet,
    a_skip: u32,
    xi_out: f64,
    key: impl Fn(f64, u32) -> f64,
) -> Decision {
    let levels = powers.levels();
    let mut best_key = f64::INFINITY;
    let mut best = (0usize, 0usize);
    for i in 0..measured.rows() {
        let u = a_skip + 1 + i as u32;
        let (h, g) = min_hop_cost(levels, measured.row(i), xi_out);
        let k = key(h, u);
        if i == 0 || k < best_key {
            best_key = k;
            best = (i, g);
        }
    }
    let (i, g) = best;
    Decision {
        u: a_skip + 1 + i as u32,
        power_index: g,
        gamma_mw: levels[g],
        q_out: measured.get(i, g),
    }
}

/// Outage and per-location minimal hop cost on a finite alphabet, for
/// locations `first..=last`.
#[derive(Debug, Clone)]
pub(crate) struct HopTable {
    pub first: u32,
    pub m: usize,
    pub nw: usize,
    /// `q[(r_idx * m + g) * nw + w]`
    pub q: Vec<f64>,
    /// `h[r_idx * nw + w]`
    pub h: Vec<f64>,
    pub arg: Vec<usize>,
}

impl HopTable {
    pub fn new(
        first: u32,
        last: u32,
        xi_out: f64,
        shadow: &FiniteShadowing,
        powers: &PowerSet,
        params: &ChannelParams,
    ) -> Self {
        let n_r = (last - first + 1) as usize;
        let m = powers.len();
        let nw = shadow.len();
        let levels = powers.levels();
        let mut q = vec![0.0; n_r * m * nw];
        let mut h = vec![0.0; n_r * nw];
        let mut arg = vec![0; n_r * nw];
        let mut col = vec![0.0; m];
        for ri in 0..n_r {
            let k = params.link_constant(first + ri as u32);
            for (wi, &w) in shadow.values().iter().enumerate() {
                for (g, &gamma) in levels.iter().enumerate() {
                    let v = outage_from_constant(k, gamma, w);
                    q[(ri * m + g) * nw + wi] = v;
                    col[g] = v;
                }
                let (c, a) = min_hop_cost(levels, &col, xi_out);
                h[ri * nw + wi] = c;
                arg[ri * nw + wi] = a;
            }
        }
        HopTable {
            first,
            m,
            nw,
            q,
            h,
            arg,
        }
    }

    #[inline]
    pub fn q(&self, r: u32, g: usize, w: usize) -> f64 {
        self.q[(((r - self.first) as usize) * self.m + g) * self.nw + w]
    }

    #[inline]
    pub fn h(&self, r: u32, w: usize) -> f64 {
        self.h[((r - self.first) as usize) * self.nw + w]
    }

    #[inline]
    pub fn arg(&self, r: u32, w: usize) -> usize {
        self.arg[((r - self.first) as usize) * self.nw + w]
    }

    /// `E_W h(r, W)`.
    pub fn mean_h(&self, r: u32, probs: &[f64]) -> f64 {
        (0..self.nw).map(|w| probs[w] * self.h(r, w)).sum()
    }
}

/// Probability that the index rule picks `(u, γ)` with shadowing atom `w` at `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub a_skip: u32,
    pub b_window: u32,
    pub power_levels: usize,
    pub atoms: usize,
    /// Dense table, index `((u - A - 1) * M + γ) * |W| + w`.
    pub b: Vec<f64>,
}

impl ActionDistribution {
    pub fn get(&self, u: u32, power_index: usize, atom: usize) -> f64 {
        let ui = (u - self.a_skip - 1) as usize;
        self.b[(ui * self.power_levels + power_index) * self.atoms + atom]
    }

    pub fn total_mass(&self) -> f64 {
        self.b.iter().sum()
    }

    /// Marginal probability of each placement distance `A+1..=A+B`.
    pub fn distance_marginal(&self) -> Vec<f64> {
        self.b
            .chunks(self.power_levels * self.atoms)
            .map(|c| c.iter().sum())
            .collect()
    }
}

/// Renewal-reward evaluation of the index rule at a given `λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub lambda_in: f64,
    /// `(ξ_relay + E[Γ + ξ_out Q]) / E[U]`.
    pub lambda_next: f64,
    pub mean_power_per_link_mw: f64,
    pub mean_outage_per_link: f64,
    pub mean_distance_steps: f64,
    pub distribution: ActionDistribution,
}

impl PolicyEvaluation {
    pub fn mean_outage_per_step(&self) -> f64 {
        self.mean_outage_per_link / self.mean_distance_steps
    }
}

fn finite_inputs<'a>(
    cfg: &ExploreConfig,
    model: &'a ShadowingModel,
    powers: &PowerSet,
    params: &ChannelParams,
) -> Result<&'a FiniteShadowing> {
    cfg.validate()?;
    params.validate()?;
    if powers.is_empty() {
        return Err(Error::domain("power set is empty"));
    }
    model.as_finite()
}

/// Evaluates the index rule at `lambda_k` in `O(B^2 M |W| log |W|)` using
/// per-location order statistics of the index values.
pub fn policy_eval_reduced(
    lambda_k: f64,
    cfg: &ExploreConfig,
    model: &ShadowingModel,
    powers: &PowerSet,
    params: &ChannelParams,
) -> Result<PolicyEvaluation> {
    let shadow = finite_inputs(cfg, model, powers, params)?;
    let window = cfg.window();
    let table = HopTable::new(window.first(), window.last(), cfg.xi_out, shadow, powers, params);
    Ok(eval_reduced_with(lambda_k, cfg, shadow, powers, &table))
}

pub(crate) fn eval_reduced_with(
    lambda: f64,
    cfg: &ExploreConfig,
    shadow: &FiniteShadowing,
    powers: &PowerSet,
    table: &HopTable,
) -> PolicyEvaluation {
    let window = cfg.window();
    let b = window.b_window as usize;
    let m = powers.len();
    let nw = shadow.len();
    let probs = shadow.probs();

    // Per location: index values sorted ascending, with tail masses.
    let mut sorted: Vec<Vec<f64>> = Vec::with_capacity(b);
    let mut tails: Vec<Vec<f64>> = Vec::with_capacity(b);
    for u in window.locations() {
        let mut pairs: Vec<(f64, f64)> = (0..nw)
            .map(|w| (index_key(table.h(u, w), lambda, u), probs[w]))
            .collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut tail = vec![0.0; nw + 1];
        for j in (0..nw).rev() {
            tail[j] = tail[j + 1] + pairs[j].1;
        }
        sorted.push(pairs.iter().map(|p| p.0).collect());
        tails.push(tail);
    }
    let prob_greater = |ri: usize, v: f64| tails[ri][sorted[ri].partition_point(|k| *k <= v)];
    let prob_at_least = |ri: usize, v: f64| tails[ri][sorted[ri].partition_point(|k| *k < v)];

    let mut dist = vec![0.0; b * m * nw];
    let (mut power, mut outage, mut distance) = (0.0, 0.0, 0.0);
    for (ui, u) in window.locations().enumerate() {
        for w in 0..nw {
            let v = index_key(table.h(u, w), lambda, u);
            let mut p = probs[w];
            for ri in 0..b {
                if p == 0.0 {
                    break;
                }
                if ri < ui {
                    p *= prob_greater(ri, v);
                } else if ri > ui {
                    p *= prob_at_least(ri, v);
                }
            }
            let g = table.arg(u, w);
            dist[(ui * m + g) * nw + w] = p;
            power += p * powers.levels()[g];
            outage += p * table.q(u, g, w);
            distance += p * f64::from(u);
        }
    }
    PolicyEvaluation {
        lambda_in: lambda,
        lambda_next: (cfg.xi_relay + power + cfg.xi_out * outage) / distance,
        mean_power_per_link_mw: power,
        mean_outage_per_link: outage,
        mean_distance_steps: distance,
        distribution: ActionDistribution {
            a_skip: cfg.a_skip,
            b_window: cfg.b_window,
            power_levels: m,
            atoms: nw,
            b: dist,
        },
    }
}

/// Direct enumeration over all `|W|^B` shadowing states.
pub fn policy_eval_bruteforce(
    lambda_k: f64,
    cfg: &ExploreConfig,
    model: &ShadowingModel,
    powers: &PowerSet,
    params: &ChannelParams,
) -> Result<PolicyEvaluation> {
    let shadow = finite_inputs(cfg, model, powers, params)?;
    let window = cfg.window();
    let b = window.b_window as usize;
    let m = powers.len();
    let nw = shadow.len();
    let states = (nw as u128).checked_pow(window.b_window).unwrap_or(u128::MAX);
    if states > u128::from(BRUTE_FORCE_LIMIT) {
        return Err(Error::StateSpaceTooLarge {
            states,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let table = HopTable::new(window.first(), window.last(), cfg.xi_out, shadow, powers, params);
    let policy = IndexPolicy {
        lambda: lambda_k,
        xi_out: cfg.xi_out,
        xi_relay: cfg.xi_relay,
    };
    let mut dist = vec![0.0; b * m * nw];
    let (mut power, mut outage, mut distance) = (0.0, 0.0, 0.0);
    let mut state = vec![0usize; b];
    let mut matrix = OutageMatrix::zeros(b, m);
    for _ in 0..states {
        let mut g_prob = 1.0;
        for (ui, &w) in state.iter().enumerate() {
            g_prob *= shadow.probs()[w];
            let u = window.first() + ui as u32;
            for (g, q) in matrix.row_mut(ui).iter_mut().enumerate() {
                *q = table.q(u, g, w);
            }
        }
        let d = explorelim_decide(&matrix, &policy, powers, cfg.a_skip)?;
        let ui = (d.u - window.first()) as usize;
        dist[(ui * m + d.power_index) * nw + state[ui]] += g_prob;
        power += g_prob * d.gamma_mw;
        outage += g_prob * d.q_out;
        distance += g_prob * f64::from(d.u);
        // Mixed-radix increment.
        for digit in state.iter_mut() {
            *digit += 1;
            if *digit < nw {
                break;
            }
            *digit = 0;
        }
    }
    Ok(PolicyEvaluation {
        lambda_in: lambda_k,
        lambda_next: (cfg.xi_relay + power + cfg.xi_out * outage) / distance,
        mean_power_per_link_mw: power,
        mean_outage_per_link: outage,
        mean_distance_steps: distance,
        distribution: ActionDistribution {
            a_skip: cfg.a_skip,
            b_window: cfg.b_window,
            power_levels: m,
            atoms: nw,
            b: dist,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyIterationOptions {
    pub max_iters: usize,
    /// Stop when successive `λ` agree to this relative tolerance.
    pub rel_tol: f64,
    /// Additional absolute stopping tolerance, for discretized continuous models.
    pub abs_tol: Option<f64>,
}

impl Default for PolicyIterationOptions {
    fn default() -> Self {
        PolicyIterationOptions {
            max_iters: 200,
            rel_tol: 1e-12,
            abs_tol: None,
        }
    }
}

impl PolicyIterationOptions {
    /// Defaults plus the `1e-9` absolute stop used for discretized log-normal alphabets.
    pub fn discretized() -> Self {
        PolicyIterationOptions {
            abs_tol: Some(1e-9),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyIterationResult {
    pub lambda_star: f64,
    pub policy: IndexPolicy,
    pub iterations: usize,
    /// `λ_0, λ_1, ...` up to and including `λ*`.
    pub history: Vec<f64>,
    /// Evaluation of the last improved policy.
    pub evaluation: PolicyEvaluation,
}

/// `(P_1 + ξ_relay) / (A + B)`.
pub fn default_lambda0(cfg: &ExploreConfig, powers: &PowerSet) -> f64 {
    (powers.min() + cfg.xi_relay) / f64::from(cfg.a_skip + cfg.b_window)
}

pub fn policy_iteration(
    cfg: &ExploreConfig,
    model: &ShadowingModel,
    powers: &PowerSet,
    params: &ChannelParams,
    lambda0: Option<f64>,
    opts: PolicyIterationOptions,
) -> Result<PolicyIterationResult> {
    let shadow = finite_inputs(cfg, model, powers, params)?;
    let window = cfg.window();
    let table = HopTable::new(window.first(), window.last(), cfg.xi_out, shadow, powers, params);
    let mut lambda = lambda0.unwrap_or_else(|| default_lambda0(cfg, powers));
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!(
            "initial lambda must be nonnegative, got {lambda}"
        )));
    }
    let mut history = vec![lambda];
    for it in 1..=opts.max_iters {
        let ev = eval_reduced_with(lambda, cfg, shadow, powers, &table);
        let next = ev.lambda_next;
        history.push(next);
        let diff = (next - lambda).abs();
        let done =
            diff <= opts.rel_tol * lambda.abs().max(next.abs()) || opts.abs_tol.is_some_and(|t| diff < t);
        if done {
            return Ok(PolicyIterationResult {
                lambda_star: next,
                policy: IndexPolicy {
                    lambda: next,
                    xi_out: cfg.xi_out,
                    xi_relay: cfg.xi_relay,
                },
                iterations: it,
                history,
                evaluation: ev,
            });
        }
        lambda = next;
    }
    let n = history.len();
    Err(Error::NonConvergence {
        iterations: opts.max_iters,
        previous: history[n - 2],
        last: history[n - 1],
    })
}

/// `f(λ) = E min_{u,γ}(γ + ξ_out Q + ξ_relay − λ u)`; zero exactly at `λ*`.
pub fn optimality_residual(
    lambda: f64,
    cfg: &ExploreConfig,
    model: &ShadowingModel,
    powers: &PowerSet,
    params: &ChannelParams,
) -> Result<f64> {
    let ev = policy_eval_reduced(lambda, cfg, model, powers, params)?;
    Ok(
        cfg.xi_relay + ev.mean_power_per_link_mw + cfg.xi_out * ev.mean_outage_per_link
            - lambda * ev.mean_distance_steps,
    )
}
