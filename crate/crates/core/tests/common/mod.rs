//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls the solvers under test; outage values are recomputed
//! from the closed form and policies are enumerated exhaustively.

#![allow(dead_code)]

use rand::Rng;
use relayplace_core::channel::{ChannelParams, FiniteShadowing, PowerSet, ShadowingModel};

/// `1 − exp(−P_min (r δ / r0)^η / (γ c w))`, written out independently.
pub fn outage(r: u32, gamma: f64, w: f64, p: &ChannelParams) -> f64 {
    let dist = f64::from(r) * p.delta / p.r0;
    1.0 - (-(p.p_rcv_min * dist.powf(p.eta)) / (gamma * p.c * w)).exp()
}

/// Hop cost for every power level at `(r, w)`.
pub fn hop_costs(r: u32, w: f64, xi_out: f64, powers: &PowerSet, p: &ChannelParams) -> Vec<f64> {
    powers
        .levels()
        .iter()
        .map(|g| g + xi_out * outage(r, *g, w, p))
        .collect()
}

pub fn min_of(xs: &[f64]) -> f64 {
    xs.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Minimal hop cost at `(r, w)` by scanning every level.
pub fn best_hop(r: u32, w: f64, xi_out: f64, powers: &PowerSet, p: &ChannelParams) -> f64 {
    min_of(&hop_costs(r, w, xi_out, powers, p))
}

/// `E_W` of the minimal hop cost at distance `r`.
pub fn mean_best_hop(r: u32, xi_out: f64, s: &FiniteShadowing, powers: &PowerSet, p: &ChannelParams) -> f64 {
    s.values()
        .iter()
        .zip(s.probs())
        .map(|(w, pw)| pw * best_hop(r, *w, xi_out, powers, p))
        .sum()
}

/// Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|i, j| a[*i][col].abs().total_cmp(&a[*j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(row);
            for (x, y) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *x -= f * y;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Explore-forward: minimum over all stationary deterministic policies
/// `w̄ ↦ (u, γ)` of `(ξ_relay + E[Γ + ξ_out Q]) / E[U]`.
pub fn explore_policy_enumeration(
    a_skip: u32,
    b_window: u32,
    xi_out: f64,
    xi_relay: f64,
    s: &FiniteShadowing,
    powers: &PowerSet,
    p: &ChannelParams,
) -> f64 {
    let nw = s.len();
    let b = b_window as usize;
    let m = powers.len();
    let states: Vec<Vec<usize>> = (0..nw.pow(b_window))
        .map(|mut i| {
            (0..b)
                .map(|_| {
                    let d = i % nw;
                    i /= nw;
                    d
                })
                .collect()
        })
        .collect();
    let n_actions = b * m;
    let n_policies = n_actions.pow(states.len() as u32);
    let mut best = f64::INFINITY;
    for mut code in 0..n_policies {
        let (mut num, mut den) = (xi_relay, 0.0);
        for st in &states {
            let a = code % n_actions;
            code /= n_actions;
            let (ui, g) = (a / m, a % m);
            let u = a_skip + 1 + ui as u32;
            let w = s.values()[st[ui]];
            let prob: f64 = st.iter().map(|x| s.probs()[*x]).product();
            let gamma = powers.levels()[g];
            num += prob * (gamma + xi_out * outage(u, gamma, w, p));
            den += prob * f64::from(u);
        }
        best = best.min(num / den);
    }
    best
}

/// Discounted pure as-you-go values of one stationary policy.
///
/// `action[(r - A - 1) * |W| + w]` is `None` to continue or `Some(g)` to
/// place with level `g`; at `r = A+B` it must be `Some`. Returns
/// `(V(𝟎), [V(A+1), …, V(A+B)])`.
#[allow(clippy::too_many_arguments)]
pub fn ayg_policy_values(
    action: &[Option<usize>],
    a_skip: u32,
    b_window: u32,
    xi_out: f64,
    xi_relay: f64,
    theta: f64,
    s: &FiniteShadowing,
    powers: &PowerSet,
    p: &ChannelParams,
) -> (f64, Vec<f64>) {
    let b = b_window as usize;
    let nw = s.len();
    let big_h = |r: u32| mean_best_hop(r, xi_out, s, powers, p);
    // Unknowns x[0] = V(𝟎), x[1 + i] = V(A+1+i).
    let n = b + 1;
    let mut a = vec![vec![0.0; n]; n];
    let mut rhs = vec![0.0; n];
    a[0][0] = 1.0;
    a[0][1] = -(1.0 - theta).powi(a_skip as i32 + 1);
    rhs[0] = (1..=a_skip + 1)
        .map(|k| (1.0 - theta).powi(k as i32 - 1) * theta * big_h(k))
        .sum();
    for i in 0..b {
        let r = a_skip + 1 + i as u32;
        let row = 1 + i;
        a[row][row] = 1.0;
        for (wi, (w, pw)) in s.values().iter().zip(s.probs()).enumerate() {
            match action[i * nw + wi] {
                Some(g) => {
                    let gamma = powers.levels()[g];
                    rhs[row] += pw * (gamma + xi_out * outage(r, gamma, *w, p) + xi_relay);
                    a[row][0] -= pw;
                }
                None => {
                    assert!(i + 1 < b, "must place at the end of the window");
                    rhs[row] += pw * theta * big_h(r + 1);
                    a[row][row + 1] -= pw * (1.0 - theta);
                }
            }
        }
    }
    let x = solve_linear(a, rhs);
    (x[0], x[1..].to_vec())
}

/// Componentwise minimum of the values of every stationary policy.
#[allow(clippy::too_many_arguments)]
pub fn ayg_policy_enumeration(
    a_skip: u32,
    b_window: u32,
    xi_out: f64,
    xi_relay: f64,
    theta: f64,
    s: &FiniteShadowing,
    powers: &PowerSet,
    p: &ChannelParams,
) -> (f64, Vec<f64>) {
    let b = b_window as usize;
    let nw = s.len();
    let m = powers.len();
    let cells = b * nw;
    let choices: Vec<usize> = (0..cells)
        .map(|c| if c / nw + 1 == b { m } else { m + 1 })
        .collect();
    let total: usize = choices.iter().product();
    let mut best0 = f64::INFINITY;
    let mut best = vec![f64::INFINITY; b];
    let mut action = vec![None; cells];
    for mut code in 0..total {
        for c in 0..cells {
            let k = code % choices[c];
            code /= choices[c];
            action[c] = if k < m { Some(k) } else { None };
        }
        let (v0, v) = ayg_policy_values(&action, a_skip, b_window, xi_out, xi_relay, theta, s, powers, p);
        best0 = best0.min(v0);
        for i in 0..b {
            best[i] = best[i].min(v[i]);
        }
    }
    (best0, best)
}

/// Average cost per step of pure as-you-go deployment without discounting:
/// the root of `g_{A+1}(λ) = 0`, where `g` is the optimal-stopping value of
/// `hop cost − λ·distance` over one placement cycle.
pub fn ayg_renewal_root(
    a_skip: u32,
    b_window: u32,
    xi_out: f64,
    xi_relay: f64,
    s: &FiniteShadowing,
    powers: &PowerSet,
    p: &ChannelParams,
) -> f64 {
    let last = a_skip + b_window;
    let cycle = |lambda: f64| -> f64 {
        let mut g = mean_best_hop(last, xi_out, s, powers, p) + xi_relay - lambda * f64::from(last);
        for r in (a_skip + 1..last).rev() {
            g = s
                .values()
                .iter()
                .zip(s.probs())
                .map(|(w, pw)| {
                    pw * (best_hop(r, *w, xi_out, powers, p) + xi_relay - lambda * f64::from(r)).min(g)
                })
                .sum();
        }
        g
    };
    let (mut lo, mut hi) = (0.0, powers.max() + xi_out + xi_relay + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cycle(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Random finite alphabet with `n` atoms.
pub fn random_shadowing<R: Rng>(rng: &mut R, n: usize) -> FiniteShadowing {
    let values: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-1.5..1.5))).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
    let head: f64 = probs[..n - 1].iter().sum();
    probs[n - 1] = 1.0 - head;
    FiniteShadowing::new(values, probs).unwrap()
}

/// Random ascending power set with `m` levels between -20 and 5 dBm.
pub fn random_powers<R: Rng>(rng: &mut R, m: usize) -> PowerSet {
    let mut dbm: Vec<f64> = (0..m).map(|_| rng.random_range(-20.0..5.0)).collect();
    dbm.sort_by(f64::total_cmp);
    PowerSet::from_dbm(&dbm).unwrap()
}

/// Reference channel with a random path-loss exponent in `[3.5, 5.5]`.
pub fn random_params<R: Rng>(rng: &mut R) -> ChannelParams {
    ChannelParams {
        eta: rng.random_range(3.5..5.5),
        ..ChannelParams::default()
    }
}

pub fn finite(s: FiniteShadowing) -> ShadowingModel {
    ShadowingModel::Finite(s)
}
