//! Monte-Carlo deployments along a semi-infinite line.
//!
//! Each placement round draws fresh i.i.d. shadowing for the `B` candidate
//! locations and asks the policy for a decision; sequential policies see one
//! location at a time. Per-step metrics are ratios of sums over placed links.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    mw_to_dbm, outage_from_constant, sample_shadowing, ChannelParams, PowerSet, ShadowingModel,
};
use crate::error::{Error, Result};
use crate::explore::{Decision, OutageMatrix, Window};
use crate::learning::LearnerState;
use crate::policy::{Mode, PolicyHandle, PolicyKind};

/// Column order of trace CSV files.
pub const TRACE_HEADER: [&str; 7] = [
    "k",
    "u_steps",
    "gamma_dbm",
    "q_out",
    "lambda_hat",
    "xi_out_hat",
    "xi_relay_hat",
];

/// Everything about the line and the radio that a deployment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub window: Window,
    /// Multipliers used to score hop costs in summaries.
    pub xi_out: f64,
    pub xi_relay: f64,
    pub powers: PowerSet,
    pub params: ChannelParams,
    pub shadowing: ShadowingModel,
}

/// Generator for run `run_index` of an ensemble seeded with `seed`.
pub fn run_rng(seed: u64, run_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(run_index))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeploymentRecord {
    /// 1-based relay index.
    pub k: u64,
    pub u_steps: u32,
    pub gamma_mw: f64,
    pub q_out: f64,
    /// Locations measured in the round that placed this relay.
    pub measured_locations: u32,
    pub lambda_hat: Option<f64>,
    pub xi_out_hat: Option<f64>,
    pub xi_relay_hat: Option<f64>,
}

impl DeploymentRecord {
    fn new(k: u64, d: &Decision, measured: u32, learner: Option<&LearnerState>) -> Self {
        DeploymentRecord {
            k,
            u_steps: d.u,
            gamma_mw: d.gamma_mw,
            q_out: d.q_out,
            measured_locations: measured,
            lambda_hat: learner.map(|s| s.lambda_hat),
            xi_out_hat: learner.map(|s| s.xi_out_hat),
            xi_relay_hat: learner.map(|s| s.xi_relay_hat),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentTrace {
    pub seed: u64,
    pub policy: PolicyKind,
    pub mode: Mode,
    pub xi_out: f64,
    pub xi_relay: f64,
    pub records: Vec<DeploymentRecord>,
}

/// Round driver with reusable buffers.
struct Deployer<'a> {
    scenario: &'a Scenario,
    levels: Vec<f64>,
    /// Link constants for `A+1..=A+B`.
    k_u: Vec<f64>,
    shadow: Vec<f64>,
    matrix: OutageMatrix,
    readings: Vec<Vec<f64>>,
}

impl<'a> Deployer<'a> {
    fn new(scenario: &'a Scenario, handle: &PolicyHandle) -> Result<Self> {
        scenario.window.validate()?;
        scenario.params.validate()?;
        if handle.window != scenario.window {
            return Err(Error::domain("policy window differs from the scenario window"));
        }
        let levels = handle.measurement_levels(&scenario.powers);
        let b = scenario.window.b_window as usize;
        Ok(Deployer {
            scenario,
            k_u: scenario
                .window
                .locations()
                .map(|u| scenario.params.link_constant(u))
                .collect(),
            shadow: vec![0.0; b],
            matrix: OutageMatrix::zeros(b, levels.len()),
            readings: Vec::with_capacity(b),
            levels,
        })
    }

    /// One placement round; returns the decision and the locations measured.
    fn round(&mut self, handle: &PolicyHandle, rng: &mut ChaCha8Rng) -> Result<(Decision, u32)> {
        for w in self.shadow.iter_mut() {
            *w = sample_shadowing(&self.scenario.shadowing, rng);
        }
        match handle.mode() {
            Mode::Window => {
                for i in 0..self.k_u.len() {
                    let (k, w) = (self.k_u[i], self.shadow[i]);
                    for (q, g) in self.matrix.row_mut(i).iter_mut().zip(&self.levels) {
                        *q = outage_from_constant(k, *g, w);
                    }
                }
                let d = handle.decide_window(&self.matrix, &self.scenario.powers)?;
                Ok((d, self.scenario.window.b_window))
            }
            Mode::Sequential => {
                self.readings.clear();
                for i in 0..self.k_u.len() {
                    let (k, w) = (self.k_u[i], self.shadow[i]);
                    self.readings.push(
                        self.levels
                            .iter()
                            .map(|g| outage_from_constant(k, *g, w))
                            .collect(),
                    );
                    if let Some(d) = handle.decide_sequential(&self.readings, &self.scenario.powers)? {
                        return Ok((d, i as u32 + 1));
                    }
                }
                Err(Error::domain(
                    "sequential policy did not place at the end of the window",
                ))
            }
        }
    }
}

fn drive(
    handle: &mut PolicyHandle,
    n_relays: usize,
    rng: &mut ChaCha8Rng,
    scenario: &Scenario,
    mut sink: impl FnMut(DeploymentRecord),
) -> Result<()> {
    let mut deployer = Deployer::new(scenario, handle)?;
    for k in 1..=n_relays as u64 {
        let (d, measured) = deployer.round(handle, rng)?;
        handle.observe(d.u, d.gamma_mw, d.q_out)?;
        sink(DeploymentRecord::new(k, &d, measured, handle.learner_state()));
    }
    Ok(())
}

/// Deploys `n_relays` relays with `handle`; learner handles are updated in place.
pub fn run_deployment(
    handle: &mut PolicyHandle,
    n_relays: usize,
    seed: u64,
    scenario: &Scenario,
) -> Result<DeploymentTrace> {
    run_deployment_indexed(handle, n_relays, seed, 0, scenario)
}

/// As [`run_deployment`] for run `run_index` of an ensemble.
pub fn run_deployment_indexed(
    handle: &mut PolicyHandle,
    n_relays: usize,
    seed: u64,
    run_index: u64,
    scenario: &Scenario,
) -> Result<DeploymentTrace> {
    if n_relays == 0 {
        return Err(Error::domain("need at least one relay"));
    }
    let mut rng = run_rng(seed, run_index);
    let mut records = Vec::with_capacity(n_relays);
    drive(handle, n_relays, &mut rng, scenario, |r| records.push(r))?;
    Ok(DeploymentTrace {
        seed: seed.wrapping_add(run_index),
        policy: handle.kind(),
        mode: handle.mode(),
        xi_out: scenario.xi_out,
        xi_relay: scenario.xi_relay,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub links: u64,
    pub mean_cost_per_step: Estimate,
    pub mean_power_per_link_mw: Estimate,
    pub mean_outage_per_link: Estimate,
    pub mean_outage_per_step: Estimate,
    pub mean_distance_steps: Estimate,
    pub relays_per_step: Estimate,
    pub measurements_per_step: Estimate,
}

fn mean_estimate(xs: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let se = if xs.len() > 1 {
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Estimate { value: mean, se }
}

/// `Σ x / Σ u` with a delta-method standard error.
fn ratio_estimate(xs: &[f64], us: &[f64]) -> Estimate {
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let su: f64 = us.iter().sum();
    let r = sx / su;
    let se = if xs.len() > 1 {
        let ss: f64 = xs.iter().zip(us).map(|(x, u)| (x - r * u).powi(2)).sum();
        (ss * n / (n - 1.0)).sqrt() / su
    } else {
        0.0
    };
    Estimate { value: r, se }
}

/// Pools the links of all traces; each trace is scored with its own multipliers.
pub fn summarize(traces: &[DeploymentTrace]) -> Result<MetricsSummary> {
    let n: usize = traces.iter().map(|t| t.records.len()).sum();
    if n == 0 {
        return Err(Error::domain("cannot summarize an empty trace"));
    }
    let mut cost = Vec::with_capacity(n);
    let mut power = Vec::with_capacity(n);
    let mut outage = Vec::with_capacity(n);
    let mut dist = Vec::with_capacity(n);
    let mut ones = Vec::with_capacity(n);
    let mut meas = Vec::with_capacity(n);
    for t in traces {
        for r in &t.records {
            cost.push(r.gamma_mw + t.xi_out * r.q_out + t.xi_relay);
            power.push(r.gamma_mw);
            outage.push(r.q_out);
            dist.push(f64::from(r.u_steps));
            ones.push(1.0);
            meas.push(f64::from(r.measured_locations));
        }
    }
    Ok(MetricsSummary {
        links: n as u64,
        mean_cost_per_step: ratio_estimate(&cost, &dist),
        mean_power_per_link_mw: mean_estimate(&power),
        mean_outage_per_link: mean_estimate(&outage),
        mean_outage_per_step: ratio_estimate(&outage, &dist),
        mean_distance_steps: mean_estimate(&dist),
        relays_per_step: ratio_estimate(&ones, &dist),
        measurements_per_step: ratio_estimate(&meas, &dist),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace_csv<W: Write>(records: &[DeploymentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            r.k.to_string(),
            r.u_steps.to_string(),
            mw_to_dbm(r.gamma_mw)?.to_string(),
            r.q_out.to_string(),
            fmt_opt(r.lambda_hat),
            fmt_opt(r.xi_out_hat),
            fmt_opt(r.xi_relay_hat),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a trace CSV; `measured_locations` is not part of the format and reads as 0.
pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<DeploymentRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != TRACE_HEADER {
        return Err(Error::domain(format!("unexpected trace header {header:?}")));
    }
    let parse = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::domain(format!("bad {what} value `{s}`")))
    };
    let opt = |s: &str, what: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            parse(s, what).map(Some)
        }
    };
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        out.push(DeploymentRecord {
            k: row[0]
                .parse()
                .map_err(|_| Error::domain(format!("bad k `{}`", &row[0])))?,
            u_steps: row[1]
                .parse()
                .map_err(|_| Error::domain(format!("bad u_steps `{}`", &row[1])))?,
            gamma_mw: crate::channel::dbm_to_mw(parse(&row[2], "gamma_dbm")?),
            q_out: parse(&row[3], "q_out")?,
            measured_locations: 0,
            lambda_hat: opt(&row[4], "lambda_hat")?,
            xi_out_hat: opt(&row[5], "xi_out_hat")?,
            xi_relay_hat: opt(&row[6], "xi_relay_hat")?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub k: u64,
    pub lambda_hat_mean: f64,
    pub lambda_hat_se: f64,
    pub xi_out_hat_mean: f64,
    pub xi_out_hat_se: f64,
    pub xi_relay_hat_mean: f64,
    pub xi_relay_hat_se: f64,
    /// `E Σγ / E Σu` over the first `k` links.
    pub power_per_step_mw: f64,
    /// `E ΣQ / E Σu`.
    pub outage_per_step: f64,
    /// `E Σu / k`.
    pub mean_distance_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub n_runs: usize,
    pub seed: u64,
    pub rows: Vec<CurveRow>,
}

pub const CURVE_HEADER: [&str; 10] = [
    "k",
    "lambda_hat_mean",
    "lambda_hat_se",
    "xi_out_hat_mean",
    "xi_out_hat_se",
    "xi_relay_hat_mean",
    "xi_relay_hat_se",
    "power_per_step_mw",
    "outage_per_step",
    "mean_distance_steps",
];

impl ConvergenceCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CURVE_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                r.lambda_hat_mean.to_string(),
                r.lambda_hat_se.to_string(),
                r.xi_out_hat_mean.to_string(),
                r.xi_out_hat_se.to_string(),
                r.xi_relay_hat_mean.to_string(),
                r.xi_relay_hat_se.to_string(),
                r.power_per_step_mw.to_string(),
                r.outage_per_step.to_string(),
                r.mean_distance_steps.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn row(&self, k: u64) -> Option<&CurveRow> {
        self.rows.get((k as usize).checked_sub(1)?)
    }
}

/// Per-k sums over a group of runs.
#[derive(Clone)]
struct CurveAcc {
    runs: u64,
    /// Nine interleaved sums per k: λ, λ², ξo, ξo², ξr, ξr², Σγ, ΣQ, Σu.
    s: Vec<f64>,
}

const ACC_WIDTH: usize = 9;
const CURVE_CHUNKS: usize = 64;

impl CurveAcc {
    fn new(n_relays: usize) -> Self {
        CurveAcc {
            runs: 0,
            s: vec![0.0; n_relays * ACC_WIDTH],
        }
    }

    fn merge(mut self, other: CurveAcc) -> CurveAcc {
        self.runs += other.runs;
        for (a, b) in self.s.iter_mut().zip(other.s) {
            *a += b;
        }
        self
    }
}

/// Fixed-shape pairwise reduction so sums do not depend on thread scheduling.
fn pairwise<T>(mut items: Vec<T>, merge: impl Fn(T, T) -> T) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => merge(a, b),
                None => a,
            });
        }
        items = next;
    }
    items.pop()
}

/// Ensemble learning curve: runs `n_runs` independent deployments of
/// `n_relays` relays from `initial` and averages per relay index.
pub fn convergence_curve(
    initial: &LearnerState,
    n_runs: usize,
    n_relays: usize,
    seed: u64,
    scenario: &Scenario,
) -> Result<ConvergenceCurve> {
    if n_runs == 0 || n_relays == 0 {
        return Err(Error::domain("need at least one run and one relay"));
    }
    initial.validate()?;
    let template = PolicyHandle::learner(scenario.window, *initial);
    Deployer::new(scenario, &template)?;
    let chunks = n_runs.min(CURVE_CHUNKS);
    let accs: Vec<CurveAcc> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<CurveAcc> {
            let mut acc = CurveAcc::new(n_relays);
            for run in (c * n_runs / chunks)..((c + 1) * n_runs / chunks) {
                let mut handle = template.clone();
                let mut rng = run_rng(seed, run as u64);
                let (mut sg, mut sq, mut su) = (0.0, 0.0, 0.0);
                let mut i = 0;
                drive(&mut handle, n_relays, &mut rng, scenario, |r| {
                    sg += r.gamma_mw;
                    sq += r.q_out;
                    su += f64::from(r.u_steps);
                    let (l, xo, xr) = (
                        r.lambda_hat.unwrap_or(f64::NAN),
                        r.xi_out_hat.unwrap_or(f64::NAN),
                        r.xi_relay_hat.unwrap_or(f64::NAN),
                    );
                    let s = &mut acc.s[i * ACC_WIDTH..(i + 1) * ACC_WIDTH];
                    s[0] += l;
                    s[1] += l * l;
                    s[2] += xo;
                    s[3] += xo * xo;
                    s[4] += xr;
                    s[5] += xr * xr;
                    s[6] += sg;
                    s[7] += sq;
                    s[8] += su;
                    i += 1;
                })?;
                acc.runs += 1;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let total = pairwise(accs, CurveAcc::merge).expect("at least one chunk");
    let n = total.runs as f64;
    let stat = |sum: f64, sq: f64| -> (f64, f64) {
        let mean = sum / n;
        let se = if total.runs > 1 {
            ((sq - n * mean * mean).max(0.0) / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        (mean, se)
    };
    let rows = total
        .s
        .chunks(ACC_WIDTH)
        .enumerate()
        .map(|(i, s)| {
            let (lm, ls) = stat(s[0], s[1]);
            let (om, os) = stat(s[2], s[3]);
            let (rm, rs) = stat(s[4], s[5]);
            CurveRow {
                k: i as u64 + 1,
                lambda_hat_mean: lm,
                lambda_hat_se: ls,
                xi_out_hat_mean: om,
                xi_out_hat_se: os,
                xi_relay_hat_mean: rm,
                xi_relay_hat_se: rs,
                power_per_step_mw: s[6] / s[8],
                outage_per_step: s[7] / s[8],
                mean_distance_steps: s[8] / n / (i as f64 + 1.0),
            }
        })
        .collect();
    Ok(ConvergenceCurve { n_runs, seed, rows })
}
