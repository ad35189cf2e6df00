//! `relayplace` command line.
//!
//! Data goes to stdout (JSON or CSV); diagnostics and errors go to stderr.
//! Exit codes: 0 ok, 2 configuration, 3 no convergence, 4 infeasible.

pub mod config;
pub mod error;

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use relayplace_core::asyougo::HeuAsYouGo;
use relayplace_core::channel::ChannelConfig;
use relayplace_core::policy::{
    calibrate_heu_asyougo, HeuCalibration, PolicyHandle, PolicyKind, PolicySpec, PowerCalibration, Solved,
};
use relayplace_core::simulator::{
    convergence_curve, run_deployment_indexed, summarize, write_trace_csv, MetricsSummary, Scenario,
};
use relayplace_service::SessionStore;
use serde::Serialize;
use serde_json::json;
use toml::{Table, Value};

use config::{ChannelFlags, FileConfig, PolicyFlags};
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "relayplace",
    version,
    about = "Relay placement along a line: solve, simulate, learn, serve"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for a policy and print it with its average cost per step (JSON).
    Solve(SolveArgs),
    /// Simulate all four non-learning algorithms over a grid of relay costs (CSV).
    Sweep(SweepArgs),
    /// Simulate deployments with one policy and print summary metrics (JSON).
    Simulate(SimulateArgs),
    /// Ensemble learning curve for a learner (CSV).
    LearnCurve(LearnArgs),
    /// Run the deployment-assistant HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum CalibrationArg {
    /// Mean power of the optimal as-you-go policy, unsnapped.
    #[default]
    Exact,
    /// Nearest available power level.
    Snap,
}

impl From<CalibrationArg> for PowerCalibration {
    fn from(c: CalibrationArg) -> Self {
        match c {
            CalibrationArg::Exact => PowerCalibration::Exact,
            CalibrationArg::Snap => PowerCalibration::SnapNearest,
        }
    }
}

/// Channel and cost-model flags shared by every modelling command.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub xi_out: Option<f64>,
    #[arg(long)]
    pub xi_relay: Option<f64>,
    #[arg(long)]
    pub a_skip: Option<u32>,
    #[arg(long)]
    pub b_window: Option<u32>,
    /// Path-loss exponent.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Log-normal shadowing standard deviation (dB).
    #[arg(long)]
    pub sigma_db: Option<f64>,
    /// Atoms used to discretize shadowing for the solvers.
    #[arg(long)]
    pub points: Option<usize>,
}

impl ModelArgs {
    fn channel_flags(&self) -> ChannelFlags {
        ChannelFlags {
            eta: self.eta,
            sigma_db: self.sigma_db,
            points: self.points,
        }
    }
}

/// Which policy to run and its policy-specific knobs.
#[derive(Debug, Clone, Default, Args)]
pub struct PolicyArgs {
    #[arg(long, value_parser = parse_kind)]
    pub policy: Option<PolicyKind>,
    /// Discount schedule for opt-ayg, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub theta_schedule: Option<Vec<f64>>,
    #[arg(long)]
    pub lambda0: Option<f64>,
    /// heu-ayg fixed power; calibrated from opt-ayg when absent.
    #[arg(long)]
    pub fixed_power_dbm: Option<f64>,
    #[arg(long)]
    pub target_outage: Option<f64>,
    #[arg(long, value_enum, default_value_t)]
    pub calibration: CalibrationArg,
}

fn parse_kind(s: &str) -> std::result::Result<PolicyKind, String> {
    s.parse().map_err(|e: relayplace_core::Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Seed for the simulation that calibrates heu-ayg.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relays simulated for heu-ayg calibration.
    #[arg(long, default_value_t = 100_000)]
    pub calibration_relays: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: u64,
    /// Relays per run [default: 100000].
    #[arg(long)]
    pub relays: Option<usize>,
    /// Independent runs, seeded `seed + i` [default: 1].
    #[arg(long)]
    pub runs: Option<usize>,
    /// Write the first run's trace CSV here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated relay costs; empty gives a header-only CSV.
    #[arg(long, allow_hyphen_values = true)]
    pub xi_relay_grid: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: u64,
    /// Relays simulated per algorithm and grid point [default: 100000].
    #[arg(long)]
    pub relays: Option<usize>,
    #[arg(long, value_enum, default_value_t)]
    pub calibration: CalibrationArg,
}

#[derive(Debug, Clone, Args)]
pub struct LearnArgs {
    #[arg(long, value_parser = parse_kind)]
    pub learner: PolicyKind,
    /// Config file overriding the built-in protocol.
    #[arg(long, alias = "config")]
    pub protocol_file: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub relays: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    /// Use the full-scale run counts instead of the desk-scale ones.
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long)]
    pub lambda0: Option<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Session directory; falls back to $RELAYPLACE_DATA_DIR, then memory only.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

pub const SWEEP_HEADER: [&str; 10] = [
    "xi_relay",
    "xi_out",
    "algorithm",
    "lambda_star",
    "mean_cost_per_step",
    "mean_cost_per_step_se",
    "mean_power_per_link_mw",
    "mean_outage_per_link",
    "mean_distance_steps",
    "relays_per_step",
];

const DEFAULT_RELAYS: usize = 100_000;

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Solve(a) => solve(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::LearnCurve(a) => learn_curve(a, out),
        Command::Serve(a) => serve(a),
    }
}

fn policy_flags(p: &PolicyArgs, m: &ModelArgs) -> PolicyFlags {
    PolicyFlags {
        kind: p.policy,
        a_skip: m.a_skip,
        b_window: m.b_window,
        xi_out: m.xi_out,
        xi_relay: m.xi_relay,
        theta_schedule: p.theta_schedule.clone(),
        lambda0: p.lambda0,
        fixed_power_dbm: p.fixed_power_dbm,
        target_outage: p.target_outage,
    }
}

fn scenario(spec: &PolicySpec, channel: &ChannelConfig) -> Result<Scenario> {
    Ok(Scenario {
        window: spec.window(),
        xi_out: spec.xi_out,
        xi_relay: spec.xi_relay,
        powers: channel.powers()?,
        params: channel.params(),
        shadowing: channel.shadowing_model()?,
    })
}

fn solve_spec(spec: &PolicySpec, channel: &ChannelConfig) -> Result<Solved> {
    spec.solve(channel).map_err(|e| match e {
        relayplace_core::Error::Config { field, message } => {
            CliError::config(format!("policy.{field}"), message)
        }
        e => CliError::Core(e),
    })
}

/// Simulates `runs` deployments of `relays` relays seeded `seed + i`.
fn simulate_handle(
    handle: &PolicyHandle,
    sc: &Scenario,
    relays: usize,
    runs: usize,
    seed: u64,
) -> Result<(MetricsSummary, Vec<relayplace_core::simulator::DeploymentRecord>)> {
    if runs == 0 {
        return Err(CliError::config("runs", "must be at least 1"));
    }
    if relays == 0 {
        return Err(CliError::config("relays", "must be at least 1"));
    }
    let mut traces = Vec::with_capacity(runs);
    for i in 0..runs as u64 {
        let mut h = handle.clone();
        traces.push(run_deployment_indexed(&mut h, relays, seed, i, sc)?);
    }
    let first = traces[0].records.clone();
    Ok((summarize(&traces)?, first))
}

/// heu-ayg fixed power and outage target from a simulated opt-ayg deployment.
fn calibrate(
    spec: &PolicySpec,
    channel: &ChannelConfig,
    relays: usize,
    seed: u64,
    rule: PowerCalibration,
) -> Result<(PolicyHandle, HeuCalibration)> {
    let mut opt = spec.clone();
    opt.kind = PolicyKind::OptAyg;
    let solved = solve_spec(&opt, channel)?;
    let sc = scenario(spec, channel)?;
    let (stats, _) = simulate_handle(&solved.handle, &sc, relays, 1, seed)?;
    let cal = calibrate_heu_asyougo(&stats, &sc.powers, rule)?;
    let heu = HeuAsYouGo::new(cal.fixed_power_mw, cal.target_outage, spec.a_skip, spec.b_window)?;
    let mut handle = PolicyHandle::heu_ayg(heu)?;
    handle.calibration = Some(cal);
    Ok((handle, cal))
}

fn needs_calibration(spec: &PolicySpec) -> bool {
    spec.kind == PolicyKind::HeuAyg && spec.fixed_power_dbm.is_none() && spec.target_outage.is_none()
}

/// Builds the handle, calibrating heu-ayg from opt-ayg when its power is not given.
fn build(
    spec: &PolicySpec,
    channel: &ChannelConfig,
    calibration: Option<(usize, u64, PowerCalibration)>,
) -> Result<Solved> {
    if needs_calibration(spec) {
        let Some((relays, seed, rule)) = calibration else {
            return Err(CliError::config(
                "policy.fixed_power_dbm",
                "heu-ayg needs --fixed-power-dbm and --target-outage, or --seed to calibrate them",
            ));
        };
        let (handle, _) = calibrate(spec, channel, relays, seed, rule)?;
        return Ok(Solved {
            handle,
            lambda_star: None,
            iterations: None,
            theta: None,
        });
    }
    solve_spec(spec, channel)
}

fn write_json(out: &mut dyn Write, v: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, v).map_err(|e| CliError::Io(e.into()))?;
    writeln!(out)?;
    Ok(())
}

fn solve(a: SolveArgs, out: &mut dyn Write) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let channel = config::channel(&file, a.model.channel_flags())?;
    let spec = config::policy_spec(&Table::new(), &file, &policy_flags(&a.policy, &a.model))?;
    let cal = a
        .seed
        .map(|s| (a.calibration_relays, s, a.policy.calibration.into()));
    let solved = build(&spec, &channel, cal)?;
    write_json(
        out,
        &json!({
            "policy": spec.kind,
            "lambda_star": solved.lambda_star,
            "iterations": solved.iterations,
            "theta": solved.theta,
            "channel": channel,
            "spec": spec,
            "handle": solved.handle,
        }),
    )
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let channel = config::channel(&file, a.model.channel_flags())?;
    let spec = config::policy_spec(&Table::new(), &file, &policy_flags(&a.policy, &a.model))?;
    let relays = a.relays.or(file.run.relays).unwrap_or(DEFAULT_RELAYS);
    let runs = a.runs.or(file.run.runs).unwrap_or(1);
    let solved = build(
        &spec,
        &channel,
        Some((relays, a.seed, a.policy.calibration.into())),
    )?;
    let sc = scenario(&spec, &channel)?;
    let (summary, first) = simulate_handle(&solved.handle, &sc, relays, runs, a.seed)?;
    if let Some(path) = &a.trace {
        let f = std::fs::File::create(path)?;
        write_trace_csv(&first, std::io::BufWriter::new(f))?;
    }
    write_json(
        out,
        &json!({
            "policy": spec.kind,
            "seed": a.seed,
            "runs": runs,
            "relays": relays,
            "lambda_star": solved.lambda_star,
            "calibration": solved.handle.calibration,
            "summary": summary,
        }),
    )
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::config("xi_relay_grid", format!("`{t}` is not a number")))
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn sweep(a: SweepArgs, out: &mut dyn Write) -> Result<()> {
    let grid = parse_grid(&a.xi_relay_grid)?;
    let file = FileConfig::load(a.config.as_deref())?;
    let channel = config::channel(&file, a.model.channel_flags())?;
    let relays = a.relays.or(file.run.relays).unwrap_or(DEFAULT_RELAYS);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)
        .map_err(relayplace_core::Error::from)?;
    for xr in grid {
        let mut flags = policy_flags(&PolicyArgs::default(), &a.model);
        flags.kind = Some(PolicyKind::OptAyg);
        flags.xi_relay = Some(xr);
        let mut base = config::policy_spec(&Table::new(), &file, &flags)?;
        base.fixed_power_dbm = None;
        base.target_outage = None;
        for kind in [
            PolicyKind::OptAyg,
            PolicyKind::HeuAyg,
            PolicyKind::OptEl,
            PolicyKind::HeuEl,
        ] {
            let spec = PolicySpec { kind, ..base.clone() };
            let solved = build(&spec, &channel, Some((relays, a.seed, a.calibration.into())))?;
            let sc = scenario(&spec, &channel)?;
            let (m, _) = simulate_handle(&solved.handle, &sc, relays, 1, a.seed)?;
            w.write_record([
                xr.to_string(),
                spec.xi_out.to_string(),
                kind.name().to_owned(),
                fmt_opt(solved.lambda_star),
                m.mean_cost_per_step.value.to_string(),
                m.mean_cost_per_step.se.to_string(),
                m.mean_power_per_link_mw.value.to_string(),
                m.mean_outage_per_link.value.to_string(),
                m.mean_distance_steps.value.to_string(),
                m.relays_per_step.value.to_string(),
            ])
            .map_err(relayplace_core::Error::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn table(entries: &[(&str, Value)]) -> Value {
    Value::Table(
        entries
            .iter()
            .map(|(k, v)| ((*k).to_owned(), v.clone()))
            .collect(),
    )
}

/// Built-in learning protocol for one learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    /// `[policy]` defaults.
    pub defaults: Table,
    /// Desk-scale `(runs, relays)`.
    pub desk: (usize, usize),
    /// Full-scale `(runs, relays)`.
    pub full: (usize, usize),
}

pub fn learn_protocol(kind: PolicyKind) -> Result<Protocol> {
    let mut t = Table::new();
    t.insert("kind".into(), Value::from(kind.name()));
    match kind {
        PolicyKind::OelRatio => Ok(Protocol {
            defaults: t,
            desk: (10_000, 50),
            full: (10_000, 1_000),
        }),
        PolicyKind::OelLearn => {
            t.insert(
                "step".into(),
                table(&[
                    ("kind", "power_law".into()),
                    ("scale", 1.0.into()),
                    ("exponent", 0.55.into()),
                ]),
            );
            Ok(Protocol {
                defaults: t,
                desk: (10_000, 50),
                full: (10_000, 1_000),
            })
        }
        PolicyKind::Oelal => {
            t.insert("lambda0".into(), Value::Float(0.5007));
            t.insert("xi_out".into(), Value::Float(75.0));
            t.insert("xi_relay".into(), Value::Float(1.25));
            t.insert(
                "targets".into(),
                table(&[("q_bar", 0.001969.into()), ("n_bar", (1.0 / 2.2859).into())]),
            );
            Ok(Protocol {
                defaults: t,
                desk: (2_000, 20_000),
                full: (10_000, 20_000),
            })
        }
        other => Err(CliError::config(
            "learner",
            format!("{other} is not a learner (use oel-learn, oel-ratio or oelal)"),
        )),
    }
}

fn learn_curve(a: LearnArgs, out: &mut dyn Write) -> Result<()> {
    let Protocol { defaults, desk, full } = learn_protocol(a.learner)?;
    let file = FileConfig::load(a.protocol_file.as_deref())?;
    let channel = config::channel(&file, a.model.channel_flags())?;
    let flags = PolicyFlags {
        lambda0: a.lambda0,
        ..policy_flags(&PolicyArgs::default(), &a.model)
    };
    let mut spec = config::policy_spec(&defaults, &file, &flags)?;
    // The learner flag names what runs; a file cannot switch it.
    spec.kind = a.learner;
    let (runs, relays) = if a.full_scale { full } else { desk };
    let runs = a.runs.or(file.run.runs).unwrap_or(runs);
    let relays = a.relays.or(file.run.relays).unwrap_or(relays);
    let solved = solve_spec(&spec, &channel)?;
    let initial = solved
        .handle
        .learner_state()
        .copied()
        .ok_or_else(|| CliError::config("learner", "not a learner"))?;
    let sc = scenario(&spec, &channel)?;
    let curve = convergence_curve(&initial, runs, relays, a.seed, &sc)?;
    curve.write_csv(out)?;
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let store = match &a.data_dir {
        Some(d) => SessionStore::open(d)?,
        None => SessionStore::from_env()?,
    };
    if store.data_dir().is_none() {
        eprintln!("warning: no data directory; sessions live in memory only");
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(relayplace_service::serve(
        SocketAddr::new(a.host, a.port),
        Arc::new(store),
    ))?;
    Ok(())
}
