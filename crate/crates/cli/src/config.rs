//! Config documents and flag merging.
//!
//! A config file is TOML with optional `[channel]`, `[policy]` and `[run]`
//! tables. Values resolve as flags, then file, then built-in defaults.

use std::path::Path;

use relayplace_core::channel::ChannelConfig;
use relayplace_core::policy::{PolicyKind, PolicySpec};
use serde::Deserialize;
use toml::{Table, Value};

use crate::error::{CliError, Result};

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub channel: Option<ChannelConfig>,
    #[serde(default)]
    pub policy: Option<Table>,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub relays: Option<usize>,
    pub runs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Core(relayplace_core::Error::Config { field, message }) => {
                CliError::config(field, format!("{}: {message}", path.display()))
            }
            e => e,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::config("config", e.to_string().trim_end().to_owned()))
    }
}

/// Channel flags layered over the file's `[channel]`.
#[derive(Debug, Default, Clone, Copy)]
pub struct ChannelFlags {
    pub eta: Option<f64>,
    pub sigma_db: Option<f64>,
    pub points: Option<usize>,
}

pub fn channel(file: &FileConfig, flags: ChannelFlags) -> Result<ChannelConfig> {
    let mut ch = file.channel.clone().unwrap_or_default();
    if let Some(eta) = flags.eta {
        ch.eta = eta;
    }
    if let Some(s) = flags.sigma_db {
        ch.shadowing.sigma_db = Some(s);
        ch.shadowing.finite = None;
    }
    if let Some(n) = flags.points {
        ch.shadowing.points = n;
    }
    ch.validate().map_err(|e| prefix("channel", e))?;
    Ok(ch)
}

fn prefix(p: &str, e: relayplace_core::Error) -> CliError {
    match e {
        relayplace_core::Error::Config { field, message } => {
            CliError::config(format!("{p}.{field}"), message)
        }
        e => CliError::Core(e),
    }
}

/// Policy flags; `None` leaves the file or default value in place.
#[derive(Debug, Default, Clone)]
pub struct PolicyFlags {
    pub kind: Option<PolicyKind>,
    pub a_skip: Option<u32>,
    pub b_window: Option<u32>,
    pub xi_out: Option<f64>,
    pub xi_relay: Option<f64>,
    pub theta_schedule: Option<Vec<f64>>,
    pub lambda0: Option<f64>,
    pub fixed_power_dbm: Option<f64>,
    pub target_outage: Option<f64>,
}

impl PolicyFlags {
    fn entries(&self) -> Vec<(&'static str, Value)> {
        let mut out = Vec::new();
        if let Some(k) = self.kind {
            out.push(("kind", Value::from(k.name())));
        }
        let ints = [("a_skip", self.a_skip), ("b_window", self.b_window)];
        for (name, v) in ints {
            if let Some(v) = v {
                out.push((name, Value::Integer(i64::from(v))));
            }
        }
        let floats = [
            ("xi_out", self.xi_out),
            ("xi_relay", self.xi_relay),
            ("lambda0", self.lambda0),
            ("fixed_power_dbm", self.fixed_power_dbm),
            ("target_outage", self.target_outage),
        ];
        for (name, v) in floats {
            if let Some(v) = v {
                out.push((name, Value::Float(v)));
            }
        }
        if let Some(s) = &self.theta_schedule {
            out.push((
                "theta_schedule",
                Value::Array(s.iter().map(|&t| Value::Float(t)).collect()),
            ));
        }
        out
    }
}

/// Merges `defaults`, then the file's `[policy]`, then flags, into a spec.
pub fn policy_spec(defaults: &Table, file: &FileConfig, flags: &PolicyFlags) -> Result<PolicySpec> {
    let mut t = defaults.clone();
    if let Some(p) = &file.policy {
        t.extend(p.clone());
    }
    for (k, v) in flags.entries() {
        t.insert(k.to_owned(), v);
    }
    if !t.contains_key("kind") {
        return Err(CliError::config(
            "policy.kind",
            "no policy given (use --policy or [policy] kind)",
        ));
    }
    Value::Table(t)
        .try_into::<PolicySpec>()
        .map_err(|e| CliError::config("policy", e.message().to_owned()))
}
