//! Session state machine. Every mutation is an [`Event`]; live requests and
//! recovery both go through [`Session::apply`], so a replayed log reproduces
//! the same document.

use std::collections::BTreeMap;

use relayplace_core::channel::{mw_to_dbm, ChannelConfig, PowerSet};
use relayplace_core::explore::{Decision, OutageMatrix};
use relayplace_core::learning::LearnerState;
use relayplace_core::policy::{Mode, PolicyHandle, PolicyKind, PolicySpec};
use relayplace_core::simulator::DeploymentRecord;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

/// Request body of `POST /sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub channel: ChannelConfig,
    pub policy: PolicySpec,
}

/// Request body of `POST /sessions/{id}/measurements`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    /// Location in steps from the last placed node.
    pub r: u32,
    /// Outage readings, one per level in the session's `measurement_levels_dbm`.
    pub readings: Vec<f64>,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

/// Request body of `POST /sessions/{id}/placements`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub u: u32,
    pub gamma_dbm: f64,
    /// Realized outage; defaults to the reading taken at `(u, γ)`.
    #[serde(default)]
    pub q_out: Option<f64>,
    /// Required when `(u, γ)` differs from the pending recommendation.
    #[serde(default, rename = "override")]
    pub override_recommendation: bool,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Event {
    Created {
        id: String,
        at_ms: u64,
        channel: ChannelConfig,
        spec: PolicySpec,
        handle: PolicyHandle,
    },
    Measured {
        at_ms: u64,
        r: u32,
        readings: Vec<f64>,
    },
    Confirmed {
        at_ms: u64,
        u: u32,
        gamma_mw: f64,
        q_out: f64,
        overridden: bool,
    },
}

impl Event {
    pub fn at_ms(&self) -> u64 {
        match self {
            Event::Created { at_ms, .. } | Event::Measured { at_ms, .. } | Event::Confirmed { at_ms, .. } => {
                *at_ms
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Recommendation {
    Continue {
        next_r: u32,
    },
    Place {
        u: u32,
        power_index: usize,
        gamma_mw: f64,
        gamma_dbm: f64,
        q_out: f64,
    },
    NeedMoreLocations {
        measured: u32,
        total: u32,
    },
}

impl Recommendation {
    fn place(d: &Decision) -> Self {
        Recommendation::Place {
            u: d.u,
            power_index: d.power_index,
            gamma_mw: d.gamma_mw,
            gamma_dbm: mw_to_dbm(d.gamma_mw).unwrap_or(f64::NAN),
            q_out: d.q_out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub record: DeploymentRecord,
    pub overridden: bool,
    pub recommended: Decision,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    /// Sequence number of the last applied event.
    pub version: u64,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    pub channel: ChannelConfig,
    pub spec: PolicySpec,
    pub handle: PolicyHandle,
    /// Readings of the current round keyed by location.
    pub round: BTreeMap<u32, Vec<f64>>,
    pub pending: Option<Decision>,
    pub history: Vec<HistoryEntry>,
}

/// What a measurement or placement produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Created,
    Recommended(Recommendation),
    Placed(HistoryEntry),
}

impl Session {
    pub fn from_created(seq: u64, event: &Event) -> Result<Self> {
        let Event::Created {
            id,
            at_ms,
            channel,
            spec,
            handle,
        } = event
        else {
            return Err(ServiceError::Storage(
                "event log does not start with `created`".into(),
            ));
        };
        Ok(Session {
            id: id.clone(),
            version: seq,
            created_at_ms: *at_ms,
            updated_at_ms: *at_ms,
            channel: channel.clone(),
            spec: spec.clone(),
            handle: handle.clone(),
            round: BTreeMap::new(),
            pending: None,
            history: Vec::new(),
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.handle.kind()
    }

    pub fn mode(&self) -> Mode {
        self.handle.mode()
    }

    pub fn powers(&self) -> Result<PowerSet> {
        self.channel
            .powers()
            .map_err(|e| ServiceError::from_core("channel", e))
    }

    pub fn learner(&self) -> Option<&LearnerState> {
        self.handle.learner_state()
    }

    fn first_r(&self) -> u32 {
        self.handle.window.a_skip + 1
    }

    fn last_r(&self) -> u32 {
        self.handle.window.a_skip + self.handle.window.b_window
    }

    /// Next location to measure in sequential mode.
    pub fn cursor(&self) -> Option<u32> {
        (self.mode() == Mode::Sequential && self.pending.is_none())
            .then(|| self.first_r() + self.round.len() as u32)
    }

    /// Locations still to be measured in window mode.
    pub fn remaining(&self) -> Vec<u32> {
        if self.mode() != Mode::Window || self.pending.is_some() {
            return Vec::new();
        }
        (self.first_r()..=self.last_r())
            .filter(|r| !self.round.contains_key(r))
            .collect()
    }

    pub fn records(&self) -> Vec<DeploymentRecord> {
        self.history.iter().map(|h| h.record).collect()
    }

    /// Checks a measurement against the current state without changing it.
    pub fn check_measurement(&self, m: &Measurement) -> Result<()> {
        if let Some(d) = &self.pending {
            return Err(ServiceError::Conflict(format!(
                "a placement at u = {} is pending; confirm it before measuring",
                d.u
            )));
        }
        let (lo, hi) = (self.first_r(), self.last_r());
        if !(lo..=hi).contains(&m.r) {
            return Err(ServiceError::validation(
                "r",
                format!("location {} is outside the window {lo}..={hi}", m.r),
            ));
        }
        match self.mode() {
            Mode::Sequential => {
                let cursor = self.first_r() + self.round.len() as u32;
                if m.r != cursor {
                    return Err(ServiceError::validation(
                        "r",
                        format!("expected location {cursor}, got {}", m.r),
                    ));
                }
            }
            Mode::Window => {
                if self.round.contains_key(&m.r) {
                    return Err(ServiceError::validation(
                        "r",
                        format!("location {} was already measured", m.r),
                    ));
                }
            }
        }
        let levels = self.handle.measurement_levels(&self.powers()?);
        if m.readings.len() != levels.len() {
            return Err(ServiceError::validation(
                "readings",
                format!("expected {} readings, got {}", levels.len(), m.readings.len()),
            ));
        }
        if let Some((i, q)) = m
            .readings
            .iter()
            .enumerate()
            .find(|(_, q)| !(0.0..=1.0).contains(*q))
        {
            return Err(ServiceError::validation(
                format!("readings[{i}]"),
                format!("{q} is outside [0, 1]"),
            ));
        }
        Ok(())
    }

    /// Resolves a placement request into the `confirmed` event it implies.
    pub fn resolve_placement(&self, p: &Placement, at_ms: u64) -> Result<Event> {
        let Some(pending) = self.pending else {
            return Err(ServiceError::Conflict("no pending recommendation".into()));
        };
        let levels = self.handle.measurement_levels(&self.powers()?);
        let Some(power_index) = levels.iter().position(|&l| {
            let mw = relayplace_core::channel::dbm_to_mw(p.gamma_dbm);
            (l - mw).abs() <= 1e-9 * l
        }) else {
            return Err(ServiceError::validation(
                "gamma_dbm",
                format!("{} dBm is not an available power level", p.gamma_dbm),
            ));
        };
        let gamma_mw = levels[power_index];
        let Some(row) = self.round.get(&p.u) else {
            return Err(ServiceError::validation(
                "u",
                format!("location {} was not measured in this round", p.u),
            ));
        };
        let matches = p.u == pending.u && gamma_mw == pending.gamma_mw;
        if !matches && !p.override_recommendation {
            return Err(ServiceError::Conflict(format!(
                "recommendation is u = {}, γ = {} mW; set `override` to place elsewhere",
                pending.u, pending.gamma_mw
            )));
        }
        let q_out = p.q_out.unwrap_or(row[power_index]);
        if !(0.0..=1.0).contains(&q_out) {
            return Err(ServiceError::validation(
                "q_out",
                format!("{q_out} is outside [0, 1]"),
            ));
        }
        Ok(Event::Confirmed {
            at_ms,
            u: p.u,
            gamma_mw,
            q_out,
            overridden: p.override_recommendation,
        })
    }

    /// Applies event number `seq`. The caller checks requests first; errors
    /// here leave `self` unchanged.
    pub fn apply(&mut self, seq: u64, event: &Event) -> Result<Outcome> {
        if seq != self.version + 1 {
            return Err(ServiceError::Storage(format!(
                "event {seq} does not follow version {}",
                self.version
            )));
        }
        let outcome = match event {
            Event::Created { .. } => {
                return Err(ServiceError::Storage("duplicate `created` event".into()));
            }
            Event::Measured { r, readings, .. } => {
                self.check_measurement(&Measurement {
                    r: *r,
                    readings: readings.clone(),
                    expected_version: None,
                })?;
                let powers = self.powers()?;
                let mut round = self.round.clone();
                round.insert(*r, readings.clone());
                let rec = match self.mode() {
                    Mode::Sequential => {
                        let rows: Vec<Vec<f64>> = round.values().cloned().collect();
                        match self
                            .handle
                            .decide_sequential(&rows, &powers)
                            .map_err(|e| ServiceError::from_core("readings", e))?
                        {
                            Some(d) => {
                                self.pending = Some(d);
                                Recommendation::place(&d)
                            }
                            None => Recommendation::Continue { next_r: r + 1 },
                        }
                    }
                    Mode::Window => {
                        let b = self.handle.window.b_window;
                        if (round.len() as u32) < b {
                            Recommendation::NeedMoreLocations {
                                measured: round.len() as u32,
                                total: b,
                            }
                        } else {
                            let m = OutageMatrix::from_rows(round.values().cloned().collect())
                                .map_err(|e| ServiceError::from_core("readings", e))?;
                            let d = self
                                .handle
                                .decide_window(&m, &powers)
                                .map_err(|e| ServiceError::from_core("readings", e))?;
                            self.pending = Some(d);
                            Recommendation::place(&d)
                        }
                    }
                };
                self.round = round;
                Outcome::Recommended(rec)
            }
            Event::Confirmed {
                at_ms,
                u,
                gamma_mw,
                q_out,
                overridden,
            } => {
                let recommended = self
                    .pending
                    .ok_or_else(|| ServiceError::Conflict("no pending recommendation".into()))?;
                let mut handle = self.handle.clone();
                handle
                    .observe(*u, *gamma_mw, *q_out)
                    .map_err(|e| ServiceError::from_core("", e))?;
                let learner = handle.learner_state();
                let entry = HistoryEntry {
                    record: DeploymentRecord {
                        k: self.history.len() as u64 + 1,
                        u_steps: *u,
                        gamma_mw: *gamma_mw,
                        q_out: *q_out,
                        measured_locations: self.round.len() as u32,
                        lambda_hat: learner.map(|s| s.lambda_hat),
                        xi_out_hat: learner.map(|s| s.xi_out_hat),
                        xi_relay_hat: learner.map(|s| s.xi_relay_hat),
                    },
                    overridden: *overridden,
                    recommended,
                    at_ms: *at_ms,
                };
                self.handle = handle;
                self.history.push(entry);
                self.round.clear();
                self.pending = None;
                Outcome::Placed(entry)
            }
        };
        self.version = seq;
        self.updated_at_ms = event.at_ms();
        Ok(outcome)
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            id: self.id.clone(),
            kind: self.kind(),
            mode: self.mode(),
            version: self.version,
            relays: self.history.len() as u64,
            created_at_ms: self.created_at_ms,
            updated_at_ms: self.updated_at_ms,
        }
    }

    pub fn view(&self) -> Result<SessionView<'_>> {
        let levels = self.handle.measurement_levels(&self.powers()?);
        Ok(SessionView {
            session: self,
            kind: self.kind(),
            mode: self.mode(),
            cursor: self.cursor(),
            remaining: self.remaining(),
            measurement_levels_dbm: levels.iter().map(|&l| mw_to_dbm(l).unwrap_or(f64::NAN)).collect(),
            learner: self.learner(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub kind: PolicyKind,
    pub mode: Mode,
    pub version: u64,
    pub relays: u64,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
}

/// Session document as returned by the API: the stored state plus derived fields.
#[derive(Debug, Serialize)]
pub struct SessionView<'a> {
    #[serde(flatten)]
    pub session: &'a Session,
    pub kind: PolicyKind,
    pub mode: Mode,
    pub cursor: Option<u32>,
    pub remaining: Vec<u32>,
    pub measurement_levels_dbm: Vec<f64>,
    pub learner: Option<&'a LearnerState>,
}
