//! Session registry with optional on-disk persistence.
//!
//! Layout under the data directory: `sessions/<id>/events.jsonl` (one
//! `{"seq": n, ...event}` object per line, appended and synced before a
//! mutation is acknowledged) and `sessions/<id>/snapshot.json` (written to a
//! temporary file and renamed). Recovery loads the snapshot and replays any
//! later events; a torn final log line is ignored.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use relayplace_core::simulator::write_trace_csv;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::session::{
    CreateSession, Event, HistoryEntry, Measurement, Outcome, Placement, Recommendation, Session,
    SessionSummary,
};

/// Environment variable naming the data directory.
pub const DATA_DIR_ENV: &str = "RELAYPLACE_DATA_DIR";

#[derive(Debug, Serialize, Deserialize)]
struct LoggedEvent {
    seq: u64,
    #[serde(flatten)]
    event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureResponse {
    pub version: u64,
    pub recommendation: Recommendation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementResponse {
    pub version: u64,
    pub placement: HistoryEntry,
    pub learner: Option<relayplace_core::learning::LearnerState>,
}

type Slot = Arc<Mutex<Session>>;

pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Slot>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn check_version(s: &Session, expected: Option<u64>) -> Result<()> {
    match expected {
        Some(v) if v != s.version => Err(ServiceError::Conflict(format!(
            "session is at version {}, request expected {v}",
            s.version
        ))),
        _ => Ok(()),
    }
}

impl SessionStore {
    pub fn in_memory() -> Self {
        SessionStore {
            dir: None,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Opens (creating if needed) a data directory and recovers every session in it.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let root = dir.join("sessions");
        fs::create_dir_all(&root)?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(&root)? {
            let path = entry?.path();
            if !path.is_dir() || !path.join("events.jsonl").exists() {
                continue;
            }
            let s = recover(&path)?;
            sessions.insert(s.id.clone(), Arc::new(Mutex::new(s)));
        }
        Ok(SessionStore {
            dir: Some(dir),
            sessions: RwLock::new(sessions),
        })
    }

    /// Opens the directory named by [`DATA_DIR_ENV`], or an in-memory store when unset.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(DATA_DIR_ENV) {
            Some(d) => Self::open(PathBuf::from(d)),
            None => Ok(Self::in_memory()),
        }
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn session_dir(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("sessions").join(id))
    }

    fn slot(&self, id: &str) -> Result<Slot> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_owned()))
    }

    /// Writes event `seq` and the resulting snapshot.
    fn persist(&self, next: &Session, seq: u64, event: &Event) -> Result<()> {
        let Some(dir) = self.session_dir(&next.id) else {
            return Ok(());
        };
        fs::create_dir_all(&dir)?;
        let mut line = serde_json::to_vec(&LoggedEvent {
            seq,
            event: event.clone(),
        })
        .map_err(|e| ServiceError::Storage(e.to_string()))?;
        line.push(b'\n');
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("events.jsonl"))?;
        log.write_all(&line)?;
        log.sync_data()?;
        // The log is authoritative; a missing snapshot only costs replay time.
        if let Err(e) = write_snapshot(&dir, next) {
            eprintln!("warning: snapshot of session {} not written: {e}", next.id);
        }
        Ok(())
    }

    pub fn create(&self, req: CreateSession) -> Result<Session> {
        req.channel
            .validate()
            .map_err(|e| ServiceError::from_core("channel", e))?;
        let handle = req
            .policy
            .build(&req.channel)
            .map_err(|e| ServiceError::from_core("policy", e))?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let event = Event::Created {
            id: id.clone(),
            at_ms: now_ms(),
            channel: req.channel,
            spec: req.policy,
            handle,
        };
        let session = Session::from_created(1, &event)?;
        self.persist(&session, 1, &event)?;
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Result<Session> {
        let slot = self.slot(id)?;
        let s = lock(&slot).clone();
        Ok(s)
    }

    /// Summaries ordered by creation time, then id.
    pub fn list(&self) -> Vec<SessionSummary> {
        let slots: Vec<Slot> = self
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .values()
            .cloned()
            .collect();
        let mut out: Vec<SessionSummary> = slots.iter().map(|s| lock(s).summary()).collect();
        out.sort_by(|a, b| (a.created_at_ms, &a.id).cmp(&(b.created_at_ms, &b.id)));
        out
    }

    /// Applies `event` to a copy, persists it, then commits the copy.
    fn commit(&self, session: &mut Session, event: Event) -> Result<Outcome> {
        let seq = session.version + 1;
        let mut next = session.clone();
        let outcome = next.apply(seq, &event)?;
        self.persist(&next, seq, &event)?;
        *session = next;
        Ok(outcome)
    }

    pub fn measure(&self, id: &str, m: Measurement) -> Result<MeasureResponse> {
        let slot = self.slot(id)?;
        let mut s = lock(&slot);
        check_version(&s, m.expected_version)?;
        s.check_measurement(&m)?;
        let event = Event::Measured {
            at_ms: now_ms(),
            r: m.r,
            readings: m.readings,
        };
        match self.commit(&mut s, event)? {
            Outcome::Recommended(recommendation) => Ok(MeasureResponse {
                version: s.version,
                recommendation,
            }),
            other => Err(ServiceError::Storage(format!("unexpected outcome {other:?}"))),
        }
    }

    pub fn confirm(&self, id: &str, p: Placement) -> Result<PlacementResponse> {
        let slot = self.slot(id)?;
        let mut s = lock(&slot);
        check_version(&s, p.expected_version)?;
        let event = s.resolve_placement(&p, now_ms())?;
        match self.commit(&mut s, event)? {
            Outcome::Placed(placement) => Ok(PlacementResponse {
                version: s.version,
                placement,
                learner: s.learner().copied(),
            }),
            other => Err(ServiceError::Storage(format!("unexpected outcome {other:?}"))),
        }
    }

    /// Placement history in the simulator's trace CSV format.
    pub fn trace_csv(&self, id: &str) -> Result<String> {
        let slot = self.slot(id)?;
        let records = lock(&slot).records();
        let mut buf = Vec::new();
        write_trace_csv(&records, &mut buf).map_err(|e| ServiceError::Storage(e.to_string()))?;
        String::from_utf8(buf).map_err(|e| ServiceError::Storage(e.to_string()))
    }
}

fn write_snapshot(dir: &Path, s: &Session) -> Result<()> {
    let tmp = dir.join("snapshot.json.tmp");
    {
        let mut f = File::create(&tmp)?;
        serde_json::to_writer(&mut f, s).map_err(|e| ServiceError::Storage(e.to_string()))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, dir.join("snapshot.json"))?;
    // Make the rename durable.
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

/// Reads the event log. A write interrupted by a crash leaves at most one
/// partial line at the end; it is dropped and, when `repair` is set, cut
/// off the file so later appends start on a clean line.
fn read_events(path: &Path, repair: bool) -> Result<Vec<LoggedEvent>> {
    let bytes = fs::read(path)?;
    let mut out = Vec::new();
    let mut good = 0;
    let mut start = 0;
    while start < bytes.len() {
        let end = bytes[start..].iter().position(|&b| b == b'\n').map(|i| start + i);
        let line = &bytes[start..end.unwrap_or(bytes.len())];
        let next = end.map_or(bytes.len(), |e| e + 1);
        if !line.iter().all(u8::is_ascii_whitespace) {
            match serde_json::from_slice::<LoggedEvent>(line) {
                Ok(e) if end.is_some() => out.push(e),
                _ if next == bytes.len() => break,
                Ok(_) => unreachable!("only the last line can lack a newline"),
                Err(e) => {
                    return Err(ServiceError::Storage(format!(
                        "{}: bad event at byte {start}: {e}",
                        path.display()
                    )))
                }
            }
        }
        good = next;
        start = next;
    }
    if repair && good < bytes.len() {
        OpenOptions::new().write(true).open(path)?.set_len(good as u64)?;
    }
    Ok(out)
}

/// Rebuilds one session from its directory.
pub fn recover(dir: &Path) -> Result<Session> {
    let events = read_events(&dir.join("events.jsonl"), true)?;
    let snapshot = fs::read(dir.join("snapshot.json"))
        .ok()
        .and_then(|b| serde_json::from_slice::<Session>(&b).ok());
    let mut rest = events.iter();
    let mut session = match snapshot {
        Some(s) if events.iter().any(|e| e.seq == s.version) => {
            rest = events[events.iter().position(|e| e.seq == s.version).unwrap_or(0) + 1..].iter();
            s
        }
        _ => {
            let first = rest
                .next()
                .ok_or_else(|| ServiceError::Storage(format!("{}: empty event log", dir.display())))?;
            Session::from_created(first.seq, &first.event)?
        }
    };
    for e in rest {
        session.apply(e.seq, &e.event)?;
    }
    Ok(session)
}
