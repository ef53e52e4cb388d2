//! Live sessions, their NDJSON logs and change notification.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{NaiveDateTime, Utc};
use serde_json::Value;
use tokio::sync::watch;

use patchline_core::orders::DispatchInfo;

use crate::error::ApiError;
use crate::pipeline::Pipeline;
use crate::session::{ClockMode, Command, FeedEvent, LogEntry, Session};

pub struct SessionSlot {
    state: Mutex<Session>,
    /// Latest feed sequence number.
    feed: watch::Sender<u64>,
}

impl SessionSlot {
    fn new(session: Session) -> Self {
        let (feed, _) = watch::channel(session.feed.len() as u64);
        Self { state: Mutex::new(session), feed }
    }

    pub fn read<T>(&self, f: impl FnOnce(&Session) -> T) -> T {
        f(&self.state.lock().expect("session lock"))
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.feed.subscribe()
    }

    pub fn events_after(&self, after: u64) -> Vec<FeedEvent> {
        self.read(|s| s.feed.iter().filter(|e| e.seq > after).cloned().collect())
    }
}

pub struct Store {
    pipeline: Arc<Pipeline>,
    clock: ClockMode,
    log_dir: Option<PathBuf>,
    sessions: Mutex<BTreeMap<String, Arc<SessionSlot>>>,
}

fn log_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.ndjson"))
}

fn append(path: &Path, entry: &LogEntry) -> Result<(), ApiError> {
    let mut line = serde_json::to_string(entry).expect("log entries serialize");
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
    f.write_all(line.as_bytes()).and_then(|_| f.flush()).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))
}

/// Parses a session log.
pub fn read_log(path: &Path) -> Result<Vec<LogEntry>, String> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| format!("{}: {e}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))?);
    }
    Ok(out)
}

impl Store {
    /// Sessions are kept in memory only when `log_dir` is `None`.
    pub fn new(pipeline: Arc<Pipeline>, clock: ClockMode, log_dir: Option<PathBuf>) -> Self {
        Self { pipeline, clock, log_dir, sessions: Mutex::new(BTreeMap::new()) }
    }

    /// Opens `log_dir`, replaying every session log found there.
    pub fn open(pipeline: Arc<Pipeline>, clock: ClockMode, log_dir: PathBuf) -> Result<Self, String> {
        fs::create_dir_all(&log_dir).map_err(|e| format!("{}: {e}", log_dir.display()))?;
        let store = Self::new(pipeline, clock, Some(log_dir.clone()));
        let mut paths: Vec<PathBuf> = fs::read_dir(&log_dir)
            .map_err(|e| format!("{}: {e}", log_dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
            .collect();
        paths.sort();
        for path in paths {
            let entries = read_log(&path)?;
            let session = Session::replay(&store.pipeline, &entries).map_err(|e| format!("{}: {}", path.display(), e.message))?;
            store.sessions.lock().expect("store lock").insert(session.id.clone(), Arc::new(SessionSlot::new(session)));
        }
        Ok(store)
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    fn reading(&self, clock: ClockMode, time: f64) -> NaiveDateTime {
        clock.simulated_reading(time).unwrap_or_else(|| Utc::now().naive_utc())
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.lock().expect("store lock").keys().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.sessions.lock().expect("store lock").get(id).cloned().ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))
    }

    pub fn create(&self, dispatch: DispatchInfo) -> Result<Value, ApiError> {
        let mut sessions = self.sessions.lock().expect("store lock");
        let id = (sessions.len() + 1..).map(|n| format!("s{n:06}")).find(|id| !sessions.contains_key(id)).expect("free id");
        let command = Command::Create { id: id.clone(), dispatch, clock: self.clock };
        let entry = LogEntry { seq: 0, at: self.reading(self.clock, 0.0), command };
        let (session, response) = Session::create(&self.pipeline, &entry)?;
        if let Some(dir) = &self.log_dir {
            append(&log_path(dir, &id), &entry)?;
        }
        sessions.insert(id, Arc::new(SessionSlot::new(session)));
        Ok(response)
    }

    /// Runs a command against a copy of the session and commits the copy,
    /// log line first, only if it succeeds.
    pub fn execute(&self, id: &str, command: Command) -> Result<Value, ApiError> {
        let slot = self.get(id)?;
        let mut state = slot.state.lock().expect("session lock");
        let entry = LogEntry { seq: state.next_seq(), at: self.reading(state.clock, command.time()), command };
        let mut next = state.clone();
        let outcome = next.apply(&self.pipeline, &entry)?;
        if outcome.changed {
            if let Some(dir) = &self.log_dir {
                append(&log_path(dir, id), &entry)?;
            }
            *state = next;
            slot.feed.send_replace(state.feed.len() as u64);
        }
        Ok(outcome.response)
    }

    /// Time for commands that did not give one: the last event time.
    pub fn default_time(&self, id: &str) -> Result<f64, ApiError> {
        Ok(self.get(id)?.read(|s| s.last_time()))
    }
}
