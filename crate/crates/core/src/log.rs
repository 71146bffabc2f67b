//! Append-only JSONL dialogue logs with crash recovery.
//!
//! Layout under the data directory:
//!
//! ```text
//! index.jsonl                 one line per created session
//! sessions/<id>/meta.json     name and age (kept out of the log)
//! sessions/<id>/state.json    phase, summaries, status, committed turn count
//! sessions/<id>/log.jsonl     one LogRecord per turn
//! ```
//!
//! Records are appended and synced before the state file is replaced, so
//! the state's turn count is the commit point. On open, anything past it
//! (a torn line, or a whole exchange whose state never landed) is cut off.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::analyzers::PhaseSummary;
use crate::dialogue::{Attachments, Phase, Role, Session, SessionStatus, Turn};
use crate::gateway::Usage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub session_id: String,
    pub turn_index: usize,
    pub role: Role,
    pub content: String,
    pub phase: Phase,
    pub attachments: Option<Attachments>,
    pub timestamp: DateTime<Utc>,
    pub prompt_digest: Option<String>,
    pub usage: Option<Usage>,
    /// Analyst-assigned codes, tallied by the stats tool.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub codes: Vec<String>,
}

impl LogRecord {
    pub fn user(session_id: &str, turn: &Turn) -> Self {
        Self::from_turn(session_id, turn, None, None)
    }

    pub fn system(session_id: &str, turn: &Turn, prompt_digest: String, usage: Usage) -> Self {
        Self::from_turn(session_id, turn, Some(prompt_digest), Some(usage))
    }

    fn from_turn(
        session_id: &str,
        turn: &Turn,
        prompt_digest: Option<String>,
        usage: Option<Usage>,
    ) -> Self {
        LogRecord {
            session_id: session_id.to_string(),
            turn_index: turn.index,
            role: turn.role,
            content: turn.content.clone(),
            phase: turn.phase,
            attachments: turn.attachments.clone(),
            timestamp: turn.timestamp,
            prompt_digest,
            usage,
            codes: Vec::new(),
        }
    }

    pub fn to_turn(&self) -> Turn {
        Turn {
            index: self.turn_index,
            role: self.role,
            content: self.content.clone(),
            phase: self.phase,
            attachments: self.attachments.clone(),
            timestamp: self.timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Meta {
    session_id: String,
    user_name: String,
    user_age: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct State {
    turn_count: usize,
    locale: String,
    phase: Phase,
    previous_phase: Option<Phase>,
    phase_entered_at: usize,
    summaries: BTreeMap<Phase, PhaseSummary>,
    status: SessionStatus,
    created_at: DateTime<Utc>,
}

impl State {
    fn of(s: &Session) -> Self {
        State {
            turn_count: s.turns.len(),
            locale: s.locale.clone(),
            phase: s.phase,
            previous_phase: s.previous_phase,
            phase_entered_at: s.phase_entered_at,
            summaries: s.summaries.clone(),
            status: s.status,
            created_at: s.created_at,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    session_id: String,
    created_at: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("unknown session {0:?}")]
    Unknown(String),
    #[error("invalid session id {0:?}")]
    BadId(String),
    #[error("injected crash")]
    Injected,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Simulated crash points for recovery tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FaultPlan {
    /// Stop writing the log after this many bytes of the next append.
    pub cut_log_after: Option<usize>,
    /// Write the log fully but never commit the state.
    pub skip_state_commit: bool,
    /// Commit everything, then fail as if the process died before replying.
    pub fail_after_commit: bool,
}

pub struct LogStore {
    root: PathBuf,
    fault: Mutex<Option<FaultPlan>>,
    index_lock: Mutex<()>,
}

impl LogStore {
    /// Opens (creating if needed) the store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, LogError> {
        let root = root.into();
        let sessions = root.join("sessions");
        fs::create_dir_all(&sessions).map_err(io_err(&sessions))?;
        Ok(LogStore {
            root,
            fault: Mutex::new(None),
            index_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Arms a fault for the next append.
    pub fn inject_fault(&self, plan: FaultPlan) {
        *self.fault.lock().unwrap() = Some(plan);
    }

    fn dir(&self, session_id: &str) -> Result<PathBuf, LogError> {
        let valid = !session_id.is_empty()
            && session_id.len() <= 128
            && session_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !valid {
            return Err(LogError::BadId(session_id.to_string()));
        }
        Ok(self.root.join("sessions").join(session_id))
    }

    pub fn exists(&self, session_id: &str) -> bool {
        self.dir(session_id)
            .map(|d| d.join("meta.json").is_file())
            .unwrap_or(false)
    }

    /// Registers a new session and logs its existing turns (the greeting).
    pub fn create(
        &self,
        session: &Session,
        first: &[LogRecord],
    ) -> Result<(), LogError> {
        let dir = self.dir(&session.session_id)?;
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let meta = Meta {
            session_id: session.session_id.clone(),
            user_name: session.user_name.clone(),
            user_age: session.user_age,
        };
        write_atomic(&dir.join("meta.json"), &to_json_line(&meta))?;
        let mut empty = State::of(session);
        empty.turn_count = 0;
        write_atomic(&dir.join("state.json"), &to_json_line(&empty))?;
        File::create(dir.join("log.jsonl")).map_err(io_err(&dir))?;
        {
            let _g = self.index_lock.lock().unwrap();
            let path = self.root.join("index.jsonl");
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(io_err(&path))?;
            let entry = IndexEntry {
                session_id: session.session_id.clone(),
                created_at: session.created_at,
            };
            f.write_all(to_json_line(&entry).as_bytes()).map_err(io_err(&path))?;
            f.sync_data().map_err(io_err(&path))?;
        }
        self.append(session, first)
    }

    /// Appends `records` in a single write, syncs, then commits `session`'s
    /// state. Either all records become visible or none do.
    pub fn append(&self, session: &Session, records: &[LogRecord]) -> Result<(), LogError> {
        let dir = self.dir(&session.session_id)?;
        let fault = self.fault.lock().unwrap().take();
        if !records.is_empty() {
            let path = dir.join("log.jsonl");
            let mut buf = String::new();
            for r in records {
                buf.push_str(&to_json_line(r));
            }
            let mut f = OpenOptions::new()
                .append(true)
                .open(&path)
                .map_err(io_err(&path))?;
            if let Some(n) = fault.and_then(|p| p.cut_log_after) {
                let n = n.min(buf.len());
                f.write_all(&buf.as_bytes()[..n]).map_err(io_err(&path))?;
                f.sync_data().map_err(io_err(&path))?;
                return Err(LogError::Injected);
            }
            f.write_all(buf.as_bytes()).map_err(io_err(&path))?;
            f.sync_data().map_err(io_err(&path))?;
        }
        if fault.is_some_and(|p| p.skip_state_commit) {
            return Err(LogError::Injected);
        }
        write_atomic(&dir.join("state.json"), &to_json_line(&State::of(session)))?;
        if fault.is_some_and(|p| p.fail_after_commit) {
            return Err(LogError::Injected);
        }
        Ok(())
    }

    /// Persists a state change that adds no turns (ending a session).
    pub fn save_state(&self, session: &Session) -> Result<(), LogError> {
        self.append(session, &[])
    }

    fn read_state(&self, dir: &Path) -> Result<State, LogError> {
        let path = dir.join("state.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| LogError::Corrupt {
            path: path.display().to_string(),
            line: 1,
            message: e.to_string(),
        })
    }

    /// Committed records of one session, in order.
    pub fn records(&self, session_id: &str) -> Result<Vec<LogRecord>, LogError> {
        let dir = self.dir(session_id)?;
        if !dir.join("meta.json").is_file() {
            return Err(LogError::Unknown(session_id.to_string()));
        }
        let state = self.read_state(&dir)?;
        let path = dir.join("log.jsonl");
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let (records, _) = parse_committed(&path, &bytes, state.turn_count)?;
        Ok(records)
    }

    /// The committed log as JSONL bytes, safe to call while the session is
    /// active.
    pub fn read_export(&self, session_id: &str) -> Result<Vec<u8>, LogError> {
        let dir = self.dir(session_id)?;
        if !dir.join("meta.json").is_file() {
            return Err(LogError::Unknown(session_id.to_string()));
        }
        let state = self.read_state(&dir)?;
        let path = dir.join("log.jsonl");
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let (_, len) = parse_committed(&path, &bytes, state.turn_count)?;
        Ok(bytes[..len].to_vec())
    }

    /// Truncates uncommitted tails and rebuilds the session.
    pub fn recover(&self, session_id: &str) -> Result<Session, LogError> {
        let dir = self.dir(session_id)?;
        let meta_path = dir.join("meta.json");
        let meta_text = fs::read_to_string(&meta_path)
            .map_err(|_| LogError::Unknown(session_id.to_string()))?;
        let meta: Meta = serde_json::from_str(&meta_text).map_err(|e| LogError::Corrupt {
            path: meta_path.display().to_string(),
            line: 1,
            message: e.to_string(),
        })?;
        let state = self.read_state(&dir)?;
        let path = dir.join("log.jsonl");
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let (records, len) = parse_committed(&path, &bytes, state.turn_count)?;
        if len < bytes.len() {
            tracing::warn!(session = session_id, dropped = bytes.len() - len, "truncating uncommitted log tail");
            let f = OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
            f.set_len(len as u64).map_err(io_err(&path))?;
            f.sync_data().map_err(io_err(&path))?;
        }
        Ok(Session {
            session_id: meta.session_id,
            user_name: meta.user_name,
            user_age: meta.user_age,
            locale: state.locale,
            phase: state.phase,
            turns: records.iter().map(LogRecord::to_turn).collect(),
            summaries: state.summaries,
            status: state.status,
            created_at: state.created_at,
            previous_phase: state.previous_phase,
            phase_entered_at: state.phase_entered_at,
        })
    }

    /// Recovers every session in the store, oldest first.
    pub fn load_all(&self) -> Result<Vec<Session>, LogError> {
        let sessions = self.root.join("sessions");
        let mut ids: Vec<String> = fs::read_dir(&sessions)
            .map_err(io_err(&sessions))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("meta.json").is_file())
            .map(|e| e.file_name().to_string_lossy().to_string())
            .collect();
        ids.sort();
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            out.push(self.recover(&id)?);
        }
        out.sort_by(|a, b| (a.created_at, &a.session_id).cmp(&(b.created_at, &b.session_id)));
        Ok(out)
    }

    /// Ids listed in the index file, in creation order.
    pub fn index(&self) -> Result<Vec<String>, LogError> {
        let path = self.root.join("index.jsonl");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        Ok(text
            .lines()
            .filter_map(|l| serde_json::from_str::<IndexEntry>(l).ok())
            .map(|e| e.session_id)
            .collect())
    }
}

/// Parses up to `committed` complete records; returns them with the byte
/// length they occupy.
fn parse_committed(
    path: &Path,
    bytes: &[u8],
    committed: usize,
) -> Result<(Vec<LogRecord>, usize), LogError> {
    let mut records = Vec::with_capacity(committed);
    let mut offset = 0;
    while records.len() < committed {
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            break;
        };
        let line = &bytes[offset..offset + nl];
        let record: LogRecord = serde_json::from_slice(line).map_err(|e| LogError::Corrupt {
            path: path.display().to_string(),
            line: records.len() + 1,
            message: e.to_string(),
        })?;
        records.push(record);
        offset += nl + 1;
    }
    if records.len() < committed {
        return Err(LogError::Corrupt {
            path: path.display().to_string(),
            line: records.len() + 1,
            message: format!("state commits {committed} turns but the log holds {}", records.len()),
        });
    }
    Ok((records, offset))
}

fn to_json_line<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string(v).expect("log types serialize");
    s.push('\n');
    s
}

fn write_atomic(path: &Path, text: &str) -> Result<(), LogError> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(text.as_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use chrono::TimeZone;

    use super::*;

    fn session() -> Session {
        let t = Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap();
        let mut s = Session::new("abc", "Mina", 9, "ko", t);
        s.push_turn(Role::System, "안녕!", None, t);
        s
    }

    fn exchange(s: &mut Session) -> Vec<LogRecord> {
        let t = s.turns.last().unwrap().timestamp + chrono::Duration::seconds(5);
        let u = s.push_turn(Role::User, "놀이공원 갔어", None, t).clone();
        let r = s.push_turn(Role::System, "우와!", None, t).clone();
        vec![
            LogRecord::user(&s.session_id, &u),
            LogRecord::system(&s.session_id, &r, "d".into(), Usage::default()),
        ]
    }

    fn created(store: &LogStore) -> Session {
        let s = session();
        let greeting = LogRecord::system("abc", &s.turns[0], "g".into(), Usage::default());
        store.create(&s, &[greeting]).unwrap();
        s
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::open(dir.path()).unwrap();
        let mut s = created(&store);
        let recs = exchange(&mut s);
        store.append(&s, &recs).unwrap();
        let back = store.recover("abc").unwrap();
        assert_eq!(back, s);
        assert_eq!(store.records("abc").unwrap().len(), 3);
        assert_eq!(store.index().unwrap(), ["abc"]);
        let export = String::from_utf8(store.read_export("abc").unwrap()).unwrap();
        assert_eq!(export.lines().count(), 3);
        assert!(!export.contains("Mina"));
    }

    #[test]
    fn record_field_order() {
        let s = session();
        let line = to_json_line(&LogRecord::user("abc", &s.turns[0]));
        let keys = [
            "session_id", "turn_index", "role", "content", "phase", "attachments", "timestamp",
            "prompt_digest", "usage",
        ];
        let mut last = 0;
        for k in keys {
            let at = line.find(&format!("\"{k}\":")).unwrap();
            assert!(at >= last, "{k} out of order");
            last = at;
        }
        assert!(!line.contains("codes"));
    }

    #[test]
    fn torn_write_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::open(dir.path()).unwrap();
        let mut s = created(&store);
        let committed = s.clone();
        let recs = exchange(&mut s);
        store.inject_fault(FaultPlan {
            cut_log_after: Some(40),
            ..Default::default()
        });
        assert!(matches!(store.append(&s, &recs), Err(LogError::Injected)));
        let reopened = LogStore::open(dir.path()).unwrap();
        assert_eq!(reopened.recover("abc").unwrap(), committed);
        let raw = fs::read(dir.path().join("sessions/abc/log.jsonl")).unwrap();
        assert_eq!(raw.iter().filter(|&&b| b == b'\n').count(), 1);
    }

    #[test]
    fn uncommitted_exchange_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::open(dir.path()).unwrap();
        let mut s = created(&store);
        let committed = s.clone();
        let recs = exchange(&mut s);
        store.inject_fault(FaultPlan {
            skip_state_commit: true,
            ..Default::default()
        });
        assert!(store.append(&s, &recs).is_err());
        assert_eq!(store.read_export("abc").unwrap().iter().filter(|&&b| b == b'\n').count(), 1);
        assert_eq!(store.recover("abc").unwrap(), committed);
    }

    #[test]
    fn bad_ids_and_unknown_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let store = LogStore::open(dir.path()).unwrap();
        assert!(matches!(store.records("../etc"), Err(LogError::BadId(_))));
        assert!(matches!(store.records(""), Err(LogError::BadId(_))));
        assert!(matches!(store.records("nope"), Err(LogError::Unknown(_))));
        assert!(!store.exists("nope"));
    }
}
