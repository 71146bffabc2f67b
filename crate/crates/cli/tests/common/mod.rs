#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chacha_cli::server::{router, AppState, ServerOptions};
use chacha_core::script::{self, scripted_engine, ConversationScript};
use chacha_core::{Engine, LogStore, ScriptedBackend, SequentialIds, SteppingClock};
use chrono::{Duration, TimeZone, Utc};

pub fn clock() -> Arc<SteppingClock> {
    Arc::new(SteppingClock::new(
        Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap(),
        Duration::seconds(7),
    ))
}

/// Deterministic engine: stepping clock, ids "s0001", "s0002", ...
pub fn engine(backend: Arc<ScriptedBackend>) -> Engine {
    scripted_engine(backend, clock(), Arc::new(SequentialIds::new("s")))
}

pub fn script(name: &str) -> ConversationScript {
    script::bundled()
        .into_iter()
        .find(|s| s.name == name)
        .unwrap_or_else(|| panic!("no bundled script {name}"))
}

pub fn backend_json(json: &str) -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::from_json(json).unwrap())
}

pub fn state(backend: Arc<ScriptedBackend>, data_dir: &Path, options: ServerOptions) -> Arc<AppState> {
    AppState::open(engine(backend), LogStore::open(data_dir).unwrap(), options).unwrap()
}

pub struct Running {
    pub base: String,
    pub state: Arc<AppState>,
    handle: tokio::task::JoinHandle<()>,
}

impl Running {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    /// Stops accepting connections, as if the process had died.
    pub fn kill(self) {
        self.handle.abort();
    }
}

pub async fn spawn(state: Arc<AppState>) -> Running {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = router(state.clone());
    let handle = tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    Running { base, state, handle }
}

/// Every step answers anything; the analyzer never sees a key event, so
/// the session stays in Explore.
pub fn idle_steps(greetings: usize, exchanges: usize, analyzer_delay_ms: u64) -> Arc<ScriptedBackend> {
    let mut steps = Vec::new();
    for _ in 0..greetings {
        steps.push(r#"{"tier":"generator","match":{"kind":"substring","pattern":""},"response":"Hi! What happened today?"}"#.to_string());
    }
    for _ in 0..exchanges {
        steps.push(format!(
            r#"{{"tier":"analyzer","match":{{"kind":"substring","pattern":""}},"response":"{{\"key_event_shared\":false}}","delay_ms":{analyzer_delay_ms}}}"#
        ));
        steps.push(r#"{"tier":"generator","match":{"kind":"substring","pattern":""},"response":"Tell me more!"}"#.to_string());
    }
    backend_json(&format!("[{}]", steps.join(",")))
}

pub fn golden_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares `actual` with the stored golden file. With `CHACHA_BLESS=1`
/// the file is (re)written instead.
pub fn check_golden(name: &str, actual: &[u8]) -> Result<(), String> {
    let path = golden_path(name);
    if std::env::var("CHACHA_BLESS").is_ok_and(|v| v == "1") {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!(
            "{} differs from output ({} vs {} bytes)",
            path.display(),
            expected.len(),
            actual.len()
        ))
    }
}
