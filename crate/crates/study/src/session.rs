use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use hvsim_core::observer::{percent_correct, score_log_line, ScoreRecord};
use hvsim_core::{DatasetManifest, ImageStack};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::StudyConfig;
use crate::error::{StudyError, StudyResult};
use crate::render::{self, Window};
use crate::selection::{presentation_order, select_stacks};

const KEY_FILE: &str = "token.key";
const SESSION_DIR: &str = "sessions";

/// Persisted session header. `stacks` holds dataset ids and never leaves
/// the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySession {
    pub session_id: String,
    pub observer_id: String,
    pub selection_seed: u64,
    pub stacks: Vec<String>,
    pub created_at: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreSubmission {
    /// Opaque stack token as handed out by `next`.
    pub stack: String,
    pub score: f64,
    pub presentations: u32,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub observer_id: String,
    pub created_at: u64,
    pub total: usize,
    pub cursor: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextStack {
    pub done: bool,
    pub position: usize,
    pub total: usize,
    pub stack: Option<String>,
    pub slices: Option<usize>,
    pub slices_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
    pub cursor: usize,
    pub total: usize,
    pub complete: bool,
}

/// Percent correct and records are only released once the session is
/// complete; a partial session reports progress alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResults {
    pub session_id: String,
    pub observer_id: String,
    pub partial: bool,
    pub scored: usize,
    pub total: usize,
    pub percent_correct: Option<BTreeMap<u8, f64>>,
    pub records: Option<Vec<ScoreRecord>>,
}

struct SessionState {
    meta: StudySession,
    records: Vec<ScoreRecord>,
    log: File,
}

impl SessionState {
    fn view(&self) -> SessionView {
        SessionView {
            session_id: self.meta.session_id.clone(),
            observer_id: self.meta.observer_id.clone(),
            created_at: self.meta.created_at,
            total: self.meta.stacks.len(),
            cursor: self.records.len(),
            complete: self.complete(),
        }
    }

    fn complete(&self) -> bool {
        self.records.len() == self.meta.stacks.len()
    }
}

pub struct Study {
    config: StudyConfig,
    manifest: DatasetManifest,
    selection: Vec<String>,
    token_to_id: HashMap<String, String>,
    id_to_token: HashMap<String, String>,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionState>>>>,
    last_stack: Mutex<Option<Arc<ImageStack>>>,
}

impl Study {
    /// Load the manifest, fix the selection and recover any sessions left
    /// in `state_dir` by replaying their score logs.
    pub fn open(config: StudyConfig) -> StudyResult<Self> {
        config.validate()?;
        let manifest = DatasetManifest::load(&config.dataset)?;
        manifest.validate_structure()?;
        let selection = select_stacks(&manifest, &config.levels, config.per_condition, config.selection_seed)?;
        let session_dir = config.state_dir.join(SESSION_DIR);
        fs::create_dir_all(&session_dir).map_err(|e| StudyError::io(&session_dir, e))?;
        let key = token_key(&config.state_dir)?;
        let mut token_to_id = HashMap::new();
        let mut id_to_token = HashMap::new();
        for id in &selection {
            let token = stack_token(&key, id);
            token_to_id.insert(token.clone(), id.clone());
            id_to_token.insert(id.clone(), token);
        }
        let study = Study {
            config,
            manifest,
            selection,
            token_to_id,
            id_to_token,
            sessions: Mutex::new(HashMap::new()),
            last_stack: Mutex::new(None),
        };
        study.recover()?;
        Ok(study)
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    /// Selected dataset ids (server side only).
    pub fn selection(&self) -> &[String] {
        &self.selection
    }

    pub fn token_of(&self, stack_id: &str) -> Option<&str> {
        self.id_to_token.get(stack_id).map(String::as_str)
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.lock().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn session_dir(&self) -> PathBuf {
        self.config.state_dir.join(SESSION_DIR)
    }

    fn recover(&self) -> StudyResult<()> {
        let dir = self.session_dir();
        let entries = fs::read_dir(&dir).map_err(|e| StudyError::io(&dir, e))?;
        let mut sessions = self.sessions.lock().unwrap();
        for entry in entries {
            let path = entry.map_err(|e| StudyError::io(&dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| StudyError::io(&path, e))?;
            let meta: StudySession = serde_json::from_str(&text)
                .map_err(|e| StudyError::Corrupt(format!("{}: {e}", path.display())))?;
            let state = replay(&dir, meta)?;
            log::info!(
                "recovered session {} ({} of {} scored)",
                state.meta.session_id,
                state.records.len(),
                state.meta.stacks.len()
            );
            sessions.insert(state.meta.session_id.clone(), Arc::new(Mutex::new(state)));
        }
        Ok(())
    }

    fn get(&self, sid: &str) -> StudyResult<Arc<Mutex<SessionState>>> {
        self.sessions
            .lock()
            .unwrap()
            .get(sid)
            .cloned()
            .ok_or_else(|| StudyError::UnknownSession(sid.to_string()))
    }

    pub fn create_session(&self, observer_id: &str) -> StudyResult<SessionView> {
        let observer_id = observer_id.trim();
        if observer_id.is_empty() || observer_id.len() > 128 || observer_id.chars().any(char::is_control) {
            return Err(StudyError::Validation(
                "observer_id must be 1-128 printable characters".into(),
            ));
        }
        let meta = StudySession {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            observer_id: observer_id.to_string(),
            selection_seed: self.config.selection_seed,
            stacks: presentation_order(&self.selection, self.config.selection_seed, observer_id),
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let dir = self.session_dir();
        let log_path = dir.join(format!("{}.jsonl", meta.session_id));
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| StudyError::io(&log_path, e))?;
        // header last: a session without one is never recovered
        let header = dir.join(format!("{}.json", meta.session_id));
        let tmp = dir.join(format!("{}.json.tmp", meta.session_id));
        let bytes = serde_json::to_vec_pretty(&meta).expect("session serializes");
        fs::write(&tmp, bytes).map_err(|e| StudyError::io(&tmp, e))?;
        fs::rename(&tmp, &header).map_err(|e| StudyError::io(&header, e))?;
        let state = SessionState {
            meta,
            records: Vec::new(),
            log,
        };
        let view = state.view();
        log::info!("session {} created for observer {}", view.session_id, view.observer_id);
        self.sessions
            .lock()
            .unwrap()
            .insert(view.session_id.clone(), Arc::new(Mutex::new(state)));
        Ok(view)
    }

    pub fn session(&self, sid: &str) -> StudyResult<SessionView> {
        Ok(self.get(sid)?.lock().unwrap().view())
    }

    pub fn next(&self, sid: &str) -> StudyResult<NextStack> {
        let session = self.get(sid)?;
        let state = session.lock().unwrap();
        let total = state.meta.stacks.len();
        let position = state.records.len();
        let slices_per_second = self.manifest.viewing.slices_per_second;
        if position == total {
            return Ok(NextStack {
                done: true,
                position,
                total,
                stack: None,
                slices: None,
                slices_per_second,
            });
        }
        let id = &state.meta.stacks[position];
        let entry = self
            .manifest
            .find(id)
            .ok_or_else(|| StudyError::Corrupt(format!("stack {id} missing from manifest")))?;
        Ok(NextStack {
            done: false,
            position,
            total,
            stack: Some(self.id_to_token[id].clone()),
            slices: Some(entry.dims.nz),
            slices_per_second,
        })
    }

    pub fn record_score(&self, sid: &str, submission: &ScoreSubmission) -> StudyResult<Ack> {
        let score = submission.score;
        if !(score.fract() == 0.0 && (0.0..=3.0).contains(&score)) {
            return Err(StudyError::Validation(format!("score must be one of 0, 1, 2, 3, got {score}")));
        }
        if submission.presentations == 0 {
            return Err(StudyError::Validation("presentations must be at least 1".into()));
        }
        let session = self.get(sid)?;
        let mut state = session.lock().unwrap();
        let id = self
            .token_to_id
            .get(&submission.stack)
            .filter(|id| state.meta.stacks.contains(id))
            .ok_or_else(|| StudyError::UnknownStack(submission.stack.clone()))?
            .clone();
        if state.records.iter().any(|r| r.stack_id == id) {
            return Err(StudyError::Conflict(submission.stack.clone()));
        }
        let cursor = state.records.len();
        if cursor == state.meta.stacks.len() {
            return Err(StudyError::SessionComplete);
        }
        if state.meta.stacks[cursor] != id {
            return Err(StudyError::OutOfOrder {
                expected: self.id_to_token[&state.meta.stacks[cursor]].clone(),
                got: submission.stack.clone(),
            });
        }
        let entry = self
            .manifest
            .find(&id)
            .ok_or_else(|| StudyError::Corrupt(format!("stack {id} missing from manifest")))?;
        let record = ScoreRecord {
            stack_id: id,
            label: entry.label,
            complexity: entry.complexity,
            score,
            observer_id: state.meta.observer_id.clone(),
            presentations: submission.presentations,
            elapsed_ms: submission.elapsed_ms,
        };
        let line = score_log_line(&record);
        let log_path = self.session_dir().join(format!("{sid}.jsonl"));
        // one write per line, synced before the ack goes out
        state
            .log
            .write_all(line.as_bytes())
            .and_then(|_| state.log.sync_data())
            .map_err(|e| StudyError::io(&log_path, e))?;
        state.records.push(record);
        Ok(Ack {
            accepted: true,
            cursor: state.records.len(),
            total: state.meta.stacks.len(),
            complete: state.complete(),
        })
    }

    pub fn results(&self, sid: &str) -> StudyResult<SessionResults> {
        let session = self.get(sid)?;
        let state = session.lock().unwrap();
        let complete = state.complete();
        let (fractions, records) = if complete {
            (Some(percent_correct(&state.records)?), Some(state.records.clone()))
        } else {
            (None, None)
        };
        Ok(SessionResults {
            session_id: state.meta.session_id.clone(),
            observer_id: state.meta.observer_id.clone(),
            partial: !complete,
            scored: state.records.len(),
            total: state.meta.stacks.len(),
            percent_correct: fractions,
            records,
        })
    }

    /// Score records of a session regardless of completion (server side).
    pub fn records(&self, sid: &str) -> StudyResult<Vec<ScoreRecord>> {
        Ok(self.get(sid)?.lock().unwrap().records.clone())
    }

    pub fn slice_png(&self, token: &str, k: usize, window: Option<Window>) -> StudyResult<Vec<u8>> {
        let id = self
            .token_to_id
            .get(token)
            .ok_or_else(|| StudyError::UnknownStack(token.to_string()))?;
        let stack = self.load(id)?;
        render::slice_png(&stack, k, window.unwrap_or(self.config.window))
    }

    fn load(&self, id: &str) -> StudyResult<Arc<ImageStack>> {
        let mut cached = self.last_stack.lock().unwrap();
        if let Some(stack) = cached.as_ref().filter(|s| s.id == id) {
            return Ok(stack.clone());
        }
        let entry = self
            .manifest
            .find(id)
            .ok_or_else(|| StudyError::Corrupt(format!("stack {id} missing from manifest")))?;
        let stack = Arc::new(self.manifest.load_stack(&self.config.dataset, entry)?);
        *cached = Some(stack.clone());
        Ok(stack)
    }
}

/// Rebuild a session from its header and log. A torn final line (no
/// newline) is cut off; anything else inconsistent is an error.
fn replay(dir: &Path, meta: StudySession) -> StudyResult<SessionState> {
    let log_path = dir.join(format!("{}.jsonl", meta.session_id));
    let mut log = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| StudyError::io(&log_path, e))?;
    let mut text = String::new();
    log.read_to_string(&mut text).map_err(|e| StudyError::io(&log_path, e))?;
    let complete_len = text.rfind('\n').map_or(0, |i| i + 1);
    if complete_len < text.len() {
        log::warn!(
            "{}: dropping torn trailing line ({} bytes)",
            log_path.display(),
            text.len() - complete_len
        );
        log.set_len(complete_len as u64).map_err(|e| StudyError::io(&log_path, e))?;
    }
    let records = hvsim_core::observer::parse_score_log(&text[..complete_len])
        .map_err(|e| StudyError::Corrupt(format!("{}: {e}", log_path.display())))?;
    if records.len() > meta.stacks.len() {
        return Err(StudyError::Corrupt(format!("{}: more scores than stacks", log_path.display())));
    }
    for (i, (record, id)) in records.iter().zip(&meta.stacks).enumerate() {
        if &record.stack_id != id {
            return Err(StudyError::Corrupt(format!(
                "{}: line {} scores {} but position holds {}",
                log_path.display(),
                i + 1,
                record.stack_id,
                id
            )));
        }
    }
    Ok(SessionState { meta, records, log })
}

fn token_key(state_dir: &Path) -> StudyResult<String> {
    let path = state_dir.join(KEY_FILE);
    if let Ok(key) = fs::read_to_string(&path) {
        if !key.trim().is_empty() {
            return Ok(key.trim().to_string());
        }
    }
    let key = uuid::Uuid::new_v4().simple().to_string();
    fs::write(&path, &key).map_err(|e| StudyError::io(&path, e))?;
    Ok(key)
}

fn stack_token(key: &str, id: &str) -> String {
    let digest = Sha256::new().chain_update(key.as_bytes()).chain_update(b"/").chain_update(id.as_bytes()).finalize();
    digest[..12].iter().map(|b| format!("{b:02x}")).collect()
}
