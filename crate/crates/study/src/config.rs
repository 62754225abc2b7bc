use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{StudyError, StudyResult};
use crate::render::Window;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Dataset directory with `manifest.json`.
    pub dataset: PathBuf,
    /// Sessions, score logs and the token key live here.
    pub state_dir: PathBuf,
    pub levels: Vec<u8>,
    pub per_condition: usize,
    pub selection_seed: u64,
    pub bind: String,
    /// Viewer bundle served at `/`.
    pub static_dir: Option<PathBuf>,
    pub window: Window,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            dataset: PathBuf::from("dataset"),
            state_dir: PathBuf::from("study-state"),
            levels: vec![0, 2, 4],
            per_condition: 35,
            selection_seed: 11,
            bind: "127.0.0.1:8080".to_string(),
            static_dir: None,
            window: Window::default(),
        }
    }
}

impl StudyConfig {
    /// Reads JSON; relative paths resolve against the config file's directory.
    pub fn load(path: &Path) -> StudyResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| StudyError::io(path, e))?;
        let mut config: StudyConfig =
            serde_json::from_str(&text).map_err(|e| StudyError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.dataset);
        resolve(&mut config.state_dir);
        if let Some(dir) = &mut config.static_dir {
            resolve(dir);
        }
        Ok(config)
    }

    pub fn validate(&self) -> StudyResult<()> {
        if self.levels.is_empty() {
            return Err(StudyError::Validation("at least one complexity level required".into()));
        }
        if self.per_condition == 0 {
            return Err(StudyError::Validation("per_condition must be positive".into()));
        }
        self.window.validate()
    }

    /// Total stacks in a session.
    pub fn session_size(&self) -> usize {
        let mut levels = self.levels.clone();
        levels.sort_unstable();
        levels.dedup();
        levels.len() * 2 * self.per_condition
    }
}
