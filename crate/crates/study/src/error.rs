use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown stack {0}")]
    UnknownStack(String),
    #[error("slice {index} out of range, stack has {nz} slices")]
    SliceOutOfRange { index: usize, nz: usize },
    #[error("{0}")]
    Validation(String),
    #[error("stack {0} already scored in this session")]
    Conflict(String),
    #[error("stack {got} is not the current stack {expected}")]
    OutOfOrder { expected: String, got: String },
    #[error("session already complete")]
    SessionComplete,
    #[error("complexity {level} {label}: {available} stacks available, {required} required")]
    InsufficientStacks {
        level: u8,
        label: &'static str,
        available: usize,
        required: usize,
    },
    #[error("corrupt session state: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Core(#[from] hvsim_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type StudyResult<T> = Result<T, StudyError>;

impl StudyError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StudyError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            StudyError::UnknownSession(_) => "unknown_session",
            StudyError::UnknownStack(_) => "unknown_stack",
            StudyError::SliceOutOfRange { .. } => "slice_out_of_range",
            StudyError::Validation(_) => "validation",
            StudyError::Conflict(_) => "conflict",
            StudyError::OutOfOrder { .. } => "out_of_order",
            StudyError::SessionComplete => "session_complete",
            StudyError::InsufficientStacks { .. } => "insufficient_stacks",
            StudyError::Corrupt(_) => "corrupt_state",
            StudyError::Core(e) => e.code(),
            StudyError::Io { .. } => "io",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            StudyError::UnknownSession(_) | StudyError::UnknownStack(_) | StudyError::SliceOutOfRange { .. } => {
                StatusCode::NOT_FOUND
            }
            StudyError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StudyError::Conflict(_) | StudyError::OutOfOrder { .. } | StudyError::SessionComplete => {
                StatusCode::CONFLICT
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Message safe to send to a client. Server-side failures can name
    /// files (and file names carry stack ids), so those stay in the log.
    pub fn public_message(&self) -> String {
        if self.status().is_server_error() {
            "internal error".to_string()
        } else {
            self.to_string()
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl IntoResponse for StudyError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            log::error!("{self}");
        }
        let body = ErrorBody {
            code: self.code().to_string(),
            message: self.public_message(),
        };
        (self.status(), Json(body)).into_response()
    }
}
