//! Reading-study service: fixed stack selection shared by all observers,
//! per-observer presentation order, cine slice delivery as PNG, and an
//! append-only JSONL score log per session.

pub mod api;
pub mod config;
pub mod error;
pub mod render;
pub mod selection;
pub mod session;

pub use api::{router, serve};
pub use config::StudyConfig;
pub use error::{StudyError, StudyResult};
pub use render::{slice_png, Window};
pub use selection::{presentation_order, select_stacks};
pub use session::{Ack, NextStack, ScoreSubmission, SessionResults, SessionView, Study, StudySession};
