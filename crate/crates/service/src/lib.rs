//! Orchestration around the parser: the annotation task queue, the HTTP
//! API, offline fine-tuning on markings and the `nlmaps` command line.

pub mod api;
pub mod cli;
pub mod finetune;
pub mod store;

pub use api::{router, AppState};
pub use finetune::{finetune, FinetuneError, FinetuneSummary};
pub use store::{FeedbackBody, SessionTask, Stats, StoreError, TaskStatus, TaskStore};
