//! Sequential annotation queue backed by a task file and an append-only
//! feedback log.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use nlmaps_core::dialogue::{self, AnnotationTask, DialogueError, MarkingFeedback, TokenMark};
use nlmaps_core::mrl::KeyvalRow;
use nlmaps_core::uncertainty::Clarification;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{0}` was already answered")]
    AlreadyAnswered(String),
    #[error("invalid feedback: {0}")]
    InvalidFeedback(String),
    #[error("duplicate task id `{0}` in task file")]
    DuplicateTask(String),
    #[error("feedback log {path}: {source}")]
    Log {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Read(#[from] DialogueError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Answered,
}

/// A task as served to the annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTask {
    pub id: String,
    pub question: String,
    pub hypothesis: String,
    pub keyvals: Vec<KeyvalRow>,
    pub clarification: Clarification,
    pub status: TaskStatus,
}

impl SessionTask {
    fn from_annotation(task: AnnotationTask) -> Self {
        SessionTask {
            id: task.id,
            question: task.question,
            hypothesis: task.hypothesis,
            keyvals: task.keyvals,
            clarification: task.clarification,
            status: TaskStatus::Pending,
        }
    }
}

/// Body of a feedback submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackBody {
    pub marks: Vec<TokenMark>,
    pub answer: String,
    /// Client timestamp; the log sequence number is used when absent.
    #[serde(default)]
    pub ts: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    pub answered: usize,
    pub pending: usize,
}

#[derive(Debug)]
pub struct TaskStore {
    tasks: Vec<SessionTask>,
    index: HashMap<String, usize>,
    log_path: PathBuf,
    log: File,
    records: usize,
}

impl TaskStore {
    /// Loads tasks and replays the existing log (creating it if needed).
    pub fn open(
        tasks_path: impl AsRef<Path>,
        log_path: impl AsRef<Path>,
    ) -> Result<Self, StoreError> {
        let tasks: Vec<AnnotationTask> = dialogue::read_jsonl(tasks_path)?;
        Self::from_tasks(tasks, log_path)
    }

    pub fn from_tasks(
        tasks: Vec<AnnotationTask>,
        log_path: impl AsRef<Path>,
    ) -> Result<Self, StoreError> {
        let log_path = log_path.as_ref().to_path_buf();
        let log_err = |source| StoreError::Log {
            path: log_path.clone(),
            source,
        };
        let mut index = HashMap::new();
        let tasks: Vec<SessionTask> = tasks
            .into_iter()
            .map(SessionTask::from_annotation)
            .collect();
        for (i, t) in tasks.iter().enumerate() {
            if index.insert(t.id.clone(), i).is_some() {
                return Err(StoreError::DuplicateTask(t.id.clone()));
            }
        }
        let past: Vec<MarkingFeedback> = if log_path.exists() {
            dialogue::read_jsonl(&log_path)?
        } else {
            Vec::new()
        };
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(log_err)?;
        let mut store = TaskStore {
            tasks,
            index,
            log_path,
            log,
            records: past.len(),
        };
        for fb in &past {
            match store.index.get(&fb.hypothesis_id) {
                Some(&i) => store.tasks[i].status = TaskStatus::Answered,
                None => log::warn!("log references unknown task `{}`", fb.hypothesis_id),
            }
        }
        Ok(store)
    }

    /// First pending task in file order.
    pub fn next(&self) -> Option<&SessionTask> {
        self.tasks.iter().find(|t| t.status == TaskStatus::Pending)
    }

    pub fn get(&self, id: &str) -> Option<&SessionTask> {
        self.index.get(id).map(|&i| &self.tasks[i])
    }

    pub fn stats(&self) -> Stats {
        let answered = self
            .tasks
            .iter()
            .filter(|t| t.status == TaskStatus::Answered)
            .count();
        Stats {
            total: self.tasks.len(),
            answered,
            pending: self.tasks.len() - answered,
        }
    }

    /// Validates, logs and applies one submission. The record is written as a
    /// single line with one `write_all` before the task changes state.
    pub fn submit(&mut self, id: &str, body: FeedbackBody) -> Result<MarkingFeedback, StoreError> {
        let &i = self
            .index
            .get(id)
            .ok_or_else(|| StoreError::UnknownTask(id.into()))?;
        if self.tasks[i].status == TaskStatus::Answered {
            return Err(StoreError::AlreadyAnswered(id.into()));
        }
        let fb = MarkingFeedback {
            hypothesis_id: id.into(),
            marks: body.marks,
            answer: body.answer,
            ts: body.ts.unwrap_or(self.records as u64),
        };
        dialogue::distribute_rewards(&self.tasks[i].hypothesis, &fb)
            .map_err(|e| StoreError::InvalidFeedback(e.to_string()))?;
        let mut line = serde_json::to_string(&fb).expect("feedback serializes");
        line.push('\n');
        let log_err = |source| StoreError::Log {
            path: self.log_path.clone(),
            source,
        };
        self.log.write_all(line.as_bytes()).map_err(log_err)?;
        self.log.sync_data().map_err(log_err)?;
        self.records += 1;
        self.tasks[i].status = TaskStatus::Answered;
        Ok(fb)
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }
}

/// Reads a feedback log written by [`TaskStore`].
pub fn read_feedback(path: impl AsRef<Path>) -> Result<Vec<MarkingFeedback>, DialogueError> {
    dialogue::read_jsonl(path)
}

/// Writes tasks as JSON lines through a temporary file and a rename.
pub fn write_tasks(path: impl AsRef<Path>, tasks: &[AnnotationTask]) -> Result<(), DialogueError> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    dialogue::write_jsonl(&tmp, tasks)?;
    fs::rename(&tmp, path).map_err(|source| DialogueError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nlmaps_core::dialogue::Mark;
    use nlmaps_core::mrl;

    fn task(id: &str) -> AnnotationTask {
        let hypothesis =
            "query(area(keyval('name','Lyon')),nwr(keyval('shop','wine')),qtype(latlong))"
                .to_string();
        AnnotationTask {
            id: id.into(),
            question: "closest Off License from Lyon".into(),
            keyvals: mrl::keyval_rows(&hypothesis).unwrap(),
            hypothesis,
            clarification: Clarification {
                question: "Did you mean wine or alcohol?".into(),
                token: "wine".into(),
                alternative: Some("alcohol".into()),
                span: (53, 57),
            },
            max_entropy: 0.3,
            mistake: true,
        }
    }

    #[test]
    fn queue_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("fb.jsonl");
        let mut store = TaskStore::from_tasks(vec![task("a"), task("b")], &log).unwrap();
        assert_eq!(store.next().unwrap().id, "a");
        let row = store.next().unwrap().keyvals[1].clone();
        let body = FeedbackBody {
            marks: vec![TokenMark {
                start: row.value_span.0,
                end: row.value_span.1,
                mark: Mark::Incorrect,
            }],
            answer: "alcohol".into(),
            ts: None,
        };
        let fb = store.submit("a", body.clone()).unwrap();
        assert_eq!(fb.ts, 0);
        assert!(matches!(
            store.submit("a", body.clone()),
            Err(StoreError::AlreadyAnswered(_))
        ));
        assert!(matches!(
            store.submit("zz", body.clone()),
            Err(StoreError::UnknownTask(_))
        ));
        let bad = FeedbackBody {
            marks: vec![TokenMark {
                start: 0,
                end: 999,
                mark: Mark::Correct,
            }],
            ..body
        };
        assert!(matches!(
            store.submit("b", bad),
            Err(StoreError::InvalidFeedback(_))
        ));
        assert_eq!(
            store.stats(),
            Stats {
                total: 2,
                answered: 1,
                pending: 1
            }
        );
        drop(store);

        let store = TaskStore::from_tasks(vec![task("a"), task("b")], &log).unwrap();
        assert_eq!(store.next().unwrap().id, "b");
        assert_eq!(read_feedback(&log).unwrap().len(), 1);
    }
}
