//! Job records and their lifecycle.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    LearnStyle,
    Generate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Succeeded | Self::Failed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub params: Value,
    /// Artifact ids; non-empty exactly when the job succeeded.
    pub result_refs: Vec<String>,
    pub result: Option<Value>,
    pub error: Option<String>,
    pub created_at_ms: u64,
    pub started_at_ms: Option<u64>,
    pub finished_at_ms: Option<u64>,
    /// Position in global completion order.
    pub finished_seq: Option<u64>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Default)]
pub struct JobBoard {
    jobs: Mutex<HashMap<String, Job>>,
    created: AtomicU64,
    finished: AtomicU64,
}

impl JobBoard {
    pub fn create(&self, kind: JobKind, params: Value) -> Job {
        let n = self.created.fetch_add(1, Ordering::SeqCst) + 1;
        let job = Job {
            id: format!("job-{n:06}"),
            kind,
            status: JobStatus::Queued,
            params,
            result_refs: Vec::new(),
            result: None,
            error: None,
            created_at_ms: now_ms(),
            started_at_ms: None,
            finished_at_ms: None,
            finished_seq: None,
        };
        self.jobs.lock().expect("job lock").insert(job.id.clone(), job.clone());
        job
    }

    pub fn get(&self, id: &str) -> Option<Job> {
        self.jobs.lock().expect("job lock").get(id).cloned()
    }

    fn transition(&self, id: &str, from: JobStatus, f: impl FnOnce(&mut Job)) -> bool {
        let mut jobs = self.jobs.lock().expect("job lock");
        match jobs.get_mut(id) {
            Some(job) if job.status == from => {
                f(job);
                true
            }
            _ => false,
        }
    }

    pub fn start(&self, id: &str) -> bool {
        self.transition(id, JobStatus::Queued, |j| {
            j.status = JobStatus::Running;
            j.started_at_ms = Some(now_ms());
        })
    }

    pub fn succeed(&self, id: &str, refs: Vec<String>, result: Value) -> bool {
        if refs.is_empty() {
            return self.fail(id, "job produced no artifacts".into());
        }
        self.transition(id, JobStatus::Running, |j| {
            j.status = JobStatus::Succeeded;
            j.result_refs = refs;
            j.result = Some(result);
            j.finished_at_ms = Some(now_ms());
            j.finished_seq = Some(self.finished.fetch_add(1, Ordering::SeqCst));
        })
    }

    pub fn fail(&self, id: &str, message: String) -> bool {
        self.transition(id, JobStatus::Running, |j| {
            j.status = JobStatus::Failed;
            j.error = Some(message);
            j.finished_at_ms = Some(now_ms());
            j.finished_seq = Some(self.finished.fetch_add(1, Ordering::SeqCst));
        })
    }
}
