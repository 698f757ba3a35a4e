//! Append-only NDJSON journal used to restore jobs after a restart.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use qda_core::jobs::{JobState, Submission};
use qda_core::AnalysisResult;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum JournalEntry {
    Submitted {
        job_id: String,
        created_at: String,
        submission: Submission,
    },
    Finished {
        job_id: String,
        finished_at: String,
        state: JobState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        doc_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        result: Option<Box<AnalysisResult>>,
    },
}

pub(crate) struct Journal {
    path: PathBuf,
    file: Mutex<File>,
}

impl Journal {
    pub(crate) fn open(path: &Path) -> std::io::Result<(Self, Vec<JournalEntry>)> {
        let mut entries = Vec::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(&line) {
                    Ok(entry) => entries.push(entry),
                    // A torn final write is expected after a crash.
                    Err(e) => tracing::warn!(line = n + 1, error = %e, "skipping unreadable journal line"),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((
            Self {
                path: path.to_path_buf(),
                file: Mutex::new(file),
            },
            entries,
        ))
    }

    pub(crate) fn append(&self, entry: &JournalEntry) {
        let mut line = serde_json::to_string(entry).expect("journal entries serialize");
        line.push('\n');
        let mut file = self.file.lock().unwrap();
        if let Err(e) = file.write_all(line.as_bytes()).and_then(|_| file.flush()) {
            tracing::error!(path = %self.path.display(), error = %e, "journal write failed");
        }
    }
}
