//! On-disk layout: `<root>/<session_id>/session.json` holds the
//! [`SessionRecord`], `<root>/<session_id>/play.jsonl` the play log.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use gtl_core::game::{append_play_log, read_play_log, GameError, PlayLogEntry};
use thiserror::Error;

use crate::session::SessionRecord;

pub const RECORD_FILE: &str = "session.json";
pub const LOG_FILE: &str = "play.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    BadRecord { path: PathBuf, message: String },
    #[error("{path}: line {line}: {message}")]
    BadLog {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |e| StoreError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// A session as found on disk: its record, log entries, and the 1-based
/// line number of each entry.
#[derive(Debug)]
pub struct StoredSession {
    pub record: SessionRecord,
    pub entries: Vec<PlayLogEntry>,
    pub lines: Vec<usize>,
    pub log_path: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    /// Opens (creating if needed) a data directory.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.session_dir(id).join(LOG_FILE)
    }

    /// Writes a new session's record. The record is written to a temporary
    /// name and renamed, so a crash never leaves a half-written record.
    pub fn create(&self, record: &SessionRecord) -> Result<(), StoreError> {
        let dir = self.session_dir(&record.config.session_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let log = dir.join(LOG_FILE);
        File::create(&log).map_err(io_err(&log))?;
        let tmp = dir.join("session.json.tmp");
        let text = serde_json::to_string_pretty(record).expect("records always serialize");
        fs::write(&tmp, text + "\n").map_err(io_err(&tmp))?;
        let path = dir.join(RECORD_FILE);
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(())
    }

    /// Appends one entry and syncs it to disk.
    pub fn append(&self, entry: &PlayLogEntry) -> Result<(), StoreError> {
        let path = self.log_path(&entry.session_id);
        let mut file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let mut line = Vec::new();
        append_play_log(&mut line, entry).map_err(|e| StoreError::Io {
            path: path.clone(),
            message: e.to_string(),
        })?;
        file.write_all(&line).map_err(io_err(&path))?;
        file.sync_data().map_err(io_err(&path))?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<StoredSession, StoreError> {
        load_dir(&self.session_dir(id))
    }

    /// Every session in the data directory. Directories without a record
    /// (a create interrupted before its rename) are skipped.
    pub fn load_all(&self) -> Result<Vec<StoredSession>, StoreError> {
        let mut dirs = Vec::new();
        for item in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let item = item.map_err(io_err(&self.root))?;
            let path = item.path();
            if path.is_dir() {
                if path.join(RECORD_FILE).exists() {
                    dirs.push(path);
                } else {
                    tracing::warn!("skipping {}: no {RECORD_FILE}", path.display());
                }
            }
        }
        dirs.sort();
        dirs.iter().map(|d| load_dir(d)).collect()
    }
}

fn load_dir(dir: &Path) -> Result<StoredSession, StoreError> {
    let record_path = dir.join(RECORD_FILE);
    let text = fs::read_to_string(&record_path).map_err(io_err(&record_path))?;
    let record: SessionRecord =
        serde_json::from_str(&text).map_err(|e| StoreError::BadRecord {
            path: record_path.clone(),
            message: e.to_string(),
        })?;
    let log_path = dir.join(LOG_FILE);
    let (entries, lines) = if log_path.exists() {
        read_log(&log_path)?
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(StoredSession {
        record,
        entries,
        lines,
        log_path,
    })
}

/// Reads a play log, remembering the line each entry came from so replay
/// errors can point at it.
fn read_log(path: &Path) -> Result<(Vec<PlayLogEntry>, Vec<usize>), StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut entries = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match read_play_log(line.as_bytes()) {
            Ok(mut parsed) => {
                entries.append(&mut parsed);
                lines.push(i + 1);
            }
            Err(GameError::BadLogLine { message, .. }) => {
                return Err(StoreError::BadLog {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message,
                })
            }
            Err(e) => {
                return Err(StoreError::BadLog {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok((entries, lines))
}
