//! JSON-Lines event log and snapshot files.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use super::event::Event;
use super::state::State;

pub const LOG_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses JSON-Lines events, reporting the 1-based line of the first bad one.
/// Blank lines are skipped.
pub fn read_events(reader: impl Read) -> impl Iterator<Item = Result<Event, LogError>> {
    BufReader::new(reader)
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line_no = i as u64 + 1;
            match line {
                Err(e) => Some(Err(LogError::Malformed {
                    line: line_no,
                    reason: e.to_string(),
                })),
                Ok(l) if l.trim().is_empty() => None,
                Ok(l) => Some(serde_json::from_str::<Event>(&l).map_err(|e| {
                    LogError::Malformed {
                        line: line_no,
                        reason: e.to_string(),
                    }
                })),
            }
        })
}

pub fn write_events<'a>(
    mut writer: impl Write,
    events: impl IntoIterator<Item = &'a Event>,
) -> io::Result<()> {
    for e in events {
        writer.write_all(e.to_json_line().as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

#[derive(Debug)]
pub enum EventLog {
    Memory(Vec<Event>),
    File { dir: PathBuf, file: File },
}

impl EventLog {
    pub fn memory() -> Self {
        EventLog::Memory(Vec::new())
    }

    pub fn open_dir(dir: &Path) -> Result<Self, LogError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOG_FILE);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(EventLog::File {
            dir: dir.to_path_buf(),
            file,
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        match self {
            EventLog::Memory(_) => None,
            EventLog::File { dir, .. } => Some(dir),
        }
    }

    /// Appends a cluster of events; for files this returns only after the
    /// data is synced.
    pub fn append(&mut self, events: &[Event]) -> Result<(), LogError> {
        match self {
            EventLog::Memory(v) => {
                v.extend_from_slice(events);
                Ok(())
            }
            EventLog::File { dir, file } => {
                let path = dir.join(LOG_FILE);
                let mut buf = Vec::new();
                write_events(&mut buf, events).map_err(io_err(&path))?;
                file.write_all(&buf).map_err(io_err(&path))?;
                file.sync_data().map_err(io_err(&path))
            }
        }
    }

    /// All committed events, in log order.
    pub fn read_all(&self) -> Result<Vec<Event>, LogError> {
        match self {
            EventLog::Memory(v) => Ok(v.clone()),
            EventLog::File { dir, .. } => {
                let path = dir.join(LOG_FILE);
                let f = File::open(&path).map_err(io_err(&path))?;
                read_events(f).collect()
            }
        }
    }

    pub fn write_snapshot(&self, state: &State) -> Result<(), LogError> {
        let Some(dir) = self.dir() else {
            return Ok(());
        };
        let path = dir.join(SNAPSHOT_FILE);
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(state.canonical_json().as_bytes())
            .and_then(|_| f.sync_all())
            .map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn read_snapshot(dir: &Path) -> Result<Option<State>, LogError> {
        let path = dir.join(SNAPSHOT_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let json = fs::read_to_string(&path).map_err(io_err(&path))?;
        State::from_snapshot_json(&json)
            .map(Some)
            .map_err(|e| LogError::Malformed {
                line: 0,
                reason: format!("snapshot: {e}"),
            })
    }
}
