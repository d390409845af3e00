//! Append-only event log with periodic snapshots.
//!
//! `events.jsonl` holds one `{"seq": n, "event": ...}` line per accepted
//! write. `snapshot.json` holds the full state as of some `seq` and is
//! replaced atomically through a temporary file and rename. Recovery loads
//! the snapshot and replays every later event.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetError, Event, ServiceState};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub seq: u64,
    pub event: Event,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub state: ServiceState,
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug)]
pub struct EventStore {
    dir: PathBuf,
    log: File,
    seq: u64,
    since_snapshot: u64,
    snapshot_every: u64,
}

impl EventStore {
    /// Opens (or creates) the store in `dir` and returns the recovered state.
    pub fn open(dir: &Path, snapshot_every: u64) -> Result<(Self, ServiceState), DatasetError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let (mut seq, mut state) = if snap_path.exists() {
            let text = fs::read_to_string(&snap_path).map_err(|e| io_err(&snap_path, e))?;
            let snap: Snapshot = serde_json::from_str(&text).map_err(|e| DatasetError::Corrupt {
                path: snap_path.display().to_string(),
                message: e.to_string(),
            })?;
            (snap.seq, snap.state)
        } else {
            (0, ServiceState::default())
        };
        let log_path = dir.join(EVENTS_FILE);
        let mut since_snapshot = 0;
        if log_path.exists() {
            let reader = BufReader::new(File::open(&log_path).map_err(|e| io_err(&log_path, e))?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| io_err(&log_path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let logged: LoggedEvent = serde_json::from_str(&line).map_err(|e| DatasetError::Corrupt {
                    path: log_path.display().to_string(),
                    message: format!("line {}: {e}", n + 1),
                })?;
                if logged.seq <= seq {
                    continue;
                }
                if logged.seq != seq + 1 {
                    return Err(DatasetError::Corrupt {
                        path: log_path.display().to_string(),
                        message: format!("expected seq {}, found {}", seq + 1, logged.seq),
                    });
                }
                state.apply(&logged.event);
                seq = logged.seq;
                since_snapshot += 1;
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?;
        Ok((
            EventStore {
                dir: dir.to_path_buf(),
                log,
                seq,
                since_snapshot,
                snapshot_every: snapshot_every.max(1),
            },
            state,
        ))
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Durably appends `event` before it is applied to the in-memory state.
    pub fn append(&mut self, event: &Event) -> Result<(), DatasetError> {
        let logged = LoggedEvent {
            seq: self.seq + 1,
            event: event.clone(),
        };
        let mut line = serde_json::to_string(&logged).expect("events serialize");
        line.push('\n');
        let path = self.dir.join(EVENTS_FILE);
        self.log.write_all(line.as_bytes()).map_err(|e| io_err(&path, e))?;
        self.log.sync_data().map_err(|e| io_err(&path, e))?;
        self.seq += 1;
        self.since_snapshot += 1;
        Ok(())
    }

    /// Writes a snapshot once enough events have accumulated since the last.
    pub fn maybe_snapshot(&mut self, state: &ServiceState) -> Result<(), DatasetError> {
        if self.since_snapshot >= self.snapshot_every {
            self.snapshot(state)?;
        }
        Ok(())
    }

    pub fn snapshot(&mut self, state: &ServiceState) -> Result<(), DatasetError> {
        let snap = Snapshot {
            seq: self.seq,
            state: state.clone(),
        };
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let target = self.dir.join(SNAPSHOT_FILE);
        let body = serde_json::to_vec_pretty(&snap).expect("snapshot serializes");
        let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(&body).map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &target).map_err(|e| io_err(&target, e))?;
        self.since_snapshot = 0;
        Ok(())
    }
}
