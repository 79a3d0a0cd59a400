//! Target process selection.
//!
//! Messaging desktop clients run several helper processes; the one holding
//! chat text is taken to be the name-matching process with the highest PID.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("process table source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("malformed process fixture (line {line}): {reason}")]
    MalformedFixture { line: usize, reason: String },
    #[error("target process name must not be empty")]
    EmptyTargetName,
    #[error("no process named {0:?} in the process table")]
    NotFound(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessRecord {
    pub name: String,
    pub pid: u32,
}

/// A snapshot of running processes. PIDs are unique within a snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProcessTable {
    records: Vec<ProcessRecord>,
    captured_at: DateTime<Utc>,
}

impl ProcessTable {
    pub fn new(
        records: Vec<ProcessRecord>,
        captured_at: DateTime<Utc>,
    ) -> Result<Self, DiscoveryError> {
        let mut seen = HashSet::with_capacity(records.len());
        for (idx, rec) in records.iter().enumerate() {
            if rec.name.is_empty() {
                return Err(DiscoveryError::MalformedFixture {
                    line: idx + 1,
                    reason: "empty process name".into(),
                });
            }
            if !seen.insert(rec.pid) {
                return Err(DiscoveryError::MalformedFixture {
                    line: idx + 1,
                    reason: format!("duplicate pid {}", rec.pid),
                });
            }
        }
        Ok(Self {
            records,
            captured_at,
        })
    }

    pub fn records(&self) -> &[ProcessRecord] {
        &self.records
    }

    pub fn captured_at(&self) -> DateTime<Utc> {
        self.captured_at
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone)]
pub enum ProcessSource {
    /// The running operating system (Linux `/proc` only).
    Live,
    /// Newline-delimited JSON, one `{"name": .., "pid": ..}` object per line.
    Fixture(PathBuf),
}

pub fn enumerate_processes(source: &ProcessSource) -> Result<ProcessTable, DiscoveryError> {
    match source {
        ProcessSource::Fixture(path) => load_fixture(path),
        ProcessSource::Live => enumerate_live(),
    }
}

pub fn load_fixture(path: &Path) -> Result<ProcessTable, DiscoveryError> {
    let text = fs::read_to_string(path)
        .map_err(|e| DiscoveryError::SourceUnavailable(format!("{}: {e}", path.display())))?;
    parse_fixture(&text)
}

pub fn parse_fixture(text: &str) -> Result<ProcessTable, DiscoveryError> {
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ProcessRecord =
            serde_json::from_str(line).map_err(|e| DiscoveryError::MalformedFixture {
                line: idx + 1,
                reason: e.to_string(),
            })?;
        records.push(rec);
    }
    ProcessTable::new(records, Utc::now())
}

#[cfg(target_os = "linux")]
fn enumerate_live() -> Result<ProcessTable, DiscoveryError> {
    let entries = fs::read_dir("/proc")
        .map_err(|e| DiscoveryError::SourceUnavailable(format!("/proc: {e}")))?;
    let mut records = Vec::new();
    for entry in entries.flatten() {
        let Some(pid) = entry.file_name().to_str().and_then(|s| s.parse::<u32>().ok()) else {
            continue;
        };
        // processes may exit between readdir and read
        let Ok(comm) = fs::read_to_string(entry.path().join("comm")) else {
            continue;
        };
        let name = comm.trim_end_matches('\n').to_string();
        if !name.is_empty() {
            records.push(ProcessRecord { name, pid });
        }
    }
    records.sort_by_key(|r| r.pid);
    ProcessTable::new(records, Utc::now())
}

#[cfg(not(target_os = "linux"))]
fn enumerate_live() -> Result<ProcessTable, DiscoveryError> {
    Err(DiscoveryError::SourceUnavailable(
        "live process enumeration is not supported on this platform".into(),
    ))
}

/// Returns the record with the highest PID among those whose image name
/// equals `target_name`, compared ASCII case-insensitively. One pass over
/// the table.
pub fn select_target<'a>(
    table: &'a ProcessTable,
    target_name: &str,
) -> Result<&'a ProcessRecord, DiscoveryError> {
    if target_name.is_empty() {
        return Err(DiscoveryError::EmptyTargetName);
    }
    let mut best: Option<&ProcessRecord> = None;
    for rec in &table.records {
        if rec.name.eq_ignore_ascii_case(target_name) && best.is_none_or(|b| b.pid < rec.pid) {
            best = Some(rec);
        }
    }
    best.ok_or_else(|| DiscoveryError::NotFound(target_name.to_string()))
}
