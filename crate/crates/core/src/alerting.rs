//! Alert composition and delivery.
//!
//! Alerts are POSTed one per request as JSON. An alert that still fails after
//! the retry schedule goes to an append-only spool file (fsynced per line);
//! `flush_spool` later re-sends the spooled bytes unchanged. Alerts are never
//! reordered: once one alert is spooled, the rest of the batch is spooled
//! behind it.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::SensitivityVerdict;
use crate::retrieval::MsisdnRecord;

pub const ALERT_VERSION: u32 = 1;
pub const SPOOL_FILE: &str = "alerts.spool.ndjson";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub version: u32,
    pub scan_id: String,
    pub message_text: String,
    pub score: f64,
    pub matched_keywords: Vec<String>,
    pub user_msisdns: Vec<String>,
    pub pid: u32,
    pub dump_digest: String,
    pub captured_at: DateTime<Utc>,
    pub emitted_at: DateTime<Utc>,
    pub unverified: bool,
}

/// Provenance shared by every alert of one scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanMeta {
    pub scan_id: String,
    pub pid: u32,
    pub dump_digest: String,
    pub captured_at: DateTime<Utc>,
}

/// One alert per released verdict, each carrying every extracted number.
pub fn compose_alerts(
    released: &[SensitivityVerdict],
    msisdns: &[MsisdnRecord],
    meta: &ScanMeta,
    emitted_at: DateTime<Utc>,
) -> Vec<Alert> {
    let numbers: Vec<String> = msisdns.iter().map(|m| m.number.clone()).collect();
    released
        .iter()
        .filter(|v| !v.message.text.is_empty())
        .map(|v| Alert {
            version: ALERT_VERSION,
            scan_id: meta.scan_id.clone(),
            message_text: v.message.text.clone(),
            score: v.score,
            matched_keywords: v.message.matched_keywords.clone(),
            user_msisdns: numbers.clone(),
            pid: meta.pid,
            dump_digest: meta.dump_digest.clone(),
            captured_at: meta.captured_at,
            emitted_at,
            unverified: v.unverified,
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("cannot write spool {path}: {source}")]
    Spool {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot serialize alert: {0}")]
    Serialize(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchReport {
    pub delivered: usize,
    pub spooled: usize,
}

#[derive(Debug, Clone)]
pub struct DispatchConfig {
    /// `None` spools every alert.
    pub endpoint: Option<String>,
    pub spool_dir: PathBuf,
    /// Retries after the first attempt.
    pub retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub initial_backoff: Duration,
    pub request_timeout: Duration,
}

impl DispatchConfig {
    pub fn new(endpoint: Option<String>, spool_dir: impl Into<PathBuf>) -> Self {
        Self {
            endpoint,
            spool_dir: spool_dir.into(),
            retries: 3,
            initial_backoff: Duration::from_secs(1),
            request_timeout: Duration::from_secs(10),
        }
    }

    pub fn spool_path(&self) -> PathBuf {
        self.spool_dir.join(SPOOL_FILE)
    }
}

/// Delivers one request body. `Err` carries a human-readable reason.
pub trait Transport {
    fn post(&mut self, body: &[u8]) -> Result<(), String>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
}

impl HttpTransport {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.to_string(),
        }
    }
}

impl Transport for HttpTransport {
    fn post(&mut self, body: &[u8]) -> Result<(), String> {
        let resp = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if status.is_success() {
            Ok(())
        } else {
            Err(format!("endpoint answered {status}"))
        }
    }
}

fn deliver<T: Transport + ?Sized>(transport: &mut T, body: &[u8], cfg: &DispatchConfig) -> bool {
    let mut delay = cfg.initial_backoff;
    for attempt in 0..=cfg.retries {
        if attempt > 0 {
            thread::sleep(delay);
            delay *= 2;
        }
        match transport.post(body) {
            Ok(()) => return true,
            Err(reason) => log::warn!("alert delivery attempt {} failed: {reason}", attempt + 1),
        }
    }
    false
}

fn append_spool(path: &Path, body: &[u8]) -> Result<(), DispatchError> {
    let err = |source| DispatchError::Spool {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(err)?;
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(err)?;
    let mut line = Vec::with_capacity(body.len() + 1);
    line.extend_from_slice(body);
    line.push(b'\n');
    f.write_all(&line).map_err(err)?;
    f.sync_data().map_err(err)
}

pub fn dispatch(alerts: &[Alert], cfg: &DispatchConfig) -> Result<DispatchReport, DispatchError> {
    match &cfg.endpoint {
        Some(url) => dispatch_with(alerts, &mut HttpTransport::new(url, cfg.request_timeout), cfg),
        None => dispatch_with(alerts, &mut Unreachable, cfg),
    }
}

struct Unreachable;

impl Transport for Unreachable {
    fn post(&mut self, _: &[u8]) -> Result<(), String> {
        Err("no endpoint configured".into())
    }
}

pub fn dispatch_with<T: Transport + ?Sized>(
    alerts: &[Alert],
    transport: &mut T,
    cfg: &DispatchConfig,
) -> Result<DispatchReport, DispatchError> {
    let spool = cfg.spool_path();
    let mut report = DispatchReport::default();
    let mut endpoint_down = cfg.endpoint.is_none();
    for alert in alerts {
        let body = serde_json::to_vec(alert)?;
        if !endpoint_down && deliver(transport, &body, cfg) {
            report.delivered += 1;
            continue;
        }
        endpoint_down = true;
        append_spool(&spool, &body)?;
        report.spooled += 1;
    }
    Ok(report)
}

/// Re-sends spooled alerts in order, byte for byte. Stops at the first alert
/// that still cannot be delivered; it and everything after it stay spooled.
/// `spooled` in the report counts what remains.
pub fn flush_spool(cfg: &DispatchConfig) -> Result<DispatchReport, DispatchError> {
    match &cfg.endpoint {
        Some(url) => flush_spool_with(&mut HttpTransport::new(url, cfg.request_timeout), cfg),
        None => flush_spool_with(&mut Unreachable, cfg),
    }
}

pub fn flush_spool_with<T: Transport + ?Sized>(
    transport: &mut T,
    cfg: &DispatchConfig,
) -> Result<DispatchReport, DispatchError> {
    let path = cfg.spool_path();
    let err = |source| DispatchError::Spool {
        path: path.clone(),
        source,
    };
    let content = match fs::read(&path) {
        Ok(c) => c,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(DispatchReport::default()),
        Err(e) => return Err(err(e)),
    };
    let lines: Vec<&[u8]> = content
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .collect();

    let mut delivered = 0;
    if cfg.endpoint.is_some() {
        for line in &lines {
            if !deliver(transport, line, cfg) {
                break;
            }
            delivered += 1;
        }
    }
    let remaining = &lines[delivered..];
    if delivered > 0 {
        if remaining.is_empty() {
            fs::remove_file(&path).map_err(err)?;
        } else {
            let tmp = path.with_extension("ndjson.tmp");
            {
                let mut f = File::create(&tmp).map_err(err)?;
                for line in remaining {
                    f.write_all(line).map_err(err)?;
                    f.write_all(b"\n").map_err(err)?;
                }
                f.sync_all().map_err(err)?;
            }
            fs::rename(&tmp, &path).map_err(err)?;
        }
    }
    Ok(DispatchReport {
        delivered,
        spooled: remaining.len(),
    })
}
