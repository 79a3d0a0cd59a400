//! End-to-end scan: discovery, acquisition, carving, retrieval,
//! classification, privacy filtering, alerting.
//!
//! Intermediates (the memory image, carved strings, rendered text and
//! suppressed verdicts) are zeroed as soon as the next stage no longer needs
//! them. A dump file given as input is shredded at the end of the scan, on
//! success or failure, unless `keep_dump` is set.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;
use std::thread;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use zeroize::{Zeroize, Zeroizing};

use crate::acquisition::{
    self, capture_live, load_dump, read_sidecar, shred_file, AcquisitionError, ImageSource,
    MemoryImage,
};
use crate::alerting::{self, compose_alerts, DispatchConfig, DispatchError, ScanMeta};
use crate::carving::{carve, render_text, DEFAULT_MIN_LEN};
use crate::classify::{
    score_all, PluginScorer, ReferenceModel, Scorer, DEFAULT_PLUGIN_TIMEOUT, DEFAULT_THRESHOLD,
};
use crate::corpus::gen_dataset;
use crate::discovery::{enumerate_processes, select_target, DiscoveryError, ProcessSource};
use crate::privacy::{filter_verdicts, PrivacyPolicy, Retention, ScanSalt};
use crate::retrieval::{
    extract_msisdns, retrieve, KeywordLexicon, RetrievalError, RetrievalOptions,
    DEFAULT_SIM_THRESHOLD,
};

/// Environment variable that overrides the configured alert endpoint.
pub const ENDPOINT_ENV: &str = "PRIVMEM_ENDPOINT";
pub const DEFAULT_TARGET: &str = "WhatsApp.exe";
pub const AUDIT_FILE: &str = "audit.ndjson";

/// Corpus seed and size the built-in reference model is trained on.
pub const BUILTIN_MODEL_SEED: u64 = 42;
pub const BUILTIN_MODEL_PER_CLASS: usize = 150;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierConfig {
    /// Reference model trained on the built-in corpus.
    #[default]
    Builtin,
    /// Path to a saved reference model.
    Model(PathBuf),
    /// Plugin command line, split with shell quoting rules.
    Plugin(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlertConfig {
    pub endpoint: Option<String>,
    pub spool_dir: PathBuf,
    pub retries: u32,
    pub initial_backoff_ms: u64,
    pub request_timeout_ms: u64,
}

impl Default for AlertConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            spool_dir: PathBuf::from("privmem-spool"),
            retries: 3,
            initial_backoff_ms: 1000,
            request_timeout_ms: 10_000,
        }
    }
}

impl AlertConfig {
    pub fn dispatch_config(&self) -> DispatchConfig {
        DispatchConfig {
            endpoint: self.endpoint.clone(),
            spool_dir: self.spool_dir.clone(),
            retries: self.retries,
            initial_backoff: Duration::from_millis(self.initial_backoff_ms),
            request_timeout: Duration::from_millis(self.request_timeout_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub target_name: String,
    /// Process-table fixture used to pick the PID when scanning a dump file.
    pub process_table: Option<PathBuf>,
    /// PID recorded for a dump file when there is no process table.
    pub pid: Option<u32>,
    /// `None` uses the built-in lexicon.
    pub lexicon_path: Option<PathBuf>,
    pub min_len: usize,
    pub sim_threshold: f64,
    pub word_boundary: bool,
    pub classifier: ClassifierConfig,
    pub plugin_timeout_ms: u64,
    pub threshold: f64,
    pub allow_unverified: bool,
    pub retention: Retention,
    pub alert: AlertConfig,
    /// Defaults to `audit.ndjson` in the spool directory.
    pub audit_log: Option<PathBuf>,
    pub keep_dump: bool,
    /// Seconds between scans in watch mode; 0 means one-shot.
    pub interval: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            target_name: DEFAULT_TARGET.into(),
            process_table: None,
            pid: None,
            lexicon_path: None,
            min_len: DEFAULT_MIN_LEN,
            sim_threshold: DEFAULT_SIM_THRESHOLD,
            word_boundary: false,
            classifier: ClassifierConfig::Builtin,
            plugin_timeout_ms: DEFAULT_PLUGIN_TIMEOUT.as_millis() as u64,
            threshold: DEFAULT_THRESHOLD,
            allow_unverified: true,
            retention: Retention::None,
            alert: AlertConfig::default(),
            audit_log: None,
            keep_dump: false,
            interval: 0,
        }
    }
}

impl ScanConfig {
    pub fn from_json(text: &str) -> Result<Self, ScanError> {
        serde_json::from_str(text).map_err(|e| ScanError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScanError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ScanError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ScanError> {
        let bad = |m: String| Err(ScanError::Config(m));
        if self.target_name.is_empty() {
            return bad("target_name must not be empty".into());
        }
        if self.min_len == 0 {
            return bad("min_len must be at least 1".into());
        }
        if !(self.sim_threshold > 0.0 && self.sim_threshold <= 1.0) {
            return bad(format!("sim_threshold must be in (0, 1], got {}", self.sim_threshold));
        }
        self.privacy_policy().validate().map_err(ScanError::Config)
    }

    pub fn privacy_policy(&self) -> PrivacyPolicy {
        PrivacyPolicy {
            threshold: self.threshold,
            allow_unverified: self.allow_unverified,
            retention: self.retention,
        }
    }

    pub fn audit_path(&self) -> PathBuf {
        self.audit_log
            .clone()
            .unwrap_or_else(|| self.alert.spool_dir.join(AUDIT_FILE))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScanInput {
    /// Find the target process and capture it.
    Live,
    /// A dump file already on disk.
    Dump(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Discovery,
    Acquisition,
    Carving,
    Retrieval,
    Classify,
    Privacy,
    Alert,
    Audit,
}

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[discovery] {0}")]
    Discovery(#[from] DiscoveryError),
    #[error("[acquisition] {0}")]
    Acquisition(#[from] AcquisitionError),
    #[error("[retrieval] {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("[classify] {0}")]
    Classifier(String),
    #[error("[alert] {0}")]
    Dispatch(#[from] DispatchError),
    #[error("[audit] cannot append to {path}: {source}")]
    Audit {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl ScanError {
    pub fn stage(&self) -> Stage {
        match self {
            Self::Config(_) => Stage::Config,
            Self::Discovery(_) => Stage::Discovery,
            Self::Acquisition(_) => Stage::Acquisition,
            Self::Retrieval(_) => Stage::Retrieval,
            Self::Classifier(_) => Stage::Classify,
            Self::Dispatch(_) => Stage::Alert,
            Self::Audit { .. } => Stage::Audit,
        }
    }

    /// 2 config, 3 acquisition (including discovery), 4 classifier,
    /// 5 dispatch or spool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Retrieval(_) => 2,
            Self::Discovery(_) | Self::Acquisition(_) => 3,
            Self::Classifier(_) => 4,
            Self::Dispatch(_) | Self::Audit { .. } => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Items the stage produced.
    pub count: usize,
    pub elapsed_us: u64,
}

/// Per-stage counts that do not depend on the clock or the scan id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanCounts {
    pub pid: u32,
    pub dump_digest: String,
    pub strings: usize,
    pub candidates: usize,
    pub msisdns: usize,
    pub released: usize,
    pub suppressed: usize,
    pub unverified: usize,
    pub delivered: usize,
    pub spooled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub scan_id: String,
    pub scorer_id: String,
    pub started_at: DateTime<Utc>,
    pub elapsed_ms: u64,
    #[serde(flatten)]
    pub counts: ScanCounts,
    pub stages: Vec<StageRecord>,
}

#[derive(Serialize)]
struct AuditRecord<'a> {
    scan_id: &'a str,
    released: usize,
    suppressed: usize,
    scorer_id: &'a str,
    dump_digest: &'a str,
    pid: u32,
    started_at: DateTime<Utc>,
    stages: &'a [StageRecord],
    #[serde(skip_serializing_if = "Option::is_none")]
    suppressed_digests: Option<&'a [String]>,
}

/// The reference model trained on the built-in corpus; trained once per
/// process.
pub fn builtin_model() -> &'static ReferenceModel {
    static MODEL: OnceLock<ReferenceModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let data = gen_dataset(BUILTIN_MODEL_PER_CLASS, BUILTIN_MODEL_SEED);
        ReferenceModel::train(&data, BUILTIN_MODEL_SEED).expect("built-in corpus has both classes")
    })
}

pub fn build_scorer(config: &ScanConfig) -> Result<Box<dyn Scorer>, ScanError> {
    match &config.classifier {
        ClassifierConfig::Builtin => Ok(Box::new(builtin_model().clone())),
        ClassifierConfig::Model(path) => ReferenceModel::load(path)
            .map(|m| Box::new(m) as Box<dyn Scorer>)
            .map_err(|e| ScanError::Classifier(e.to_string())),
        ClassifierConfig::Plugin(cmd) => {
            PluginScorer::from_command_line(cmd, Duration::from_millis(config.plugin_timeout_ms))
                .map(|p| Box::new(p) as Box<dyn Scorer>)
                .map_err(|e| ScanError::Classifier(format!("cannot start plugin: {e}")))
        }
    }
}

pub fn load_lexicon(config: &ScanConfig) -> Result<KeywordLexicon, ScanError> {
    Ok(match &config.lexicon_path {
        Some(p) => KeywordLexicon::from_file(p)?,
        None => KeywordLexicon::builtin(),
    })
}

/// Shreds an input dump when the scan ends, however it ends.
struct DumpGuard<'a> {
    path: Option<&'a Path>,
}

impl Drop for DumpGuard<'_> {
    fn drop(&mut self) {
        if let Some(path) = self.path {
            if path.exists() {
                if let Err(e) = shred_file(path) {
                    log::error!("cannot remove dump {}: {e}", path.display());
                }
            }
        }
    }
}

struct StageClock {
    records: Vec<StageRecord>,
    t: Instant,
}

impl StageClock {
    fn new() -> Self {
        Self {
            records: Vec::new(),
            t: Instant::now(),
        }
    }

    fn done(&mut self, stage: Stage, count: usize) {
        let now = Instant::now();
        self.records.push(StageRecord {
            stage,
            count,
            elapsed_us: (now - self.t).as_micros() as u64,
        });
        log::info!("stage {stage:?} done: {count}");
        self.t = now;
    }
}

fn discover(config: &ScanConfig, input: &ScanInput) -> Result<u32, ScanError> {
    let from_table = |source: &ProcessSource| -> Result<u32, ScanError> {
        let table = enumerate_processes(source)?;
        Ok(select_target(&table, &config.target_name)?.pid)
    };
    match input {
        ScanInput::Live => match &config.process_table {
            Some(p) => from_table(&ProcessSource::Fixture(p.clone())),
            None => from_table(&ProcessSource::Live),
        },
        ScanInput::Dump(path) => {
            if let Some(p) = &config.process_table {
                return from_table(&ProcessSource::Fixture(p.clone()));
            }
            if let Some(pid) = config.pid {
                return Ok(pid);
            }
            Ok(read_sidecar(path)?.map_or(0, |m| m.pid))
        }
    }
}

fn acquire(pid: u32, input: &ScanInput) -> Result<MemoryImage, ScanError> {
    match input {
        ScanInput::Live => Ok(capture_live(pid)?),
        ScanInput::Dump(path) => match load_dump(path, pid) {
            Ok(img) => Ok(img),
            // an empty dump is a scan with nothing in it
            Err(AcquisitionError::EmptyFile(_)) => {
                Ok(MemoryImage::new(Vec::new(), pid, ImageSource::File, Utc::now()))
            }
            Err(e) => Err(e.into()),
        },
    }
}

/// Runs every stage once. See the module docs for cleanup guarantees.
pub fn run_scan(config: &ScanConfig, input: &ScanInput) -> Result<ScanSummary, ScanError> {
    let _guard = DumpGuard {
        path: match input {
            ScanInput::Dump(p) if !config.keep_dump => Some(p.as_path()),
            _ => None,
        },
    };
    config.validate()?;
    let lexicon = load_lexicon(config)?;
    let mut scorer = build_scorer(config)?;

    let started_at = Utc::now();
    let started = Instant::now();
    let scan_id = uuid::Uuid::new_v4().to_string();
    let mut clock = StageClock::new();

    let pid = discover(config, input)?;
    clock.done(Stage::Discovery, 1);

    let image = acquire(pid, input)?;
    let dump_digest = image.digest().to_string();
    let captured_at = image.captured_at();
    clock.done(Stage::Acquisition, image.len());

    let mut strings = carve(&image, config.min_len);
    drop(image);
    let n_strings = strings.len();
    let text = Zeroizing::new(render_text(&strings));
    for s in &mut strings {
        s.text.zeroize();
    }
    drop(strings);
    clock.done(Stage::Carving, n_strings);

    let options = RetrievalOptions {
        sim_threshold: config.sim_threshold,
        word_boundary: config.word_boundary,
    };
    let candidates = retrieve(&text, &lexicon, &options)?;
    let msisdns = extract_msisdns(&text);
    drop(text);
    let n_candidates = candidates.len();
    clock.done(Stage::Retrieval, n_candidates);

    let verdicts = score_all(candidates, &mut scorer, config.threshold);
    clock.done(Stage::Classify, verdicts.len());

    let policy = config.privacy_policy();
    let salt = ScanSalt::random();
    let outcome = filter_verdicts(verdicts, &policy, &salt);
    clock.done(Stage::Privacy, outcome.released.len());

    let meta = ScanMeta {
        scan_id: scan_id.clone(),
        pid,
        dump_digest: dump_digest.clone(),
        captured_at,
    };
    let alerts = compose_alerts(&outcome.released, &msisdns, &meta, Utc::now());
    let report = alerting::dispatch(&alerts, &config.alert.dispatch_config())?;
    clock.done(Stage::Alert, alerts.len());

    let released = outcome.released.len();
    let unverified_released = outcome.released.iter().filter(|v| v.unverified).count();
    let summary = ScanSummary {
        scan_id,
        scorer_id: scorer.id().to_string(),
        started_at,
        elapsed_ms: started.elapsed().as_millis() as u64,
        counts: ScanCounts {
            pid,
            dump_digest,
            strings: n_strings,
            candidates: n_candidates,
            msisdns: msisdns.len(),
            released,
            suppressed: outcome.suppressed_count,
            unverified: unverified_released,
            delivered: report.delivered,
            spooled: report.spooled,
        },
        stages: clock.records,
    };

    let digests = (config.retention == Retention::DigestOnly)
        .then_some(outcome.suppressed_digests.as_slice());
    append_audit(&config.audit_path(), &summary, digests)?;
    Ok(summary)
}

fn append_audit(
    path: &Path,
    summary: &ScanSummary,
    suppressed_digests: Option<&[String]>,
) -> Result<(), ScanError> {
    let record = AuditRecord {
        scan_id: &summary.scan_id,
        released: summary.counts.released,
        suppressed: summary.counts.suppressed,
        scorer_id: &summary.scorer_id,
        dump_digest: &summary.counts.dump_digest,
        pid: summary.counts.pid,
        started_at: summary.started_at,
        stages: &summary.stages,
        suppressed_digests,
    };
    let err = |source| ScanError::Audit {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(err)?;
    }
    let mut line = serde_json::to_vec(&record).expect("audit record serializes");
    line.push(b'\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(err)?;
    f.write_all(&line).map_err(err)?;
    f.sync_data().map_err(err)
}

/// Calls `run` every `interval`, never overlapping runs: a run that takes
/// longer than the interval is followed immediately by the next. Checks
/// `shutdown` between runs and while sleeping. Returns the number of runs.
pub fn watch_loop<F>(
    interval: Duration,
    shutdown: &AtomicBool,
    max_runs: Option<usize>,
    mut run: F,
) -> usize
where
    F: FnMut(usize),
{
    let tick = Duration::from_millis(50);
    let mut runs = 0;
    while !shutdown.load(Ordering::SeqCst) {
        let start = Instant::now();
        run(runs);
        runs += 1;
        if max_runs.is_some_and(|m| runs >= m) {
            break;
        }
        let next = start + interval;
        while !shutdown.load(Ordering::SeqCst) {
            let now = Instant::now();
            if now >= next {
                break;
            }
            thread::sleep(tick.min(next - now));
        }
    }
    runs
}

/// Runs scans every `config.interval` seconds until `shutdown` is set.
/// Scan failures are logged and handed to `on_result`; they do not stop
/// the loop.
pub fn watch<F>(
    config: &ScanConfig,
    input: &ScanInput,
    shutdown: &AtomicBool,
    max_runs: Option<usize>,
    mut on_result: F,
) -> Result<usize, ScanError>
where
    F: FnMut(Result<ScanSummary, ScanError>),
{
    if config.interval == 0 {
        return Err(ScanError::Config("watch needs an interval above zero".into()));
    }
    config.validate()?;
    Ok(watch_loop(
        Duration::from_secs(config.interval),
        shutdown,
        max_runs,
        |_| {
            let result = run_scan(config, input);
            if let Err(e) = &result {
                log::error!("scan failed: {e}");
            }
            on_result(result);
        },
    ))
}

/// Writes a dump and its sidecar, for fixtures and debugging.
pub fn write_dump(image: &MemoryImage, path: &Path) -> io::Result<()> {
    image.write_to(path)?;
    acquisition::write_sidecar(path, &image.sidecar())
}
