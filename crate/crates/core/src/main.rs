use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use privmem::alerting::{flush_spool, DispatchConfig};
use privmem::carving::{carve_reader, render_text, EncodingFilter};
use privmem::classify::{
    evaluate_scores, score_dataset, threshold_sweep, ReferenceModel, Scorer, DEFAULT_PLUGIN_TIMEOUT,
};
use privmem::corpus::{build_dump, dataset_to_ndjson, gen_dataset, gen_msisdns, parse_dataset};
use privmem::privacy::Retention;
use privmem::retrieval::{retrieve, KeywordLexicon, RetrievalOptions};
use privmem::scan::{
    self, run_scan, write_dump, ClassifierConfig, ScanConfig, ScanError, ScanInput, ENDPOINT_ENV,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_ACQUISITION: u8 = 3;
const EXIT_CLASSIFIER: u8 = 4;
const EXIT_DISPATCH: u8 = 5;

#[derive(Parser)]
#[command(name = "privmem", version, about = "Privacy-aware leak detection in process memory")]
struct Cli {
    /// Log stage progress to stderr (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scan of a live process or a dump file.
    Scan(ScanArgs),
    /// Scan periodically until interrupted.
    Watch {
        #[command(flatten)]
        scan: ScanArgs,
        /// Seconds between scan starts.
        #[arg(long)]
        interval: Option<u64>,
        /// Stop after this many scans.
        #[arg(long)]
        max_runs: Option<usize>,
    },
    /// Carve printable strings from a dump, one per line.
    ExtractStrings {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = privmem::carving::DEFAULT_MIN_LEN)]
        min_len: usize,
        #[arg(long, default_value = "both")]
        encoding: EncodingFilter,
    },
    /// Find keyword-bearing lines in carved text; prints one JSON object per
    /// candidate.
    Retrieve {
        #[arg(long)]
        input: PathBuf,
        /// Keyword file, one per line; defaults to the built-in lexicon.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, default_value_t = privmem::retrieval::DEFAULT_SIM_THRESHOLD)]
        sim_threshold: f64,
        #[arg(long)]
        word_boundary: bool,
    },
    /// Score a labelled dataset and report TPR, TNR and accuracy.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        classifier: ClassifierArgs,
        #[arg(long, default_value_t = privmem::classify::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// Also report metrics at thresholds 0.0, 0.1, ..., 1.0.
        #[arg(long)]
        sweep: bool,
    },
    /// Train the reference model.
    Train {
        /// Labelled dataset; without it the built-in corpus is generated.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = scan::BUILTIN_MODEL_SEED)]
        seed: u64,
        #[arg(long, default_value_t = scan::BUILTIN_MODEL_PER_CLASS)]
        n_per_class: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Generate synthetic datasets and dumps.
    GenFixture {
        #[command(subcommand)]
        kind: FixtureKind,
    },
    /// Re-send spooled alerts in order.
    FlushSpool {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = ENDPOINT_ENV)]
        endpoint: Option<String>,
        #[arg(long)]
        spool_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum FixtureKind {
    /// Labelled messages as newline-delimited JSON.
    Dataset {
        #[arg(long, default_value_t = 150)]
        n_per_class: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// A noise-filled dump with planted messages. Writes `<output>`,
    /// `<output>.meta.json` and the ground truth to `<output>.truth.json`.
    Dump {
        #[arg(long)]
        output: PathBuf,
        /// Dump size in bytes.
        #[arg(long, default_value_t = 10 << 20)]
        size: usize,
        #[arg(long, default_value_t = 100)]
        sensitive: usize,
        #[arg(long, default_value_t = 0)]
        benign: usize,
        #[arg(long, default_value_t = 0)]
        msisdns: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Args, Clone, Default)]
struct ClassifierArgs {
    /// Saved reference model.
    #[arg(long, conflicts_with = "plugin")]
    model: Option<PathBuf>,
    /// Plugin command line, spoken to over stdin/stdout.
    #[arg(long)]
    plugin: Option<String>,
    /// Plugin reply timeout in milliseconds.
    #[arg(long)]
    plugin_timeout_ms: Option<u64>,
}

impl ClassifierArgs {
    fn config(&self) -> Option<ClassifierConfig> {
        match (&self.model, &self.plugin) {
            (Some(m), _) => Some(ClassifierConfig::Model(m.clone())),
            (_, Some(p)) => Some(ClassifierConfig::Plugin(p.clone())),
            _ => None,
        }
    }
}

#[derive(Args, Clone)]
struct ScanArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scan this dump file instead of a live process.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// Process table fixture (NDJSON) instead of the live process list.
    #[arg(long)]
    process_table: Option<PathBuf>,
    /// PID to record for a dump when there is no process table.
    #[arg(long)]
    pid: Option<u32>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    sim_threshold: Option<f64>,
    #[arg(long)]
    word_boundary: bool,
    #[command(flatten)]
    classifier: ClassifierArgs,
    #[arg(long)]
    threshold: Option<f64>,
    /// Suppress messages whose scorer failed instead of alerting on them.
    #[arg(long)]
    deny_unverified: bool,
    #[arg(long)]
    retention: Option<Retention>,
    #[arg(long, env = ENDPOINT_ENV)]
    endpoint: Option<String>,
    #[arg(long)]
    spool_dir: Option<PathBuf>,
    #[arg(long)]
    audit_log: Option<PathBuf>,
    /// Leave the dump file in place after the scan.
    #[arg(long)]
    keep_dump: bool,
    /// Re-send spooled alerts before scanning.
    #[arg(long)]
    flush_spool: bool,
}

impl ScanArgs {
    fn resolve(&self) -> Result<(ScanConfig, ScanInput), ScanError> {
        let mut c = match &self.config {
            Some(p) => ScanConfig::load(p)?,
            None => ScanConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        set!(c.target_name, self.target);
        set!(c.min_len, self.min_len);
        set!(c.sim_threshold, self.sim_threshold);
        set!(c.threshold, self.threshold);
        set!(c.retention, self.retention);
        set!(c.alert.spool_dir, self.spool_dir);
        set!(c.plugin_timeout_ms, self.classifier.plugin_timeout_ms);
        if self.process_table.is_some() {
            c.process_table = self.process_table.clone();
        }
        if self.pid.is_some() {
            c.pid = self.pid;
        }
        if self.lexicon.is_some() {
            c.lexicon_path = self.lexicon.clone();
        }
        if self.endpoint.is_some() {
            c.alert.endpoint = self.endpoint.clone();
        }
        if self.audit_log.is_some() {
            c.audit_log = self.audit_log.clone();
        }
        if let Some(cl) = self.classifier.config() {
            c.classifier = cl;
        }
        c.word_boundary |= self.word_boundary;
        c.keep_dump |= self.keep_dump;
        c.allow_unverified &= !self.deny_unverified;
        let input = match &self.dump {
            Some(p) => ScanInput::Dump(p.clone()),
            None => ScanInput::Live,
        };
        Ok((c, input))
    }
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<ScanError> for Failure {
    fn from(e: ScanError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

trait OrExit<T> {
    fn or_exit(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f.error));
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Scan(args) => {
            let (config, input) = args.resolve()?;
            warn_if_unprivileged(&input);
            if args.flush_spool {
                flush(&config.alert.dispatch_config())?;
            }
            let summary = run_scan(&config, &input)?;
            print_json(&summary)
        }
        Command::Watch {
            scan: args,
            interval,
            max_runs,
        } => {
            let (mut config, input) = args.resolve()?;
            if let Some(i) = interval {
                config.interval = i;
            }
            warn_if_unprivileged(&input);
            if args.flush_spool {
                flush(&config.alert.dispatch_config())?;
            }
            let stop = Arc::new(AtomicBool::new(false));
            let handler_flag = Arc::clone(&stop);
            ctrlc::set_handler(move || handler_flag.store(true, Ordering::SeqCst))
                .or_exit(EXIT_CONFIG)?;
            scan::watch(&config, &input, &stop, max_runs, |result| match result {
                Ok(summary) => {
                    let _ = print_json(&summary);
                }
                Err(e) => eprintln!("scan failed: {e}"),
            })?;
            Ok(())
        }
        Command::ExtractStrings {
            input,
            output,
            min_len,
            encoding,
        } => {
            let file = fs::File::open(&input)
                .with_context(|| format!("cannot open {}", input.display()))
                .or_exit(EXIT_ACQUISITION)?;
            let strings = carve_reader(io::BufReader::new(file), min_len, encoding)
                .with_context(|| format!("cannot read {}", input.display()))
                .or_exit(EXIT_ACQUISITION)?;
            fs::write(&output, render_text(&strings))
                .with_context(|| format!("cannot write {}", output.display()))
                .or_exit(EXIT_CONFIG)?;
            eprintln!("{} strings", strings.len());
            Ok(())
        }
        Command::Retrieve {
            input,
            lexicon,
            sim_threshold,
            word_boundary,
        } => {
            let lexicon = match lexicon {
                Some(p) => KeywordLexicon::from_file(&p).or_exit(EXIT_CONFIG)?,
                None => KeywordLexicon::builtin(),
            };
            let text = fs::read_to_string(&input)
                .with_context(|| format!("cannot read {}", input.display()))
                .or_exit(EXIT_CONFIG)?;
            let options = RetrievalOptions {
                sim_threshold,
                word_boundary,
            };
            let candidates = retrieve(&text, &lexicon, &options).or_exit(EXIT_CONFIG)?;
            let mut out = io::stdout().lock();
            for c in &candidates {
                serde_json::to_writer(&mut out, c).or_exit(EXIT_CONFIG)?;
                writeln!(out).or_exit(EXIT_CONFIG)?;
            }
            Ok(())
        }
        Command::Evaluate {
            dataset,
            classifier,
            threshold,
            sweep,
        } => {
            let data = read_dataset(&dataset)?;
            let mut scorer = classifier_from_args(&classifier)?;
            let samples = score_dataset(&data, scorer.as_mut());
            let report = evaluate_scores(&samples, threshold).or_exit(EXIT_CONFIG)?;
            let mut value = serde_json::json!({
                "scorer_id": scorer.id(),
                "threshold": threshold,
                "matrix": report.matrix,
                "tpr": report.tpr.value(),
                "tnr": report.tnr.value(),
                "accuracy": report.accuracy.value(),
                "scorer_failures": report.scorer_failures,
            });
            if sweep {
                value["sweep"] = serde_json::to_value(threshold_sweep(&samples))
                    .or_exit(EXIT_CONFIG)?;
            }
            print_json(&value)
        }
        Command::Train {
            dataset,
            seed,
            n_per_class,
            output,
        } => {
            let data = match dataset {
                Some(p) => read_dataset(&p)?,
                None => gen_dataset(n_per_class, seed),
            };
            let model = ReferenceModel::train(&data, seed).or_exit(EXIT_CLASSIFIER)?;
            model
                .save(&output)
                .with_context(|| format!("cannot write {}", output.display()))
                .or_exit(EXIT_CONFIG)?;
            eprintln!("{}", model.id());
            Ok(())
        }
        Command::GenFixture { kind } => gen_fixture(kind),
        Command::FlushSpool {
            config,
            endpoint,
            spool_dir,
        } => {
            let mut c = match config {
                Some(p) => ScanConfig::load(&p)?,
                None => ScanConfig::default(),
            };
            if endpoint.is_some() {
                c.alert.endpoint = endpoint;
            }
            if let Some(d) = spool_dir {
                c.alert.spool_dir = d;
            }
            if c.alert.endpoint.is_none() {
                return Err(Failure {
                    code: EXIT_CONFIG,
                    error: anyhow!("flush-spool needs an endpoint (--endpoint or {ENDPOINT_ENV})"),
                });
            }
            flush(&c.alert.dispatch_config())
        }
    }
}

/// The error chain, skipping causes already quoted by their parent.
fn describe(error: &anyhow::Error) -> String {
    let mut out = error.to_string();
    let mut last = out.clone();
    for cause in error.chain().skip(1) {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            out.push_str(": ");
            out.push_str(&msg);
        }
        last = msg;
    }
    out
}

fn flush(cfg: &DispatchConfig) -> Result<(), Failure> {
    if cfg.endpoint.is_none() {
        return Ok(());
    }
    let report = flush_spool(cfg).or_exit(EXIT_DISPATCH)?;
    eprintln!("flushed {} alerts, {} still spooled", report.delivered, report.spooled);
    if report.spooled > 0 {
        return Err(Failure {
            code: EXIT_DISPATCH,
            error: anyhow!("endpoint unreachable, {} alerts remain spooled", report.spooled),
        });
    }
    Ok(())
}

fn gen_fixture(kind: FixtureKind) -> Result<(), Failure> {
    match kind {
        FixtureKind::Dataset {
            n_per_class,
            seed,
            output,
        } => fs::write(&output, dataset_to_ndjson(&gen_dataset(n_per_class, seed)))
            .with_context(|| format!("cannot write {}", output.display()))
            .or_exit(EXIT_CONFIG),
        FixtureKind::Dump {
            output,
            size,
            sensitive,
            benign,
            msisdns,
            seed,
        } => {
            let pool = gen_dataset(sensitive.max(benign), seed);
            let mut messages: Vec<_> = pool.iter().filter(|m| m.label == 1).take(sensitive).collect();
            messages.extend(pool.iter().filter(|m| m.label == 0).take(benign));
            let messages: Vec<_> = messages.into_iter().cloned().collect();
            let numbers = gen_msisdns(msisdns, seed);
            let (image, truth) = build_dump(&messages, &numbers, size, seed).or_exit(EXIT_CONFIG)?;
            write_dump(&image, &output)
                .with_context(|| format!("cannot write {}", output.display()))
                .or_exit(EXIT_CONFIG)?;
            let truth_path = PathBuf::from(format!("{}.truth.json", output.display()));
            let json = serde_json::to_vec_pretty(&truth).or_exit(EXIT_CONFIG)?;
            fs::write(&truth_path, json)
                .with_context(|| format!("cannot write {}", truth_path.display()))
                .or_exit(EXIT_CONFIG)?;
            eprintln!("{} bytes, sha256 {}", image.len(), image.digest());
            Ok(())
        }
    }
}

fn classifier_from_args(args: &ClassifierArgs) -> Result<Box<dyn Scorer>, Failure> {
    let config = ScanConfig {
        classifier: args.config().unwrap_or_default(),
        plugin_timeout_ms: args
            .plugin_timeout_ms
            .unwrap_or(DEFAULT_PLUGIN_TIMEOUT.as_millis() as u64),
        ..ScanConfig::default()
    };
    Ok(scan::build_scorer(&config)?)
}

fn read_dataset(path: &Path) -> Result<Vec<privmem::corpus::LabelledMessage>, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .or_exit(EXIT_CONFIG)?;
    parse_dataset(&text).map_err(|(line, e)| Failure {
        code: EXIT_CONFIG,
        error: anyhow!("{} line {line}: {e}", path.display()),
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).or_exit(EXIT_CONFIG)?;
    writeln!(out).or_exit(EXIT_CONFIG)
}

/// Live capture of another user's process generally needs elevated rights.
/// This only warns; unprivileged runs are legitimate for dumps and tests.
fn warn_if_unprivileged(input: &ScanInput) {
    #[cfg(unix)]
    if *input == ScanInput::Live {
        use std::os::unix::fs::MetadataExt;
        if fs::metadata("/proc/self").is_ok_and(|m| m.uid() != 0) {
            log::warn!("not running as root; capture may be denied for other users' processes");
        }
    }
    #[cfg(not(unix))]
    let _ = input;
}
