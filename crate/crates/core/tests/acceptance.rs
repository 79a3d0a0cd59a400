//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::Utc;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{
    files_under, max_pid_oracle, naive_carve, similarity_oracle, write_rules, MockEndpoint, STUB,
};
use privmem::acquisition::sha256_hex;
use privmem::alerting::{compose_alerts, dispatch, flush_spool, Alert, DispatchConfig, ScanMeta};
use privmem::carving::{carve, carve_bytes, render_text, Encoding, EncodingFilter};
use privmem::classify::{
    evaluate, is_sensitive, metrics, score, ConfusionMatrix, PluginScorer, ReferenceModel, Scorer,
    DEFAULT_PLUGIN_TIMEOUT,
};
use privmem::corpus::{build_dump, gen_dataset, gen_msisdns, LabelledMessage};
use privmem::discovery::{select_target, DiscoveryError, ProcessRecord, ProcessTable};
use privmem::privacy::{filter_verdicts, PrivacyPolicy, Retention, ScanSalt};
use privmem::retrieval::{retrieve, similarity, CandidateMessage, KeywordLexicon, RetrievalOptions};
use privmem::scan::{run_scan, write_dump, ClassifierConfig, ScanConfig, ScanInput};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("metrics reproduction", metrics_reproduction),
        ("reference scorer substitute", reference_scorer),
        ("end-to-end recall", end_to_end_recall),
        ("privacy invariant", privacy_invariant),
        ("carving oracle equivalence", carving_oracle),
        ("dedup property", dedup_property),
        ("target selection property", target_selection),
        ("dispatch durability", dispatch_durability),
        ("plugin protocol", plugin_protocol),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = check();
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.2}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn metrics_reproduction() -> Check {
    let t = Instant::now();
    let r = metrics(ConfusionMatrix::new(138, 12, 148, 2)).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let (tpr, tnr, acc) = (r.tpr.value(), r.tnr.value(), r.accuracy.value());
    ensure!((tpr - 138.0 / 150.0).abs() <= 1e-4 && (tpr - 0.9200).abs() <= 1e-4, "tpr {tpr}");
    ensure!((tnr - 148.0 / 150.0).abs() <= 1e-4 && (tnr - 0.98667).abs() <= 1e-4, "tnr {tnr}");
    ensure!((acc - 286.0 / 300.0).abs() <= 1e-4 && (acc - 0.95333).abs() <= 1e-4, "accuracy {acc}");
    ensure!(elapsed < Duration::from_millis(50), "took {elapsed:?}");
    Ok(format!("tpr={} tnr={} accuracy={}", r.tpr, r.tnr, r.accuracy))
}

fn reference_scorer() -> Check {
    let t = Instant::now();
    let train = gen_dataset(150, 42);
    let test = gen_dataset(150, 43);
    let mut model = ReferenceModel::train(&train, 42).map_err(|e| e.to_string())?;
    let r = evaluate(&test, &mut model, 0.5).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let unseen: Vec<LabelledMessage> = test
        .iter()
        .filter(|m| !train.iter().any(|n| n.text == m.text))
        .cloned()
        .collect();
    let overlap = test.len() - unseen.len();
    let unseen_acc = evaluate(&unseen, &mut model, 0.5).map_err(|e| e.to_string())?.accuracy.value();
    let acc = r.accuracy.value();
    ensure!(test.len() == 300, "held-out split has {} messages", test.len());
    ensure!(acc >= 0.90, "held-out accuracy {acc:.4}");
    ensure!(unseen_acc >= 0.90, "accuracy on texts unseen in training {unseen_acc:.4}");
    let boundary: Vec<bool> = [0.49, 0.50, 0.51].iter().map(|&s| is_sensitive(s, 0.5)).collect();
    ensure!(boundary == [false, false, true], "boundary verdicts {boundary:?}");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!(
        "held-out accuracy={:.4} tpr={:.4} tnr={:.4} ({overlap} texts also in training, {unseen_acc:.4} on the rest); 0.49/0.50/0.51 -> benign/benign/sensitive",
        acc,
        r.tpr.value(),
        r.tnr.value()
    ))
}

fn sensitive_fixture() -> Vec<LabelledMessage> {
    gen_dataset(100, 7).into_iter().filter(|m| m.label == 1).collect()
}

fn end_to_end_recall() -> Check {
    let plants = sensitive_fixture();
    let (image, truth) = build_dump(&plants, &[], 10 << 20, 7).map_err(|e| e.to_string())?;
    let ascii = truth.planted_sensitive.iter().filter(|p| p.encoding == Encoding::Ascii).count();
    let wide = truth.planted_sensitive.len() - ascii;
    ensure!(truth.planted_sensitive.len() == 100 && ascii > 0 && wide > 0, "{ascii} ascii / {wide} utf16le plants");

    let text = render_text(&carve(&image, 3));
    let lexicon = KeywordLexicon::builtin();
    let candidates = retrieve(&text, &lexicon, &RetrievalOptions::default()).map_err(|e| e.to_string())?;
    let recovered = truth
        .planted_sensitive
        .iter()
        .filter(|p| candidates.iter().any(|c| similarity(&c.text, &p.text) > 0.90))
        .count();
    ensure!(recovered == 100, "recovered {recovered}/100");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dump = dir.path().join("dump.bin");
    write_dump(&image, &dump).map_err(|e| e.to_string())?;
    let config = ScanConfig {
        alert: privmem::scan::AlertConfig {
            spool_dir: dir.path().join("out"),
            ..Default::default()
        },
        ..Default::default()
    };
    let t = Instant::now();
    let summary = run_scan(&config, &ScanInput::Dump(dump.clone())).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "full scan took {elapsed:?}");
    ensure!(!dump.exists(), "dump left behind");
    Ok(format!(
        "retrieval recovered {recovered}/100 ({ascii} ascii, {wide} utf16le); full scan of 10 MiB in {:.2}s (built-in model training included), {} released",
        elapsed.as_secs_f64(),
        summary.counts.released
    ))
}

fn privacy_invariant() -> Check {
    let lexicon = KeywordLexicon::builtin();
    let benign: Vec<LabelledMessage> = gen_dataset(150, 8).into_iter().filter(|m| m.label == 0).collect();
    let personal: Vec<LabelledMessage> = benign
        .iter()
        .filter(|m| !lexicon.contains_any(&m.text, false))
        .take(50)
        .cloned()
        .collect();
    let decoys: Vec<LabelledMessage> = benign
        .iter()
        .filter(|m| lexicon.contains_any(&m.text, false))
        .take(10)
        .cloned()
        .collect();
    ensure!(personal.len() == 50 && decoys.len() == 10, "corpus too small");
    let sensitive = sensitive_fixture();
    let mut plants = sensitive.clone();
    plants.extend(personal.iter().cloned());
    plants.extend(decoys.iter().cloned());
    let (image, _) =
        build_dump(&plants, &gen_msisdns(3, 8), 10 << 20, 8).map_err(|e| e.to_string())?;

    let inputs = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rules = inputs.path().join("rules.tsv");
    let rule_list: Vec<(f64, &str)> = decoys
        .iter()
        .enumerate()
        .map(|(i, m)| (if i % 2 == 0 { 0.5 } else { 0.2 }, m.text.as_str()))
        .collect();
    write_rules(&rules, &rule_list);
    let plugin = common::stub_command(&["--rules", rules.to_str().unwrap(), "--default", "0.95"]);

    let out = tempfile::tempdir().map_err(|e| e.to_string())?;
    let server = MockEndpoint::start(vec![500, 500]);
    let mut released = Vec::new();
    for (run, endpoint) in [Some(server.url.clone()), None].into_iter().enumerate() {
        let dump = out.path().join(format!("dump{run}.bin"));
        write_dump(&image, &dump).map_err(|e| e.to_string())?;
        let config = ScanConfig {
            classifier: ClassifierConfig::Plugin(plugin.clone()),
            retention: if run == 0 { Retention::None } else { Retention::DigestOnly },
            alert: privmem::scan::AlertConfig {
                endpoint,
                spool_dir: out.path().join("spool"),
                initial_backoff_ms: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let s = run_scan(&config, &ScanInput::Dump(dump)).map_err(|e| e.to_string())?;
        ensure!(s.counts.suppressed == 10, "run {run}: suppressed {}", s.counts.suppressed);
        released.push(s.counts.released);
    }

    let mut outputs: Vec<(String, Vec<u8>)> = files_under(out.path())
        .into_iter()
        .map(|p| (p.display().to_string(), fs::read(&p).unwrap()))
        .collect();
    for (i, body) in server.received().into_iter().enumerate() {
        outputs.push((format!("http request {i}"), body.body));
    }
    ensure!(outputs.len() > 2, "no outputs to inspect");
    let mut leaks = Vec::new();
    for m in personal.iter().chain(&decoys) {
        let escaped = serde_json::to_string(&m.text).unwrap();
        let needles = [m.text.as_bytes(), &escaped.as_bytes()[1..escaped.len() - 1]];
        for (name, bytes) in &outputs {
            if needles.iter().any(|n| contains(bytes, n)) {
                leaks.push(format!("{name}: {:?}", m.text));
            }
        }
    }
    ensure!(leaks.is_empty(), "{} leaks, first {}", leaks.len(), leaks[0]);
    let alerted = sensitive
        .iter()
        .filter(|m| {
            let escaped = serde_json::to_string(&m.text).unwrap();
            outputs.iter().any(|(_, b)| contains(b, &escaped.as_bytes()[1..escaped.len() - 1]))
        })
        .count();
    ensure!(alerted == 100, "only {alerted}/100 sensitive plants alerted");
    let dumps_left = files_under(out.path()).iter().filter(|p| p.extension().is_some_and(|e| e == "bin")).count();
    ensure!(dumps_left == 0, "{dumps_left} dumps left behind");
    Ok(format!(
        "0 of 60 private texts in {} outputs (spool, audit log, http bodies); released {:?}, 10 suppressed per scan",
        outputs.len(),
        released
    ))
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

fn carving_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = Instant::now();
    let mut strings = 0usize;
    for trial in 0..1000 {
        let len = rng.gen_range(0..=64 * 1024);
        let printable_bias = rng.gen_range(0.2..0.9);
        let data: Vec<u8> = (0..len)
            .map(|_| {
                let r: f64 = rng.gen();
                if r < printable_bias * 0.6 {
                    rng.gen_range(0x20..=0x7e)
                } else if r < printable_bias {
                    0
                } else {
                    rng.gen()
                }
            })
            .collect();
        let min_len = [3, 4, 8][trial % 3];
        let got: std::collections::BTreeSet<_> = carve_bytes(&data, min_len, EncodingFilter::Both)
            .into_iter()
            .map(|s| (s.offset, s.encoding, s.text))
            .collect();
        let want = naive_carve(&data, min_len);
        ensure!(got == want, "trial {trial} (len {len}, min_len {min_len}) differs from oracle");
        strings += got.len();
    }
    let elapsed = t.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("1000 buffers, {strings} strings, identical to oracle"))
}

fn mutate(base: &str, keep: std::ops::Range<usize>, edits: usize, rng: &mut ChaCha8Rng) -> String {
    let mut b = base.as_bytes().to_vec();
    for _ in 0..edits {
        let i = loop {
            let i = rng.gen_range(0..b.len());
            if !keep.contains(&i) {
                break i;
            }
        };
        b[i] = rng.gen_range(b'a'..=b'z');
    }
    String::from_utf8(b).unwrap()
}

fn dedup_property() -> Check {
    let lexicon = KeywordLexicon::builtin();
    let data = gen_dataset(200, 6);
    let pool: Vec<&LabelledMessage> = data.iter().filter(|m| m.label == 1 && m.text.len() >= 50).collect();
    let fillers: Vec<&LabelledMessage> = data
        .iter()
        .filter(|m| m.label == 0 && !lexicon.contains_any(&m.text, false))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..200 {
        let base = pool.choose(&mut rng).unwrap().text.clone();
        let kw = lexicon.matches(&base, false)[0].clone();
        let at = base.to_ascii_lowercase().find(&kw).unwrap();
        let variants: Vec<String> = loop {
            let v: Vec<String> = (0..10)
                .map(|i| if i == 0 { base.clone() } else { mutate(&base, at..at + kw.len(), 2, &mut rng) })
                .collect();
            if v.iter().enumerate().all(|(i, a)| v[i + 1..].iter().all(|b| similarity_oracle(a, b) > 0.90)) {
                break v;
            }
        };
        let other = loop {
            let o = &pool.choose(&mut rng).unwrap().text;
            if variants.iter().all(|v| similarity_oracle(v, o) <= 0.90) {
                break o.clone();
            }
        };
        let mut lines: Vec<String> = variants.clone();
        lines.push(other.clone());
        lines.extend(fillers.choose_multiple(&mut rng, 5).map(|m| m.text.clone()));
        lines.shuffle(&mut rng);
        let out = retrieve(&lines.join("\n"), &lexicon, &RetrievalOptions::default()).map_err(|e| e.to_string())?;
        ensure!(out.len() == 2, "trial {trial}: {} candidates retained", out.len());
        ensure!(out.iter().any(|c| c.text == other), "trial {trial}: dissimilar line dropped");
        let s = similarity_oracle(&out[0].text, &out[1].text);
        ensure!(s <= 0.90, "trial {trial}: retained pair similarity {s}");
    }
    Ok("200 trials, 2 candidates each, retained pairs <= 0.90".into())
}

fn target_selection() -> Check {
    const NAMES: [&str; 6] = [
        "WhatsApp.exe", "whatsapp.exe", "WHATSAPP.EXE", "chrome.exe", "WhatsAppHelper.exe", "explorer.exe",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut found, mut missing) = (0, 0);
    for trial in 0..500 {
        let n = rng.gen_range(0..60);
        let mut pids: Vec<u32> = (1..70_000).collect::<Vec<_>>().choose_multiple(&mut rng, n).copied().collect();
        pids.shuffle(&mut rng);
        let records = pids
            .into_iter()
            .map(|pid| ProcessRecord { name: NAMES.choose(&mut rng).unwrap().to_string(), pid })
            .collect();
        let table = ProcessTable::new(records, Utc::now()).map_err(|e| e.to_string())?;
        match (select_target(&table, "WhatsApp.exe"), max_pid_oracle(&table, "WhatsApp.exe")) {
            (Ok(r), Some(pid)) if r.pid == pid => found += 1,
            (Err(DiscoveryError::NotFound(_)), None) => missing += 1,
            (got, want) => return Err(format!("trial {trial}: got {got:?}, oracle {want:?}")),
        }
    }
    Ok(format!("500 tables agree with oracle ({found} found, {missing} not found)"))
}

fn sample_alerts(n: usize, trial: usize) -> Vec<Alert> {
    let verdicts: Vec<_> = (0..n)
        .map(|i| privmem::SensitivityVerdict {
            message: CandidateMessage {
                text: format!("trial {trial}: convoy {i} moves at dawn"),
                matched_keywords: vec!["convoy".into()],
                line_span: (0, 0),
            },
            score: 0.9,
            sensitive: true,
            unverified: false,
            scorer_id: "test".into(),
        })
        .collect();
    let meta = ScanMeta {
        scan_id: format!("scan-{trial}"),
        pid: 4242,
        dump_digest: sha256_hex(b"dump"),
        captured_at: Utc::now(),
    };
    compose_alerts(&verdicts, &[], &meta, Utc::now())
}

fn dispatch_durability() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut delivered, mut spooled) = (0, 0);
    for trial in 0..30 {
        let n = rng.gen_range(1..=6);
        let alerts = sample_alerts(n, trial);
        let server = MockEndpoint::start(vec![500, 500]);
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = DispatchConfig {
            endpoint: Some(server.url.clone()),
            spool_dir: dir.path().to_path_buf(),
            retries: rng.gen_range(0..=3),
            initial_backoff: Duration::from_millis(1),
            request_timeout: Duration::from_secs(5),
        };
        let r = dispatch(&alerts, &cfg).map_err(|e| e.to_string())?;
        ensure!(r.delivered + r.spooled == n, "trial {trial}: {} + {} != {n}", r.delivered, r.spooled);
        delivered += r.delivered;
        spooled += r.spooled;
        if r.spooled == 0 {
            continue;
        }
        let spool = fs::read(cfg.spool_path()).map_err(|e| e.to_string())?;
        let before = server.accepted().len();
        // the endpoint may still be failing; rerun flush as an operator would
        let mut remaining = r.spooled;
        for _ in 0..3 {
            let f = flush_spool(&cfg).map_err(|e| e.to_string())?;
            ensure!(f.delivered + f.spooled == remaining, "trial {trial}: flush lost alerts {f:?}");
            remaining = f.spooled;
            if remaining == 0 {
                break;
            }
        }
        ensure!(remaining == 0, "trial {trial}: {remaining} alerts never flushed");
        let mut resent = Vec::new();
        for body in &server.accepted()[before..] {
            resent.extend_from_slice(body);
            resent.push(b'\n');
        }
        ensure!(resent == spool, "trial {trial}: flushed bytes differ from spool");
        let all: Vec<Alert> = server
            .accepted()
            .iter()
            .map(|b| serde_json::from_slice(b).unwrap())
            .collect();
        ensure!(all == alerts, "trial {trial}: delivery order or content changed");
    }
    Ok(format!(
        "30 trials: delivered+spooled==total every time ({delivered} delivered, {spooled} spooled, all spooled re-sent byte-identical)"
    ))
}

fn plugin_protocol() -> Check {
    let mut echo = PluginScorer::spawn(vec![STUB.into(), "--echo".into()], DEFAULT_PLUGIN_TIMEOUT)
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let sent = format!("{:.6}", rng.gen_range(0.0..=1.0));
        let got = echo.score(&sent).map_err(|e| e.to_string())?;
        ensure!(format!("{got:.6}") == sent, "sent {sent}, got {got}");
    }
    drop(echo);

    let argv = vec![STUB.into(), "--echo".into(), "--hang-on".into(), "HANG".into()];
    let mut hang = PluginScorer::spawn(argv, DEFAULT_PLUGIN_TIMEOUT).map_err(|e| e.to_string())?;
    let message = CandidateMessage {
        text: "HANG convoy leaves at dawn".into(),
        matched_keywords: vec!["convoy".into()],
        line_span: (0, 26),
    };
    let t = Instant::now();
    let verdict = score(message, &mut hang, 0.5);
    let waited = t.elapsed();
    ensure!(
        waited >= DEFAULT_PLUGIN_TIMEOUT && waited < DEFAULT_PLUGIN_TIMEOUT + Duration::from_secs(2),
        "timeout after {waited:?}"
    );
    ensure!(verdict.unverified && verdict.sensitive, "verdict {verdict:?}");
    let out = filter_verdicts(vec![verdict], &PrivacyPolicy::default(), &ScanSalt::random());
    ensure!(out.released.len() == 1, "unverified verdict not released");
    let meta = ScanMeta {
        scan_id: "s".into(),
        pid: 1,
        dump_digest: sha256_hex(b""),
        captured_at: Utc::now(),
    };
    let alerts = compose_alerts(&out.released, &[], &meta, Utc::now());
    ensure!(alerts.len() == 1 && alerts[0].unverified, "alert not flagged unverified");
    ensure!(hang.score("0.5").map_err(|e| e.to_string())? == 0.5, "plugin not restarted");
    Ok(format!(
        "200 echoes exact to 6 decimals; hang failed closed after {:.2}s, alert flagged unverified",
        waited.as_secs_f64()
    ))
}

