//! Scripted scorer plugin for exercising the plugin protocol.
//!
//! Reads `{"id","text"}` lines on stdin and answers `{"id","score"}`. The
//! score is the first that applies of: `--hang-on` (never answer),
//! `--exit-on` (exit without answering), `--echo` (the text parsed as a
//! number), `--rules` (first rule whose substring occurs in the text),
//! `--default`.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::Parser;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
struct Opts {
    /// Reply with the message text parsed as a float.
    #[arg(long)]
    echo: bool,
    /// Rules file: one `score<TAB>substring` per line.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Score when nothing else applies.
    #[arg(long, default_value_t = 0.0)]
    default: f64,
    /// Never answer messages containing this substring.
    #[arg(long)]
    hang_on: Option<String>,
    /// Exit when a message contains this substring.
    #[arg(long)]
    exit_on: Option<String>,
}

#[derive(Deserialize)]
struct Request {
    id: u64,
    text: String,
}

#[derive(Serialize)]
struct Response {
    id: u64,
    score: f64,
}

fn parse_rules(text: &str) -> anyhow::Result<Vec<(f64, String)>> {
    let mut rules = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((score, needle)) = line.split_once('\t') else {
            bail!("rules line {}: expected score<TAB>substring", i + 1);
        };
        let score: f64 = score
            .trim()
            .parse()
            .with_context(|| format!("rules line {}", i + 1))?;
        rules.push((score, needle.to_string()));
    }
    Ok(rules)
}

fn main() -> anyhow::Result<()> {
    let opts = Opts::parse();
    let rules = match &opts.rules {
        Some(p) => parse_rules(&fs::read_to_string(p).with_context(|| p.display().to_string())?)?,
        None => Vec::new(),
    };
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = serde_json::from_str(&line).context("bad request")?;
        if opts.hang_on.as_deref().is_some_and(|h| req.text.contains(h)) {
            loop {
                thread::sleep(Duration::from_secs(3600));
            }
        }
        if opts.exit_on.as_deref().is_some_and(|h| req.text.contains(h)) {
            return Ok(());
        }
        let echoed = if opts.echo {
            req.text.trim().parse::<f64>().ok()
        } else {
            None
        };
        let score = echoed
            .or_else(|| {
                rules
                    .iter()
                    .find(|(_, needle)| req.text.contains(needle.as_str()))
                    .map(|(s, _)| *s)
            })
            .unwrap_or(opts.default);
        serde_json::to_writer(&mut out, &Response { id: req.id, score })?;
        writeln!(out)?;
        out.flush()?;
    }
    Ok(())
}
