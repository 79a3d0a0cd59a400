//! Shared test helpers: independent oracles, a scripted HTTP endpoint and
//! fixture builders.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use privmem::carving::Encoding;
use privmem::discovery::ProcessTable;

pub const STUB: &str = env!("CARGO_BIN_EXE_scorer-stub");
pub const CLI: &str = env!("CARGO_BIN_EXE_privmem");

fn printable(b: u8) -> bool {
    b == 9 || (32..=126).contains(&b)
}

/// Brute-force carving: a run starts wherever a printable unit is not
/// preceded by one, and extends while units stay printable.
pub fn naive_carve(data: &[u8], min_len: usize) -> BTreeSet<(usize, Encoding, String)> {
    let mut out = BTreeSet::new();
    let n = data.len();
    for i in 0..n {
        if printable(data[i]) && (i == 0 || !printable(data[i - 1])) {
            let mut j = i;
            while j < n && printable(data[j]) {
                j += 1;
            }
            if j - i >= min_len {
                let s = String::from_utf8(data[i..j].to_vec()).unwrap();
                out.insert((i, Encoding::Ascii, s));
            }
        }
        let wide = |k: usize| k + 1 < n && printable(data[k]) && data[k + 1] == 0;
        if wide(i) && !(i >= 2 && wide(i - 2)) {
            let mut s = String::new();
            let mut k = i;
            while wide(k) {
                s.push(data[k] as char);
                k += 2;
            }
            if s.len() >= min_len {
                out.insert((i, Encoding::Utf16le, s));
            }
        }
    }
    out
}

/// Textbook full-matrix edit distance over lowercased characters.
pub fn levenshtein_matrix(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.to_lowercase().chars().collect();
    let b: Vec<char> = b.to_lowercase().chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1)
                .min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

pub fn similarity_oracle(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein_matrix(a, b) as f64 / longest as f64
}

/// Highest PID among case-insensitive name matches, by sorting.
pub fn max_pid_oracle(table: &ProcessTable, name: &str) -> Option<u32> {
    let mut pids: Vec<u32> = table
        .records()
        .iter()
        .filter(|r| r.name.to_lowercase() == name.to_lowercase())
        .map(|r| r.pid)
        .collect();
    pids.sort_unstable();
    pids.last().copied()
}

/// One received request.
#[derive(Debug, Clone)]
pub struct Received {
    pub status: u16,
    pub body: Vec<u8>,
}

/// HTTP endpoint answering requests with scripted status codes, then 200.
pub struct MockEndpoint {
    pub url: String,
    pub log: Arc<Mutex<Vec<Received>>>,
}

impl MockEndpoint {
    pub fn start(script: Vec<u16>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/alerts", listener.local_addr().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let shared = Arc::clone(&log);
        thread::spawn(move || {
            let mut script = script.into_iter();
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let status = script.next().unwrap_or(200);
                if let Some(body) = serve_one(stream, status) {
                    shared.lock().unwrap().push(Received { status, body });
                }
            }
        });
        Self { url, log }
    }

    pub fn received(&self) -> Vec<Received> {
        self.log.lock().unwrap().clone()
    }

    /// Bodies of requests that were answered 2xx.
    pub fn accepted(&self) -> Vec<Vec<u8>> {
        self.received()
            .into_iter()
            .filter(|r| (200..300).contains(&r.status))
            .map(|r| r.body)
            .collect()
    }
}

fn serve_one(stream: TcpStream, status: u16) -> Option<Vec<u8>> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut len = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok()?;
    let reason = if status < 300 { "OK" } else { "Error" };
    let mut w = stream;
    write!(
        w,
        "HTTP/1.1 {status} {reason}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"
    )
    .ok()?;
    w.flush().ok()?;
    Some(body)
}

/// Every file under `dir`, recursively.
pub fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out
}

/// Writes a rules file for the scorer stub; earlier rules win.
pub fn write_rules(path: &Path, rules: &[(f64, &str)]) {
    let text: String = rules.iter().map(|(s, n)| format!("{s}\t{n}\n")).collect();
    std::fs::write(path, text).unwrap();
}

/// Stub command line quoted for the plugin config.
pub fn stub_command(args: &[&str]) -> String {
    let mut parts = vec![shlex::try_quote(STUB).unwrap().into_owned()];
    parts.extend(args.iter().map(|a| shlex::try_quote(a).unwrap().into_owned()));
    parts.join(" ")
}
