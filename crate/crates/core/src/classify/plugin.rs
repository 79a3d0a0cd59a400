//! External scorer over a child process.
//!
//! Wire protocol, one JSON object per line:
//!
//! ```text
//! -> {"id":1,"text":"convoy moves at dawn"}
//! <- {"id":1,"score":0.97}
//! ```
//!
//! Responses are matched by `id`; lines answering an older request are
//! skipped. A request that gets no answer within the timeout kills the
//! child, and the next request starts a fresh one. Candidate text only ever
//! travels over the child's pipes; the child's stderr is discarded.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Scorer, ScorerError};

pub const DEFAULT_PLUGIN_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    text: &'a str,
}

#[derive(Deserialize)]
struct Response {
    id: u64,
    score: f64,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

pub struct PluginScorer {
    command: Vec<String>,
    timeout: Duration,
    id: String,
    next_id: u64,
    running: Option<Running>,
}

impl PluginScorer {
    /// Starts the plugin. Failing to start it is an error here, unlike
    /// failures on individual messages later.
    pub fn spawn(command: Vec<String>, timeout: Duration) -> Result<Self, ScorerError> {
        if command.is_empty() {
            return Err(ScorerError::Protocol("empty plugin command".into()));
        }
        let program = std::path::Path::new(&command[0])
            .file_name()
            .map_or_else(|| command[0].clone(), |n| n.to_string_lossy().into_owned());
        let mut scorer = Self {
            id: format!("plugin:{program}"),
            command,
            timeout,
            next_id: 1,
            running: None,
        };
        scorer.start()?;
        Ok(scorer)
    }

    /// Splits `command_line` with POSIX shell quoting rules.
    pub fn from_command_line(command_line: &str, timeout: Duration) -> Result<Self, ScorerError> {
        let argv = shlex::split(command_line)
            .ok_or_else(|| ScorerError::Protocol(format!("cannot parse command {command_line:?}")))?;
        Self::spawn(argv, timeout)
    }

    fn start(&mut self) -> Result<(), ScorerError> {
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        self.running = Some(Running {
            child,
            stdin,
            lines: rx,
        });
        Ok(())
    }

    fn stop(&mut self) {
        if let Some(mut r) = self.running.take() {
            drop(r.stdin);
            let _ = r.child.kill();
            let _ = r.child.wait();
        }
    }

    fn request(&mut self, text: &str) -> Result<f64, ScorerError> {
        if self.running.is_none() {
            self.start()?;
        }
        let id = self.next_id;
        self.next_id += 1;
        let running = self.running.as_mut().expect("started above");

        let mut line = serde_json::to_vec(&Request { id, text })
            .map_err(|e| ScorerError::Protocol(e.to_string()))?;
        line.push(b'\n');
        running.stdin.write_all(&line)?;
        running.stdin.flush()?;

        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match running.lines.recv_timeout(left) {
                Ok(Ok(reply)) => {
                    if reply.trim().is_empty() {
                        continue;
                    }
                    let resp: Response = serde_json::from_str(&reply)
                        .map_err(|e| ScorerError::Protocol(e.to_string()))?;
                    if resp.id == id {
                        return Ok(resp.score);
                    }
                    log::debug!("{}: skipping reply for stale request {}", self.id, resp.id);
                }
                Ok(Err(e)) => return Err(e.into()),
                Err(RecvTimeoutError::Timeout) => return Err(ScorerError::Timeout(self.timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(ScorerError::Exited),
            }
        }
    }
}

impl Scorer for PluginScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&mut self, text: &str) -> Result<f64, ScorerError> {
        let result = self.request(text);
        if result.is_err() {
            // the child's state is unknown after any failure; start over
            self.stop();
        }
        result
    }
}

impl Drop for PluginScorer {
    fn drop(&mut self) {
        self.stop();
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;

    fn sh(script: &str, timeout: Duration) -> PluginScorer {
        PluginScorer::spawn(vec!["sh".into(), "-c".into(), script.into()], timeout).unwrap()
    }

    #[test]
    fn constant_reply() {
        // answers every request as id 1..n, in order
        let mut p = sh(
            r#"n=0; while read line; do n=$((n+1)); echo "{\"id\":$n,\"score\":0.25}"; done"#,
            Duration::from_secs(5),
        );
        assert_eq!(p.score("a").unwrap(), 0.25);
        assert_eq!(p.score("b").unwrap(), 0.25);
        assert_eq!(p.id(), "plugin:sh");
    }

    #[test]
    fn stale_ids_are_skipped() {
        let mut p = sh(
            r#"read line; echo '{"id":99,"score":0.9}'; echo '{"id":1,"score":0.1}'; sleep 5"#,
            Duration::from_secs(5),
        );
        assert_eq!(p.score("x").unwrap(), 0.1);
    }

    #[test]
    fn exit_and_garbage() {
        let mut p = sh("read line; exit 0", Duration::from_secs(5));
        assert!(matches!(p.score("x"), Err(ScorerError::Exited)));
        let mut p = sh("read line; echo not-json; sleep 5", Duration::from_secs(5));
        assert!(matches!(p.score("x"), Err(ScorerError::Protocol(_))));
    }

    #[test]
    fn timeout_then_restart() {
        let mut p = sh("sleep 30", Duration::from_millis(200));
        let t = Instant::now();
        assert!(matches!(p.score("x"), Err(ScorerError::Timeout(_))));
        assert!(t.elapsed() < Duration::from_secs(5));
        assert!(p.running.is_none());
        // a new child is started for the next request
        assert!(matches!(p.score("y"), Err(ScorerError::Timeout(_))));
    }

    #[test]
    fn missing_program() {
        assert!(PluginScorer::spawn(
            vec!["/nonexistent/scorer".into()],
            DEFAULT_PLUGIN_TIMEOUT
        )
        .is_err());
        assert!(PluginScorer::from_command_line("'unterminated", DEFAULT_PLUGIN_TIMEOUT).is_err());
    }
}
