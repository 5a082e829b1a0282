use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::protocol::{parse_handshake, parse_response, request_line, Reply};
use super::{check_batch, check_response, Needs, ScoreRequest, ScoreResponse, Scorer};
use crate::error::{AlignError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExternalConfig {
    /// Maximum wait for any single reply line (and for the handshake).
    pub timeout: Duration,
    /// Maximum number of requests written before replies are collected.
    pub window: usize,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        ExternalConfig { timeout: Duration::from_secs(60), window: 256 }
    }
}

struct Channel {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    last_line: Option<String>,
    broken: Option<String>,
}

impl Channel {
    fn next_line(&mut self, timeout: Duration) -> Result<String> {
        loop {
            match self.lines.recv_timeout(timeout) {
                Ok(Ok(line)) => {
                    self.last_line = Some(line.clone());
                    if line.trim().is_empty() {
                        continue;
                    }
                    return Ok(line);
                }
                Ok(Err(e)) => return Err(AlignError::backend(format!("reading from scorer: {e}"), self.last())),
                Err(RecvTimeoutError::Timeout) => return Err(AlignError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    let status = self.child.try_wait().ok().flatten();
                    let msg = match status {
                        Some(s) => format!("scorer process exited ({s})"),
                        None => "scorer process closed its output".to_owned(),
                    };
                    return Err(AlignError::backend(msg, self.last()));
                }
            }
        }
    }

    fn last(&self) -> Option<&str> {
        self.last_line.as_deref()
    }

    fn send(&mut self, line: &str) -> Result<()> {
        let stdin = self.stdin.as_mut().ok_or_else(|| AlignError::backend("scorer input is closed", None))?;
        let res = stdin.write_all(line.as_bytes()).and_then(|_| stdin.write_all(b"\n"));
        res.map_err(|e| AlignError::backend(format!("writing to scorer: {e}"), self.last_line.as_deref()))
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(stdin) = self.stdin.as_mut() {
            stdin
                .flush()
                .map_err(|e| AlignError::backend(format!("writing to scorer: {e}"), self.last_line.as_deref()))?;
        }
        Ok(())
    }
}

/// Scorer running in a child process and speaking protocol v1 over its
/// standard streams. Requests from concurrent callers are serialized.
pub struct ExternalScorer {
    channel: Mutex<Channel>,
    supports: Needs,
    config: ExternalConfig,
}

impl ExternalScorer {
    /// Runs `command` through `sh -c` and waits for the handshake.
    pub fn spawn(command: &str, config: ExternalConfig) -> Result<Self> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(command);
        ExternalScorer::from_command(cmd, config)
    }

    pub fn from_command(mut cmd: Command, config: ExternalConfig) -> Result<Self> {
        if config.window == 0 {
            return Err(AlignError::malformed("in-flight window must be at least 1"));
        }
        let mut child = cmd
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AlignError::backend(format!("cannot start scorer: {e}"), None))?;
        let stdout = child.stdout.take().expect("stdout is piped");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut channel = Channel { child, stdin, lines: rx, last_line: None, broken: None };
        let first = channel.next_line(config.timeout)?;
        let supports = parse_handshake(&first)?;
        Ok(ExternalScorer { channel: Mutex::new(channel), supports, config })
    }

    pub fn config(&self) -> ExternalConfig {
        self.config
    }

    fn exchange(&self, ch: &mut Channel, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>> {
        let mut done: HashMap<u64, ScoreResponse> = HashMap::with_capacity(requests.len());
        for chunk in requests.chunks(self.config.window) {
            let mut pending: HashMap<u64, &ScoreRequest> = chunk.iter().map(|r| (r.id, r)).collect();
            for r in chunk {
                ch.send(&request_line(r))?;
            }
            ch.flush()?;
            while !pending.is_empty() {
                let line = ch.next_line(self.config.timeout)?;
                match parse_response(&line)? {
                    Reply::Error { id, message } => {
                        let who = id.map_or_else(|| "unknown request".to_owned(), |i| format!("request {i}"));
                        return Err(AlignError::backend(format!("scorer failed on {who}: {message}"), Some(&line)));
                    }
                    Reply::Scores(mut resp) => {
                        let Some(req) = pending.remove(&resp.id) else {
                            let what = if done.contains_key(&resp.id) { "duplicate" } else { "unknown" };
                            return Err(AlignError::backend(
                                format!("reply with {what} id {}", resp.id),
                                Some(&line),
                            ));
                        };
                        check_response(req, &mut resp).map_err(|e| match e {
                            AlignError::Backend { message, .. } => AlignError::backend(message, Some(&line)),
                            other => other,
                        })?;
                        done.insert(resp.id, resp);
                    }
                }
            }
        }
        requests
            .iter()
            .map(|r| {
                done.remove(&r.id)
                    .ok_or_else(|| AlignError::backend(format!("no reply for request {}", r.id), None))
            })
            .collect()
    }
}

impl Scorer for ExternalScorer {
    fn supports(&self) -> Needs {
        self.supports
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>> {
        check_batch(requests, self.supports)?;
        let mut ch = self.channel.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(why) = &ch.broken {
            return Err(AlignError::backend(format!("scorer unusable after earlier failure: {why}"), None));
        }
        let out = self.exchange(&mut ch, requests);
        if let Err(e) = &out {
            // The stream position is unknown after a failure.
            ch.broken = Some(e.to_string());
        }
        out
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        let ch = self.channel.get_mut().unwrap_or_else(|p| p.into_inner());
        ch.stdin.take();
        let _ = ch.child.kill();
        let _ = ch.child.wait();
    }
}
