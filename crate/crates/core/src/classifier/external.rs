//! Adapter for an external turn-taking model.
//!
//! Protocol: newline-delimited JSON over a byte stream (a TCP connection or
//! the stdio of a child process). Each request is one [`DialogueContext`]
//! object on its own line; the model answers with one line,
//! `{"token": "<|C-S|>"}`. A bare token string is accepted too. Only one
//! request is in flight per connection.

use std::fmt;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use log::warn;
use serde::Deserialize;

use super::{fallback_token, Classifier, ClassifierVerdict, ClassifyError, DialogueContext};
use crate::token::ControlToken;

/// Where the model lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExternalModelEndpoint {
    /// `host:port` of a model server.
    Tcp(String),
    /// A child process speaking the protocol on stdin/stdout.
    Command { program: String, args: Vec<String> },
}

impl ExternalModelEndpoint {
    /// Parses `exec:<program> [args...]` or a TCP `host:port` address.
    pub fn parse(spec: &str) -> Result<Self, ClassifyError> {
        if let Some(cmd) = spec.strip_prefix("exec:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts
                .next()
                .ok_or_else(|| ClassifyError::Protocol("empty exec command".into()))?;
            return Ok(ExternalModelEndpoint::Command { program, args: parts.collect() });
        }
        if spec.is_empty() {
            return Err(ClassifyError::Protocol("empty endpoint address".into()));
        }
        Ok(ExternalModelEndpoint::Tcp(spec.to_string()))
    }
}

impl fmt::Display for ExternalModelEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExternalModelEndpoint::Tcp(addr) => f.write_str(addr),
            ExternalModelEndpoint::Command { program, args } => {
                write!(f, "exec:{program}")?;
                args.iter().try_for_each(|a| write!(f, " {a}"))
            }
        }
    }
}

enum Connection {
    Tcp { reader: BufReader<TcpStream>, writer: TcpStream },
    Child { child: Child, stdin: ChildStdin, lines: Receiver<std::io::Result<String>> },
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Connection::Child { child, .. } = self {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn io_err(e: std::io::Error) -> ClassifyError {
    ClassifyError::Io(e.to_string())
}

fn remaining(deadline: Instant, budget_ms: u64) -> Result<Duration, ClassifyError> {
    let left = deadline.saturating_duration_since(Instant::now());
    if left.is_zero() {
        Err(ClassifyError::Timeout { budget_ms })
    } else {
        Ok(left)
    }
}

impl Connection {
    fn open(endpoint: &ExternalModelEndpoint, deadline: Instant, budget_ms: u64) -> Result<Self, ClassifyError> {
        match endpoint {
            ExternalModelEndpoint::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()
                    .map_err(io_err)?
                    .next()
                    .ok_or_else(|| ClassifyError::Io(format!("cannot resolve {addr}")))?;
                let stream = TcpStream::connect_timeout(&sock, remaining(deadline, budget_ms)?).map_err(|e| {
                    if e.kind() == ErrorKind::TimedOut {
                        ClassifyError::Timeout { budget_ms }
                    } else {
                        io_err(e)
                    }
                })?;
                stream.set_nodelay(true).map_err(io_err)?;
                let writer = stream.try_clone().map_err(io_err)?;
                Ok(Connection::Tcp { reader: BufReader::new(stream), writer })
            }
            ExternalModelEndpoint::Command { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(io_err)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let (tx, lines) = mpsc::channel();
                thread::spawn(move || {
                    for line in BufReader::new(stdout).lines() {
                        if tx.send(line).is_err() {
                            break;
                        }
                    }
                });
                Ok(Connection::Child { child, stdin, lines })
            }
        }
    }

    fn round_trip(&mut self, request: &str, deadline: Instant, budget_ms: u64) -> Result<String, ClassifyError> {
        let timeout = |e: std::io::Error| match e.kind() {
            ErrorKind::WouldBlock | ErrorKind::TimedOut => ClassifyError::Timeout { budget_ms },
            _ => io_err(e),
        };
        match self {
            Connection::Tcp { reader, writer } => {
                writer.set_write_timeout(Some(remaining(deadline, budget_ms)?)).map_err(io_err)?;
                writer.write_all(request.as_bytes()).map_err(timeout)?;
                writer.write_all(b"\n").map_err(timeout)?;
                writer.flush().map_err(timeout)?;
                let mut line = String::new();
                loop {
                    reader.get_ref().set_read_timeout(Some(remaining(deadline, budget_ms)?)).map_err(io_err)?;
                    match reader.read_line(&mut line) {
                        Ok(0) => return Err(ClassifyError::Protocol("model closed the connection".into())),
                        Ok(_) if line.ends_with('\n') => return Ok(line),
                        Ok(_) => continue,
                        Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                        Err(e) => return Err(timeout(e)),
                    }
                }
            }
            Connection::Child { stdin, lines, .. } => {
                stdin.write_all(request.as_bytes()).map_err(io_err)?;
                stdin.write_all(b"\n").map_err(io_err)?;
                stdin.flush().map_err(io_err)?;
                match lines.recv_timeout(remaining(deadline, budget_ms)?) {
                    Ok(line) => line.map_err(io_err),
                    Err(RecvTimeoutError::Timeout) => Err(ClassifyError::Timeout { budget_ms }),
                    Err(RecvTimeoutError::Disconnected) => {
                        Err(ClassifyError::Protocol("model process exited".into()))
                    }
                }
            }
        }
    }
}

#[derive(Deserialize)]
struct Reply {
    token: String,
}

/// Parses one reply line into a token.
pub fn parse_reply(line: &str) -> Result<ControlToken, ClassifyError> {
    let line = line.trim();
    let raw = if line.starts_with('{') {
        serde_json::from_str::<Reply>(line)
            .map_err(|e| ClassifyError::Protocol(format!("malformed reply `{line}`: {e}")))?
            .token
    } else if line.starts_with('"') {
        serde_json::from_str::<String>(line)
            .map_err(|e| ClassifyError::Protocol(format!("malformed reply `{line}`: {e}")))?
    } else {
        line.to_string()
    };
    raw.parse().map_err(|_| ClassifyError::Protocol(format!("reply `{line}` is not a control token")))
}

/// Classifier backed by an external model.
///
/// Every call either answers or fails within `budget`. After a timeout or
/// I/O failure the connection is dropped and reopened on the next call, so
/// a late reply can never be mistaken for the answer to a later request.
pub struct ExternalClassifier {
    endpoint: ExternalModelEndpoint,
    budget: Duration,
    conn: Mutex<Option<Connection>>,
}

impl ExternalClassifier {
    pub fn new(endpoint: ExternalModelEndpoint, budget: Duration) -> Self {
        ExternalClassifier { endpoint, budget, conn: Mutex::new(None) }
    }

    pub fn endpoint(&self) -> &ExternalModelEndpoint {
        &self.endpoint
    }

    pub fn budget_ms(&self) -> u64 {
        self.budget.as_millis() as u64
    }

    fn request(&self, ctx: &DialogueContext) -> Result<ControlToken, ClassifyError> {
        let budget_ms = self.budget_ms();
        let deadline = Instant::now() + self.budget;
        let request = serde_json::to_string(ctx).expect("context serializes");
        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(Connection::open(&self.endpoint, deadline, budget_ms)?);
        }
        let result = guard.as_mut().expect("connected").round_trip(&request, deadline, budget_ms);
        match result {
            Ok(line) => parse_reply(&line),
            Err(e) => {
                *guard = None;
                Err(e)
            }
        }
    }
}

/// Sends `ctx` to the model and maps its answer to a verdict. A token that
/// is illegal in the context's mode is replaced by [`fallback_token`].
pub fn external_classify(classifier: &ExternalClassifier, ctx: &DialogueContext) -> Result<ClassifierVerdict, ClassifyError> {
    ctx.validate()?;
    let token = classifier.request(ctx)?;
    if token.is_legal_in(ctx.mode) {
        Ok(ClassifierVerdict::certain(token, "external_model"))
    } else {
        let fallback = fallback_token(ctx.mode);
        warn!("model at {} answered {token} while {}; using {fallback}", classifier.endpoint, ctx.mode);
        Ok(ClassifierVerdict::certain(fallback, "illegal_model_token"))
    }
}

impl Classifier for ExternalClassifier {
    fn classify(&self, ctx: &DialogueContext) -> Result<ClassifierVerdict, ClassifyError> {
        external_classify(self, ctx)
    }

    fn name(&self) -> &str {
        "external"
    }
}
