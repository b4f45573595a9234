//! Interactive sessions over TCP. A connection that opens with an HTTP
//! `GET` is upgraded to WebSocket; anything else speaks newline-delimited
//! JSON. Both carry the same frames, one JSON object per message or line.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use log::{error, info, warn};
use tungstenite::{Message, WebSocket};

use super::{frames_for, ClientFrame, ServerFrame, Session, SessionConfig, SessionError, SessionLog};
use crate::token::Mode;

enum Recv {
    Frame(String),
    Idle,
    Closed,
}

trait Transport {
    fn recv(&mut self, timeout: Duration) -> Result<Recv, SessionError>;
    fn send(&mut self, frame: &ServerFrame) -> Result<(), SessionError>;
}

struct Ndjson {
    lines: mpsc::Receiver<String>,
    out: TcpStream,
}

impl Ndjson {
    fn new(stream: TcpStream) -> Result<Self, SessionError> {
        let reader = BufReader::new(stream.try_clone()?);
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in reader.lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Ndjson { lines: rx, out: stream })
    }
}

impl Transport for Ndjson {
    fn recv(&mut self, timeout: Duration) -> Result<Recv, SessionError> {
        match self.lines.recv_timeout(timeout) {
            Ok(l) if l.trim().is_empty() => Ok(Recv::Idle),
            Ok(l) => Ok(Recv::Frame(l)),
            Err(RecvTimeoutError::Timeout) => Ok(Recv::Idle),
            Err(RecvTimeoutError::Disconnected) => Ok(Recv::Closed),
        }
    }

    fn send(&mut self, frame: &ServerFrame) -> Result<(), SessionError> {
        let mut line = serde_json::to_vec(frame).expect("frames serialize");
        line.push(b'\n');
        self.out.write_all(&line)?;
        Ok(())
    }
}

struct Ws(WebSocket<TcpStream>);

fn ws_err(e: tungstenite::Error) -> SessionError {
    match e {
        tungstenite::Error::Io(e) => SessionError::Io(e),
        other => SessionError::Io(std::io::Error::other(other.to_string())),
    }
}

impl Transport for Ws {
    fn recv(&mut self, timeout: Duration) -> Result<Recv, SessionError> {
        self.0.get_ref().set_read_timeout(Some(timeout))?;
        match self.0.read() {
            Ok(Message::Text(s)) => Ok(Recv::Frame(s)),
            Ok(Message::Close(_)) => Ok(Recv::Closed),
            Ok(_) => Ok(Recv::Idle),
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                Ok(Recv::Idle)
            }
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => Ok(Recv::Closed),
            Err(e) => Err(ws_err(e)),
        }
    }

    fn send(&mut self, frame: &ServerFrame) -> Result<(), SessionError> {
        let text = serde_json::to_string(frame).expect("frames serialize");
        self.0.send(Message::Text(text)).map_err(ws_err)
    }
}

fn is_websocket(stream: &TcpStream) -> Result<bool, SessionError> {
    let mut head = [0u8; 4];
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let n = stream.peek(&mut head)?;
        if n == 0 || n == head.len() || Instant::now() > deadline {
            return Ok(&head[..n] == b"GET ");
        }
        if !b"GET ".starts_with(&head[..n]) {
            return Ok(false);
        }
        thread::sleep(Duration::from_millis(5));
    }
}

/// Runs one interactive session until the client disconnects and returns
/// its log. Timestamps are wall-clock milliseconds since the connection
/// opened; the returned log replays to the same trace offline.
pub fn serve_connection(stream: TcpStream, cfg: &SessionConfig) -> Result<SessionLog, SessionError> {
    cfg.validate()?;
    stream.set_nodelay(true)?;
    if is_websocket(&stream)? {
        let ws = tungstenite::accept(stream).map_err(|e| SessionError::Io(std::io::Error::other(e.to_string())))?;
        run(Ws(ws), cfg)
    } else {
        run(Ndjson::new(stream)?, cfg)
    }
}

fn run(mut io: impl Transport, cfg: &SessionConfig) -> Result<SessionLog, SessionError> {
    let tick = Duration::from_millis(cfg.endpoint.tick_ms);
    let fresh = || -> Result<Session, SessionError> { Session::new(cfg, cfg.decider()?, cfg.cde()?) };
    let start = Instant::now();
    let now = || start.elapsed().as_millis() as u64;
    let mut session = fresh()?;
    let mut sent = 0;
    io.send(&ServerFrame::State { mode: Mode::Listening, t: 0 })?;
    loop {
        let incoming = io.recv(tick)?;
        let t = now();
        let result = match incoming {
            Recv::Closed => break,
            Recv::Idle => Ok(()),
            Recv::Frame(line) => match serde_json::from_str::<ClientFrame>(&line) {
                Ok(ClientFrame::UserText { text }) => session.user_text(t, &text, &[]),
                Ok(ClientFrame::Pause) => session.pause(t),
                Ok(ClientFrame::Reset) => {
                    session = fresh()?;
                    sent = 0;
                    io.send(&ServerFrame::State { mode: Mode::Listening, t })?;
                    Ok(())
                }
                Err(e) => {
                    io.send(&ServerFrame::Error { message: format!("bad frame: {e}") })?;
                    Ok(())
                }
            },
        };
        let result = result.and_then(|_| session.advance(t, true));
        for entry in &session.entries()[sent..] {
            for f in frames_for(entry) {
                io.send(&f)?;
            }
        }
        sent = session.entries().len();
        if let Err(e) = result {
            io.send(&ServerFrame::Error { message: e.to_string() })?;
            if cfg.strict {
                return Err(e);
            }
            warn!("{e}");
        }
    }
    Ok(session.into_log())
}

/// Accepts connections forever, one thread each. Finished logs are written
/// to `log_dir` as `session-<n>.jsonl` when given.
pub fn serve(listener: TcpListener, cfg: SessionConfig, log_dir: Option<PathBuf>) -> Result<(), SessionError> {
    cfg.validate()?;
    info!("listening on {}", listener.local_addr()?);
    for (n, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let cfg = cfg.clone();
        let log_dir = log_dir.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            info!("session {n} from {peer}");
            match serve_connection(stream, &cfg) {
                Ok(log) => {
                    if let Some(dir) = log_dir {
                        let path = dir.join(format!("session-{n}.jsonl"));
                        let written = std::fs::File::create(&path).and_then(|f| log.write_jsonl(std::io::BufWriter::new(f)));
                        if let Err(e) = written {
                            error!("writing {}: {e}", path.display());
                        }
                    }
                }
                Err(e) => error!("session {n}: {e}"),
            }
        });
    }
    Ok(())
}
