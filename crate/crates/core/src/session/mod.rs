//! Tick-driven session engine: endpointing, classification, the dialogue
//! state machine and a streaming response stub, composed per conversation.
//!
//! Time is explicit. Every input carries its timestamp and the session
//! processes everything due before it first, so a recorded input sequence
//! always yields the same log. At equal timestamps user speech goes first,
//! then response chunks and endpoint ticks.

mod corpus;
mod server;

use std::collections::{BTreeMap, VecDeque};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{classify, fallback_token, ClassifyError, ContextWindow, Decider, DialogueContext, RulePack};
use crate::datagen::{item_seed, rng_for, TemplateBank};
use crate::machine::{emitted_tokens, Action, DialogueState, SessionEvent, StepError};
use crate::text::normalize_ws;
use crate::token::{ControlToken, Mode};
use crate::vad::{EndpointConfig, Payload, StreamError, TimedEventStream};

pub use corpus::{replay_corpus, CorpusReplay, CorpusReport, ReplayTiming, TranscriptReplay};
pub use server::{serve, serve_connection};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("at {t} ms: {source}")]
    Step { t: u64, source: StepError },
    #[error("at {t} ms: classifier failed: {source}")]
    Classifier { t: u64, source: ClassifyError },
    #[error("at {t} ms: no ground-truth label for an oracle decision")]
    MissingLabel { t: u64 },
    #[error("input at {t} ms precedes session time {clock} ms")]
    InputOutOfOrder { t: u64, clock: u64 },
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Where responses come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CdeKind {
    /// Repeats the query back.
    Echo,
    /// Exact-query table first, then template answers.
    Scripted {
        #[serde(default)]
        bank: Option<PathBuf>,
        #[serde(default)]
        responses: BTreeMap<String, Vec<String>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default)]
    pub endpoint: EndpointConfig,
    /// `rule`, `oracle`, `constant:<token>` or `external:<endpoint>`.
    #[serde(default = "default_classifier")]
    pub classifier: String,
    #[serde(default = "default_cde")]
    pub cde: CdeKind,
    #[serde(default = "default_chunk_interval")]
    pub chunk_interval_ms: u64,
    #[serde(default = "default_chunk_words")]
    pub chunk_words: usize,
    #[serde(default = "default_budget")]
    pub classifier_budget_ms: u64,
    /// Classifier failures abort the session instead of falling back.
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub rules: Option<PathBuf>,
    #[serde(default)]
    pub window: ContextWindow,
}

fn default_classifier() -> String {
    "rule".into()
}

fn default_cde() -> CdeKind {
    CdeKind::Scripted { bank: None, responses: BTreeMap::new() }
}

fn default_chunk_interval() -> u64 {
    200
}

fn default_chunk_words() -> usize {
    4
}

fn default_budget() -> u64 {
    150
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            endpoint: EndpointConfig::default(),
            classifier: default_classifier(),
            cde: default_cde(),
            chunk_interval_ms: default_chunk_interval(),
            chunk_words: default_chunk_words(),
            classifier_budget_ms: default_budget(),
            strict: false,
            rules: None,
            window: ContextWindow::default(),
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        self.endpoint.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        let bad = |m: String| Err(SessionError::Config(m));
        if self.chunk_interval_ms < self.endpoint.tick_ms {
            return bad(format!("chunk interval {} ms is shorter than a tick", self.chunk_interval_ms));
        }
        if self.classifier_budget_ms == 0 || self.classifier_budget_ms >= self.chunk_interval_ms {
            return bad(format!(
                "classifier budget {} ms must be positive and below the chunk interval",
                self.classifier_budget_ms
            ));
        }
        if self.chunk_words == 0 {
            return bad("chunk_words must be positive".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: SessionConfig =
            serde_json::from_str(&text).map_err(|e| SessionError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn decider(&self) -> Result<Decider, SessionError> {
        let rules = match &self.rules {
            Some(p) => RulePack::load(p),
            None => Ok(RulePack::default()),
        }
        .map_err(|e| SessionError::Config(e.to_string()))?;
        Decider::from_spec(&self.classifier, &rules, Duration::from_millis(self.classifier_budget_ms))
            .map_err(|e| SessionError::Config(e.to_string()))
    }

    pub fn cde(&self) -> Result<CdeStub, SessionError> {
        Ok(match &self.cde {
            CdeKind::Echo => CdeStub::Echo,
            CdeKind::Scripted { bank, responses } => {
                let bank = match bank {
                    Some(p) => TemplateBank::load(p).map_err(|e| SessionError::Config(e.to_string()))?,
                    None => TemplateBank::default(),
                };
                let mut cde = CdeStub::scripted(Some(bank));
                for (q, rs) in responses {
                    for r in rs {
                        cde.script(q, r);
                    }
                }
                cde
            }
        })
    }
}

/// Stand-in for the response generator.
#[derive(Debug, Clone)]
pub enum CdeStub {
    Echo,
    Scripted { table: BTreeMap<String, VecDeque<String>>, bank: Option<TemplateBank>, calls: u64 },
}

impl CdeStub {
    pub fn scripted(bank: Option<TemplateBank>) -> Self {
        CdeStub::Scripted { table: BTreeMap::new(), bank, calls: 0 }
    }

    /// Queues `response` for the next activation with exactly `query`.
    pub fn script(&mut self, query: &str, response: &str) {
        if let CdeStub::Scripted { table, .. } = self {
            table.entry(normalize_ws(query)).or_default().push_back(response.to_string());
        }
    }

    fn echo(query: &str) -> String {
        if query.trim().is_empty() {
            "I am listening.".into()
        } else {
            format!("You said: {}", query.trim())
        }
    }

    pub fn respond(&mut self, query: &str) -> String {
        match self {
            CdeStub::Echo => Self::echo(query),
            CdeStub::Scripted { table, bank, calls } => {
                *calls += 1;
                if let Some(r) = table.get_mut(&normalize_ws(query)).and_then(VecDeque::pop_front) {
                    return r;
                }
                bank.as_ref()
                    .and_then(|b| b.qa("that", &mut rng_for(item_seed(0, *calls))).ok())
                    .map(|qa| qa.answer)
                    .unwrap_or_else(|| Self::echo(query))
            }
        }
    }
}

fn chunk_text(text: &str, words: usize) -> VecDeque<String> {
    let w: Vec<&str> = text.split_whitespace().collect();
    let mut out: VecDeque<String> = w.chunks(words).map(|c| c.join(" ")).collect();
    if out.is_empty() {
        out.push_back(String::new());
    }
    out
}

/// One processed event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub t: u64,
    pub event: SessionEvent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<ControlToken>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    /// Ground truth for the decision, when the input carried a label valid
    /// in the mode the decision was made in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<ControlToken>,
    pub tokens: Vec<ControlToken>,
    pub actions: Vec<Action>,
    pub mode_before: Mode,
    pub mode_after: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SessionLog {
    pub entries: Vec<LogEntry>,
}

impl SessionLog {
    pub fn token_trace(&self) -> Vec<ControlToken> {
        self.entries.iter().flat_map(|e| e.tokens.iter().copied()).collect()
    }

    /// Checks that every token was legal in the mode it was emitted from and
    /// that CDE activations match `S-S` emissions. Returns the first problem.
    pub fn check(&self) -> Result<(), String> {
        for e in &self.entries {
            if let Some(t) = e.tokens.iter().find(|t| !t.is_legal_in(e.mode_before)) {
                return Err(format!("entry {}: {t} emitted while {}", e.seq, e.mode_before));
            }
            let ss = e.tokens.iter().filter(|&&t| t == ControlToken::StartSpeaking).count();
            let cde = e.actions.iter().filter(|a| matches!(a, Action::ActivateCde { .. })).count();
            if ss != cde {
                return Err(format!("entry {}: {ss} S-S tokens but {cde} CDE activations", e.seq));
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, SessionError> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e = serde_json::from_str(&line)
                .map_err(|e| SessionError::Config(format!("log line {}: {e}", i + 1)))?;
            entries.push(e);
        }
        Ok(SessionLog { entries })
    }
}

/// What the user side of a session does.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionInput {
    Speech {
        t: u64,
        text: String,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        labels: Vec<ControlToken>,
    },
    /// Explicit end of a fragment: forces an endpoint now.
    Pause { t: u64 },
    /// Nothing happens until `t_end`.
    Silence { t_end: u64 },
}

/// Inputs equivalent to a recorded stream (normalized first).
pub fn inputs_from_stream(stream: TimedEventStream) -> Result<Vec<SessionInput>, SessionError> {
    let stream = stream.normalize()?;
    Ok(stream
        .events
        .into_iter()
        .map(|e| match e.payload {
            Payload::Speech { text, labels, .. } => SessionInput::Speech { t: e.t, text, labels },
            Payload::SilenceUntil { t_end } => SessionInput::Silence { t_end },
        })
        .collect())
}

pub const PAUSE_NOTE: &str = "pause";

/// The user inputs recorded in a session log, for replaying it.
pub fn inputs_from_log(log: &SessionLog) -> Vec<SessionInput> {
    log.entries
        .iter()
        .filter_map(|e| match &e.event {
            SessionEvent::UserText { text, t } => Some(SessionInput::Speech { t: *t, text: text.clone(), labels: vec![] }),
            SessionEvent::EndpointCandidate { t } if e.note.as_deref() == Some(PAUSE_NOTE) => {
                Some(SessionInput::Pause { t: *t })
            }
            _ => None,
        })
        .collect()
}

struct Playback {
    chunks: VecDeque<String>,
    next_t: u64,
}

/// One conversation.
pub struct Session {
    endpoint: EndpointConfig,
    chunk_interval_ms: u64,
    chunk_words: usize,
    strict: bool,
    window: ContextWindow,
    decider: Decider,
    cde: CdeStub,
    state: DialogueState,
    clock: u64,
    last_speech: Option<u64>,
    endpoint_pending: bool,
    pending_labels: Vec<ControlToken>,
    playback: Option<Playback>,
    log: Vec<LogEntry>,
}

struct Decision {
    token: ControlToken,
    rationale: String,
    expected: Option<ControlToken>,
    note: Option<String>,
}

impl Session {
    pub fn new(cfg: &SessionConfig, decider: Decider, cde: CdeStub) -> Result<Self, SessionError> {
        cfg.validate()?;
        Ok(Session {
            endpoint: cfg.endpoint,
            chunk_interval_ms: cfg.chunk_interval_ms,
            chunk_words: cfg.chunk_words,
            strict: cfg.strict,
            window: cfg.window,
            decider,
            cde,
            state: DialogueState::new(),
            clock: 0,
            last_speech: None,
            endpoint_pending: false,
            pending_labels: Vec::new(),
            playback: None,
            log: Vec::new(),
        })
    }

    pub fn state(&self) -> &DialogueState {
        &self.state
    }

    pub fn mode(&self) -> Mode {
        self.state.mode()
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn into_log(self) -> SessionLog {
        SessionLog { entries: self.log }
    }

    /// Nothing is scheduled: no endpoint pending and no response playing.
    pub fn is_idle(&self) -> bool {
        self.next_due().is_none()
    }

    fn next_due(&self) -> Option<u64> {
        match self.state.mode() {
            Mode::Listening if self.endpoint_pending => self.last_speech.map(|s| self.endpoint.fire_time(s)),
            Mode::Speaking => self.playback.as_ref().map(|p| p.next_t),
            Mode::Listening => None,
        }
    }

    /// Processes everything due at or before `t` (before `t` when not
    /// `inclusive`).
    pub fn advance(&mut self, t: u64, inclusive: bool) -> Result<(), SessionError> {
        while let Some(due) = self.next_due() {
            if due > t || (!inclusive && due == t) {
                break;
            }
            self.process_due(due)?;
        }
        if inclusive {
            self.clock = self.clock.max(t);
        }
        Ok(())
    }

    /// Runs until nothing is scheduled.
    pub fn drain(&mut self) -> Result<(), SessionError> {
        while let Some(due) = self.next_due() {
            self.process_due(due)?;
        }
        Ok(())
    }

    fn process_due(&mut self, due: u64) -> Result<(), SessionError> {
        self.clock = self.clock.max(due);
        match self.state.mode() {
            Mode::Listening => self.endpoint_at(due, None),
            Mode::Speaking => {
                let playback = self.playback.as_mut().expect("scheduled playback");
                match playback.chunks.pop_front() {
                    Some(text) => {
                        playback.next_t += self.chunk_interval_ms;
                        self.step(SessionEvent::ResponseChunk { text, t: due }, None)
                    }
                    None => {
                        self.playback = None;
                        self.step(SessionEvent::ResponseComplete { t: due }, None)
                    }
                }
            }
        }
    }

    fn check_time(&self, t: u64) -> Result<(), SessionError> {
        if t < self.clock {
            Err(SessionError::InputOutOfOrder { t, clock: self.clock })
        } else {
            Ok(())
        }
    }

    /// User speech at `t`. Staged while listening; a barge-in decision while
    /// speaking. `labels` are ground truth for oracle runs.
    pub fn user_text(&mut self, t: u64, text: &str, labels: &[ControlToken]) -> Result<(), SessionError> {
        self.check_time(t)?;
        self.advance(t, false)?;
        self.clock = t;
        if text.trim().is_empty() {
            return Ok(());
        }
        let event = SessionEvent::UserText { text: text.to_string(), t };
        match self.state.mode() {
            Mode::Listening => {
                self.step(event, None)?;
                self.last_speech = Some(t);
                self.endpoint_pending = true;
                self.pending_labels = labels.to_vec();
            }
            Mode::Speaking => {
                let ctx = DialogueContext::from_state(&self.state, Some(text), self.window);
                let d = self.decide(t, &ctx, labels.first().copied())?;
                let actions = self.step_decided(event, d)?;
                if actions.contains(&Action::AbortSpeech) {
                    self.playback = None;
                    self.last_speech = Some(t);
                    self.endpoint_pending = true;
                    self.pending_labels = labels.get(1..).unwrap_or_default().to_vec();
                }
            }
        }
        Ok(())
    }

    /// Forces an endpoint at `t` if speech is waiting for one.
    pub fn pause(&mut self, t: u64) -> Result<(), SessionError> {
        self.check_time(t)?;
        self.advance(t, false)?;
        self.clock = t;
        if self.state.mode() == Mode::Listening && self.endpoint_pending {
            self.endpoint_at(t, Some(PAUSE_NOTE.into()))?;
        }
        Ok(())
    }

    pub fn feed(&mut self, input: &SessionInput) -> Result<(), SessionError> {
        match input {
            SessionInput::Speech { t, text, labels } => self.user_text(*t, text, labels),
            SessionInput::Pause { t } => self.pause(*t),
            SessionInput::Silence { t_end } => {
                self.check_time(*t_end)?;
                self.advance(*t_end, true)
            }
        }
    }

    fn endpoint_at(&mut self, t: u64, note: Option<String>) -> Result<(), SessionError> {
        let ctx = DialogueContext::from_state(&self.state, None, self.window);
        let expected = self.pending_labels.last().copied();
        let mut d = self.decide(t, &ctx, expected)?;
        if d.note.is_none() {
            d.note = note;
        }
        self.endpoint_pending = false;
        self.pending_labels.clear();
        let actions = self.step_decided(SessionEvent::EndpointCandidate { t }, d)?;
        for a in actions {
            if let Action::ActivateCde { query } = a {
                let response = self.cde.respond(&query);
                self.playback = Some(Playback {
                    chunks: chunk_text(&response, self.chunk_words),
                    next_t: t + self.chunk_interval_ms,
                });
            }
        }
        Ok(())
    }

    fn fallback(&self, t: u64, mode: Mode, expected: Option<ControlToken>, why: String) -> Result<Decision, SessionError> {
        let token = fallback_token(mode);
        warn!("at {t} ms: {why}; falling back to {token}");
        Ok(Decision { token, rationale: "fallback".into(), expected, note: Some(why) })
    }

    fn decide(&self, t: u64, ctx: &DialogueContext, label: Option<ControlToken>) -> Result<Decision, SessionError> {
        let mode = ctx.mode;
        // A label is only ground truth for a decision in the mode it was
        // written for; after an earlier wrong call the modes diverge.
        let expected = label.filter(|l| l.is_legal_in(mode));
        match &self.decider {
            Decider::Oracle => match expected {
                Some(token) => {
                    Ok(Decision { token, rationale: "oracle".into(), expected, note: None })
                }
                _ if self.strict => Err(SessionError::MissingLabel { t }),
                _ => self.fallback(t, mode, expected, "no usable label".into()),
            },
            Decider::Model(c) => match classify(c.as_ref(), ctx) {
                Ok(v) if v.token.is_legal_in(mode) => {
                    Ok(Decision { token: v.token, rationale: v.rationale, expected, note: None })
                }
                Ok(v) if self.strict => {
                    Err(SessionError::Step { t, source: StepError::IllegalToken { token: v.token, mode } })
                }
                Ok(v) => self.fallback(t, mode, expected, format!("illegal token {}", v.token)),
                Err(source) if self.strict => Err(SessionError::Classifier { t, source }),
                Err(e) => self.fallback(t, mode, expected, format!("classifier error: {e}")),
            },
        }
    }

    fn step_decided(&mut self, event: SessionEvent, d: Decision) -> Result<Vec<Action>, SessionError> {
        self.step_inner(event, Some(d.token), Some(d.rationale), d.expected, d.note)
    }

    fn step(&mut self, event: SessionEvent, decision: Option<ControlToken>) -> Result<(), SessionError> {
        self.step_inner(event, decision, None, None, None).map(drop)
    }

    fn step_inner(
        &mut self,
        event: SessionEvent,
        decision: Option<ControlToken>,
        rationale: Option<String>,
        expected: Option<ControlToken>,
        note: Option<String>,
    ) -> Result<Vec<Action>, SessionError> {
        let t = event.timestamp();
        let mode_before = self.state.mode();
        let actions = self.state.apply(&event, decision).map_err(|source| SessionError::Step { t, source })?;
        self.log.push(LogEntry {
            seq: self.log.len() as u64,
            t,
            tokens: emitted_tokens(&actions).collect(),
            event,
            decision,
            rationale,
            expected,
            actions: actions.clone(),
            mode_before,
            mode_after: self.state.mode(),
            note,
        });
        Ok(actions)
    }
}

/// Runs a recorded input sequence to completion.
pub fn run_session(
    cfg: &SessionConfig,
    decider: Decider,
    cde: CdeStub,
    inputs: &[SessionInput],
) -> Result<SessionLog, SessionError> {
    let mut s = Session::new(cfg, decider, cde)?;
    for input in inputs {
        s.feed(input)?;
    }
    s.drain()?;
    Ok(s.into_log())
}

/// Wire frames sent to a client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    Token { token: ControlToken, t: u64 },
    Chunk { text: String, t: u64 },
    State { mode: Mode, t: u64 },
    CdeActivated { query: String, t: u64 },
    Log { entry: LogEntry },
    Error { message: String },
}

/// Wire frames received from a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientFrame {
    UserText { text: String },
    Pause,
    Reset,
}

/// Frames announcing one log entry, in a fixed order: chunk, tokens, CDE
/// activation, mode change, then the entry itself.
pub fn frames_for(entry: &LogEntry) -> Vec<ServerFrame> {
    let t = entry.t;
    let mut frames = Vec::new();
    if let SessionEvent::ResponseChunk { text, .. } = &entry.event {
        frames.push(ServerFrame::Chunk { text: text.clone(), t });
    }
    frames.extend(entry.tokens.iter().map(|&token| ServerFrame::Token { token, t }));
    for a in &entry.actions {
        if let Action::ActivateCde { query } = a {
            frames.push(ServerFrame::CdeActivated { query: query.clone(), t });
        }
    }
    if entry.mode_before != entry.mode_after {
        frames.push(ServerFrame::State { mode: entry.mode_after, t });
    }
    frames.push(ServerFrame::Log { entry: entry.clone() });
    frames
}
