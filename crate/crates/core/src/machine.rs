//! The turn-taking protocol state machine.
//!
//! [`DialogueState::step`] consumes one [`SessionEvent`] plus, where the
//! event calls for one, a classifier decision, and produces the next state
//! and the list of [`Action`]s the session must carry out. The machine is
//! pure: it never looks at a clock or performs I/O.
//!
//! Transition table (decision column is the classifier's token):
//!
//! | mode      | event             | decision | next mode | actions                              |
//! |-----------|-------------------|----------|-----------|--------------------------------------|
//! | Listening | UserText          | -        | Listening | (text staged)                        |
//! | Listening | EndpointCandidate | C-L      | Listening | EmitToken(C-L)                       |
//! | Listening | EndpointCandidate | S-S      | Speaking  | EmitToken(S-S), ActivateCDE, Flush   |
//! | Speaking  | UserText          | C-S      | Speaking  | EmitToken(C-S)                       |
//! | Speaking  | UserText          | S-L      | Listening | EmitToken(S-L), AbortSpeech          |
//! | Speaking  | ResponseChunk     | -        | Speaking  | NoOp                                 |
//! | Speaking  | ResponseComplete  | -        | Listening | EmitToken(S-L)                       |
//! | any       | Tick              | -        | unchanged | NoOp                                 |
//!
//! A user barge-in that arrives after `S-S` but before the first response
//! chunk is handled as an ordinary Speaking-mode barge-in.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::token::{ControlToken, Mode};

/// Separator used when joining cached query segments.
pub const SEGMENT_SEPARATOR: &str = " ";

/// A finished (or interrupted) exchange. Entries are append-only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub query: String,
    pub response: String,
    /// True when the user cut the response short with a real interruption.
    pub interrupted: bool,
    /// Barge-ins judged non-disruptive while this response was playing.
    pub ignored_bargeins: Vec<String>,
}

/// Progress through the response currently being spoken.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakingProgress {
    pub query: String,
    /// Response text delivered so far.
    pub response: String,
    /// Byte offset into the response (equals `response.len()`).
    pub offset: usize,
    pub ignored_bargeins: Vec<String>,
}

/// Full state of one dialogue session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    mode: Mode,
    query_cache: Vec<String>,
    staged: Vec<String>,
    history: Vec<Exchange>,
    speaking: Option<SpeakingProgress>,
    clock_ms: u64,
}

impl Default for DialogueState {
    fn default() -> Self {
        Self::new()
    }
}

/// Input to the state machine. Timestamps are milliseconds from session start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    UserText { text: String, t: u64 },
    EndpointCandidate { t: u64 },
    ResponseChunk { text: String, t: u64 },
    ResponseComplete { t: u64 },
    Tick { t: u64 },
}

impl SessionEvent {
    pub fn timestamp(&self) -> u64 {
        match *self {
            SessionEvent::UserText { t, .. }
            | SessionEvent::EndpointCandidate { t }
            | SessionEvent::ResponseChunk { t, .. }
            | SessionEvent::ResponseComplete { t }
            | SessionEvent::Tick { t } => t,
        }
    }

    pub fn kind(&self) -> EventKind {
        match self {
            SessionEvent::UserText { .. } => EventKind::UserText,
            SessionEvent::EndpointCandidate { .. } => EventKind::EndpointCandidate,
            SessionEvent::ResponseChunk { .. } => EventKind::ResponseChunk,
            SessionEvent::ResponseComplete { .. } => EventKind::ResponseComplete,
            SessionEvent::Tick { .. } => EventKind::Tick,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    UserText,
    EndpointCandidate,
    ResponseChunk,
    ResponseComplete,
    Tick,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::UserText => "user_text",
            EventKind::EndpointCandidate => "endpoint_candidate",
            EventKind::ResponseChunk => "response_chunk",
            EventKind::ResponseComplete => "response_complete",
            EventKind::Tick => "tick",
        })
    }
}

/// Something the session must do as a consequence of a step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    EmitToken { token: ControlToken },
    #[serde(rename = "activate_cde")]
    ActivateCde { query: String },
    AbortSpeech,
    FlushCache,
    NoOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("token {token} is illegal while {mode}")]
    IllegalToken { token: ControlToken, mode: Mode },
    #[error("{event} while {mode} requires a classifier decision")]
    MissingDecision { event: EventKind, mode: Mode },
    #[error("{event} while {mode} takes no classifier decision")]
    UnexpectedDecision { event: EventKind, mode: Mode },
    #[error("{event} cannot occur while {mode}")]
    EventOutOfMode { event: EventKind, mode: Mode },
    #[error("timestamp {t} ms precedes session clock {clock} ms")]
    TimestampRegression { t: u64, clock: u64 },
}

impl DialogueState {
    /// Fresh Listening state with empty cache and history.
    pub fn new() -> Self {
        DialogueState {
            mode: Mode::Listening,
            query_cache: Vec::new(),
            staged: Vec::new(),
            history: Vec::new(),
            speaking: None,
            clock_ms: 0,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Segments committed by `C-L` decisions since the last flush.
    pub fn query_cache(&self) -> &[String] {
        &self.query_cache
    }

    /// Text heard since the last endpoint decision.
    pub fn staged(&self) -> &[String] {
        &self.staged
    }

    pub fn history(&self) -> &[Exchange] {
        &self.history
    }

    pub fn speaking(&self) -> Option<&SpeakingProgress> {
        self.speaking.as_ref()
    }

    /// Offset into the current response; `Some` iff Speaking.
    pub fn speaking_progress(&self) -> Option<usize> {
        self.speaking.as_ref().map(|s| s.offset)
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    pub fn legal_tokens(&self) -> [ControlToken; 2] {
        self.mode.legal_tokens()
    }

    /// Cached segments joined as they would be passed to the response engine.
    pub fn cached_query(&self) -> String {
        self.query_cache.join(SEGMENT_SEPARATOR)
    }

    pub fn staged_text(&self) -> String {
        self.staged.join(SEGMENT_SEPARATOR)
    }

    /// The query that an `S-S` decision right now would send to the CDE.
    pub fn pending_query(&self) -> String {
        self.query_cache
            .iter()
            .chain(self.staged_segment().as_ref())
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(SEGMENT_SEPARATOR)
    }

    fn staged_segment(&self) -> Option<String> {
        (!self.staged.is_empty()).then(|| self.staged_text())
    }

    /// Pure transition: returns the successor state and actions, leaving
    /// `self` untouched.
    pub fn step(
        &self,
        event: &SessionEvent,
        decision: Option<ControlToken>,
    ) -> Result<(DialogueState, Vec<Action>), StepError> {
        let mut next = self.clone();
        let actions = next.apply(event, decision)?;
        Ok((next, actions))
    }

    /// In-place transition. On error the state is left unchanged.
    pub fn apply(
        &mut self,
        event: &SessionEvent,
        decision: Option<ControlToken>,
    ) -> Result<Vec<Action>, StepError> {
        self.check(event, decision)?;
        self.clock_ms = event.timestamp();

        let actions = match (self.mode, event) {
            (_, SessionEvent::Tick { .. }) => vec![Action::NoOp],
            (Mode::Listening, SessionEvent::UserText { text, .. }) => {
                push_trimmed(&mut self.staged, text);
                vec![]
            }
            (Mode::Listening, SessionEvent::EndpointCandidate { .. }) => {
                match decision.expect("checked") {
                    ControlToken::ContinueListening => {
                        if let Some(seg) = self.staged_segment() {
                            self.query_cache.push(seg);
                        }
                        self.staged.clear();
                        vec![Action::EmitToken { token: ControlToken::ContinueListening }]
                    }
                    _ => {
                        let query = self.pending_query();
                        self.query_cache.clear();
                        self.staged.clear();
                        self.mode = Mode::Speaking;
                        self.speaking = Some(SpeakingProgress {
                            query: query.clone(),
                            response: String::new(),
                            offset: 0,
                            ignored_bargeins: Vec::new(),
                        });
                        vec![
                            Action::EmitToken { token: ControlToken::StartSpeaking },
                            Action::ActivateCde { query },
                            Action::FlushCache,
                        ]
                    }
                }
            }
            (Mode::Speaking, SessionEvent::UserText { text, .. }) => {
                match decision.expect("checked") {
                    ControlToken::ContinueSpeaking => {
                        let progress = self.speaking.as_mut().expect("speaking");
                        progress.ignored_bargeins.push(text.trim().to_string());
                        vec![Action::EmitToken { token: ControlToken::ContinueSpeaking }]
                    }
                    _ => {
                        self.finish_response(true);
                        push_trimmed(&mut self.staged, text);
                        vec![
                            Action::EmitToken { token: ControlToken::StartListening },
                            Action::AbortSpeech,
                        ]
                    }
                }
            }
            (Mode::Speaking, SessionEvent::ResponseChunk { text, .. }) => {
                let progress = self.speaking.as_mut().expect("speaking");
                if !progress.response.is_empty() && !text.is_empty() {
                    progress.response.push(' ');
                }
                progress.response.push_str(text);
                progress.offset = progress.response.len();
                vec![Action::NoOp]
            }
            (Mode::Speaking, SessionEvent::ResponseComplete { .. }) => {
                self.finish_response(false);
                vec![Action::EmitToken { token: ControlToken::StartListening }]
            }
            _ => unreachable!("rejected by check"),
        };
        Ok(actions)
    }

    fn finish_response(&mut self, interrupted: bool) {
        let progress = self.speaking.take().expect("speaking");
        self.history.push(Exchange {
            query: progress.query,
            response: progress.response,
            interrupted,
            ignored_bargeins: progress.ignored_bargeins,
        });
        self.mode = Mode::Listening;
    }

    fn check(&self, event: &SessionEvent, decision: Option<ControlToken>) -> Result<(), StepError> {
        let t = event.timestamp();
        if t < self.clock_ms {
            return Err(StepError::TimestampRegression { t, clock: self.clock_ms });
        }
        let kind = event.kind();
        let mode = self.mode;
        let needs_decision = match (mode, kind) {
            (Mode::Listening, EventKind::EndpointCandidate) => true,
            (Mode::Speaking, EventKind::UserText) => true,
            (Mode::Listening, EventKind::ResponseChunk | EventKind::ResponseComplete)
            | (Mode::Speaking, EventKind::EndpointCandidate) => {
                return Err(StepError::EventOutOfMode { event: kind, mode });
            }
            _ => false,
        };
        match (needs_decision, decision) {
            (true, None) => Err(StepError::MissingDecision { event: kind, mode }),
            (false, Some(_)) => Err(StepError::UnexpectedDecision { event: kind, mode }),
            (true, Some(token)) if !token.is_legal_in(mode) => {
                Err(StepError::IllegalToken { token, mode })
            }
            _ => Ok(()),
        }
    }
}

fn push_trimmed(staged: &mut Vec<String>, text: &str) {
    let text = text.trim();
    if !text.is_empty() {
        staged.push(text.to_string());
    }
}

/// Tokens emitted by an action list, in order.
pub fn emitted_tokens(actions: &[Action]) -> impl Iterator<Item = ControlToken> + '_ {
    actions.iter().filter_map(|a| match a {
        Action::EmitToken { token } => Some(*token),
        _ => None,
    })
}

/// One scripted step: an event and the decision supplied with it.
pub type ScriptStep = (SessionEvent, Option<ControlToken>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replay {
    pub state: DialogueState,
    pub actions: Vec<Action>,
    pub trace: Vec<ControlToken>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("script step {index}: {source}")]
pub struct ReplayError {
    pub index: usize,
    #[source]
    pub source: StepError,
}

/// Left fold of [`DialogueState::step`] over a script.
pub fn replay(state0: DialogueState, script: &[ScriptStep]) -> Result<Replay, ReplayError> {
    let mut state = state0;
    let mut actions = Vec::new();
    for (index, (event, decision)) in script.iter().enumerate() {
        let step_actions = state
            .apply(event, *decision)
            .map_err(|source| ReplayError { index, source })?;
        actions.extend(step_actions);
    }
    let trace = emitted_tokens(&actions).collect();
    Ok(Replay { state, actions, trace })
}
