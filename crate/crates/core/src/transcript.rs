//! Annotated full-duplex transcripts and their textual grammar.
//!
//! Text form, one round per line, optional header lines first:
//!
//! ```text
//! Topic: travel
//! Style: casual
//! Provenance: synthesized
//! Round 1 (normal); User: How do I get to <|C-L|> the airport?; Sys: <|S-S|> Take the train. <|S-L|>
//! Round 2 (fake interruption); User: Is it fast?; Sys: <|S-S|> Yes. <|C-S|> About 20 minutes. <|S-L|>; Barge-in: uh-huh
//! Round 3 (real interruption); User: And a taxi?; Sys: <|S-S|> A taxi costs <|S-L|> <|S-S|> Sure, here is the bus. <|S-L|>; Barge-in: no, what about the bus?
//! ```
//!
//! Token placement: `<|C-L|>` follows each incomplete user segment on the
//! `User:` line; the `Sys:` line opens with `<|S-S|>` and every spoken span
//! is closed by `<|S-L|>`; `<|C-S|>` marks the sentence boundary where a
//! non-disruptive barge-in landed. The barge-in text itself is carried in the
//! trailing `Barge-in:` field. After a real interruption the barge-in is the
//! next query, answered by the second `<|S-S|> ... <|S-L|>` span.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::text::normalize_ws;
use crate::token::{ControlToken, Mode, UnknownToken};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundKind {
    Normal,
    RealInt,
    FakeInt,
}

impl RoundKind {
    pub const ALL: [RoundKind; 3] = [RoundKind::Normal, RoundKind::RealInt, RoundKind::FakeInt];

    /// Label used in the `Round X (...)` header.
    pub fn label(self) -> &'static str {
        match self {
            RoundKind::Normal => "normal",
            RoundKind::RealInt => "real interruption",
            RoundKind::FakeInt => "fake interruption",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        RoundKind::ALL.into_iter().find(|k| k.label() == s)
    }
}

impl fmt::Display for RoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSegment {
    pub text: String,
    pub complete: bool,
}

impl UserSegment {
    pub fn complete(text: impl Into<String>) -> Self {
        UserSegment { text: text.into(), complete: true }
    }

    pub fn incomplete(text: impl Into<String>) -> Self {
        UserSegment { text: text.into(), complete: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponsePart {
    Token(ControlToken),
    Text(String),
}

/// System response with inline control tokens. Serializes as its text form.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SystemResponse(pub Vec<ResponsePart>);

impl SystemResponse {
    pub fn parts(&self) -> &[ResponsePart] {
        &self.0
    }

    pub fn tokens(&self) -> impl Iterator<Item = ControlToken> + '_ {
        self.0.iter().filter_map(|p| match p {
            ResponsePart::Token(t) => Some(*t),
            ResponsePart::Text(_) => None,
        })
    }

    /// `<|S-S|> text <|S-L|>`.
    pub fn simple(text: &str) -> Self {
        SystemResponse(vec![
            ResponsePart::Token(ControlToken::StartSpeaking),
            ResponsePart::Text(normalize_ws(text)),
            ResponsePart::Token(ControlToken::StartListening),
        ])
    }

    /// Spoken text spans, one per `<|S-S|>`; text split by `<|C-S|>` is
    /// rejoined with a space.
    pub fn spoken_spans(&self) -> Vec<String> {
        let mut spans = Vec::new();
        let mut current: Option<Vec<&str>> = None;
        for part in &self.0 {
            match part {
                ResponsePart::Token(ControlToken::StartSpeaking) => {
                    if let Some(c) = current.take() {
                        spans.push(c.join(" "));
                    }
                    current = Some(Vec::new());
                }
                ResponsePart::Token(ControlToken::StartListening) => {
                    if let Some(c) = current.take() {
                        spans.push(c.join(" "));
                    }
                }
                ResponsePart::Token(_) => {}
                ResponsePart::Text(t) => {
                    if let Some(c) = current.as_mut() {
                        c.push(t);
                    }
                }
            }
        }
        if let Some(c) = current {
            spans.push(c.join(" "));
        }
        spans
    }

    /// Text preceding the first `<|C-S|>` or second token of the first span:
    /// what had been spoken when a barge-in landed.
    pub fn text_before_bargein(&self) -> String {
        let mut out = Vec::new();
        let mut seen_start = false;
        for part in &self.0 {
            match part {
                ResponsePart::Token(ControlToken::StartSpeaking) if !seen_start => seen_start = true,
                ResponsePart::Token(_) => break,
                ResponsePart::Text(t) => out.push(t.as_str()),
            }
        }
        out.join(" ")
    }
}

impl fmt::Display for SystemResponse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, part) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match part {
                ResponsePart::Token(t) => f.write_str(t.as_str())?,
                ResponsePart::Text(s) => f.write_str(s)?,
            }
        }
        Ok(())
    }
}

/// A `<|...|>` marker found while scanning text.
enum Piece<'a> {
    Text(&'a str),
    Marker(&'a str, usize),
}

fn scan_markers(s: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = 0;
    while let Some(open) = s[rest..].find("<|") {
        let open = rest + open;
        let Some(close) = s[open + 2..].find("|>") else { break };
        let close = open + 2 + close + 2;
        if open > rest {
            out.push(Piece::Text(&s[rest..open]));
        }
        out.push(Piece::Marker(&s[open..close], open));
        rest = close;
    }
    if rest < s.len() {
        out.push(Piece::Text(&s[rest..]));
    }
    out
}

impl FromStr for SystemResponse {
    type Err = UnknownToken;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_response(s).map_err(|(tok, _)| UnknownToken(tok))
    }
}

fn parse_response(s: &str) -> Result<SystemResponse, (String, usize)> {
    let mut parts = Vec::new();
    for piece in scan_markers(s) {
        match piece {
            Piece::Text(t) => {
                let t = normalize_ws(t);
                if !t.is_empty() {
                    parts.push(ResponsePart::Text(t));
                }
            }
            Piece::Marker(m, at) => {
                let token = m.parse().map_err(|_| (m.to_string(), at))?;
                parts.push(ResponsePart::Token(token));
            }
        }
    }
    Ok(SystemResponse(parts))
}

impl Serialize for SystemResponse {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SystemResponse {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub index: u32,
    pub kind: RoundKind,
    pub user_segments: Vec<UserSegment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bargein_text: Option<String>,
    pub system_response: SystemResponse,
    pub gt_tokens: Vec<ControlToken>,
}

impl Round {
    /// Builds a round, deriving `gt_tokens` from the annotations.
    pub fn new(
        index: u32,
        kind: RoundKind,
        user_segments: Vec<UserSegment>,
        bargein_text: Option<String>,
        system_response: SystemResponse,
    ) -> Self {
        let mut round = Round {
            index,
            kind,
            user_segments,
            bargein_text,
            system_response,
            gt_tokens: Vec::new(),
        };
        round.gt_tokens = round.derived_tokens();
        round
    }

    /// One `C-L` per incomplete user segment, then the response's tokens.
    pub fn derived_tokens(&self) -> Vec<ControlToken> {
        self.user_segments
            .iter()
            .filter(|s| !s.complete)
            .map(|_| ControlToken::ContinueListening)
            .chain(self.system_response.tokens())
            .collect()
    }

    pub fn refresh_tokens(&mut self) {
        self.gt_tokens = self.derived_tokens();
    }

    /// The complete user query (all segments joined).
    pub fn query(&self) -> String {
        self.user_segments.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ")
    }

    fn write_text(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Round {} ({}); User: ", self.index, self.kind)?;
        for (i, seg) in self.user_segments.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(&seg.text)?;
            if !seg.complete {
                write!(f, " {}", ControlToken::ContinueListening)?;
            }
        }
        write!(f, "; Sys: {}", self.system_response)?;
        if let Some(b) = &self.bargein_text {
            write!(f, "; Barge-in: {b}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthesized,
    Imported,
    PostProcessed,
}

impl Provenance {
    pub fn label(self) -> &'static str {
        match self {
            Provenance::Synthesized => "synthesized",
            Provenance::Imported => "imported",
            Provenance::PostProcessed => "post_processed",
        }
    }

    fn from_label(s: &str) -> Option<Self> {
        [Provenance::Synthesized, Provenance::Imported, Provenance::PostProcessed]
            .into_iter()
            .find(|p| p.label() == s)
    }

    /// Generated transcripts must carry 2..=12 rounds.
    pub fn is_generated(self) -> bool {
        !matches!(self, Provenance::Imported)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub topic: String,
    pub style: String,
    pub rounds: Vec<Round>,
    pub provenance: Provenance,
}

impl Transcript {
    pub fn gt_tokens(&self) -> Vec<ControlToken> {
        self.rounds.iter().flat_map(|r| r.gt_tokens.iter().copied()).collect()
    }

    /// Canonical text form.
    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Transcript, ParseError> {
        parse_transcript(text)
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.topic.is_empty() {
            writeln!(f, "Topic: {}", self.topic)?;
        }
        if !self.style.is_empty() {
            writeln!(f, "Style: {}", self.style)?;
        }
        writeln!(f, "Provenance: {}", self.provenance.label())?;
        for round in &self.rounds {
            round.write_text(f)?;
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Serializes a transcript in canonical text form.
pub fn serialize_transcript(t: &Transcript) -> String {
    t.to_text()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("expected `Round <n> (<type>)` header")]
    MalformedRoundHeader,
    #[error("unknown dialogue type `{0}`")]
    UnknownDialogueType(String),
    #[error("missing `User:` field")]
    MissingUserField,
    #[error("missing `Sys:` field")]
    MissingSysField,
    #[error("unknown token string `{0}`")]
    UnknownToken(String),
    #[error("round index {found} does not follow {expected_prev}")]
    NonContiguousRoundIndex { expected_prev: u32, found: u32 },
    #[error("token {token} is illegal in the {field} field")]
    IllegalTokenForPosition { token: ControlToken, field: &'static str },
    #[error("unknown provenance `{0}`")]
    UnknownProvenance(String),
    #[error("transcript has no rounds")]
    EmptyTranscript,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

fn col(line: &str, byte: usize) -> usize {
    line[..byte.min(line.len())].chars().count() + 1
}

/// Finds `; <name>:` at or after `from`, returning (start of `;`, start of value).
fn find_field(s: &str, from: usize, name: &str) -> Option<(usize, usize)> {
    let bytes = s.as_bytes();
    let mut i = from;
    while let Some(off) = s[i..].find(';') {
        let semi = i + off;
        let mut j = semi + 1;
        while j < bytes.len() && bytes[j] == b' ' {
            j += 1;
        }
        if s[j..].starts_with(name) && s[j + name.len()..].starts_with(':') {
            return Some((semi, j + name.len() + 1));
        }
        i = semi + 1;
    }
    None
}

fn parse_round_line(line: &str, lineno: usize) -> Result<Round, ParseError> {
    let err = |byte: usize, kind| ParseError { line: lineno, column: col(line, byte), kind };

    let rest = line.strip_prefix("Round ").ok_or_else(|| err(0, ParseErrorKind::MalformedRoundHeader))?;
    let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    let index: u32 = rest[..digits].parse().map_err(|_| err(6, ParseErrorKind::MalformedRoundHeader))?;
    let after_idx = 6 + digits;
    let open = line[after_idx..]
        .strip_prefix(" (")
        .map(|_| after_idx + 2)
        .ok_or_else(|| err(after_idx, ParseErrorKind::MalformedRoundHeader))?;
    let close = line[open..].find(')').map(|c| open + c).ok_or_else(|| err(open, ParseErrorKind::MalformedRoundHeader))?;
    let label = normalize_ws(&line[open..close]);
    let kind = RoundKind::from_label(&label)
        .ok_or_else(|| err(open, ParseErrorKind::UnknownDialogueType(label.clone())))?;

    let (user_semi, user_val) = find_field(line, close, "User").ok_or_else(|| err(close + 1, ParseErrorKind::MissingUserField))?;
    if !line[close + 1..user_semi].trim().is_empty() {
        return Err(err(close + 1, ParseErrorKind::MissingUserField));
    }
    let (sys_semi, sys_val) = find_field(line, user_val, "Sys").ok_or_else(|| err(line.len(), ParseErrorKind::MissingSysField))?;
    let barge = find_field(line, sys_val, "Barge-in");
    let sys_end = barge.map(|(semi, _)| semi).unwrap_or(line.len());

    let user_segments = parse_user_field(&line[user_val..sys_semi])
        .map_err(|(kind, at)| err(user_val + at, kind))?;
    let system_response = parse_response(&line[sys_val..sys_end])
        .map_err(|(tok, at)| err(sys_val + at, ParseErrorKind::UnknownToken(tok)))?;
    let bargein_text = match barge {
        Some((_, val)) => {
            let raw = &line[val..];
            if let Some(Piece::Marker(m, at)) = scan_markers(raw).into_iter().find(|p| matches!(p, Piece::Marker(..))) {
                let kind = match m.parse::<ControlToken>() {
                    Ok(token) => ParseErrorKind::IllegalTokenForPosition { token, field: "Barge-in" },
                    Err(_) => ParseErrorKind::UnknownToken(m.to_string()),
                };
                return Err(err(val + at, kind));
            }
            Some(normalize_ws(raw))
        }
        None => None,
    };

    Ok(Round::new(index, kind, user_segments, bargein_text, system_response))
}

fn parse_user_field(s: &str) -> Result<Vec<UserSegment>, (ParseErrorKind, usize)> {
    let mut segments: Vec<UserSegment> = Vec::new();
    for piece in scan_markers(s) {
        match piece {
            Piece::Text(t) => {
                let t = normalize_ws(t);
                if !t.is_empty() {
                    segments.push(UserSegment::complete(t));
                }
            }
            Piece::Marker(m, at) => match m.parse::<ControlToken>() {
                Ok(ControlToken::ContinueListening) => match segments.last_mut() {
                    Some(seg) if seg.complete => seg.complete = false,
                    _ => {
                        return Err((
                            ParseErrorKind::IllegalTokenForPosition {
                                token: ControlToken::ContinueListening,
                                field: "User",
                            },
                            at,
                        ))
                    }
                },
                Ok(token) => return Err((ParseErrorKind::IllegalTokenForPosition { token, field: "User" }, at)),
                Err(_) => return Err((ParseErrorKind::UnknownToken(m.to_string()), at)),
            },
        }
    }
    Ok(segments)
}

/// Parses one transcript in text form. Round indices must be contiguous
/// from 1. Structural invariants are checked separately by [`validate`].
pub fn parse_transcript(text: &str) -> Result<Transcript, ParseError> {
    let mut topic = String::new();
    let mut style = String::new();
    let mut provenance = Provenance::Imported;
    let mut rounds: Vec<Round> = Vec::new();
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        last_line = lineno;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if rounds.is_empty() {
            if let Some(v) = line.strip_prefix("Topic:") {
                topic = normalize_ws(v);
                continue;
            }
            if let Some(v) = line.strip_prefix("Style:") {
                style = normalize_ws(v);
                continue;
            }
            if let Some(v) = line.strip_prefix("Provenance:") {
                let v = v.trim();
                provenance = Provenance::from_label(v).ok_or_else(|| ParseError {
                    line: lineno,
                    column: col(line, 11),
                    kind: ParseErrorKind::UnknownProvenance(v.to_string()),
                })?;
                continue;
            }
        }
        let round = parse_round_line(line, lineno)?;
        let expected = rounds.last().map_or(1, |r| r.index + 1);
        if round.index != expected {
            return Err(ParseError {
                line: lineno,
                column: 7,
                kind: ParseErrorKind::NonContiguousRoundIndex { expected_prev: expected - 1, found: round.index },
            });
        }
        rounds.push(round);
    }
    if rounds.is_empty() {
        return Err(ParseError { line: last_line.max(1), column: 1, kind: ParseErrorKind::EmptyTranscript });
    }
    Ok(Transcript { topic, style, rounds, provenance })
}

/// Splits a multi-transcript text file on blank lines.
pub fn split_transcripts(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Machine-readable reason a transcript is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MalformedRoundHeader,
    UnknownDialogueType,
    MissingUserField,
    MissingSysField,
    UnknownToken,
    NonContiguousRoundIndex,
    UnknownProvenance,
    EmptyTranscript,
    EmptyUserQuery,
    IncompleteFinalSegment,
    IllegalTokenForState,
    TextOutsideSpeech,
    EmptyResponse,
    UnterminatedRound,
    KindTokenMismatch,
    BargeinMismatch,
    RoundCountOutOfRange,
    GtTokenMismatch,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::MalformedRoundHeader => "malformed_round_header",
            RejectReason::UnknownDialogueType => "unknown_dialogue_type",
            RejectReason::MissingUserField => "missing_user_field",
            RejectReason::MissingSysField => "missing_sys_field",
            RejectReason::UnknownToken => "unknown_token",
            RejectReason::NonContiguousRoundIndex => "non_contiguous_round_index",
            RejectReason::UnknownProvenance => "unknown_provenance",
            RejectReason::EmptyTranscript => "empty_transcript",
            RejectReason::EmptyUserQuery => "empty_user_query",
            RejectReason::IncompleteFinalSegment => "incomplete_final_segment",
            RejectReason::IllegalTokenForState => "illegal_token_for_state",
            RejectReason::TextOutsideSpeech => "text_outside_speech",
            RejectReason::EmptyResponse => "empty_response",
            RejectReason::UnterminatedRound => "unterminated_round",
            RejectReason::KindTokenMismatch => "kind_token_mismatch",
            RejectReason::BargeinMismatch => "bargein_mismatch",
            RejectReason::RoundCountOutOfRange => "round_count_out_of_range",
            RejectReason::GtTokenMismatch => "gt_token_mismatch",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl From<&ParseErrorKind> for RejectReason {
    fn from(kind: &ParseErrorKind) -> Self {
        match kind {
            ParseErrorKind::MalformedRoundHeader => RejectReason::MalformedRoundHeader,
            ParseErrorKind::UnknownDialogueType(_) => RejectReason::UnknownDialogueType,
            ParseErrorKind::MissingUserField => RejectReason::MissingUserField,
            ParseErrorKind::MissingSysField => RejectReason::MissingSysField,
            ParseErrorKind::UnknownToken(_) => RejectReason::UnknownToken,
            ParseErrorKind::NonContiguousRoundIndex { .. } => RejectReason::NonContiguousRoundIndex,
            ParseErrorKind::IllegalTokenForPosition { .. } => RejectReason::IllegalTokenForState,
            ParseErrorKind::UnknownProvenance(_) => RejectReason::UnknownProvenance,
            ParseErrorKind::EmptyTranscript => RejectReason::EmptyTranscript,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}: {reason} ({detail})", round.map_or("transcript".to_string(), |r| format!("round {r}")))]
pub struct Violation {
    pub round: Option<u32>,
    pub reason: RejectReason,
    pub detail: String,
}

pub const MIN_GENERATED_ROUNDS: usize = 2;
pub const MAX_GENERATED_ROUNDS: usize = 12;

/// Checks every round and transcript invariant. This is the single gate
/// used by synthesis, post-processing, import and cleaning.
pub fn validate(t: &Transcript) -> Result<(), Violation> {
    let fail = |round: Option<u32>, reason, detail: String| Err(Violation { round, reason, detail });
    if t.rounds.is_empty() {
        return fail(None, RejectReason::EmptyTranscript, "no rounds".into());
    }
    if t.provenance.is_generated()
        && !(MIN_GENERATED_ROUNDS..=MAX_GENERATED_ROUNDS).contains(&t.rounds.len())
    {
        return fail(None, RejectReason::RoundCountOutOfRange, format!("{} rounds", t.rounds.len()));
    }
    validate_rounds(t)
}

/// [`validate`] without the round-count bound on generated transcripts.
pub fn validate_rounds(t: &Transcript) -> Result<(), Violation> {
    let fail = |round: Option<u32>, reason, detail: String| Err(Violation { round, reason, detail });
    if t.rounds.is_empty() {
        return fail(None, RejectReason::EmptyTranscript, "no rounds".into());
    }
    let last = t.rounds.len() - 1;
    for (pos, round) in t.rounds.iter().enumerate() {
        if round.index as usize != pos + 1 {
            return fail(
                Some(round.index),
                RejectReason::NonContiguousRoundIndex,
                format!("expected index {}", pos + 1),
            );
        }
        validate_round(round, pos == last).map_err(|(reason, detail)| Violation {
            round: Some(round.index),
            reason,
            detail,
        })?;
    }
    Ok(())
}

fn validate_round(round: &Round, is_last: bool) -> Result<(), (RejectReason, String)> {
    use ControlToken::*;
    if round.user_segments.is_empty() || round.user_segments.iter().any(|s| s.text.trim().is_empty()) {
        return Err((RejectReason::EmptyUserQuery, "user query is empty".into()));
    }
    if !round.user_segments.last().expect("non-empty").complete {
        return Err((RejectReason::IncompleteFinalSegment, "last user segment carries <|C-L|>".into()));
    }

    // Walk the response with the dialogue mode, starting from Listening.
    let mut mode = Mode::Listening;
    let mut span_has_text = false;
    for part in round.system_response.parts() {
        match part {
            ResponsePart::Token(token) => {
                if !token.is_legal_in(mode) {
                    return Err((RejectReason::IllegalTokenForState, format!("{token} while {mode}")));
                }
                if *token == ContinueListening {
                    return Err((RejectReason::IllegalTokenForState, "<|C-L|> on the Sys line".into()));
                }
                if mode == Mode::Speaking && !span_has_text {
                    return Err((RejectReason::EmptyResponse, format!("no text before {token}")));
                }
                if *token == StartSpeaking {
                    span_has_text = false;
                }
                mode = token.target_mode();
            }
            ResponsePart::Text(text) => {
                if mode == Mode::Listening {
                    return Err((RejectReason::TextOutsideSpeech, format!("`{text}` outside a spoken span")));
                }
                span_has_text = true;
            }
        }
    }
    let tokens: Vec<ControlToken> = round.system_response.tokens().collect();
    if tokens.is_empty() {
        return Err((RejectReason::EmptyResponse, "response has no control tokens".into()));
    }
    if mode != Mode::Listening && !is_last {
        return Err((RejectReason::UnterminatedRound, "round does not end with <|S-L|>".into()));
    }
    if mode == Mode::Speaking && !span_has_text {
        return Err((RejectReason::EmptyResponse, "final span has no text".into()));
    }

    let expected: &[ControlToken] = match round.kind {
        RoundKind::Normal => &[StartSpeaking, StartListening],
        RoundKind::FakeInt => &[StartSpeaking, ContinueSpeaking, StartListening],
        RoundKind::RealInt => &[StartSpeaking, StartListening, StartSpeaking, StartListening],
    };
    let matches = if mode == Mode::Listening {
        tokens == expected
    } else {
        expected.starts_with(&tokens) && tokens.len() < expected.len()
    };
    if !matches {
        return Err((
            RejectReason::KindTokenMismatch,
            format!("{} round with tokens {}", round.kind, fmt_tokens(&tokens)),
        ));
    }
    // A real interruption cut off mid-barge-in needs the barge-in text too.
    let wants_bargein = round.kind != RoundKind::Normal && tokens.len() >= 2;
    let has_bargein = round.bargein_text.as_deref().is_some_and(|b| !b.trim().is_empty());
    if wants_bargein != has_bargein {
        return Err((
            RejectReason::BargeinMismatch,
            if has_bargein { "barge-in text on a round without interruption" } else { "missing barge-in text" }.into(),
        ));
    }
    if round.gt_tokens != round.derived_tokens() {
        return Err((
            RejectReason::GtTokenMismatch,
            format!("gt {} vs annotations {}", fmt_tokens(&round.gt_tokens), fmt_tokens(&round.derived_tokens())),
        ));
    }
    Ok(())
}

pub fn fmt_tokens(tokens: &[ControlToken]) -> String {
    tokens.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(" ")
}

/// Per-reason counts, ordered by reason.
pub type ReasonCounts = BTreeMap<RejectReason, usize>;

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "Round 1 (normal); User: Hi there.; Sys: <|S-S|> Hello! <|S-L|>";

    fn three_rounds() -> &'static str {
        "Topic: travel\nStyle: casual\nProvenance: synthesized\n\
         Round 1 (normal); User: How do I get to <|C-L|> the airport?; Sys: <|S-S|> Take the train. <|S-L|>\n\
         Round 2 (fake interruption); User: Is it fast?; Sys: <|S-S|> Yes. <|C-S|> About 20 minutes. <|S-L|>; Barge-in: uh-huh\n\
         Round 3 (real interruption); User: And a taxi?; Sys: <|S-S|> A taxi costs more. <|S-L|> <|S-S|> The bus is cheapest. <|S-L|>; Barge-in: no, what about the bus?\n"
    }

    #[test]
    fn minimal_form_parses() {
        let t = parse_transcript(MINIMAL).unwrap();
        assert_eq!(t.rounds.len(), 1);
        assert_eq!(t.provenance, Provenance::Imported);
        let r = &t.rounds[0];
        assert_eq!(r.user_segments, vec![UserSegment::complete("Hi there.")]);
        assert_eq!(r.gt_tokens, vec![ControlToken::StartSpeaking, ControlToken::StartListening]);
        assert!(validate(&t).is_ok());
    }

    #[test]
    fn full_grammar_round_trips() {
        let t = parse_transcript(three_rounds()).unwrap();
        validate(&t).unwrap();
        assert_eq!(t.rounds[0].user_segments[0], UserSegment::incomplete("How do I get to"));
        assert_eq!(
            t.rounds[2].gt_tokens,
            vec![
                ControlToken::StartSpeaking,
                ControlToken::StartListening,
                ControlToken::StartSpeaking,
                ControlToken::StartListening
            ]
        );
        let text = t.to_text();
        assert_eq!(text, three_rounds());
        assert_eq!(parse_transcript(&text).unwrap(), t);
    }

    #[test]
    fn canonicalizes_whitespace() {
        let messy = "Round 1  (normal) ;User:   Hi    there. ;   Sys:<|S-S|>Hello!   <|S-L|>";
        // Header spacing is part of the grammar; field spacing is not.
        assert!(parse_transcript(messy).is_err());
        let messy = "Round 1 (normal) ;User:   Hi    there. ;   Sys:<|S-S|>Hello!   <|S-L|>";
        let t = parse_transcript(messy).unwrap();
        assert_eq!(t.rounds[0].user_segments[0].text, "Hi there.");
        assert!(t.to_text().ends_with("Round 1 (normal); User: Hi there.; Sys: <|S-S|> Hello! <|S-L|>\n"));
    }

    #[test]
    fn unknown_token_reports_position() {
        let err = parse_transcript("Round 1 (normal); User: Hi; Sys: <|S-S|> Hello <|X-X|>").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownToken("<|X-X|>".into()));
        assert_eq!(err.line, 1);
        assert_eq!(err.column, 48);
    }

    #[test]
    fn parse_errors() {
        let kind = |s: &str| parse_transcript(s).unwrap_err().kind;
        assert_eq!(kind("Round 1 (normal); User: Hi"), ParseErrorKind::MissingSysField);
        assert_eq!(kind("Round 1 (normal); Sys: <|S-S|> a <|S-L|>"), ParseErrorKind::MissingUserField);
        assert_eq!(kind("Rnd 1 (normal); User: a; Sys: <|S-S|> a <|S-L|>"), ParseErrorKind::MalformedRoundHeader);
        assert_eq!(
            kind("Round 1 (chitchat); User: a; Sys: <|S-S|> a <|S-L|>"),
            ParseErrorKind::UnknownDialogueType("chitchat".into())
        );
        assert_eq!(
            kind("Round 2 (normal); User: a; Sys: <|S-S|> a <|S-L|>"),
            ParseErrorKind::NonContiguousRoundIndex { expected_prev: 0, found: 2 }
        );
        assert!(matches!(
            kind("Round 1 (normal); User: a <|S-S|>; Sys: <|S-S|> a <|S-L|>"),
            ParseErrorKind::IllegalTokenForPosition { token: ControlToken::StartSpeaking, .. }
        ));
        assert_eq!(kind(""), ParseErrorKind::EmptyTranscript);
    }

    #[test]
    fn continue_speaking_while_listening_is_rejected() {
        let t = parse_transcript("Round 1 (fake interruption); User: a b; Sys: <|C-S|> x <|S-L|>; Barge-in: ok").unwrap();
        assert_eq!(validate(&t).unwrap_err().reason, RejectReason::IllegalTokenForState);
    }

    #[test]
    fn final_round_may_end_mid_response() {
        let t = parse_transcript(
            "Round 1 (normal); User: a; Sys: <|S-S|> x <|S-L|>\nRound 2 (fake interruption); User: b; Sys: <|S-S|> y <|C-S|> z; Barge-in: ok",
        )
        .unwrap();
        validate(&t).unwrap();
        let t = parse_transcript(
            "Round 1 (normal); User: a; Sys: <|S-S|> x\nRound 2 (normal); User: b; Sys: <|S-S|> y <|S-L|>",
        )
        .unwrap();
        assert_eq!(validate(&t).unwrap_err().reason, RejectReason::UnterminatedRound);
    }

    #[test]
    fn json_form_round_trips() {
        let t = parse_transcript(three_rounds()).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains(r#""system_response":"<|S-S|> Take the train. <|S-L|>""#));
        assert_eq!(serde_json::from_str::<Transcript>(&json).unwrap(), t);
    }

    #[test]
    fn splits_blank_line_separated_files() {
        let file = format!("{MINIMAL}\n\n\n{}\n", three_rounds());
        let parts = split_transcripts(&file);
        assert_eq!(parts.len(), 2);
        assert!(parse_transcript(&parts[1]).is_ok());
    }
}
