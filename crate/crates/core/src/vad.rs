//! Silence-threshold endpoint detection over timed event streams.
//!
//! Speech payloads are instantaneous at their timestamp; all duration lives
//! in the gaps between them. Any time not covered by a speech payload is
//! silence, and an explicit `silence_until` record extends the stream's
//! horizon. Interfering-speaker payloads (`target: false`) are dropped during
//! normalization, standing in for a speaker- and distance-aware front end.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::machine::SEGMENT_SEPARATOR;
use crate::token::ControlToken;
use crate::transcript::Round;

/// Thresholds evaluated in the reference cascade table.
pub const REFERENCE_THRESHOLDS_MS: [u64; 4] = [300, 500, 800, 1800];

pub const DEFAULT_TICK_MS: u64 = 100;

fn is_true(b: &bool) -> bool {
    *b
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Speech {
        text: String,
        #[serde(default = "default_true", skip_serializing_if = "is_true")]
        target: bool,
        /// Ground-truth decisions triggered by this speech, consumed in order
        /// (an endpoint after it, or a barge-in decision).
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        labels: Vec<ControlToken>,
    },
    SilenceUntil {
        t_end: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub t: u64,
    #[serde(flatten)]
    pub payload: Payload,
}

impl TimedEvent {
    pub fn speech(t: u64, text: impl Into<String>) -> Self {
        TimedEvent { t, payload: Payload::Speech { text: text.into(), target: true, labels: Vec::new() } }
    }

    pub fn labeled_speech(t: u64, text: impl Into<String>, labels: Vec<ControlToken>) -> Self {
        TimedEvent { t, payload: Payload::Speech { text: text.into(), target: true, labels } }
    }

    pub fn silence(t: u64, t_end: u64) -> Self {
        TimedEvent { t, payload: Payload::SilenceUntil { t_end } }
    }

    pub fn end(&self) -> u64 {
        match self.payload {
            Payload::SilenceUntil { t_end } => t_end,
            Payload::Speech { .. } => self.t,
        }
    }

    pub fn is_speech(&self) -> bool {
        matches!(self.payload, Payload::Speech { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StreamError {
    #[error("stream is not normalized: {0}")]
    UnnormalizedStream(String),
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("round {0} has no user query annotations")]
    MissingAnnotations(u32),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("I/O error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TimedEventStream {
    pub events: Vec<TimedEvent>,
}

impl TimedEventStream {
    pub fn new(events: Vec<TimedEvent>) -> Self {
        TimedEventStream { events }
    }

    /// Drops interfering speech and merges consecutive silence records.
    /// Fails if timestamps are not strictly increasing or a silence overlaps
    /// the next event.
    pub fn normalize(self) -> Result<Self, StreamError> {
        let mut out: Vec<TimedEvent> = Vec::with_capacity(self.events.len());
        for ev in self.events {
            if let Payload::Speech { target: false, .. } = ev.payload {
                continue;
            }
            if let (Some(prev), Payload::SilenceUntil { t_end }) = (out.last_mut(), &ev.payload) {
                if let Payload::SilenceUntil { t_end: prev_end } = &mut prev.payload {
                    if ev.t <= prev.t {
                        return Err(StreamError::UnnormalizedStream(format!("timestamp {} after {}", ev.t, prev.t)));
                    }
                    *prev_end = (*prev_end).max(*t_end);
                    continue;
                }
            }
            out.push(ev);
        }
        let stream = TimedEventStream { events: out };
        stream.check_normalized()?;
        Ok(stream)
    }

    pub fn check_normalized(&self) -> Result<(), StreamError> {
        let bad = |m: String| Err(StreamError::UnnormalizedStream(m));
        for (i, ev) in self.events.iter().enumerate() {
            match &ev.payload {
                Payload::Speech { target: false, .. } => return bad(format!("interfering speech at {} ms", ev.t)),
                Payload::SilenceUntil { t_end } if *t_end < ev.t => {
                    return bad(format!("silence at {} ms ends before it starts", ev.t))
                }
                _ => {}
            }
            if let Some(next) = self.events.get(i + 1) {
                if next.t <= ev.t {
                    return bad(format!("timestamp {} ms does not follow {} ms", next.t, ev.t));
                }
                if ev.end() > next.t {
                    return bad(format!("silence until {} ms overlaps event at {} ms", ev.end(), next.t));
                }
                if !ev.is_speech() && !next.is_speech() {
                    return bad(format!("consecutive silence records at {} ms", next.t));
                }
            }
        }
        Ok(())
    }

    /// Time up to which the stream is known.
    pub fn end_time(&self) -> u64 {
        self.events.iter().map(TimedEvent::end).max().unwrap_or(0)
    }

    pub fn speech_texts(&self) -> impl Iterator<Item = &str> {
        self.events.iter().filter_map(|e| match &e.payload {
            Payload::Speech { text, .. } => Some(text.as_str()),
            _ => None,
        })
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self, StreamError> {
        let mut events = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| StreamError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let ev = serde_json::from_str(&line)
                .map_err(|e| StreamError::Format { line: i + 1, msg: e.to_string() })?;
            events.push(ev);
        }
        Ok(TimedEventStream { events })
    }

    pub fn write_jsonl(&self, mut writer: impl Write) -> std::io::Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut writer, ev)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub silence_threshold_ms: u64,
    pub tick_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig { silence_threshold_ms: 500, tick_ms: DEFAULT_TICK_MS }
    }
}

impl EndpointConfig {
    pub fn new(silence_threshold_ms: u64, tick_ms: u64) -> Result<Self, StreamError> {
        let cfg = EndpointConfig { silence_threshold_ms, tick_ms };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if self.silence_threshold_ms == 0 || self.tick_ms == 0 {
            return Err(StreamError::InvalidConfig("threshold and tick must be positive".into()));
        }
        if self.tick_ms > self.silence_threshold_ms {
            return Err(StreamError::InvalidConfig(format!(
                "tick {} ms exceeds threshold {} ms",
                self.tick_ms, self.silence_threshold_ms
            )));
        }
        Ok(())
    }

    /// First tick at which silence that began at `speech_t` reaches the threshold.
    pub fn fire_time(&self, speech_t: u64) -> u64 {
        (speech_t + self.silence_threshold_ms).div_ceil(self.tick_ms) * self.tick_ms
    }
}

/// An acoustic proposal that the user may have finished speaking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointCandidate {
    pub t: u64,
    /// Speech since the previous candidate, single-space joined.
    pub text: String,
    /// Timestamp of the speech payload the silence run follows.
    pub speech_t: u64,
    /// Labels carried by that speech payload.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<ControlToken>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointScan {
    pub candidates: Vec<EndpointCandidate>,
    /// Speech after the last candidate that never reached the threshold.
    pub trailing_text: String,
}

/// Emits one candidate per silence run that reaches the threshold, at the
/// first tick boundary at or after `speech_end + threshold`. Speech arriving
/// exactly on that tick pre-empts it.
pub fn scan_endpoints(stream: &TimedEventStream, cfg: &EndpointConfig) -> Result<EndpointScan, StreamError> {
    cfg.validate()?;
    stream.check_normalized()?;
    let horizon = stream.end_time();
    let speech: Vec<(u64, &str, &[ControlToken])> = stream
        .events
        .iter()
        .filter_map(|e| match &e.payload {
            Payload::Speech { text, labels, .. } => Some((e.t, text.as_str(), labels.as_slice())),
            _ => None,
        })
        .collect();

    let mut candidates = Vec::new();
    let mut pending: Vec<&str> = Vec::new();
    for (k, &(t, text, labels)) in speech.iter().enumerate() {
        if !text.trim().is_empty() {
            pending.push(text.trim());
        }
        let fire = cfg.fire_time(t);
        let reached = match speech.get(k + 1) {
            Some(&(next_t, _, _)) => fire < next_t,
            None => fire <= horizon,
        };
        if reached {
            candidates.push(EndpointCandidate {
                t: fire,
                text: pending.join(SEGMENT_SEPARATOR),
                speech_t: t,
                labels: labels.to_vec(),
            });
            pending.clear();
        }
    }
    Ok(EndpointScan { candidates, trailing_text: pending.join(SEGMENT_SEPARATOR) })
}

pub fn detect_endpoints(stream: &TimedEventStream, cfg: &EndpointConfig) -> Result<Vec<EndpointCandidate>, StreamError> {
    scan_endpoints(stream, cfg).map(|s| s.candidates)
}

/// Inclusive range of silence durations, sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapRange {
    pub min_ms: u64,
    pub max_ms: u64,
}

impl GapRange {
    pub fn fixed(ms: u64) -> Self {
        GapRange { min_ms: ms, max_ms: ms }
    }

    fn sample(&self, rng: &mut impl Rng) -> u64 {
        if self.max_ms <= self.min_ms {
            self.min_ms
        } else {
            rng.gen_range(self.min_ms..=self.max_ms)
        }
    }
}

/// Silence durations used when rendering a round as a timed stream.
///
/// The defaults are simulator choices, not measurements: hesitations spread
/// over 200..=2000 ms so that larger thresholds hide more of them, and
/// query-final pauses of 1900..=3000 ms are seen at every reference threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapProfile {
    pub hesitation: GapRange,
    pub end: GapRange,
}

impl Default for GapProfile {
    fn default() -> Self {
        GapProfile { hesitation: GapRange { min_ms: 200, max_ms: 2000 }, end: GapRange { min_ms: 1900, max_ms: 3000 } }
    }
}

impl GapProfile {
    pub fn fixed(hesitation_ms: u64, end_ms: u64) -> Self {
        GapProfile { hesitation: GapRange::fixed(hesitation_ms), end: GapRange::fixed(end_ms) }
    }
}

/// Renders a round's user query as speech separated by silence: a hesitation
/// gap after each incomplete segment and an end gap after the final one.
/// Each speech payload carries its ground-truth label (`C-L` or `S-S`).
pub fn hesitation_stream_from_round(round: &Round, profile: &GapProfile, seed: u64) -> Result<TimedEventStream, StreamError> {
    if round.user_segments.is_empty() || !round.user_segments.last().expect("non-empty").complete {
        return Err(StreamError::MissingAnnotations(round.index));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut t = 0;
    for seg in &round.user_segments {
        let (label, gap) = if seg.complete {
            (ControlToken::StartSpeaking, profile.end.sample(&mut rng))
        } else {
            (ControlToken::ContinueListening, profile.hesitation.sample(&mut rng))
        };
        events.push(TimedEvent::labeled_speech(t, seg.text.clone(), vec![label]));
        let gap = gap.max(2);
        events.push(TimedEvent::silence(t + 1, t + gap));
        t += gap;
    }
    Ok(TimedEventStream { events })
}
