use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CdeStub, Session, SessionConfig, SessionError, SessionLog};
use crate::classifier::Decider;
use crate::eval::{metrics, ConfusionMatrix, MetricReport};
use crate::token::ControlToken;
use crate::transcript::{Round, RoundKind, Transcript};

/// Filler appended to the interrupted half of a real-interruption response,
/// so the barge-in lands while the system is still talking.
const CONTINUATION: &str = "and there is more to say about that.";

/// How a transcript is laid out in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayTiming {
    /// Gap after an incomplete segment. `None` means threshold plus two
    /// ticks, long enough for an endpoint to fire.
    pub hesitation_ms: Option<u64>,
    /// Silence between the end of one round and the next user turn.
    pub turn_gap_ms: u64,
}

impl Default for ReplayTiming {
    fn default() -> Self {
        ReplayTiming { hesitation_ms: None, turn_gap_ms: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptReplay {
    pub index: usize,
    pub log: SessionLog,
    pub expected_trace: Vec<ControlToken>,
    pub trace: Vec<ControlToken>,
    pub exact: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub classifier: String,
    pub transcripts: usize,
    pub failed: usize,
    pub exact_traces: usize,
    /// Labeled decisions scored in the matrix.
    pub decisions: u64,
    /// Decisions without usable ground truth, after the session's mode
    /// drifted from the transcript's.
    pub unscored: u64,
    /// Over all labeled decisions; absent when there were none.
    pub matrix: Option<ConfusionMatrix>,
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReplay {
    pub replays: Vec<TranscriptReplay>,
    pub report: CorpusReport,
}

fn script_round(cde: &mut CdeStub, round: &Round) {
    let spans = round.system_response.spoken_spans();
    let query = round.query();
    match (round.kind, &round.bargein_text) {
        (RoundKind::RealInt, Some(b)) => {
            let head = round.system_response.text_before_bargein();
            cde.script(&query, &format!("{head} {CONTINUATION}"));
            cde.script(b, spans.get(1).map(String::as_str).unwrap_or(CONTINUATION));
        }
        _ => cde.script(&query, &spans.join(" ")),
    }
}

fn play_round(s: &mut Session, cfg: &SessionConfig, round: &Round, start: u64, hesitation: u64) -> Result<(), SessionError> {
    use ControlToken::*;
    let mut t = start;
    let n = round.user_segments.len();
    for (i, seg) in round.user_segments.iter().enumerate() {
        let label = if seg.complete { StartSpeaking } else { ContinueListening };
        s.user_text(t, &seg.text, &[label])?;
        if i + 1 < n {
            t += hesitation;
        }
    }
    if let (RoundKind::RealInt | RoundKind::FakeInt, Some(b)) = (round.kind, &round.bargein_text) {
        let head_words = round.system_response.text_before_bargein().split_whitespace().count();
        let chunks = head_words.div_ceil(cfg.chunk_words).max(1) as u64;
        let activation = cfg.endpoint.fire_time(t);
        let at = activation + chunks * cfg.chunk_interval_ms + cfg.chunk_interval_ms / 2;
        let labels: &[ControlToken] =
            if round.kind == RoundKind::RealInt { &[StartListening, StartSpeaking] } else { &[ContinueSpeaking] };
        s.user_text(at, b, labels)?;
    }
    s.drain()
}

fn replay_one(index: usize, t: &Transcript, cfg: &SessionConfig, decider: &Decider, timing: ReplayTiming) -> TranscriptReplay {
    let mut cde = CdeStub::scripted(None);
    for r in &t.rounds {
        script_round(&mut cde, r);
    }
    let hesitation = timing.hesitation_ms.unwrap_or(cfg.endpoint.silence_threshold_ms + 2 * cfg.endpoint.tick_ms);
    let expected_trace = t.gt_tokens();
    let mut session = match Session::new(cfg, decider.clone(), cde) {
        Ok(s) => s,
        Err(e) => {
            return TranscriptReplay {
                index,
                log: SessionLog::default(),
                expected_trace,
                trace: vec![],
                exact: false,
                error: Some(e.to_string()),
            }
        }
    };
    let mut start = 0;
    let mut error = None;
    for r in &t.rounds {
        if let Err(e) = play_round(&mut session, cfg, r, start, hesitation) {
            error = Some(format!("round {}: {e}", r.index));
            break;
        }
        start = session.clock() + timing.turn_gap_ms;
    }
    let log = session.into_log();
    let trace = log.token_trace();
    TranscriptReplay { index, exact: error.is_none() && trace == expected_trace, trace, expected_trace, error, log }
}

/// Plays every transcript through a fresh session, with scripted responses
/// taken from the transcript itself, and scores each labeled decision.
pub fn replay_corpus(corpus: &[Transcript], cfg: &SessionConfig, decider: &Decider, timing: ReplayTiming) -> CorpusReplay {
    let replays: Vec<TranscriptReplay> =
        corpus.par_iter().enumerate().map(|(i, t)| replay_one(i, t, cfg, decider, timing)).collect();
    let mut matrix = ConfusionMatrix::zeros(&ControlToken::ALL);
    let mut unscored = 0;
    for e in replays.iter().flat_map(|r| &r.log.entries) {
        match (e.expected, e.decision) {
            (Some(gt), Some(est)) => matrix.add(gt, est).expect("all four labels present"),
            (None, Some(_)) => unscored += 1,
            _ => {}
        }
    }
    let decisions = matrix.total();
    let metrics = metrics(&matrix).ok();
    let report = CorpusReport {
        classifier: decider.name().to_string(),
        transcripts: replays.len(),
        failed: replays.iter().filter(|r| r.error.is_some()).count(),
        exact_traces: replays.iter().filter(|r| r.exact).count(),
        decisions,
        unscored,
        matrix: (decisions > 0).then_some(matrix),
        metrics,
    };
    CorpusReplay { replays, report }
}
