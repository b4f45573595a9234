use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::transcript::{parse_transcript, validate, ReasonCounts, RejectReason, RoundKind, Transcript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// Position of the transcript in the raw input.
    pub index: usize,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub total: usize,
    pub kept: usize,
    pub retention_rate: f64,
    pub by_reason: ReasonCounts,
    pub rejections: Vec<Rejection>,
}

/// Parses and validates every raw transcript, keeping those that pass.
/// Rejections are reported, never raised.
pub fn clean_corpus<S: AsRef<str> + Sync>(raw: &[S]) -> (Vec<Transcript>, CleaningReport) {
    let outcomes: Vec<Result<Transcript, (RejectReason, String)>> = raw
        .par_iter()
        .map(|text| {
            let t = parse_transcript(text.as_ref()).map_err(|e| (RejectReason::from(&e.kind), e.to_string()))?;
            validate(&t).map_err(|v| (v.reason, v.to_string()))?;
            Ok(t)
        })
        .collect();
    let mut kept = Vec::new();
    let mut by_reason = ReasonCounts::new();
    let mut rejections = Vec::new();
    for (index, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(t) => kept.push(t),
            Err((reason, detail)) => {
                *by_reason.entry(reason).or_default() += 1;
                rejections.push(Rejection { index, reason, detail });
            }
        }
    }
    let total = raw.len();
    let report = CleaningReport {
        total,
        kept: kept.len(),
        retention_rate: if total == 0 { 1.0 } else { kept.len() as f64 / total as f64 },
        by_reason,
        rejections,
    };
    (kept, report)
}

/// Defined ways of damaging a valid transcript's text, each caught by
/// cleaning under a known reason. All edits touch round 1 (round 2 for the
/// index corruption), so the transcript needs at least two rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    UnknownToken,
    IllegalToken,
    MissingSys,
    MissingUser,
    SkippedIndex,
    UnknownKind,
    BadHeader,
    DroppedClose,
    WrongKind,
    StrayText,
}

impl Corruption {
    pub const ALL: [Corruption; 10] = [
        Corruption::UnknownToken,
        Corruption::IllegalToken,
        Corruption::MissingSys,
        Corruption::MissingUser,
        Corruption::SkippedIndex,
        Corruption::UnknownKind,
        Corruption::BadHeader,
        Corruption::DroppedClose,
        Corruption::WrongKind,
        Corruption::StrayText,
    ];

    pub fn expected_reason(self) -> RejectReason {
        match self {
            Corruption::UnknownToken => RejectReason::UnknownToken,
            Corruption::IllegalToken => RejectReason::IllegalTokenForState,
            Corruption::MissingSys => RejectReason::MissingSysField,
            Corruption::MissingUser => RejectReason::MissingUserField,
            Corruption::SkippedIndex => RejectReason::NonContiguousRoundIndex,
            Corruption::UnknownKind => RejectReason::UnknownDialogueType,
            Corruption::BadHeader => RejectReason::MalformedRoundHeader,
            Corruption::DroppedClose => RejectReason::UnterminatedRound,
            Corruption::WrongKind => RejectReason::KindTokenMismatch,
            Corruption::StrayText => RejectReason::TextOutsideSpeech,
        }
    }

    /// The damaged canonical text of `t`.
    pub fn apply(self, t: &Transcript) -> String {
        assert!(t.rounds.len() >= 2, "corruptions need at least two rounds");
        let text = t.to_text();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let first = lines.iter().position(|l| l.starts_with("Round ")).expect("round line");
        let line = &mut lines[first];
        let sys = line.find("; Sys: ").expect("sys field") + "; Sys: ".len();
        let sys_end = line.find("; Barge-in:").unwrap_or(line.len());
        match self {
            Corruption::UnknownToken => *line = line.replacen("<|S-S|>", "<|X-X|>", 1),
            Corruption::IllegalToken => line.insert_str(sys, "<|C-S|> "),
            Corruption::MissingSys => *line = line.replacen("; Sys: ", "; Reply: ", 1),
            Corruption::MissingUser => *line = line.replacen("; User: ", "; Usr: ", 1),
            Corruption::SkippedIndex => lines[first + 1] = lines[first + 1].replacen("Round 2 ", "Round 3 ", 1),
            Corruption::UnknownKind => {
                let kind = t.rounds[0].kind.label();
                *line = line.replacen(&format!("({kind})"), "(chit-chat)", 1);
            }
            Corruption::BadHeader => *line = line.replacen("Round ", "Rnd ", 1),
            Corruption::DroppedClose => {
                let close = line[..sys_end].rfind(" <|S-L|>").expect("closing token");
                line.replace_range(close..close + " <|S-L|>".len(), "");
            }
            Corruption::WrongKind => {
                let (from, to) = match t.rounds[0].kind {
                    RoundKind::Normal => ("normal", "fake interruption"),
                    RoundKind::FakeInt => ("fake interruption", "normal"),
                    RoundKind::RealInt => ("real interruption", "normal"),
                };
                *line = line.replacen(&format!("({from})"), &format!("({to})"), 1);
            }
            Corruption::StrayText => line.insert_str(sys_end, " and one more thing"),
        }
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = "Topic: travel\nProvenance: synthesized\n\
        Round 1 (fake interruption); User: How long is the flight to <|C-L|> Lisbon?; Sys: <|S-S|> About three hours. <|C-S|> Morning flights are cheaper. <|S-L|>; Barge-in: uh-huh\n\
        Round 2 (normal); User: Thanks!; Sys: <|S-S|> Enjoy the trip. <|S-L|>\n";

    #[test]
    fn every_corruption_has_its_reason() {
        let t = parse_transcript(VALID).unwrap();
        for c in Corruption::ALL {
            let damaged = c.apply(&t);
            let (kept, report) = clean_corpus(&[damaged.as_str()]);
            assert!(kept.is_empty(), "{c:?} survived:\n{damaged}");
            assert_eq!(report.rejections[0].reason, c.expected_reason(), "{c:?}: {}", report.rejections[0].detail);
        }
    }

    #[test]
    fn retention() {
        let (kept, report) = clean_corpus(&[VALID, VALID]);
        assert_eq!(kept.len(), 2);
        assert_eq!(report.retention_rate, 1.0);
        let one_round = "Provenance: synthesized\nRound 1 (normal); User: Hi.; Sys: <|S-S|> Hello. <|S-L|>\n";
        let listening_cs = "Round 1 (normal); User: Hi.; Sys: <|C-S|> Hello. <|S-L|>\n";
        let (kept, report) = clean_corpus(&[VALID, one_round, listening_cs, "garbage"]);
        assert_eq!(kept.len(), 1);
        assert_eq!(report.retention_rate, 0.25);
        assert_eq!(report.by_reason[&RejectReason::RoundCountOutOfRange], 1);
        assert_eq!(report.by_reason[&RejectReason::IllegalTokenForState], 1);
        assert_eq!(report.by_reason[&RejectReason::MalformedRoundHeader], 1);
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["by_reason"]["illegal_token_for_state"], 1);
    }
}
