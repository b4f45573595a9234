use std::collections::BTreeMap;

use log::warn;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{item_seed, rng_for, DatagenError};
use crate::classifier::{ContextWindow, DialogueContext};
use crate::text::tail_chars;
use crate::token::{ControlToken, Mode};
use crate::transcript::{Round, RoundKind, Transcript};

/// A classification context with its ground-truth token and the round it
/// came from (so an oracle can answer it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledContext {
    pub context: DialogueContext,
    pub label: ControlToken,
    pub round: Round,
}

pub type ScenarioSets = BTreeMap<ControlToken, Vec<LabeledContext>>;

struct Walker {
    window: ContextWindow,
    history: Vec<(String, String)>,
}

impl Walker {
    fn context(&self, mode: Mode, cached: String, incoming: String, recent: &str) -> DialogueContext {
        let skip = self.history.len().saturating_sub(self.window.history_pairs);
        DialogueContext {
            mode,
            cached_query: cached,
            incoming_text: incoming,
            recent_system_response: tail_chars(recent, self.window.response_chars).to_string(),
            history_tail: self.history[skip..].to_vec(),
        }
    }

    fn last_response(&self) -> String {
        self.history.last().map(|(_, r)| r.clone()).unwrap_or_default()
    }
}

/// Every decision point of a transcript, in conversation order, with the
/// context a live dialogue manager would have seen there.
pub fn decision_points(t: &Transcript, window: ContextWindow) -> Vec<LabeledContext> {
    let mut w = Walker { window, history: Vec::new() };
    let mut out = Vec::new();
    for round in &t.rounds {
        let mut push = |context, label| out.push(LabeledContext { context, label, round: round.clone() });
        let recent = w.last_response();
        let mut cached: Vec<&str> = Vec::new();
        for seg in &round.user_segments {
            let label = if seg.complete { ControlToken::StartSpeaking } else { ControlToken::ContinueListening };
            push(w.context(Mode::Listening, cached.join(" "), seg.text.clone(), &recent), label);
            cached.push(&seg.text);
        }
        let spans = round.system_response.spoken_spans();
        let bargein = round.bargein_text.clone().filter(|b| !b.trim().is_empty());
        match (round.kind, bargein) {
            (RoundKind::FakeInt, Some(b)) => {
                let before = round.system_response.text_before_bargein();
                push(w.context(Mode::Speaking, round.query(), b, &before), ControlToken::ContinueSpeaking);
                w.history.push((round.query(), spans.join(" ")));
            }
            (RoundKind::RealInt, Some(b)) => {
                let before = round.system_response.text_before_bargein();
                push(w.context(Mode::Speaking, round.query(), b.clone(), &before), ControlToken::StartListening);
                w.history.push((round.query(), before.clone()));
                push(w.context(Mode::Listening, String::new(), b.clone(), &before), ControlToken::StartSpeaking);
                if let Some(reply) = spans.get(1) {
                    w.history.push((b, reply.clone()));
                }
            }
            _ => w.history.push((round.query(), spans.join(" "))),
        }
    }
    out
}

/// Samples `per_scenario_n` contexts without replacement for each of the
/// four tokens.
pub fn emit_scenario_testsets(
    corpus: &[Transcript],
    per_scenario_n: usize,
    window: ContextWindow,
    rng_seed: u64,
) -> Result<ScenarioSets, DatagenError> {
    let mut pools: BTreeMap<ControlToken, Vec<LabeledContext>> = BTreeMap::new();
    if per_scenario_n > 0 {
        let points: Vec<Vec<LabeledContext>> = corpus.par_iter().map(|t| decision_points(t, window)).collect();
        for p in points.into_iter().flatten() {
            pools.entry(p.label).or_default().push(p);
        }
    }
    let mut sets = ScenarioSets::new();
    for token in ControlToken::ALL {
        let pool = pools.remove(&token).unwrap_or_default();
        if pool.len() < per_scenario_n {
            return Err(DatagenError::InsufficientData { scenario: token, available: pool.len(), requested: per_scenario_n });
        }
        let mut rng = rng_for(item_seed(rng_seed, token.index() as u64));
        let picked = index::sample(&mut rng, pool.len(), per_scenario_n);
        sets.insert(token, picked.iter().map(|i| pool[i].clone()).collect());
    }
    Ok(sets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub rounds: usize,
    pub real: usize,
    pub fake: usize,
    pub incomplete: usize,
}

impl BalanceReport {
    pub fn rate(&self, count: usize) -> f64 {
        if self.rounds == 0 {
            0.0
        } else {
            count as f64 / self.rounds as f64
        }
    }
}

pub fn balance_report(corpus: &[Transcript]) -> BalanceReport {
    let rounds = corpus.iter().flat_map(|t| &t.rounds);
    let mut r = BalanceReport { rounds: 0, real: 0, fake: 0, incomplete: 0 };
    for round in rounds {
        r.rounds += 1;
        match round.kind {
            RoundKind::RealInt => r.real += 1,
            RoundKind::FakeInt => r.fake += 1,
            RoundKind::Normal => {}
        }
        if round.user_segments.iter().any(|s| !s.complete) {
            r.incomplete += 1;
        }
    }
    r
}

/// Warns about any interaction category covering more than half the rounds;
/// corpora that skewed overfit.
pub fn lint_balance(report: &BalanceReport) -> Vec<String> {
    let mut warnings = Vec::new();
    for (name, count) in [("real interruption", report.real), ("fake interruption", report.fake), ("incomplete query", report.incomplete)] {
        let rate = report.rate(count);
        if rate > 0.5 {
            let msg = format!("{name} rounds make up {:.1}% of the corpus", rate * 100.0);
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::oracle_classify;
    use crate::transcript::parse_transcript;
    use ControlToken::*;

    const T: &str = "Topic: travel\nProvenance: synthesized\n\
        Round 1 (normal); User: How do I get to <|C-L|> the airport?; Sys: <|S-S|> Take the train. <|S-L|>\n\
        Round 2 (fake interruption); User: Is it fast?; Sys: <|S-S|> Yes. <|C-S|> About 20 minutes. <|S-L|>; Barge-in: uh-huh\n\
        Round 3 (real interruption); User: And a taxi?; Sys: <|S-S|> A taxi costs more. <|S-L|> <|S-S|> The bus is cheapest. <|S-L|>; Barge-in: no, what about the bus?\n";

    #[test]
    fn decision_points_follow_the_conversation() {
        let t = parse_transcript(T).unwrap();
        let pts = decision_points(&t, ContextWindow::default());
        let labels: Vec<_> = pts.iter().map(|p| p.label).collect();
        assert_eq!(labels, [ContinueListening, StartSpeaking, StartSpeaking, ContinueSpeaking, StartSpeaking, StartListening, StartSpeaking]);
        assert_eq!(pts[1].context.cached_query, "How do I get to");
        assert_eq!(pts[3].context.recent_system_response, "Yes.");
        assert_eq!(pts[3].context.cached_query, "Is it fast?");
        assert_eq!(pts[6].context.incoming_text, "no, what about the bus?");
        assert_eq!(pts[6].context.history_tail.last().unwrap().1, "A taxi costs more.");
        for p in &pts {
            assert_eq!(oracle_classify(&p.context, &p.round).unwrap().token, p.label);
        }
    }

    #[test]
    fn sampling() {
        let t = parse_transcript(T).unwrap();
        let corpus = vec![t; 5];
        let sets = emit_scenario_testsets(&corpus, 5, ContextWindow::default(), 1).unwrap();
        assert!(sets.values().all(|v| v.len() == 5));
        assert!(sets.iter().all(|(k, v)| v.iter().all(|c| c.label == *k)));
        let empty = emit_scenario_testsets(&corpus, 0, ContextWindow::default(), 1).unwrap();
        assert_eq!(empty.len(), 4);
        assert!(empty.values().all(Vec::is_empty));
        let err = emit_scenario_testsets(&corpus, 6, ContextWindow::default(), 1).unwrap_err();
        assert_eq!(err, DatagenError::InsufficientData { scenario: ContinueListening, available: 5, requested: 6 });
    }

    #[test]
    fn balance_lint() {
        let t = parse_transcript(T).unwrap();
        let r = balance_report(&[t]);
        assert_eq!((r.rounds, r.real, r.fake, r.incomplete), (3, 1, 1, 1));
        assert!(lint_balance(&r).is_empty());
        let skewed = BalanceReport { rounds: 10, real: 6, fake: 0, incomplete: 0 };
        assert_eq!(lint_balance(&skewed).len(), 1);
    }
}
