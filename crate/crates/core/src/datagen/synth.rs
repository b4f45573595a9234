use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{item_seed, rng_for, DatagenError, PromptSpec, TemplateBank};
use crate::text::{sentences, unit_spans};
use crate::token::ControlToken;
use crate::transcript::{
    validate, validate_rounds, Provenance, ResponsePart, Round, RoundKind, SystemResponse, Transcript, UserSegment,
};

/// Names the user turn of a round (1-based index). Truncation splits the
/// turn's final, complete segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRef {
    pub round: u32,
}

fn round_mut(t: &mut Transcript, index: u32) -> Result<&mut Round, DatagenError> {
    t.rounds
        .iter_mut()
        .find(|r| r.index == index)
        .ok_or(DatagenError::RoundNotEligible { round: index, why: "no such round".into() })
}

/// Splits the round's final segment after `k` units into an incomplete
/// prefix and a complete remainder.
pub fn truncate_at(round: &mut Round, k: usize) -> Result<(), DatagenError> {
    let last = round.user_segments.last().ok_or(DatagenError::TurnTooShort { round: round.index, units: 0 })?;
    let spans = unit_spans(&last.text);
    if k == 0 || k >= spans.len() {
        return Err(DatagenError::RoundNotEligible {
            round: round.index,
            why: format!("cannot split {} units after unit {k}", spans.len()),
        });
    }
    let at = spans[k].start;
    let prefix = last.text[..at].trim().to_string();
    let rest = last.text[at..].trim().to_string();
    round.user_segments.pop();
    round.user_segments.push(UserSegment::incomplete(prefix));
    round.user_segments.push(UserSegment::complete(rest));
    round.refresh_tokens();
    Ok(())
}

/// Split point drawn uniformly from the middle half: units
/// `ceil(n/4) ..= floor(3n/4)`.
fn truncate_round(round: &mut Round, rng: &mut impl Rng) -> Result<(), DatagenError> {
    let n = round.user_segments.last().map_or(0, |s| unit_spans(&s.text).len());
    if n < 4 {
        return Err(DatagenError::TurnTooShort { round: round.index, units: n });
    }
    let k = rng.gen_range(n.div_ceil(4)..=(3 * n / 4));
    truncate_at(round, k)
}

/// Marks a hesitation inside one user turn.
pub fn truncate_for_incomplete(t: &Transcript, turn: TurnRef, rng_seed: u64) -> Result<Transcript, DatagenError> {
    let mut out = t.clone();
    truncate_round(round_mut(&mut out, turn.round)?, &mut rng_for(rng_seed))?;
    out.provenance = Provenance::PostProcessed;
    validate_rounds(&out)?;
    Ok(out)
}

fn inject_round(
    round: &mut Round,
    kind: RoundKind,
    topic: &str,
    bank: &TemplateBank,
    rng: &mut impl Rng,
) -> Result<(), DatagenError> {
    let not_eligible = |why: &str| DatagenError::RoundNotEligible { round: round.index, why: why.into() };
    if kind == RoundKind::Normal {
        return Err(not_eligible("injected kind must be an interruption"));
    }
    if round.kind != RoundKind::Normal {
        return Err(not_eligible("round already has an interruption"));
    }
    let tokens: Vec<ControlToken> = round.system_response.tokens().collect();
    if tokens != [ControlToken::StartSpeaking, ControlToken::StartListening] {
        return Err(not_eligible("response is not a single spoken span"));
    }
    let text = round.system_response.spoken_spans().remove(0);
    let parts = sentences(&text);
    if parts.len() < 2 {
        return Err(not_eligible("response has fewer than 2 sentences"));
    }
    let split = rng.gen_range(1..parts.len());
    let head = parts[..split].join(" ");
    use ControlToken::*;
    use ResponsePart::{Text, Token};
    let (response, bargein) = if kind == RoundKind::FakeInt {
        let tail = parts[split..].join(" ");
        let parts = vec![Token(StartSpeaking), Text(head), Token(ContinueSpeaking), Text(tail), Token(StartListening)];
        (parts, bank.backchannel(rng)?)
    } else {
        let redirect = bank.redirect(topic, rng)?;
        let parts = vec![
            Token(StartSpeaking),
            Text(head),
            Token(StartListening),
            Token(StartSpeaking),
            Text(redirect.reply),
            Token(StartListening),
        ];
        (parts, redirect.bargein)
    };
    round.kind = kind;
    round.system_response = SystemResponse(response);
    round.bargein_text = Some(bargein);
    round.refresh_tokens();
    Ok(())
}

/// Turns a normal round into an interrupted one. The barge-in lands on a
/// sentence boundary drawn uniformly; a fake interruption keeps the whole
/// response, a real one cuts it there and answers the barge-in instead.
pub fn inject_interruption(
    t: &Transcript,
    round_idx: u32,
    kind: RoundKind,
    bank: &TemplateBank,
    rng_seed: u64,
) -> Result<Transcript, DatagenError> {
    let mut out = t.clone();
    let topic = out.topic.clone();
    inject_round(round_mut(&mut out, round_idx)?, kind, &topic, bank, &mut rng_for(rng_seed))?;
    out.provenance = Provenance::PostProcessed;
    validate_rounds(&out)?;
    Ok(out)
}

/// Renders a prompt's plan from templates: each round starts as a plain QA
/// exchange, then is truncated and given its interruption as planned.
pub fn synthesize_transcript(spec: &PromptSpec, bank: &TemplateBank, rng_seed: u64) -> Result<Transcript, DatagenError> {
    let mut rng = rng_for(rng_seed);
    let topic = &spec.custom.topic;
    let mut rounds = Vec::with_capacity(spec.custom.plan.len());
    for (i, plan) in spec.custom.plan.iter().enumerate() {
        let qa = bank.qa(topic, &mut rng)?;
        let mut round = Round::new(
            i as u32 + 1,
            RoundKind::Normal,
            vec![UserSegment::complete(qa.question)],
            None,
            SystemResponse::simple(&qa.answer),
        );
        if plan.incomplete {
            truncate_round(&mut round, &mut rng)?;
        }
        if plan.kind != RoundKind::Normal {
            inject_round(&mut round, plan.kind, topic, bank, &mut rng)?;
        }
        rounds.push(round);
    }
    let t = Transcript {
        topic: topic.clone(),
        style: spec.custom.style.clone(),
        rounds,
        provenance: Provenance::Synthesized,
    };
    validate_rounds(&t)?;
    Ok(t)
}

/// Synthesizes one transcript per prompt, seeding each from its index.
pub fn synthesize_corpus(prompts: &[PromptSpec], bank: &TemplateBank, rng_seed: u64) -> Result<Vec<Transcript>, DatagenError> {
    prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| synthesize_transcript(p, bank, item_seed(rng_seed, i as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Probability of dropping a segment's terminal punctuation.
    pub p_strip: f64,
    /// Probability of turning a final `?` or `!` into `.`.
    pub p_replace: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { p_strip: 0.5, p_replace: 0.25 }
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '。' | '！' | '？')
}

/// Rewrites end-of-segment punctuation on user turns the way ASR output
/// tends to look. Labels are untouched.
pub fn augment_punctuation(t: &Transcript, cfg: &AugmentConfig, rng_seed: u64) -> Transcript {
    let mut rng = rng_for(rng_seed);
    let mut out = t.clone();
    for seg in out.rounds.iter_mut().flat_map(|r| r.user_segments.iter_mut()) {
        let draw: f64 = rng.gen();
        let Some(last) = seg.text.chars().last().filter(|&c| is_terminal(c)) else { continue };
        if draw < cfg.p_strip {
            let stripped = seg.text.trim_end_matches(is_terminal).trim_end();
            if !stripped.is_empty() {
                seg.text = stripped.to_string();
            }
        } else if draw < cfg.p_strip + cfg.p_replace {
            let replacement = match last {
                '?' | '!' => '.',
                '？' | '！' => '。',
                _ => continue,
            };
            seg.text.pop();
            seg.text.push(replacement);
        }
    }
    out
}

/// The same conversation with every interruption and hesitation removed:
/// fake interruptions keep the whole response, real ones keep the part spoken
/// before the barge-in.
pub fn uninterrupted_twin(t: &Transcript) -> Transcript {
    let rounds = t
        .rounds
        .iter()
        .map(|r| {
            let spans = r.system_response.spoken_spans();
            let text = match r.kind {
                RoundKind::RealInt => spans.first().cloned().unwrap_or_default(),
                _ => spans.join(" "),
            };
            Round::new(r.index, RoundKind::Normal, vec![UserSegment::complete(r.query())], None, SystemResponse::simple(&text))
        })
        .collect();
    Transcript { topic: t.topic.clone(), style: t.style.clone(), rounds, provenance: t.provenance }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostProcessConfig {
    pub p_real: f64,
    pub p_fake: f64,
    pub p_incomplete: f64,
    /// Emit the uninterrupted twin right after each processed transcript.
    pub include_twins: bool,
}

impl Default for PostProcessConfig {
    fn default() -> Self {
        PostProcessConfig { p_real: 0.10, p_fake: 0.15, p_incomplete: 0.20, include_twins: true }
    }
}

/// Adds interaction patterns to plain QA conversations. Each normal round
/// draws its kind with the same else-if rule as prompt planning; rounds that
/// cannot host the pattern (short turns, one-sentence responses) are left as
/// they are.
pub fn post_process_corpus(
    corpus: &[Transcript],
    cfg: &PostProcessConfig,
    bank: &TemplateBank,
    rng_seed: u64,
) -> Result<Vec<Transcript>, DatagenError> {
    let processed: Vec<Vec<Transcript>> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = rng_for(item_seed(rng_seed, i as u64));
            let mut out = t.clone();
            let topic = out.topic.clone();
            for round in out.rounds.iter_mut().filter(|r| r.kind == RoundKind::Normal) {
                let kind = if rng.gen_bool(cfg.p_real) {
                    RoundKind::RealInt
                } else if rng.gen_bool(cfg.p_fake) {
                    RoundKind::FakeInt
                } else {
                    RoundKind::Normal
                };
                if rng.gen_bool(cfg.p_incomplete) {
                    let mut trial = round.clone();
                    if truncate_round(&mut trial, &mut rng).is_ok() {
                        *round = trial;
                    }
                }
                if kind != RoundKind::Normal {
                    let mut trial = round.clone();
                    if inject_round(&mut trial, kind, &topic, bank, &mut rng).is_ok() {
                        *round = trial;
                    }
                }
            }
            out.provenance = Provenance::PostProcessed;
            validate(&out)?;
            let mut items = vec![out];
            if cfg.include_twins {
                items.push(uninterrupted_twin(t));
            }
            Ok(items)
        })
        .collect::<Result<_, DatagenError>>()?;
    Ok(processed.into_iter().flatten().collect())
}
