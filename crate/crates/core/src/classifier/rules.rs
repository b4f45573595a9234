use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierVerdict, Classifier, ClassifyError, DialogueContext};
use crate::text::{is_cjk, normalize_for_match};
use crate::token::{ControlToken, Mode};

const DEFAULT_PACK: &str = include_str!("../../data/rules_en.json");

/// Lexicons for the rule-based classifier. Packs are data: load them from
/// JSON with [`RulePack::from_json`] or use the bundled English pack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulePack {
    pub language: String,
    /// When false, commas, ellipses and terminal marks are ignored entirely.
    #[serde(default = "yes")]
    pub use_punctuation: bool,
    pub backchannel: Vec<String>,
    pub denial: Vec<String>,
    pub inquiry: Vec<String>,
    /// Words that make a barge-in a question when they open it.
    pub inquiry_openers: Vec<String>,
    pub topic_shift: Vec<String>,
    pub trailing_conjunctions: Vec<String>,
    pub trailing_prepositions: Vec<String>,
    pub trailing_function_words: Vec<String>,
    pub hesitation_fillers: Vec<String>,
}

fn yes() -> bool {
    true
}

impl Default for RulePack {
    fn default() -> Self {
        RulePack::from_json(DEFAULT_PACK).expect("bundled rule pack is valid")
    }
}

impl RulePack {
    pub fn from_json(json: &str) -> Result<Self, ClassifyError> {
        let pack: RulePack =
            serde_json::from_str(json).map_err(|e| ClassifyError::RulePackInvalid(e.to_string()))?;
        pack.normalized()
    }

    pub fn load(path: &Path) -> Result<Self, ClassifyError> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| ClassifyError::RulePackInvalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&json)
    }

    fn lexicons(&self) -> [(&'static str, &Vec<String>); 9] {
        [
            ("backchannel", &self.backchannel),
            ("denial", &self.denial),
            ("inquiry", &self.inquiry),
            ("inquiry_openers", &self.inquiry_openers),
            ("topic_shift", &self.topic_shift),
            ("trailing_conjunctions", &self.trailing_conjunctions),
            ("trailing_prepositions", &self.trailing_prepositions),
            ("trailing_function_words", &self.trailing_function_words),
            ("hesitation_fillers", &self.hesitation_fillers),
        ]
    }

    /// Checks every lexicon is non-empty and normalizes entries for matching.
    pub fn normalized(mut self) -> Result<Self, ClassifyError> {
        if let Some((name, _)) = self.lexicons().into_iter().find(|(_, l)| l.is_empty()) {
            return Err(ClassifyError::RulePackInvalid(format!("lexicon `{name}` is empty")));
        }
        for list in [
            &mut self.backchannel,
            &mut self.denial,
            &mut self.inquiry,
            &mut self.inquiry_openers,
            &mut self.topic_shift,
            &mut self.trailing_conjunctions,
            &mut self.trailing_prepositions,
            &mut self.trailing_function_words,
            &mut self.hesitation_fillers,
        ] {
            for entry in list.iter_mut() {
                *entry = normalize_for_match(entry);
            }
            list.retain(|e| !e.is_empty());
            if list.is_empty() {
                return Err(ClassifyError::RulePackInvalid("lexicon has only blank entries".into()));
            }
        }
        Ok(self)
    }
}

fn has_cjk(s: &str) -> bool {
    s.chars().any(is_cjk)
}

fn contains_phrase(norm: &str, phrase: &str) -> bool {
    if has_cjk(phrase) {
        return norm.contains(phrase);
    }
    let hay = format!(" {norm} ");
    hay.contains(&format!(" {phrase} "))
}

fn ends_with_phrase(norm: &str, phrase: &str) -> bool {
    if has_cjk(phrase) {
        return norm.ends_with(phrase);
    }
    norm == phrase || norm.ends_with(&format!(" {phrase}"))
}

fn starts_with_phrase(norm: &str, phrase: &str) -> bool {
    if has_cjk(phrase) {
        return norm.starts_with(phrase);
    }
    norm == phrase || norm.starts_with(&format!("{phrase} "))
}

fn any(list: &[String], f: impl Fn(&str) -> bool) -> bool {
    list.iter().any(|p| f(p))
}

fn ends_with_any(text: &str, marks: &[&str]) -> bool {
    marks.iter().any(|m| text.ends_with(m))
}

/// Applies a rule pack to one context.
///
/// Listening: `C-L` when an incompleteness marker fires on the end of the
/// query, otherwise `S-S`. Speaking: denial, then inquiry or topic shift,
/// yield `S-L`; a backchannel or anything without a trigger yields `C-S`.
pub fn rule_based_classify(ctx: &DialogueContext, rules: &RulePack) -> Result<ClassifierVerdict, ClassifyError> {
    ctx.validate()?;
    let (token, tag) = match ctx.mode {
        Mode::Listening => listening_decision(ctx, rules),
        Mode::Speaking => speaking_decision(ctx, rules),
    };
    Ok(ClassifierVerdict::certain(token, tag))
}

fn listening_decision(ctx: &DialogueContext, rules: &RulePack) -> (ControlToken, &'static str) {
    use ControlToken::{ContinueListening as CL, StartSpeaking as SS};
    let raw = if ctx.incoming_text.trim().is_empty() { ctx.cached_query.trim() } else { ctx.incoming_text.trim() };
    if raw.is_empty() {
        return (CL, "empty_query");
    }
    if rules.use_punctuation {
        if ends_with_any(raw, &[",", "，", "、", ";", ":", "-"]) {
            return (CL, "trailing_comma");
        }
        if ends_with_any(raw, &["...", "…"]) {
            return (CL, "trailing_ellipsis");
        }
    }
    let norm = normalize_for_match(raw);
    let checks: [(&[String], &'static str); 4] = [
        (&rules.trailing_conjunctions, "trailing_conjunction"),
        (&rules.trailing_prepositions, "trailing_preposition"),
        (&rules.hesitation_fillers, "hesitation_filler"),
        (&rules.trailing_function_words, "trailing_function_word"),
    ];
    for (list, tag) in checks {
        if any(list, |p| ends_with_phrase(&norm, p)) {
            return (CL, tag);
        }
    }
    if rules.use_punctuation && ends_with_any(raw, &[".", "?", "!", "。", "？", "！"]) {
        (SS, "terminal_punctuation")
    } else {
        (SS, "no_incompleteness_marker")
    }
}

fn speaking_decision(ctx: &DialogueContext, rules: &RulePack) -> (ControlToken, &'static str) {
    use ControlToken::{ContinueSpeaking as CS, StartListening as SL};
    let raw = ctx.incoming_text.trim();
    let norm = normalize_for_match(raw);
    if any(&rules.denial, |p| contains_phrase(&norm, p)) {
        return (SL, "denial_lexicon");
    }
    if any(&rules.inquiry, |p| contains_phrase(&norm, p))
        || any(&rules.inquiry_openers, |p| starts_with_phrase(&norm, p))
        || (rules.use_punctuation && ends_with_any(raw, &["?", "？"]))
    {
        return (SL, "inquiry");
    }
    if any(&rules.topic_shift, |p| contains_phrase(&norm, p)) {
        return (SL, "topic_shift");
    }
    if any(&rules.backchannel, |p| contains_phrase(&norm, p)) {
        return (CS, "backchannel_lexicon");
    }
    (CS, "no_trigger")
}

/// [`rule_based_classify`] bound to a pack.
#[derive(Debug, Clone, Default)]
pub struct RuleBasedClassifier {
    pub rules: RulePack,
}

impl RuleBasedClassifier {
    pub fn new(rules: RulePack) -> Self {
        RuleBasedClassifier { rules }
    }
}

impl Classifier for RuleBasedClassifier {
    fn classify(&self, ctx: &DialogueContext) -> Result<ClassifierVerdict, ClassifyError> {
        rule_based_classify(ctx, &self.rules)
    }

    fn name(&self) -> &str {
        "rule"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ControlToken::*;

    fn listen(text: &str) -> ClassifierVerdict {
        rule_based_classify(&DialogueContext::listening("", text), &RulePack::default()).unwrap()
    }

    fn barge(text: &str) -> ClassifierVerdict {
        rule_based_classify(&DialogueContext::speaking(text, "The forecast says"), &RulePack::default()).unwrap()
    }

    #[test]
    fn incomplete_queries_keep_listening() {
        assert_eq!(listen("What's the weather like in").token, ContinueListening);
        let v = listen("Book a table for");
        assert_eq!((v.token, v.rationale.as_str()), (ContinueListening, "trailing_preposition"));
        assert_eq!(listen("I want pasta and").rationale, "trailing_conjunction");
        assert_eq!(listen("Tell me about, um").rationale, "hesitation_filler");
        assert_eq!(listen("First the museum,").rationale, "trailing_comma");
        assert_eq!(listen("").rationale, "empty_query");
    }

    #[test]
    fn complete_queries_start_speaking() {
        let v = listen("What's the weather like in Paris?");
        assert_eq!((v.token, v.rationale.as_str()), (StartSpeaking, "terminal_punctuation"));
        assert_eq!(listen("Book a table for two").token, StartSpeaking);
        assert_eq!(v.confidence, 1.0);
    }

    #[test]
    fn silence_endpoint_uses_cached_query() {
        let ctx = DialogueContext::listening("I need a hotel near", "");
        assert_eq!(rule_based_classify(&ctx, &RulePack::default()).unwrap().token, ContinueListening);
    }

    #[test]
    fn bargeins() {
        let v = barge("okay, got it");
        assert_eq!((v.token, v.rationale.as_str()), (ContinueSpeaking, "backchannel_lexicon"));
        assert_eq!(barge("mm-hm").rationale, "backchannel_lexicon");
        let v = barge("no, that's wrong, I meant Tokyo");
        assert_eq!((v.token, v.rationale.as_str()), (StartListening, "denial_lexicon"));
        assert_eq!(barge("okay, but what about Tokyo?").rationale, "inquiry");
        assert_eq!(barge("by the way, I love jazz").rationale, "topic_shift");
        assert_eq!(barge("the kids are loud today").rationale, "no_trigger");
    }

    #[test]
    fn empty_lexicon_is_rejected() {
        let mut pack = RulePack::default();
        pack.backchannel.clear();
        assert!(matches!(pack.normalized(), Err(ClassifyError::RulePackInvalid(_))));
        assert!(RulePack::from_json("{}").is_err());
    }

    #[test]
    fn cjk_phrases_match_by_substring() {
        let mut pack = RulePack::default();
        pack.trailing_conjunctions.push("和".into());
        pack.backchannel.push("嗯".into());
        let pack = pack.normalized().unwrap();
        let v = rule_based_classify(&DialogueContext::listening("", "我想要咖啡和"), &pack).unwrap();
        assert_eq!(v.token, ContinueListening);
        let v = rule_based_classify(&DialogueContext::speaking("嗯嗯", "..."), &pack).unwrap();
        assert_eq!(v.rationale, "backchannel_lexicon");
    }
}
