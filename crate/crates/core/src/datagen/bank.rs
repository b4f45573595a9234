use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DatagenError;

const DEFAULT_BANK: &str = include_str!("../../data/bank_en.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

/// A disruptive barge-in and the reply that answers it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Redirect {
    pub bargein: String,
    pub reply: String,
}

/// Text templates standing in for a generating model. `{topic}` in any
/// template is replaced by the conversation topic.
///
/// QA pairs come from `topic_qa` when the topic has an entry there, else a
/// generic question and answer are drawn independently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateBank {
    #[serde(default)]
    pub questions: Vec<String>,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default)]
    pub topic_qa: BTreeMap<String, Vec<QaPair>>,
    pub backchannels: Vec<String>,
    pub redirects: Vec<Redirect>,
}

impl Default for TemplateBank {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_BANK).expect("bundled template bank is valid")
    }
}

fn fill(template: &str, topic: &str) -> String {
    template.replace("{topic}", topic)
}

impl TemplateBank {
    pub fn load(path: &Path) -> Result<Self, DatagenError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))
    }

    pub fn qa(&self, topic: &str, rng: &mut impl Rng) -> Result<QaPair, DatagenError> {
        if let Some(pair) = self.topic_qa.get(topic).and_then(|pairs| pairs.choose(rng)) {
            return Ok(QaPair { question: fill(&pair.question, topic), answer: fill(&pair.answer, topic) });
        }
        match (self.questions.choose(rng), self.answers.choose(rng)) {
            (Some(q), Some(a)) => Ok(QaPair { question: fill(q, topic), answer: fill(a, topic) }),
            _ => Err(DatagenError::BankExhausted(format!("no QA templates for topic `{topic}`"))),
        }
    }

    pub fn backchannel(&self, rng: &mut impl Rng) -> Result<String, DatagenError> {
        self.backchannels
            .choose(rng)
            .cloned()
            .ok_or_else(|| DatagenError::BankExhausted("no backchannel utterances".into()))
    }

    pub fn redirect(&self, topic: &str, rng: &mut impl Rng) -> Result<Redirect, DatagenError> {
        self.redirects
            .choose(rng)
            .map(|r| Redirect { bargein: fill(&r.bargein, topic), reply: fill(&r.reply, topic) })
            .ok_or_else(|| DatagenError::BankExhausted("no redirect utterances".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::rng_for;
    use crate::text::{sentences, unit_count};

    #[test]
    fn bundled_bank_shape() {
        let bank = TemplateBank::default();
        assert!(bank.questions.iter().all(|q| unit_count(q) >= 4 && q.contains("{topic}")));
        assert!(bank.answers.iter().all(|a| sentences(a).len() >= 2));
        assert!(!bank.backchannels.is_empty() && !bank.redirects.is_empty());
    }

    #[test]
    fn topic_specific_pairs_win() {
        let mut bank = TemplateBank::default();
        bank.topic_qa.insert(
            "tea".into(),
            vec![QaPair { question: "Is green {topic} healthy?".into(), answer: "Yes. In moderation.".into() }],
        );
        let qa = bank.qa("tea", &mut rng_for(1)).unwrap();
        assert_eq!(qa.question, "Is green tea healthy?");
    }

    #[test]
    fn empty_bank_is_exhausted() {
        let bank = TemplateBank {
            questions: vec![],
            answers: vec![],
            topic_qa: BTreeMap::new(),
            backchannels: vec![],
            redirects: vec![],
        };
        let mut rng = rng_for(0);
        assert!(matches!(bank.qa("chess", &mut rng), Err(DatagenError::BankExhausted(_))));
        assert!(matches!(bank.backchannel(&mut rng), Err(DatagenError::BankExhausted(_))));
        assert!(matches!(bank.redirect("chess", &mut rng), Err(DatagenError::BankExhausted(_))));
    }
}
