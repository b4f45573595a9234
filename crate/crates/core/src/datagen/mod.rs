//! Synthetic full-duplex corpus pipeline: prompt plans, template synthesis,
//! interruption and truncation post-processing, cleaning, punctuation
//! augmentation and scenario test sets.
//!
//! Every operation that draws random numbers takes an explicit seed. Corpus
//! level operations derive one seed per item from the base seed and the
//! item's index, so parallel and sequential runs agree exactly.

mod bank;
mod clean;
mod synth;
mod testsets;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::token::ControlToken;
use crate::transcript::{RoundKind, Violation, MAX_GENERATED_ROUNDS, MIN_GENERATED_ROUNDS};

pub use bank::{QaPair, Redirect, TemplateBank};
pub use clean::{clean_corpus, CleaningReport, Corruption};
pub use synth::{
    augment_punctuation, inject_interruption, post_process_corpus, synthesize_corpus, synthesize_transcript,
    truncate_at, truncate_for_incomplete, uninterrupted_twin, AugmentConfig, PostProcessConfig, TurnRef,
};
pub use testsets::{
    balance_report, decision_points, emit_scenario_testsets, lint_balance, BalanceReport, LabeledContext,
    ScenarioSets,
};

const DEFAULT_TOPICS: &str = include_str!("../../data/topics.txt");
const DEFAULT_STYLES: &str = include_str!("../../data/styles.txt");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatagenError {
    #[error("invalid generation config: {0}")]
    ConfigInvalid(String),
    #[error("template bank exhausted: {0}")]
    BankExhausted(String),
    #[error("round {round} not eligible: {why}")]
    RoundNotEligible { round: u32, why: String },
    #[error("round {round}: user turn has {units} units, at least 4 needed")]
    TurnTooShort { round: u32, units: usize },
    #[error("scenario {scenario}: {available} contexts available, {requested} requested")]
    InsufficientData { scenario: ControlToken, available: usize, requested: usize },
    #[error("generated transcript failed validation: {0}")]
    Invalid(#[from] Violation),
    #[error("{0}")]
    Io(String),
}

/// Mixes a base seed with an item index into an independent per-item seed.
pub fn item_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pool_lines(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_string).collect()
}

/// The bundled pool of 200 conversation topics.
pub fn default_topics() -> Vec<String> {
    pool_lines(DEFAULT_TOPICS)
}

/// The bundled pool of 10 user speaking styles.
pub fn default_styles() -> Vec<String> {
    pool_lines(DEFAULT_STYLES)
}

/// Reads a newline-delimited pool file. Blank lines and `#` comments are skipped.
pub fn load_pool(path: &Path) -> Result<Vec<String>, DatagenError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))?;
    Ok(pool_lines(&text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub n_conv: usize,
    pub p_real: f64,
    pub p_fake: f64,
    pub p_incomplete: f64,
    pub rng_seed: u64,
    pub topic_pool: Vec<String>,
    pub style_pool: Vec<String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            n_conv: 100,
            p_real: 0.10,
            p_fake: 0.15,
            p_incomplete: 0.20,
            rng_seed: 42,
            topic_pool: default_topics(),
            style_pool: default_styles(),
        }
    }
}

/// On-disk form of [`GenerationConfig`]: pools are paths to
/// newline-delimited files, resolved relative to the config file. A missing
/// pool path selects the bundled pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfigFile {
    pub n_conv: usize,
    pub p_real: f64,
    pub p_fake: f64,
    pub p_incomplete: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub topic_pool: Option<PathBuf>,
    #[serde(default)]
    pub style_pool: Option<PathBuf>,
}

impl GenerationConfig {
    /// Scenario mix for full-size runs. The category rates are this
    /// crate's own choice (balanced, every category under half of all rounds).
    pub fn parity_preset() -> Self {
        GenerationConfig { n_conv: 20_000, p_real: 0.20, p_fake: 0.25, p_incomplete: 0.25, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::ConfigInvalid(m));
        for (name, p) in [("p_real", self.p_real), ("p_fake", self.p_fake), ("p_incomplete", self.p_incomplete)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.p_real + self.p_fake > 1.0 + 1e-12 {
            return bad(format!("p_real + p_fake = {} exceeds 1", self.p_real + self.p_fake));
        }
        if self.topic_pool.is_empty() || self.style_pool.is_empty() {
            return bad("topic and style pools must be non-empty".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatagenError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))?;
        let file: GenerationConfigFile =
            serde_json::from_str(&text).map_err(|e| DatagenError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let pool = |p: &Option<PathBuf>, default: fn() -> Vec<String>| match p {
            Some(p) => load_pool(&base.join(p)),
            None => Ok(default()),
        };
        let cfg = GenerationConfig {
            n_conv: file.n_conv,
            p_real: file.p_real,
            p_fake: file.p_fake,
            p_incomplete: file.p_incomplete,
            rng_seed: file.rng_seed,
            topic_pool: pool(&file.topic_pool, default_topics)?,
            style_pool: pool(&file.style_pool, default_styles)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One round of a conversation plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub kind: RoundKind,
    /// The user's query is cut by a hesitation before it completes.
    pub incomplete: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomInstructions {
    pub n_rounds: usize,
    pub topic: String,
    pub style: String,
    pub plan: Vec<RoundPlan>,
}

/// A generation prompt: fixed sections plus per-conversation instructions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub objective: String,
    pub behavior_spec: String,
    pub format_spec: String,
    pub custom: CustomInstructions,
}

const OBJECTIVE: &str = "Write a spoken conversation between a user and a voice assistant in which the user \
may talk over the assistant while it is answering.";

const BEHAVIOR: &str = "Mark every turn-taking decision with a control token. \
<|C-L|> follows a user fragment that stops before the question is finished; the assistant keeps listening. \
<|S-S|> starts an assistant reply once the question is complete. \
<|S-L|> ends an assistant reply, either because it is finished or because the user interrupted with an objection, \
a new question or a change of topic. \
<|C-S|> marks the point where the user made a short acknowledgment and the assistant carried on. \
Example: Round 1 (fake interruption); User: How long is the flight to <|C-L|> Lisbon?; \
Sys: <|S-S|> About three hours. <|C-S|> Morning flights are often cheaper. <|S-L|>; Barge-in: uh-huh";

const FORMAT: &str = "One line per round: Round X (normal|real interruption|fake interruption); \
User: <query, with <|C-L|> after each unfinished fragment>; Sys: <reply with control tokens>; \
Barge-in: <what the user said while the assistant spoke, interrupted rounds only>";

impl PromptSpec {
    pub fn new(custom: CustomInstructions) -> Self {
        PromptSpec {
            objective: OBJECTIVE.into(),
            behavior_spec: BEHAVIOR.into(),
            format_spec: FORMAT.into(),
            custom,
        }
    }

    /// The prompt text sent to a generating model.
    pub fn render(&self) -> String {
        let c = &self.custom;
        let mut plan = String::new();
        for (i, r) in c.plan.iter().enumerate() {
            plan.push_str(&format!(
                "\n  Round {}: {}{}",
                i + 1,
                r.kind,
                if r.incomplete { ", user hesitates mid-question" } else { "" }
            ));
        }
        format!(
            "Objective: {}\nAssistant behavior: {}\nOutput format: {}\nInstructions: Produce {} rounds about {}. \
             The user speaks in a {} style. Follow this plan:{}\n",
            self.objective, self.behavior_spec, self.format_spec, c.n_rounds, c.topic, c.style, plan
        )
    }
}

fn plan_conversation(cfg: &GenerationConfig, index: usize) -> PromptSpec {
    let mut rng = rng_for(item_seed(cfg.rng_seed, index as u64));
    let topic = cfg.topic_pool.choose(&mut rng).expect("validated pool").clone();
    let style = cfg.style_pool.choose(&mut rng).expect("validated pool").clone();
    let n_rounds = rng.gen_range(MIN_GENERATED_ROUNDS..=MAX_GENERATED_ROUNDS);
    let plan = (0..n_rounds)
        .map(|_| {
            let kind = if rng.gen_bool(cfg.p_real) {
                RoundKind::RealInt
            } else if rng.gen_bool(cfg.p_fake) {
                RoundKind::FakeInt
            } else {
                RoundKind::Normal
            };
            RoundPlan { kind, incomplete: rng.gen_bool(cfg.p_incomplete) }
        })
        .collect();
    PromptSpec::new(CustomInstructions { n_rounds, topic, style, plan })
}

/// Draws `n_conv` conversation plans. Each round is a real interruption with
/// probability `p_real`, otherwise a fake one with probability `p_fake`,
/// otherwise normal; each user turn is independently marked incomplete.
pub fn generate_prompts(cfg: &GenerationConfig) -> Result<Vec<PromptSpec>, DatagenError> {
    cfg.validate()?;
    Ok((0..cfg.n_conv).into_par_iter().map(|i| plan_conversation(cfg, i)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_pools() {
        assert_eq!(default_topics().len(), 200);
        assert_eq!(default_styles().len(), 10);
        let mut t = default_topics();
        t.sort();
        t.dedup();
        assert_eq!(t.len(), 200);
    }

    #[test]
    fn zero_probabilities_give_plain_plans() {
        let cfg = GenerationConfig { n_conv: 50, p_real: 0.0, p_fake: 0.0, p_incomplete: 0.0, ..Default::default() };
        let prompts = generate_prompts(&cfg).unwrap();
        assert_eq!(prompts.len(), 50);
        for p in &prompts {
            assert_eq!(p.custom.plan.len(), p.custom.n_rounds);
            assert!((2..=12).contains(&p.custom.n_rounds));
            assert!(p.custom.plan.iter().all(|r| r.kind == RoundKind::Normal && !r.incomplete));
        }
    }

    #[test]
    fn seeded_and_order_independent() {
        let cfg = GenerationConfig { n_conv: 30, ..Default::default() };
        let a = generate_prompts(&cfg).unwrap();
        let b = generate_prompts(&cfg).unwrap();
        assert_eq!(a, b);
        let seq: Vec<_> = (0..30).map(|i| plan_conversation(&cfg, i)).collect();
        assert_eq!(a, seq);
        let other = generate_prompts(&GenerationConfig { rng_seed: 43, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn config_validation() {
        let ok = GenerationConfig::default();
        assert!(ok.validate().is_ok());
        assert!(GenerationConfig { p_real: 0.7, p_fake: 0.4, ..ok.clone() }.validate().is_err());
        assert!(GenerationConfig { p_incomplete: 1.5, ..ok.clone() }.validate().is_err());
        assert!(GenerationConfig { topic_pool: vec![], ..ok }.validate().is_err());
    }

    #[test]
    fn config_file_resolves_pools() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("topics.txt"), "chess\n# comment\n\ntea\n").unwrap();
        std::fs::write(
            dir.path().join("cfg.json"),
            r#"{"n_conv": 5, "p_real": 0.1, "p_fake": 0.15, "p_incomplete": 0.2, "rng_seed": 7, "topic_pool": "topics.txt"}"#,
        )
        .unwrap();
        let cfg = GenerationConfig::load(&dir.path().join("cfg.json")).unwrap();
        assert_eq!(cfg.topic_pool, ["chess", "tea"]);
        assert_eq!(cfg.style_pool.len(), 10);
        assert_eq!(cfg.rng_seed, 7);
    }

    #[test]
    fn rendered_prompt_mentions_plan() {
        let p = PromptSpec::new(CustomInstructions {
            n_rounds: 2,
            topic: "travel".into(),
            style: "casual and conversational".into(),
            plan: vec![
                RoundPlan { kind: RoundKind::Normal, incomplete: true },
                RoundPlan { kind: RoundKind::FakeInt, incomplete: false },
            ],
        });
        let text = p.render();
        assert!(text.contains("Produce 2 rounds about travel"));
        assert!(text.contains("Round 2: fake interruption"));
        assert!(text.contains("user hesitates"));
    }
}
