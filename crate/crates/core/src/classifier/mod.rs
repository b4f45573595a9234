//! Semantic turn-taking classifiers.
//!
//! A classifier looks at the dialogue context at a decision point (an
//! endpoint candidate while listening, or a barge-in while speaking) and
//! predicts one control token. Three implementations are provided: a
//! lexicon-driven [`RuleBasedClassifier`], the ground-truth [`oracle_classify`],
//! and an [`ExternalClassifier`] that forwards the context to a model process
//! over newline-delimited JSON.

mod external;
mod oracle;
mod rules;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::machine::DialogueState;
use crate::text::tail_chars;
use crate::token::{ControlToken, Mode};

pub use external::{external_classify, parse_reply, ExternalClassifier, ExternalModelEndpoint};
pub use oracle::oracle_classify;
pub use rules::{rule_based_classify, RuleBasedClassifier, RulePack};

/// How much conversation history a context carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    /// Number of most recent (query, response) pairs.
    pub history_pairs: usize,
    /// Number of trailing characters of the most recent system response.
    pub response_chars: usize,
}

impl Default for ContextWindow {
    fn default() -> Self {
        ContextWindow { history_pairs: 4, response_chars: 512 }
    }
}

/// Everything a classifier may look at for one decision.
///
/// The serde form is the request object of the external-model protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueContext {
    pub mode: Mode,
    pub cached_query: String,
    /// The segment since the last endpoint (Listening) or the barge-in (Speaking).
    pub incoming_text: String,
    #[serde(rename = "recent_response")]
    pub recent_system_response: String,
    #[serde(rename = "history")]
    pub history_tail: Vec<(String, String)>,
}

impl DialogueContext {
    pub fn listening(cached_query: impl Into<String>, incoming_text: impl Into<String>) -> Self {
        DialogueContext {
            mode: Mode::Listening,
            cached_query: cached_query.into(),
            incoming_text: incoming_text.into(),
            recent_system_response: String::new(),
            history_tail: Vec::new(),
        }
    }

    pub fn speaking(incoming_text: impl Into<String>, recent_system_response: impl Into<String>) -> Self {
        DialogueContext {
            mode: Mode::Speaking,
            cached_query: String::new(),
            incoming_text: incoming_text.into(),
            recent_system_response: recent_system_response.into(),
            history_tail: Vec::new(),
        }
    }

    /// Context for a decision taken in `state`. While Listening the incoming
    /// text is the staged segment; while Speaking it is the barge-in text and
    /// the recent response is what has been spoken so far.
    pub fn from_state(state: &DialogueState, barge_in: Option<&str>, window: ContextWindow) -> Self {
        let history = state.history();
        let skip = history.len().saturating_sub(window.history_pairs);
        let history_tail = history[skip..]
            .iter()
            .map(|e| (e.query.clone(), e.response.clone()))
            .collect();
        match state.mode() {
            Mode::Listening => DialogueContext {
                mode: Mode::Listening,
                cached_query: state.cached_query(),
                incoming_text: state.staged_text(),
                recent_system_response: history
                    .last()
                    .map(|e| tail_chars(&e.response, window.response_chars).to_string())
                    .unwrap_or_default(),
                history_tail,
            },
            Mode::Speaking => {
                let progress = state.speaking().expect("speaking state has progress");
                DialogueContext {
                    mode: Mode::Speaking,
                    cached_query: progress.query.clone(),
                    incoming_text: barge_in.unwrap_or_default().trim().to_string(),
                    recent_system_response: tail_chars(&progress.response, window.response_chars).to_string(),
                    history_tail,
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), ClassifyError> {
        if self.mode == Mode::Speaking && self.incoming_text.trim().is_empty() {
            return Err(ClassifyError::ContextInvalid("speaking-mode context needs barge-in text".into()));
        }
        Ok(())
    }
}

/// A classifier's decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierVerdict {
    pub token: ControlToken,
    /// Always 1.0 for the deterministic classifiers shipped here.
    pub confidence: f64,
    /// Machine-readable label of the rule or path that decided.
    pub rationale: String,
}

impl ClassifierVerdict {
    pub fn certain(token: ControlToken, rationale: impl Into<String>) -> Self {
        ClassifierVerdict { token, confidence: 1.0, rationale: rationale.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("invalid context: {0}")]
    ContextInvalid(String),
    #[error("invalid rule pack: {0}")]
    RulePackInvalid(String),
    #[error("context not found in labeled round: {0}")]
    Alignment(String),
    #[error("no reply within {budget_ms} ms")]
    Timeout { budget_ms: u64 },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("endpoint I/O error: {0}")]
    Io(String),
}

/// A turn-taking decision function. Implementations are shared between
/// sessions and must be safe for concurrent use.
pub trait Classifier: Send + Sync {
    fn classify(&self, ctx: &DialogueContext) -> Result<ClassifierVerdict, ClassifyError>;

    fn name(&self) -> &str;
}

/// Validates the context, then delegates.
pub fn classify(classifier: &dyn Classifier, ctx: &DialogueContext) -> Result<ClassifierVerdict, ClassifyError> {
    ctx.validate()?;
    classifier.classify(ctx)
}

/// The non-disruptive decision used when a model's answer is unusable:
/// keep listening, or keep speaking.
pub fn fallback_token(mode: Mode) -> ControlToken {
    match mode {
        Mode::Listening => ControlToken::ContinueListening,
        Mode::Speaking => ControlToken::ContinueSpeaking,
    }
}

/// How decisions are made in evaluation and sessions: by a classifier, or by
/// reading the ground truth attached to the data.
#[derive(Clone)]
pub enum Decider {
    Oracle,
    Model(Arc<dyn Classifier>),
}

impl fmt::Debug for Decider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Decider {
    /// Parses `rule`, `oracle`, `constant:<token>` or `external:<endpoint>`.
    pub fn from_spec(spec: &str, rules: &RulePack, budget: Duration) -> Result<Self, ClassifyError> {
        if spec == "oracle" {
            return Ok(Decider::Oracle);
        }
        if spec == "rule" {
            return Ok(Decider::Model(Arc::new(RuleBasedClassifier::new(rules.clone()))));
        }
        if let Some(tok) = spec.strip_prefix("constant:") {
            let token = tok.parse().map_err(|_| ClassifyError::ContextInvalid(format!("unknown token `{tok}`")))?;
            return Ok(Decider::Model(Arc::new(ConstantClassifier(token))));
        }
        if let Some(addr) = spec.strip_prefix("external:") {
            let endpoint = ExternalModelEndpoint::parse(addr)?;
            return Ok(Decider::Model(Arc::new(ExternalClassifier::new(endpoint, budget))));
        }
        Err(ClassifyError::ContextInvalid(format!(
            "unknown classifier `{spec}` (expected rule, oracle, constant:<token> or external:<addr>)"
        )))
    }

    pub fn model(classifier: impl Classifier + 'static) -> Self {
        Decider::Model(Arc::new(classifier))
    }

    pub fn name(&self) -> &str {
        match self {
            Decider::Oracle => "oracle",
            Decider::Model(c) => c.name(),
        }
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self, Decider::Oracle)
    }
}

/// Always answers the same token regardless of mode. Only useful as an
/// evaluation baseline; it deliberately ignores token legality.
#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier(pub ControlToken);

impl Classifier for ConstantClassifier {
    fn classify(&self, _ctx: &DialogueContext) -> Result<ClassifierVerdict, ClassifyError> {
        Ok(ClassifierVerdict::certain(self.0, "constant"))
    }

    fn name(&self) -> &str {
        "constant"
    }
}
