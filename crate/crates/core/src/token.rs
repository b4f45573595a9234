//! The four-way control-token alphabet and the two dialogue modes it is
//! defined over.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Whether the system is currently taking user input or producing a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Listening,
    Speaking,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Listening => "listening",
            Mode::Speaking => "speaking",
        }
    }

    /// The two tokens a decision may take in this mode.
    pub fn legal_tokens(self) -> [ControlToken; 2] {
        match self {
            Mode::Listening => [ControlToken::ContinueListening, ControlToken::StartSpeaking],
            Mode::Speaking => [ControlToken::StartListening, ControlToken::ContinueSpeaking],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A dialogue-manager decision.
///
/// The serialized forms (`<|C-L|>`, `<|S-S|>`, `<|S-L|>`, `<|C-S|>`) are
/// used verbatim in corpus files, the wire protocol and session logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControlToken {
    /// Query incomplete: keep listening and cache what was heard.
    ContinueListening,
    /// Query complete: activate the response engine.
    StartSpeaking,
    /// Stop (or finish) speaking and return to listening.
    StartListening,
    /// Barge-in is not a real interruption: keep speaking.
    ContinueSpeaking,
}

impl ControlToken {
    /// All tokens in table order (C-L, S-S, S-L, C-S).
    pub const ALL: [ControlToken; 4] = [
        ControlToken::ContinueListening,
        ControlToken::StartSpeaking,
        ControlToken::StartListening,
        ControlToken::ContinueSpeaking,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControlToken::ContinueListening => "<|C-L|>",
            ControlToken::StartSpeaking => "<|S-S|>",
            ControlToken::StartListening => "<|S-L|>",
            ControlToken::ContinueSpeaking => "<|C-S|>",
        }
    }

    /// Short label without the delimiters, e.g. `C-L`.
    pub fn short(self) -> &'static str {
        let s = self.as_str();
        &s[2..s.len() - 2]
    }

    /// The mode in which this token may be emitted.
    pub fn source_mode(self) -> Mode {
        match self {
            ControlToken::ContinueListening | ControlToken::StartSpeaking => Mode::Listening,
            ControlToken::StartListening | ControlToken::ContinueSpeaking => Mode::Speaking,
        }
    }

    /// The mode the dialogue is in after this token is emitted.
    pub fn target_mode(self) -> Mode {
        match self {
            ControlToken::ContinueListening | ControlToken::StartListening => Mode::Listening,
            ControlToken::StartSpeaking | ControlToken::ContinueSpeaking => Mode::Speaking,
        }
    }

    pub fn is_legal_in(self, mode: Mode) -> bool {
        self.source_mode() == mode
    }

    /// Index into [`ControlToken::ALL`].
    pub fn index(self) -> usize {
        match self {
            ControlToken::ContinueListening => 0,
            ControlToken::StartSpeaking => 1,
            ControlToken::StartListening => 2,
            ControlToken::ContinueSpeaking => 3,
        }
    }
}

impl fmt::Display for ControlToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown control token `{0}`")]
pub struct UnknownToken(pub String);

impl FromStr for ControlToken {
    type Err = UnknownToken;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ControlToken::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| UnknownToken(s.to_string()))
    }
}

impl Serialize for ControlToken {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ControlToken {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
