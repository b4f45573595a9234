use super::{ClassifierVerdict, ClassifyError, DialogueContext};
use crate::text::normalize_ws;
use crate::token::{ControlToken, Mode};
use crate::transcript::{Round, RoundKind};

/// Returns the annotated token for the decision point `ctx` describes in
/// `round`.
///
/// Listening contexts are located by the incoming segment and the cached
/// prefix before it; the query that follows a real interruption is located
/// by its barge-in text. Speaking contexts are located by the barge-in text.
pub fn oracle_classify(ctx: &DialogueContext, round: &Round) -> Result<ClassifierVerdict, ClassifyError> {
    let incoming = normalize_ws(&ctx.incoming_text);
    let cached = normalize_ws(&ctx.cached_query);
    let bargein = round.bargein_text.as_deref().map(normalize_ws);
    let token = match ctx.mode {
        Mode::Listening => {
            let mut prefix: Vec<&str> = Vec::new();
            let mut found = None;
            for seg in &round.user_segments {
                if seg.text == incoming && prefix.join(" ") == cached {
                    found = Some(if seg.complete {
                        ControlToken::StartSpeaking
                    } else {
                        ControlToken::ContinueListening
                    });
                    break;
                }
                prefix.push(&seg.text);
            }
            match found {
                Some(t) => t,
                None if round.kind == RoundKind::RealInt
                    && cached.is_empty()
                    && bargein.as_deref() == Some(incoming.as_str()) =>
                {
                    ControlToken::StartSpeaking
                }
                None => {
                    return Err(ClassifyError::Alignment(format!(
                        "round {}: no user segment `{incoming}` after `{cached}`",
                        round.index
                    )))
                }
            }
        }
        Mode::Speaking => match (round.kind, bargein.as_deref()) {
            (RoundKind::RealInt, Some(b)) if b == incoming => ControlToken::StartListening,
            (RoundKind::FakeInt, Some(b)) if b == incoming => ControlToken::ContinueSpeaking,
            _ => {
                return Err(ClassifyError::Alignment(format!(
                    "round {}: no barge-in `{incoming}`",
                    round.index
                )))
            }
        },
    };
    Ok(ClassifierVerdict::certain(token, "oracle"))
}
