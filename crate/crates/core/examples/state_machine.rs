//! Walks the four-token state machine through a hesitation, a backchannel
//! and a real barge-in, printing every transition.

use duplex_dm::machine::{replay, DialogueState, ScriptStep, SessionEvent};
use duplex_dm::token::ControlToken::*;
use duplex_dm::transcript::fmt_tokens;

fn main() {
    use SessionEvent::*;
    let script: Vec<ScriptStep> = vec![
        (UserText { text: "How do I get to".into(), t: 0 }, None),
        (EndpointCandidate { t: 500 }, Some(ContinueListening)),
        (UserText { text: "the airport?".into(), t: 900 }, None),
        (EndpointCandidate { t: 1400 }, Some(StartSpeaking)),
        (ResponseChunk { text: "Take the train,".into(), t: 1600 }, None),
        (UserText { text: "uh-huh".into(), t: 1700 }, Some(ContinueSpeaking)),
        (ResponseChunk { text: "it leaves every ten minutes.".into(), t: 1800 }, None),
        (UserText { text: "wait, what about a taxi?".into(), t: 1900 }, Some(StartListening)),
        (EndpointCandidate { t: 2400 }, Some(StartSpeaking)),
        (ResponseChunk { text: "A taxi takes longer.".into(), t: 2600 }, None),
        (ResponseComplete { t: 2800 }, None),
    ];

    let mut state = DialogueState::new();
    for (event, decision) in &script {
        let before = state.mode();
        let actions = state.apply(event, *decision).expect("legal script");
        println!("{:>5} ms  {:<9} -> {:<9} {:?}", event.timestamp(), before.as_str(), state.mode().as_str(), actions);
    }

    let r = replay(DialogueState::new(), &script).unwrap();
    println!("trace: {}", fmt_tokens(&r.trace));
    println!("history: {:?}", r.state.history());

    // Speaking-only tokens are refused while listening.
    let err = DialogueState::new().apply(&EndpointCandidate { t: 0 }, Some(ContinueSpeaking)).unwrap_err();
    println!("rejected: {err}");
}
