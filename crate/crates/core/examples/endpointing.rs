//! Silence-threshold endpointing over one hesitant user turn, at the four
//! reference thresholds.

use duplex_dm::token::ControlToken::*;
use duplex_dm::vad::{detect_endpoints, EndpointConfig, TimedEvent, TimedEventStream, REFERENCE_THRESHOLDS_MS};

fn main() {
    let stream = TimedEventStream::new(vec![
        TimedEvent::labeled_speech(0, "please book a flight", vec![ContinueListening]),
        TimedEvent::silence(1, 650),
        TimedEvent::labeled_speech(650, "to Paris", vec![ContinueListening]),
        TimedEvent::silence(651, 1600),
        TimedEvent::labeled_speech(1600, "tomorrow morning", vec![StartSpeaking]),
        TimedEvent::silence(1601, 5000),
    ]);
    for th in REFERENCE_THRESHOLDS_MS {
        let cands = detect_endpoints(&stream, &EndpointConfig::new(th, 100).unwrap()).unwrap();
        let shown: Vec<String> = cands.iter().map(|c| format!("{}ms {:?}", c.t, c.text)).collect();
        println!("{th:>5} ms: {}", shown.join(" | "));
    }
}
