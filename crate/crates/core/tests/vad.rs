//! Endpointing properties over random streams.

use proptest::prelude::*;

use duplex_dm::vad::{scan_endpoints, EndpointConfig, TimedEvent, TimedEventStream};

/// Speech payloads at strictly increasing times, then trailing silence.
fn streams() -> impl Strategy<Value = TimedEventStream> {
    (prop::collection::vec((2u64..2500, "[a-z]{1,6}( [a-z]{1,6})?"), 1..15), 1u64..4000).prop_map(|(gaps, tail)| {
        let mut t = 0;
        let mut events = Vec::new();
        for (i, (gap, text)) in gaps.iter().enumerate() {
            if i > 0 {
                events.push(TimedEvent::silence(t + 1, t + gap));
                t += gap;
            }
            events.push(TimedEvent::speech(t, text.clone()));
        }
        events.push(TimedEvent::silence(t + 1, t + 1 + tail));
        TimedEventStream::new(events)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn candidates_shrink_as_threshold_grows(stream in streams(), mut ths in prop::collection::vec(100u64..3000, 2..6)) {
        ths.sort_unstable();
        let counts: Vec<usize> = ths
            .iter()
            .map(|&th| scan_endpoints(&stream, &EndpointConfig::new(th, 100).unwrap()).unwrap().candidates.len())
            .collect();
        prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{:?} -> {:?}", ths, counts);
    }

    #[test]
    fn speech_text_is_conserved(stream in streams(), th in 100u64..3000, tick in prop::sample::select(vec![10u64, 50, 100])) {
        let scan = scan_endpoints(&stream, &EndpointConfig::new(th, tick).unwrap()).unwrap();
        let mut parts: Vec<&str> = scan.candidates.iter().map(|c| c.text.as_str()).collect();
        if !scan.trailing_text.is_empty() {
            parts.push(&scan.trailing_text);
        }
        let all: Vec<&str> = stream.speech_texts().collect();
        prop_assert_eq!(parts.join(" "), all.join(" "));
    }

    #[test]
    fn candidates_sit_on_the_tick_grid(stream in streams(), th in 100u64..3000) {
        let cfg = EndpointConfig::new(th, 100).unwrap();
        let scan = scan_endpoints(&stream, &cfg).unwrap();
        let speech: Vec<u64> = stream.events.iter().filter(|e| e.is_speech()).map(|e| e.t).collect();
        for c in &scan.candidates {
            prop_assert_eq!(c.t % 100, 0);
            prop_assert!(c.t >= c.speech_t + th && c.t < c.speech_t + th + 100);
            if let Some(&next) = speech.iter().find(|&&s| s > c.speech_t) {
                prop_assert!(c.t < next);
            }
        }
        prop_assert!(scan.candidates.windows(2).all(|w| w[0].t < w[1].t));
    }
}

#[test]
fn speech_on_the_fire_tick_preempts() {
    let cfg = EndpointConfig::new(500, 100).unwrap();
    let stream = |next: u64| {
        TimedEventStream::new(vec![
            TimedEvent::speech(0, "one"),
            TimedEvent::silence(1, next),
            TimedEvent::speech(next, "two"),
            TimedEvent::silence(next + 1, next + 1000),
        ])
    };
    assert_eq!(scan_endpoints(&stream(500), &cfg).unwrap().candidates.len(), 1);
    assert_eq!(scan_endpoints(&stream(501), &cfg).unwrap().candidates.len(), 2);
}
