//! A scripted session: hesitation, backchannel, real barge-in. Prints the
//! log and the wire frames, then replays a small corpus.

use duplex_dm::classifier::Decider;
use duplex_dm::datagen::{generate_prompts, synthesize_corpus, GenerationConfig, TemplateBank};
use duplex_dm::session::{
    frames_for, replay_corpus, run_session, CdeStub, ReplayTiming, SessionConfig, SessionInput,
};

fn speech(t: u64, text: &str) -> SessionInput {
    SessionInput::Speech { t, text: text.into(), labels: vec![] }
}

fn main() {
    let cfg = SessionConfig::default();
    let inputs = [
        speech(0, "Can you tell me about"),
        speech(800, "the history of Rome?"),
        speech(1700, "uh-huh"),
        speech(2300, "no, stop, what about Greece?"),
    ];
    let log = run_session(&cfg, cfg.decider().unwrap(), CdeStub::scripted(Some(TemplateBank::default())), &inputs).unwrap();
    for e in &log.entries {
        println!(
            "{:>5} {:<18} {:<9} {:?} {}",
            e.t,
            format!("{:?}", e.event.kind()),
            e.mode_after.as_str(),
            e.tokens,
            e.rationale.as_deref().unwrap_or("")
        );
    }
    log.check().unwrap();
    for f in frames_for(&log.entries[1]) {
        println!("{}", serde_json::to_string(&f).unwrap());
    }

    let corpus = synthesize_corpus(&generate_prompts(&GenerationConfig { n_conv: 20, ..Default::default() }).unwrap(), &TemplateBank::default(), 3).unwrap();
    for d in [Decider::Oracle, cfg.decider().unwrap()] {
        let r = replay_corpus(&corpus, &cfg, &d, ReplayTiming::default()).report;
        println!(
            "{}: {} exact of {}, accuracy {:.3}",
            r.classifier,
            r.exact_traces,
            r.transcripts,
            r.metrics.map_or(0.0, |m| m.accuracy)
        );
    }
}
