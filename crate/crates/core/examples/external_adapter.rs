//! A toy model server speaking the external classifier protocol, queried
//! through the adapter.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::thread;

use duplex_dm::classifier::{classify, Decider, DialogueContext, RulePack};
use duplex_dm::token::Mode;

fn main() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let reader = BufReader::new(stream.try_clone().unwrap());
            for line in reader.lines() {
                let ctx: DialogueContext = serde_json::from_str(&line.unwrap()).unwrap();
                let finished = ctx.incoming_text.trim_end().ends_with(['.', '?', '!']);
                let token = match (ctx.mode, finished) {
                    (Mode::Listening, true) => "<|S-S|>",
                    (Mode::Listening, false) => "<|C-L|>",
                    (Mode::Speaking, true) => "<|S-L|>",
                    (Mode::Speaking, false) => "<|C-S|>",
                };
                writeln!(stream, "{{\"token\": \"{token}\"}}").unwrap();
            }
        }
    });

    let decider = Decider::from_spec(&format!("external:{addr}"), &RulePack::default(), std::time::Duration::from_millis(500)).unwrap();
    let Decider::Model(model) = &decider else { unreachable!() };
    for ctx in [
        DialogueContext::listening("", "what is the weather"),
        DialogueContext::listening("what is the weather", "in Oslo?"),
        DialogueContext::speaking("mm", "It is sunny"),
        DialogueContext::speaking("Stop.", "It is sunny"),
    ] {
        let v = classify(model.as_ref(), &ctx).unwrap();
        println!("{:<9} {:<20} -> {} ({})", ctx.mode.as_str(), ctx.incoming_text, v.token, v.rationale);
    }
}
