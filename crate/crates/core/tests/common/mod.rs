#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener};
use std::thread;
use std::time::Duration;

use duplex_dm::classifier::DialogueContext;
use duplex_dm::datagen::{generate_prompts, synthesize_corpus, GenerationConfig, TemplateBank};
use duplex_dm::transcript::Transcript;

pub fn synth_corpus(n_conv: usize, seed: u64) -> Vec<Transcript> {
    let cfg = GenerationConfig { n_conv, rng_seed: seed, ..Default::default() };
    synthesize_corpus(&generate_prompts(&cfg).unwrap(), &TemplateBank::default(), seed).unwrap()
}

/// What the fake model does with one request.
pub enum Reply {
    Line(String),
    Sleep(Duration, String),
    Hangup,
}

/// Serves the external-model protocol on a loopback port, answering each
/// request with `script(context)`. Serves any number of connections.
pub fn fake_model<F>(script: F) -> SocketAddr
where
    F: Fn(&DialogueContext) -> Reply + Send + Sync + Clone + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { return };
            let script = script.clone();
            thread::spawn(move || {
                let reader = BufReader::new(stream.try_clone().unwrap());
                for line in reader.lines() {
                    let Ok(line) = line else { return };
                    let ctx: DialogueContext = serde_json::from_str(&line).expect("request is a context");
                    let reply = match script(&ctx) {
                        Reply::Line(l) => l,
                        Reply::Sleep(d, l) => {
                            thread::sleep(d);
                            l
                        }
                        Reply::Hangup => return,
                    };
                    if writeln!(stream, "{reply}").is_err() {
                        return;
                    }
                }
            });
        }
    });
    addr
}
