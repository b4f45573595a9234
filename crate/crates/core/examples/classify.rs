//! Rule-based decisions for the four interaction scenarios.

use duplex_dm::classifier::{classify, DialogueContext, RuleBasedClassifier};

fn main() {
    let rules = RuleBasedClassifier::default();
    let cases = [
        DialogueContext::listening("", "How do I get to"),
        DialogueContext::listening("How do I get to", "the airport?"),
        DialogueContext::speaking("uh-huh", "The train leaves every ten minutes"),
        DialogueContext::speaking("no, stop, what about a taxi?", "The train leaves every ten minutes"),
    ];
    for ctx in &cases {
        let v = classify(&rules, ctx).unwrap();
        println!("{:<9} {:<32} -> {} ({}, {:.2})", ctx.mode.as_str(), ctx.incoming_text, v.token, v.rationale, v.confidence);
    }
}
