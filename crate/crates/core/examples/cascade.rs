//! Hesitation streams from a synthetic corpus, endpointed at each reference
//! threshold and refined by the rule classifier and by the oracle.

use duplex_dm::classifier::{Decider, RuleBasedClassifier};
use duplex_dm::datagen::{generate_prompts, synthesize_corpus, GenerationConfig, TemplateBank};
use duplex_dm::eval::{hesitation_suite, render_cascade_table, run_cascade_sweep};
use duplex_dm::vad::{GapProfile, REFERENCE_THRESHOLDS_MS};

fn main() {
    let cfg = GenerationConfig { n_conv: 200, p_incomplete: 0.4, ..Default::default() };
    let corpus = synthesize_corpus(&generate_prompts(&cfg).unwrap(), &TemplateBank::default(), 1).unwrap();
    let streams = hesitation_suite(&corpus, &GapProfile::default(), 1).unwrap();
    println!("{} streams", streams.len());
    for d in [Decider::model(RuleBasedClassifier::default()), Decider::Oracle] {
        let report = run_cascade_sweep(&streams, &REFERENCE_THRESHOLDS_MS, 100, &d).unwrap();
        println!("classifier: {}", report.classifier);
        print!("{}", render_cascade_table(&report));
    }
}
