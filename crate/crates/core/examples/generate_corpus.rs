//! Plans prompts, renders transcripts, post-processes a plain corpus and
//! cleans a partly corrupted batch.

use duplex_dm::datagen::{
    balance_report, clean_corpus, generate_prompts, post_process_corpus, synthesize_corpus, uninterrupted_twin,
    Corruption, GenerationConfig, PostProcessConfig, TemplateBank,
};

fn main() {
    let cfg = GenerationConfig { n_conv: 50, ..Default::default() };
    let prompts = generate_prompts(&cfg).unwrap();
    let bank = TemplateBank::default();
    let corpus = synthesize_corpus(&prompts, &bank, 7).unwrap();
    println!("{}", corpus[0].to_text());

    let r = balance_report(&corpus);
    println!("rounds {} real {} fake {} incomplete {}", r.rounds, r.real, r.fake, r.incomplete);

    let plain: Vec<_> = corpus.iter().map(uninterrupted_twin).collect();
    let processed = post_process_corpus(&plain, &PostProcessConfig::default(), &bank, 7).unwrap();
    println!("post-processed {} plain transcripts into {}", plain.len(), processed.len());

    let mut raw: Vec<String> = corpus.iter().map(|t| t.to_text()).collect();
    for (i, c) in Corruption::ALL.iter().enumerate() {
        raw.push(c.apply(&corpus[i]));
    }
    let (kept, report) = clean_corpus(&raw);
    println!("kept {} of {} ({:.3})", kept.len(), report.total, report.retention_rate);
    for rej in report.rejections.iter().take(3) {
        println!("  #{} {}: {}", rej.index, rej.reason.code(), rej.detail);
    }
}
