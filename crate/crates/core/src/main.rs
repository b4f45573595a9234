//! `duplex` command line. Invoked through a link named `datagen` or
//! `evalkit`, it runs that tool directly.

use std::error::Error;
use std::ffi::OsString;
use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::warn;

use duplex_dm::classifier::{ContextWindow, Decider, RulePack};
use duplex_dm::datagen::{
    augment_punctuation, balance_report, clean_corpus, emit_scenario_testsets, generate_prompts, item_seed,
    lint_balance, post_process_corpus, synthesize_corpus, AugmentConfig, GenerationConfig, LabeledContext,
    PostProcessConfig, PromptSpec, TemplateBank,
};
use duplex_dm::eval::{
    hesitation_suite, metrics, render_cascade_table, render_table, run_cascade_sweep,
    run_scenario_suite, ConfusionMatrix, LabeledStream,
};
use duplex_dm::jsonl;
use duplex_dm::session::{
    inputs_from_log, inputs_from_stream, replay_corpus, run_session, serve, ReplayTiming, SessionConfig, SessionLog,
};
use duplex_dm::token::ControlToken;
use duplex_dm::transcript::{serialize_transcript, split_transcripts, Transcript};
use duplex_dm::vad::{GapProfile, TimedEventStream, REFERENCE_THRESHOLDS_MS};

type Res = Result<(), Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "duplex", version, about = "Full-duplex dialogue manager toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serve interactive sessions (NDJSON or WebSocket).
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8750")]
        listen: String,
        /// Write each finished session log here.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
    /// Run a recorded stream or session log through a session.
    Replay {
        #[arg(long, conflicts_with = "log", required_unless_present = "log")]
        stream: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        session: SessionArgs,
        /// Session log output (JSONL).
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Replay every transcript of a corpus and score the decisions.
    ReplayCorpus {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        session: SessionArgs,
        #[arg(long, default_value = "-")]
        out: PathBuf,
        /// Also write every per-transcript log as JSONL.
        #[arg(long)]
        logs: Option<PathBuf>,
    },
    #[command(subcommand)]
    Datagen(DatagenCmd),
    #[command(subcommand)]
    Evalkit(EvalCmd),
}

#[derive(Args)]
struct SessionArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's classifier.
    #[arg(long)]
    classifier: Option<String>,
    #[arg(long)]
    strict: bool,
}

impl SessionArgs {
    fn load(&self) -> Result<SessionConfig, Box<dyn Error>> {
        let mut cfg = match &self.config {
            Some(p) => SessionConfig::load(p)?,
            None => SessionConfig::default(),
        };
        if let Some(c) = &self.classifier {
            cfg.classifier = c.clone();
        }
        cfg.strict |= self.strict;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ClassifierArgs {
    /// rule, oracle, constant:<token> or external:<addr>
    #[arg(long, default_value = "rule")]
    classifier: String,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, default_value_t = 150)]
    budget_ms: u64,
}

impl ClassifierArgs {
    fn decider(&self) -> Result<Decider, Box<dyn Error>> {
        let rules = match &self.rules {
            Some(p) => RulePack::load(p)?,
            None => RulePack::default(),
        };
        Ok(Decider::from_spec(&self.classifier, &rules, Duration::from_millis(self.budget_ms))?)
    }
}

#[derive(Subcommand)]
enum DatagenCmd {
    /// Plan generation prompts.
    Prompts {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the balanced 20k-conversation mix.
        #[arg(long, conflicts_with = "config")]
        parity: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_conv: Option<usize>,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Render prompts into transcripts from the template bank.
    Synth {
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Add interruptions and incomplete queries to a plain corpus.
    Inject {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long, default_value_t = 0.10)]
        p_real: f64,
        #[arg(long, default_value_t = 0.15)]
        p_fake: f64,
        #[arg(long, default_value_t = 0.20)]
        p_incomplete: f64,
        /// Leave out the uninterrupted twins.
        #[arg(long)]
        no_twins: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Filter raw text transcripts (blank-line separated).
    Clean {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "-")]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Make user punctuation look like ASR output.
    Augment {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        p_strip: f64,
        #[arg(long, default_value_t = 0.25)]
        p_replace: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Sample labeled classification contexts per token.
    Testsets {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 1000)]
        per_scenario: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Validate externally generated text transcripts into a JSONL corpus.
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "-")]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a JSONL corpus in the text form.
    Export {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Category rates, with a warning above one half.
    Balance {
        #[arg(long)]
        corpus: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Score a classifier on labeled contexts.
    Suite {
        #[arg(long)]
        testsets: PathBuf,
        #[command(flatten)]
        classifier: ClassifierArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build hesitation streams from a corpus.
    Streams {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Acoustic endpointing refined by a classifier, per threshold.
    Cascade {
        #[arg(long)]
        streams: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = REFERENCE_THRESHOLDS_MS)]
        thresholds: Vec<u64>,
        #[arg(long, default_value_t = 100)]
        tick_ms: u64,
        #[command(flatten)]
        classifier: ClassifierArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics for a count matrix: rows separated by `;`, four or two labels.
    Metrics {
        #[arg(long)]
        counts: String,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Res {
    let mut w = jsonl::create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String, Box<dyn Error>> {
    let mut s = String::new();
    std::io::Read::read_to_string(&mut jsonl::open(path)?, &mut s)?;
    Ok(s)
}

fn datagen(cmd: DatagenCmd) -> Res {
    match cmd {
        DatagenCmd::Prompts { config, parity, seed, n_conv, out } => {
            let mut cfg = match config {
                Some(p) => GenerationConfig::load(&p)?,
                None if parity => GenerationConfig::parity_preset(),
                None => GenerationConfig::default(),
            };
            cfg.rng_seed = seed.unwrap_or(cfg.rng_seed);
            cfg.n_conv = n_conv.unwrap_or(cfg.n_conv);
            jsonl::write(&out, &generate_prompts(&cfg)?)?;
        }
        DatagenCmd::Synth { prompts, bank, seed, out } => {
            let prompts: Vec<PromptSpec> = jsonl::read(&prompts)?;
            let bank = bank.map(|p| TemplateBank::load(&p)).transpose()?.unwrap_or_default();
            jsonl::write(&out, &synthesize_corpus(&prompts, &bank, seed)?)?;
        }
        DatagenCmd::Inject { corpus, bank, p_real, p_fake, p_incomplete, no_twins, seed, out } => {
            let corpus: Vec<Transcript> = jsonl::read(&corpus)?;
            let bank = bank.map(|p| TemplateBank::load(&p)).transpose()?.unwrap_or_default();
            let cfg = PostProcessConfig { p_real, p_fake, p_incomplete, include_twins: !no_twins };
            jsonl::write(&out, &post_process_corpus(&corpus, &cfg, &bank, seed)?)?;
        }
        DatagenCmd::Clean { input, out, report } | DatagenCmd::Import { input, out, report } => {
            let raw = split_transcripts(&read_text(&input)?);
            let (kept, rep) = clean_corpus(&raw);
            eprintln!("kept {}/{} (retention {:.3})", rep.kept, rep.total, rep.retention_rate);
            jsonl::write(&out, &kept)?;
            if let Some(r) = report {
                write_json(&r, &rep)?;
            }
        }
        DatagenCmd::Augment { corpus, p_strip, p_replace, seed, out } => {
            let corpus: Vec<Transcript> = jsonl::read(&corpus)?;
            let cfg = AugmentConfig { p_strip, p_replace };
            let aug: Vec<Transcript> = corpus
                .iter()
                .enumerate()
                .map(|(i, t)| augment_punctuation(t, &cfg, item_seed(seed, i as u64)))
                .collect();
            jsonl::write(&out, &aug)?;
        }
        DatagenCmd::Testsets { corpus, per_scenario, seed, out } => {
            let corpus: Vec<Transcript> = jsonl::read(&corpus)?;
            let sets = emit_scenario_testsets(&corpus, per_scenario, ContextWindow::default(), seed)?;
            let flat: Vec<LabeledContext> = sets.into_values().flatten().collect();
            jsonl::write(&out, &flat)?;
        }
        DatagenCmd::Export { corpus, out } => {
            let corpus: Vec<Transcript> = jsonl::read(&corpus)?;
            let mut w = jsonl::create(&out)?;
            for t in &corpus {
                writeln!(w, "{}", serialize_transcript(t))?;
            }
            w.flush()?;
        }
        DatagenCmd::Balance { corpus } => {
            let corpus: Vec<Transcript> = jsonl::read(&corpus)?;
            let r = balance_report(&corpus);
            println!(
                "rounds {}  real {:.3}  fake {:.3}  incomplete {:.3}",
                r.rounds,
                r.rate(r.real),
                r.rate(r.fake),
                r.rate(r.incomplete)
            );
            lint_balance(&r);
        }
    }
    Ok(())
}

fn parse_counts(spec: &str) -> Result<ConfusionMatrix, Box<dyn Error>> {
    let rows: Vec<Vec<u64>> = spec
        .split(';')
        .map(|r| r.split(',').map(|c| c.trim().parse::<u64>()).collect::<Result<_, _>>())
        .collect::<Result<_, _>>()?;
    let labels: &[ControlToken] = match rows.len() {
        4 => &ControlToken::ALL,
        2 => &[ControlToken::ContinueListening, ControlToken::StartSpeaking],
        n => return Err(format!("expected 4 or 2 rows, got {n}").into()),
    };
    Ok(ConfusionMatrix::from_counts(labels, rows)?)
}

fn evalkit(cmd: EvalCmd) -> Res {
    match cmd {
        EvalCmd::Suite { testsets, classifier, out } => {
            let contexts: Vec<LabeledContext> = jsonl::read(&testsets)?;
            let report = run_scenario_suite(&contexts, &classifier.decider()?)?;
            print!("{}", render_table(&report.matrix, &report.metrics));
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
        }
        EvalCmd::Streams { corpus, seed, out } => {
            let corpus: Vec<Transcript> = jsonl::read(&corpus)?;
            jsonl::write(&out, &hesitation_suite(&corpus, &GapProfile::default(), seed)?)?;
        }
        EvalCmd::Cascade { streams, thresholds, tick_ms, classifier, out } => {
            let streams: Vec<LabeledStream> = jsonl::read(&streams)?;
            let report = run_cascade_sweep(&streams, &thresholds, tick_ms, &classifier.decider()?)?;
            print!("{}", render_cascade_table(&report));
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
        }
        EvalCmd::Metrics { counts } => {
            let m = parse_counts(&counts)?;
            let r = metrics(&m)?;
            print!("{}", render_table(&m, &r));
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Res {
    match cli.cmd {
        Cmd::Run { config, listen, log_dir, strict } => {
            let mut cfg = match config {
                Some(p) => SessionConfig::load(&p)?,
                None => SessionConfig::default(),
            };
            cfg.strict |= strict;
            if let Some(d) = &log_dir {
                std::fs::create_dir_all(d)?;
            }
            serve(TcpListener::bind(&listen)?, cfg, log_dir)?;
        }
        Cmd::Replay { stream, log, session, out } => {
            let cfg = session.load()?;
            let inputs = match (stream, log) {
                (Some(s), _) => inputs_from_stream(TimedEventStream::read_jsonl(jsonl::open(&s)?)?)?,
                (None, Some(l)) => inputs_from_log(&SessionLog::read_jsonl(jsonl::open(&l)?)?),
                (None, None) => unreachable!("clap requires one input"),
            };
            let log = run_session(&cfg, cfg.decider()?, cfg.cde()?, &inputs)?;
            let trace: Vec<&str> = log.token_trace().iter().map(|t| t.as_str()).collect();
            eprintln!("{}", trace.join(" "));
            let mut w = jsonl::create(&out)?;
            log.write_jsonl(&mut w)?;
            w.flush()?;
        }
        Cmd::ReplayCorpus { corpus, session, out, logs } => {
            let cfg = session.load()?;
            let corpus: Vec<Transcript> = jsonl::read(&corpus)?;
            let result = replay_corpus(&corpus, &cfg, &cfg.decider()?, ReplayTiming::default());
            for r in result.replays.iter().filter(|r| r.error.is_some()) {
                warn!("transcript {}: {}", r.index, r.error.as_deref().unwrap_or_default());
            }
            let rep = &result.report;
            eprintln!("{} transcripts, {} failed, {} exact traces", rep.transcripts, rep.failed, rep.exact_traces);
            if let (Some(m), Some(r)) = (&rep.matrix, &rep.metrics) {
                eprint!("{}", render_table(m, r));
            }
            write_json(&out, rep)?;
            if let Some(p) = logs {
                jsonl::write(&p, &result.replays)?;
            }
        }
        Cmd::Datagen(c) => datagen(c)?,
        Cmd::Evalkit(c) => evalkit(c)?,
    }
    Ok(())
}

/// `datagen x` and `evalkit x` become `duplex datagen x` and `duplex evalkit x`.
fn normalize_args(mut args: Vec<OsString>) -> Vec<OsString> {
    let tool = args
        .first()
        .and_then(|a| Path::new(a).file_stem())
        .and_then(|s| s.to_str())
        .filter(|s| matches!(*s, "datagen" | "evalkit"))
        .map(OsString::from);
    if let Some(tool) = tool {
        args.insert(1, tool);
    }
    args
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse_from(normalize_args(std::env::args_os().collect()));
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
