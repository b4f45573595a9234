use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{metrics, ConfusionMatrix, EvalError, MetricReport};
use crate::classifier::{classify, ClassifyError, Decider, DialogueContext};
use crate::datagen::item_seed;
use crate::machine::SEGMENT_SEPARATOR;
use crate::token::{ControlToken, Mode};
use crate::transcript::Transcript;
use crate::vad::{hesitation_stream_from_round, scan_endpoints, EndpointConfig, GapProfile, TimedEventStream};

const ENDPOINT_LABELS: [ControlToken; 2] = [ControlToken::ContinueListening, ControlToken::StartSpeaking];

/// A timed stream whose speech payloads carry ground-truth labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledStream {
    pub id: String,
    pub events: TimedEventStream,
}

/// One user turn per stream, for every round of every transcript.
pub fn hesitation_suite(corpus: &[Transcript], profile: &GapProfile, rng_seed: u64) -> Result<Vec<LabeledStream>, EvalError> {
    let rounds: Vec<(usize, &crate::transcript::Round)> =
        corpus.iter().enumerate().flat_map(|(i, t)| t.rounds.iter().map(move |r| (i, r))).collect();
    rounds
        .par_iter()
        .enumerate()
        .map(|(k, (i, r))| {
            let events = hesitation_stream_from_round(r, profile, item_seed(rng_seed, k as u64))?;
            Ok(LabeledStream { id: format!("t{i}r{}", r.index), events })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeRow {
    pub threshold_ms: u64,
    pub candidates: u64,
    /// The acoustic stage alone: every candidate is taken as `S-S`.
    pub acoustic: ConfusionMatrix,
    pub refined: ConfusionMatrix,
    pub acoustic_metrics: MetricReport,
    pub refined_metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeReport {
    pub classifier: String,
    pub tick_ms: u64,
    pub rows: Vec<CascadeRow>,
}

fn refine_stream(
    index: usize,
    ls: &LabeledStream,
    cfg: &EndpointConfig,
    decider: &Decider,
) -> Result<(ConfusionMatrix, ConfusionMatrix), EvalError> {
    let scan = scan_endpoints(&ls.events, cfg)?;
    let mut acoustic = ConfusionMatrix::zeros(&ENDPOINT_LABELS);
    let mut refined = ConfusionMatrix::zeros(&ENDPOINT_LABELS);
    let mut cached: Vec<String> = Vec::new();
    for cand in &scan.candidates {
        let gt = match cand.labels.last() {
            Some(&t) if ENDPOINT_LABELS.contains(&t) => t,
            other => {
                return Err(EvalError::Alignment {
                    index,
                    msg: format!("{}: candidate at {} ms has label {other:?}", ls.id, cand.t),
                })
            }
        };
        let est = match decider {
            Decider::Oracle => gt,
            Decider::Model(c) => {
                let ctx = DialogueContext::listening(cached.join(SEGMENT_SEPARATOR), cand.text.clone());
                let v = classify(c.as_ref(), &ctx).map_err(|source| EvalError::Classifier { index, source })?;
                if !v.token.is_legal_in(Mode::Listening) {
                    let source = ClassifyError::Protocol(format!("{} is not an endpoint decision", v.token));
                    return Err(EvalError::Classifier { index, source });
                }
                v.token
            }
        };
        acoustic.add(gt, ControlToken::StartSpeaking)?;
        refined.add(gt, est)?;
        if est == ControlToken::ContinueListening {
            cached.push(cand.text.clone());
        } else {
            cached.clear();
        }
    }
    Ok((acoustic, refined))
}

/// Runs the acoustic stage at one threshold, then lets `decider` relabel
/// every endpoint candidate as `C-L` or `S-S`.
pub fn run_cascade(streams: &[LabeledStream], cfg: &EndpointConfig, decider: &Decider) -> Result<CascadeRow, EvalError> {
    cfg.validate()?;
    let parts: Vec<(ConfusionMatrix, ConfusionMatrix)> = streams
        .par_iter()
        .enumerate()
        .map(|(i, s)| refine_stream(i, s, cfg, decider))
        .collect::<Result<_, _>>()?;
    let mut acoustic = ConfusionMatrix::zeros(&ENDPOINT_LABELS);
    let mut refined = ConfusionMatrix::zeros(&ENDPOINT_LABELS);
    for (a, r) in &parts {
        acoustic.merge(a)?;
        refined.merge(r)?;
    }
    Ok(CascadeRow {
        threshold_ms: cfg.silence_threshold_ms,
        candidates: acoustic.total(),
        acoustic_metrics: metrics(&acoustic)?,
        refined_metrics: metrics(&refined)?,
        acoustic,
        refined,
    })
}

pub fn run_cascade_sweep(
    streams: &[LabeledStream],
    thresholds: &[u64],
    tick_ms: u64,
    decider: &Decider,
) -> Result<CascadeReport, EvalError> {
    let rows = thresholds
        .iter()
        .map(|&th| run_cascade(streams, &EndpointConfig::new(th, tick_ms)?, decider))
        .collect::<Result<_, _>>()?;
    Ok(CascadeReport { classifier: decider.name().to_string(), tick_ms, rows })
}

/// Text table: per threshold, the acoustic counts, the refined counts and
/// the refined metrics.
pub fn render_cascade_table(report: &CascadeReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10}{:<9}| {:>8}{:>8} | {:>8}{:>8}{:>8}{:>10}{:>8}{:>10}",
        "Threshold", "GT\\Est", "C-L", "S-S", "C-L", "S-S", "Recall", "Precision", "F1", "Accuracy"
    );
    for row in &report.rows {
        for (i, label) in ENDPOINT_LABELS.iter().enumerate() {
            let c = &row.refined_metrics.classes[i];
            let head = if i == 0 { format!("{} ms", row.threshold_ms) } else { String::new() };
            let acc = if i == 0 { format!("{:.3}", row.refined_metrics.accuracy) } else { String::new() };
            let _ = writeln!(
                s,
                "{:<10}{:<9}| {:>8}{:>8} | {:>8}{:>8}{:>8.3}{:>10.3}{:>8.3}{:>10}",
                head,
                label.as_str(),
                row.acoustic.counts[i][0],
                row.acoustic.counts[i][1],
                row.refined.counts[i][0],
                row.refined.counts[i][1],
                c.recall,
                c.precision,
                c.f1,
                acc
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ConstantClassifier;
    use crate::transcript::parse_transcript;
    use crate::vad::REFERENCE_THRESHOLDS_MS;

    fn corpus() -> Vec<Transcript> {
        let t = parse_transcript(
            "Round 1 (normal); User: please book a flight <|C-L|> to Paris tomorrow; Sys: <|S-S|> Done. <|S-L|>\n\
             Round 2 (normal); User: and a hotel <|C-L|> near the <|C-L|> station please; Sys: <|S-S|> Sure. <|S-L|>\n",
        )
        .unwrap();
        vec![t; 20]
    }

    #[test]
    fn oracle_refines_perfectly() {
        let streams = hesitation_suite(&corpus(), &GapProfile::default(), 3).unwrap();
        let report = run_cascade_sweep(&streams, &REFERENCE_THRESHOLDS_MS, 100, &Decider::Oracle).unwrap();
        for row in &report.rows {
            assert_eq!(row.refined_metrics.accuracy, 1.0);
            assert!(row.refined_metrics.accuracy >= row.acoustic_metrics.accuracy);
            assert_eq!(row.acoustic.col_sum(0), 0);
            // Every turn ends with exactly one completion.
            assert_eq!(row.acoustic.row_sum(1), 40);
        }
        let counts: Vec<_> = report.rows.iter().map(|r| r.candidates).collect();
        assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
        let table = render_cascade_table(&report);
        assert!(table.contains("300 ms") && table.contains("1800 ms"));
    }

    #[test]
    fn constant_start_speaking_is_the_acoustic_baseline() {
        let streams = hesitation_suite(&corpus(), &GapProfile::default(), 3).unwrap();
        let d = Decider::model(ConstantClassifier(ControlToken::StartSpeaking));
        for th in REFERENCE_THRESHOLDS_MS {
            let row = run_cascade(&streams, &EndpointConfig::new(th, 100).unwrap(), &d).unwrap();
            assert_eq!(row.refined, row.acoustic);
        }
    }

    #[test]
    fn unlabeled_candidates_fail_alignment() {
        let events = TimedEventStream::new(vec![
            crate::vad::TimedEvent::speech(0, "hello"),
            crate::vad::TimedEvent::silence(1, 1000),
        ]);
        let ls = LabeledStream { id: "x".into(), events };
        let err = run_cascade(&[ls], &EndpointConfig::default(), &Decider::Oracle).unwrap_err();
        assert!(matches!(err, EvalError::Alignment { index: 0, .. }));
    }
}
