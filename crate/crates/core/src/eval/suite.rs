use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{confusion, metrics, ConfusionMatrix, EvalError, MetricReport};
use crate::classifier::{classify, oracle_classify, ClassifierVerdict, Decider};
use crate::datagen::LabeledContext;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub classifier: String,
    pub matrix: ConfusionMatrix,
    pub metrics: MetricReport,
    /// How often each rationale decided.
    pub rationales: BTreeMap<String, u64>,
}

/// Classifies every context and scores the predictions against the labels.
/// Contexts are classified in parallel; results are gathered in input order.
pub fn run_scenario_suite(contexts: &[LabeledContext], decider: &Decider) -> Result<SuiteReport, EvalError> {
    let verdicts: Vec<ClassifierVerdict> = contexts
        .par_iter()
        .enumerate()
        .map(|(index, lc)| {
            match decider {
                Decider::Oracle => oracle_classify(&lc.context, &lc.round),
                Decider::Model(c) => classify(c.as_ref(), &lc.context),
            }
            .map_err(|source| EvalError::Classifier { index, source })
        })
        .collect::<Result<_, _>>()?;
    let gt: Vec<_> = contexts.iter().map(|c| c.label).collect();
    let est: Vec<_> = verdicts.iter().map(|v| v.token).collect();
    let matrix = confusion(&gt, &est)?;
    let mut rationales = BTreeMap::new();
    for v in &verdicts {
        *rationales.entry(v.rationale.clone()).or_default() += 1;
    }
    Ok(SuiteReport { classifier: decider.name().to_string(), metrics: metrics(&matrix)?, matrix, rationales })
}
