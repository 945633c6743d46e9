//! `trexd scan`: ambiguous items and confident misclassifications in a labelled test set.

use serde::{Deserialize, Serialize};
use trex_core::nn::{MlpClassifier, SyntheticDataset};
use trex_core::Error;

use crate::error::{spec_err, CliResult};
use crate::output::OutputSet;
use crate::spec::{Kind, LoadedSpec};
use crate::Outcome;

pub const AMBIGUOUS_BAND: (f64, f64) = (0.40, 0.60);
pub const MISCLASSIFICATION_CONFIDENCE: f64 = 0.85;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub pair: [usize; 2],
    pub count: usize,
    pub items: Vec<usize>,
}

/// Confident misclassifications grouped by predicted class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class: usize,
    pub count: usize,
    pub items: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub n_items: usize,
    pub ambiguous: Vec<PairCount>,
    pub misclassified: Vec<ClassCount>,
}

/// The pair `(i, j)`, `i < j`, when the two largest confidences both lie in
/// `[0.40, 0.60]` and every other confidence is below 0.40.
pub fn ambiguous_pair(conf: &[f64]) -> Option<(usize, usize)> {
    if conf.len() < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| conf[b].total_cmp(&conf[a]).then(a.cmp(&b)));
    let (a, b) = (order[0], order[1]);
    let in_band = |v: f64| (AMBIGUOUS_BAND.0..=AMBIGUOUS_BAND.1).contains(&v);
    let rest_low = order[2..].iter().all(|&c| conf[c] < AMBIGUOUS_BAND.0);
    (in_band(conf[a]) && in_band(conf[b]) && rest_low).then_some((a.min(b), a.max(b)))
}

/// Predicted class when the prediction is wrong with confidence at least 0.85.
pub fn confident_misclassification(conf: &[f64], label: usize) -> Option<usize> {
    let pred = (0..conf.len()).max_by(|&a, &b| conf[a].total_cmp(&conf[b]).then(b.cmp(&a)))?;
    (pred != label && conf[pred] >= MISCLASSIFICATION_CONFIDENCE).then_some(pred)
}

pub fn scan(clf: &MlpClassifier, data: &SyntheticDataset) -> CliResult<ScanReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let k = clf.num_classes();
    if data.num_classes() > k || data.input_dim() != clf.input_dim() {
        return Err(spec_err(
            "test set does not match the classifier's inputs or classes",
        ));
    }
    let mut ambiguous: Vec<PairCount> = (0..k)
        .flat_map(|i| {
            (i + 1..k).map(move |j| PairCount {
                pair: [i, j],
                count: 0,
                items: Vec::new(),
            })
        })
        .collect();
    let mut misclassified: Vec<ClassCount> = (0..k)
        .map(|class| ClassCount {
            class,
            count: 0,
            items: Vec::new(),
        })
        .collect();
    let pair_slot = |i: usize, j: usize| i * k - i * (i + 1) / 2 + (j - i - 1);
    for (idx, (x, &label)) in data.inputs().iter().zip(data.labels()).enumerate() {
        let conf = clf.classify(x)?;
        if let Some((i, j)) = ambiguous_pair(conf.data()) {
            let slot = &mut ambiguous[pair_slot(i, j)];
            slot.count += 1;
            slot.items.push(idx);
        }
        if let Some(pred) = confident_misclassification(conf.data(), label) {
            misclassified[pred].count += 1;
            misclassified[pred].items.push(idx);
        }
    }
    Ok(ScanReport {
        n_items: data.len(),
        ambiguous,
        misclassified,
    })
}

pub fn cmd_scan(spec: &LoadedSpec) -> CliResult<(OutputSet, Outcome)> {
    let kind = spec.kind()?;
    if kind != Kind::TestsetScan {
        return Err(spec_err(format!(
            "scan expects kind testset_scan, got {kind:?}"
        )));
    }
    let recipe = spec.dataset()?.clone();
    let clf = spec.classifier()?;
    let data = recipe.generate()?;
    let report = scan(&clf, &data)?;
    let mut out = OutputSet::default();
    out.add_json("scan.json", &report)?;
    Ok((out, Outcome::default()))
}
