//! `trexd compare`: high-confidence accuracy of two classifiers over the same generator.

use std::sync::Arc;

use serde::Serialize;
use trex_core::nn::{glyph_prototypes, Generator, MlpClassifier, GLYPH_CLASSES};
use trex_core::targets::{RelaxedPosterior, TargetSpec};
use trex_core::Tensor;

use crate::error::{spec_err, CliResult};
use crate::output::{spread_indices, OutputSet};
use crate::sample::{execute, ChainPlan, RunPlan};
use crate::spec::{GeneratorSpec, Kind, LoadedSpec};
use crate::Outcome;

/// Index of the closest prototype in squared pixel distance.
pub fn nearest_prototype(x: &Tensor, prototypes: &[Tensor]) -> usize {
    let dist = |p: &Tensor| -> f64 {
        p.data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    (0..prototypes.len())
        .min_by(|&a, &b| dist(&prototypes[a]).total_cmp(&dist(&prototypes[b])))
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassifierRow {
    pub model: String,
    /// Fraction of labelled samples whose oracle label matches the targeted class.
    pub per_class: Vec<f64>,
    pub all: f64,
    pub failed_classes: Vec<usize>,
}

pub fn comparison_csv(rows: &[ClassifierRow]) -> Vec<u8> {
    let k = rows.first().map_or(0, |r| r.per_class.len());
    let mut s = String::from("model");
    for c in 0..k {
        s.push_str(&format!(",{c}"));
    }
    s.push_str(",All\n");
    for r in rows {
        s.push_str(&r.model);
        for v in &r.per_class {
            s.push_str(&format!(",{v:.4}"));
        }
        s.push_str(&format!(",{:.4}\n", r.all));
    }
    s.into_bytes()
}

fn score(
    name: &str,
    clf: Arc<MlpClassifier>,
    generator: &Generator,
    prototypes: &[Tensor],
    spec: &LoadedSpec,
    plan: &ChainPlan,
) -> CliResult<ClassifierRow> {
    let k = clf.num_classes();
    let sigma = spec.sigma()?;
    let runs: Vec<RunPlan> = (0..k)
        .map(|c| RunPlan {
            name: format!("class_{c}"),
            target: TargetSpec::HighConfidence { class: c, sigma },
        })
        .collect();
    let post = RelaxedPosterior::new(generator.clone(), clf, runs[0].target.clone())?;
    let results = execute(&post, &runs, plan)?;
    let mut per_class = Vec::with_capacity(k);
    let (mut correct, mut total) = (0usize, 0usize);
    let mut failed_classes = Vec::new();
    for (c, res) in results.iter().enumerate() {
        if !res.success {
            failed_classes.push(c);
        }
        let picks = spread_indices(res.states.len(), spec.spec.labels_per_class);
        let mut hits = 0;
        for &i in &picks {
            let x = generator.generate(&res.states[i])?;
            if nearest_prototype(&x, prototypes) == c {
                hits += 1;
            }
        }
        per_class.push(hits as f64 / picks.len().max(1) as f64);
        correct += hits;
        total += picks.len();
    }
    Ok(ClassifierRow {
        model: name.to_string(),
        per_class,
        all: correct as f64 / total.max(1) as f64,
        failed_classes,
    })
}

pub fn cmd_compare(spec: &LoadedSpec, seed: Option<u64>) -> CliResult<(OutputSet, Outcome)> {
    let kind = spec.kind()?;
    if kind != Kind::CompareClassifiers {
        return Err(spec_err(format!(
            "compare expects kind compare_classifiers, got {kind:?}"
        )));
    }
    if !matches!(spec.generator_spec()?, GeneratorSpec::Vae { .. }) {
        return Err(spec_err(
            "compare labels samples against glyph prototypes and needs a VAE generator",
        ));
    }
    if spec.spec.labels_per_class == 0 {
        return Err(spec_err("labels_per_class must be at least 1"));
    }
    let a = spec.classifier()?;
    let b = spec.classifier_b()?;
    let generator = spec.latent_generator()?;
    if a.input_dim() != b.input_dim() || a.input_dim() != generator.output_dim() {
        return Err(spec_err(format!(
            "incompatible input dimensions: classifiers read {} and {}, generator emits {}",
            a.input_dim(),
            b.input_dim(),
            generator.output_dim()
        )));
    }
    if a.num_classes() != b.num_classes() || a.num_classes() > GLYPH_CLASSES {
        return Err(spec_err(
            "classifiers must share a class count of at most 10",
        ));
    }
    let side = crate::output::square_side(generator.output_dim())
        .ok_or_else(|| spec_err("generator output is not a square image"))?;
    let prototypes: Vec<Tensor> = glyph_prototypes(side)
        .into_iter()
        .take(a.num_classes())
        .map(|p| p.reshape(vec![side * side]))
        .collect::<trex_core::Result<_>>()?;
    let plan = ChainPlan::from_spec(spec, seed)?;

    let rows = vec![
        score("a", a, &generator, &prototypes, spec, &plan)?,
        score("b", b, &generator, &prototypes, spec, &plan)?,
    ];
    let mut out = OutputSet::default();
    out.add("comparison.csv", comparison_csv(&rows));
    out.add_json("manifest.json", &rows)?;
    Ok((out, Outcome::default()))
}
