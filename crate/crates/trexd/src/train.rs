//! `trexd train`: trains every model listed in the spec on one dataset recipe.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use trex_core::nn::{
    ambiguous_target, checkpoint_checksum, encode_checkpoint, kl_target_loss,
    train_ambiguous_classifier, train_classifier, train_vae, Checkpoint, DatasetRecipe, LossKind,
    MlpClassifier, SyntheticDataset, TrainConfig,
};

use crate::error::{spec_err, CliResult};
use crate::output::{hex, OutputSet};
use crate::parallel::parallel_map;
use crate::spec::LoadedSpec;
use crate::Outcome;

pub const CHECKPOINT_EXT: &str = "trexmdl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Held-out argmax accuracy (classifiers).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out_accuracy: Option<f64>,
    /// Mean held-out KL to the ambiguous targets (KL-trained classifiers).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out_kl: Option<f64>,
    /// Mean reconstruction cross-entropy before and after training (VAEs).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruction_initial: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruction_final: Option<f64>,
    pub final_train_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub file: String,
    pub sha256: String,
    pub config: TrainConfig,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub recipe: DatasetRecipe,
    pub holdout: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub models: BTreeMap<String, ModelEntry>,
}

/// Mean `KL(p_y ‖ f(x))` over a dataset.
pub fn mean_ambiguous_kl(clf: &MlpClassifier, data: &SyntheticDataset) -> CliResult<f64> {
    let k = clf.num_classes();
    let mut total = 0.0;
    for (x, &y) in data.inputs().iter().zip(data.labels()) {
        total += kl_target_loss(&ambiguous_target(y, k), clf.classify(x)?.data());
    }
    Ok(total / data.len() as f64)
}

fn train_one(
    cfg: &TrainConfig,
    train: &SyntheticDataset,
    test: &SyntheticDataset,
) -> CliResult<(Checkpoint, Metrics)> {
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    Ok(match cfg.loss {
        LossKind::CrossEntropy => {
            let (m, log) = train_classifier(train, cfg)?;
            let metrics = Metrics {
                held_out_accuracy: Some(m.accuracy(test)?),
                held_out_kl: None,
                reconstruction_initial: None,
                reconstruction_final: None,
                final_train_loss: last(&log.epoch_losses),
            };
            (m.into(), metrics)
        }
        LossKind::KlTarget => {
            let (m, log) = train_ambiguous_classifier(train, cfg)?;
            let metrics = Metrics {
                held_out_accuracy: Some(m.accuracy(test)?),
                held_out_kl: Some(mean_ambiguous_kl(&m, test)?),
                reconstruction_initial: None,
                reconstruction_final: None,
                final_train_loss: last(&log.epoch_losses),
            };
            (m.into(), metrics)
        }
        LossKind::Elbo => {
            let (m, log) = train_vae(train, cfg)?;
            let metrics = Metrics {
                held_out_accuracy: None,
                held_out_kl: None,
                reconstruction_initial: log.epoch_losses.first().copied(),
                reconstruction_final: log.epoch_losses.last().copied(),
                final_train_loss: last(&log.epoch_losses),
            };
            (m.into(), metrics)
        }
    })
}

pub fn cmd_train(spec: &LoadedSpec, seed: Option<u64>) -> CliResult<(OutputSet, Outcome)> {
    let recipe = spec.dataset()?.clone();
    if spec.spec.train.is_empty() {
        return Err(spec_err("missing 'train': nothing to train"));
    }
    let holdout = spec.spec.holdout;
    if !(0.0..1.0).contains(&holdout) {
        return Err(spec_err(format!(
            "holdout must lie in [0, 1), got {holdout}"
        )));
    }
    let mut jobs: Vec<(String, TrainConfig)> = spec.spec.train.clone().into_iter().collect();
    for (name, cfg) in jobs.iter_mut() {
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(spec_err(format!(
                "model name '{name}' is not a plain file name"
            )));
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate(cfg.loss)
            .map_err(|e| spec_err(e.to_string()))?;
    }

    let data = recipe.generate()?;
    let (train, test) = data.split(holdout);
    if train.is_empty() {
        return Err(trex_core::Error::EmptyDataset.into());
    }
    let trained = parallel_map(jobs.clone(), |(_, cfg)| train_one(&cfg, &train, &test));

    let mut out = OutputSet::default();
    let mut models = BTreeMap::new();
    for ((name, cfg), res) in jobs.into_iter().zip(trained) {
        let (model, metrics) = res?;
        let bytes = encode_checkpoint(&model);
        let file = format!("{name}.{CHECKPOINT_EXT}");
        let sha256 = hex(&checkpoint_checksum(&bytes)?);
        out.add(&file, bytes);
        models.insert(
            name,
            ModelEntry {
                file,
                sha256,
                config: cfg,
                metrics,
            },
        );
    }
    out.add_json(
        "manifest.json",
        &TrainManifest {
            recipe,
            holdout,
            n_train: train.len(),
            n_test: test.len(),
            models,
        },
    )?;
    Ok((out, Outcome::default()))
}
