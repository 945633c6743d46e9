//! `trexd saliency`: SmoothGrad maps and object-removal probes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use trex_core::nn::MlpClassifier;
use trex_core::samplers::format_float;
use trex_core::scene::{remove_object_probe, render, Rasterizer};
use trex_core::Tensor;

use crate::error::{spec_err, CliResult};
use crate::output::{pgm_bytes, square_side, OutputSet};
use crate::spec::{Kind, LoadedSpec, SaliencyInput};
use crate::Outcome;

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    /// Same shape as the input; every entry ≥ 0.
    pub values: Tensor,
    pub noise_std: f64,
    pub samples: usize,
}

/// `(1/n) Σ_k |∇_x f(x + ε_k)_class|` with `ε_k ~ N(0, s²I)` drawn from `seed`.
pub fn smooth_grad(
    clf: &MlpClassifier,
    x: &Tensor,
    class: usize,
    noise_std: f64,
    samples: usize,
    seed: u64,
) -> CliResult<SaliencyMap> {
    if samples == 0 {
        return Err(spec_err("saliency needs at least one sample"));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(spec_err(format!(
            "noise std must be non-negative, got {noise_std}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; x.len()];
    for _ in 0..samples {
        let noisy: Vec<f64> = x
            .data()
            .iter()
            .map(|&v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v + noise_std * e
            })
            .collect();
        let g = clf.input_gradient(&Tensor::new(x.shape().to_vec(), noisy)?, class)?;
        for (a, gi) in acc.iter_mut().zip(g.data()) {
            *a += gi.abs();
        }
    }
    let n = samples as f64;
    Ok(SaliencyMap {
        values: Tensor::new(x.shape().to_vec(), acc.into_iter().map(|a| a / n).collect())?,
        noise_std,
        samples,
    })
}

/// Rescales by the maximum so the largest value maps to 1.
pub fn normalized(map: &Tensor) -> CliResult<Tensor> {
    let m = map.max_abs();
    Ok(if m > 0.0 {
        map.map(|v| v / m)?
    } else {
        map.clone()
    })
}

#[derive(Serialize)]
struct SaliencyManifest {
    class: usize,
    noise_std: f64,
    samples: usize,
    seed: u64,
    confidence: Vec<f64>,
}

pub fn cmd_saliency(spec: &LoadedSpec, seed: Option<u64>) -> CliResult<(OutputSet, Outcome)> {
    let kind = spec.kind()?;
    if kind != Kind::Saliency {
        return Err(spec_err(format!(
            "saliency expects kind saliency, got {kind:?}"
        )));
    }
    let cfg = spec
        .spec
        .saliency
        .clone()
        .ok_or_else(|| spec_err("missing 'saliency' block"))?;
    let clf = spec.classifier()?;
    if cfg.class >= clf.num_classes() {
        return Err(spec_err(format!("class {} out of range", cfg.class)));
    }
    let side = square_side(clf.input_dim())
        .ok_or_else(|| spec_err("classifier input is not a square image"))?;
    let raster = Rasterizer { side };
    let (x, scene) = match &cfg.input {
        SaliencyInput::DatasetItem { dataset_index } => {
            let data = spec.dataset()?.generate()?;
            let (x, _) = data
                .item(*dataset_index)
                .ok_or_else(|| spec_err(format!("dataset has no item {dataset_index}")))?;
            (x.clone(), None)
        }
        SaliencyInput::Scene { scene } => (render(&raster, scene), Some(scene.clone())),
    };
    let x = x.reshape(vec![side * side])?;
    if x.len() != clf.input_dim() {
        return Err(spec_err("input size does not match the classifier"));
    }
    let seed = seed.unwrap_or(cfg.seed);
    let map = smooth_grad(&clf, &x, cfg.class, cfg.noise_std, cfg.samples, seed)?;
    let grid = map.values.reshape(vec![side, side])?;

    let mut out = OutputSet::default();
    out.add("saliency.pgm", pgm_bytes(&normalized(&grid)?)?);
    let mut csv = String::new();
    for row in grid.data().chunks(side) {
        let cells: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    out.add("saliency.csv", csv.into_bytes());
    out.add("input.pgm", pgm_bytes(&x.reshape(vec![side, side])?)?);
    if let Some(scene) = scene.filter(|s| s.len() >= 2) {
        let effects = remove_object_probe(&scene, &raster, &clf, cfg.class)?;
        let mut csv = String::from("object,confidence,drop\n");
        for e in effects {
            csv.push_str(&format!(
                "{},{},{}\n",
                e.index,
                format_float(e.confidence),
                format_float(e.drop)
            ));
        }
        out.add("removal.csv", csv.into_bytes());
    }
    out.add_json(
        "manifest.json",
        &SaliencyManifest {
            class: cfg.class,
            noise_std: cfg.noise_std,
            samples: cfg.samples,
            seed,
            confidence: clf.classify(&x)?.into_data(),
        },
    )?;
    Ok((out, Outcome::default()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_is_nonnegative_and_shape_congruent() {
        let clf = MlpClassifier::random(&[16, 8, 3], trex_core::Activation::Tanh, 2).unwrap();
        let x = Tensor::filled(&[16], 0.3);
        let m = smooth_grad(&clf, &x, 1, 0.1, 20, 7).unwrap();
        assert_eq!(m.values.shape(), x.shape());
        assert!(m.values.data().iter().all(|&v| v >= 0.0));
        assert_eq!(m, smooth_grad(&clf, &x, 1, 0.1, 20, 7).unwrap());
    }
}
