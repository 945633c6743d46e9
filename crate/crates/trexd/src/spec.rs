//! Run-configuration JSON.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use trex_core::nn::{
    load_model, AnalyticGenerator, DatasetRecipe, Generator, MlpClassifier, TrainConfig, VaeModel,
};
use trex_core::samplers::{AnnealSchedule, HmcConfig, RwmConfig, SamplerConfig};
use trex_core::scene::{SceneGraph, ScenePrior};
use trex_core::targets::DEFAULT_SIGMA;
use trex_core::Tensor;

use crate::error::{spec_err, CliResult};

pub const SPEC_VERSION: u32 = 1;
pub const DEFAULT_LATENT_KEEP: usize = 2000;
pub const DEFAULT_SCENE_KEEP: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    HighConf,
    AmbiguousPair,
    UniformAmbiguous,
    Interpolate,
    Misclassify,
    NovelClass,
    CompareClassifiers,
    TestsetScan,
    Saliency,
}

impl Kind {
    pub fn is_sampling(self) -> bool {
        matches!(
            self,
            Kind::HighConf
                | Kind::AmbiguousPair
                | Kind::UniformAmbiguous
                | Kind::Interpolate
                | Kind::Misclassify
                | Kind::NovelClass
        )
    }
}

/// A checkpoint path, or an inline single-layer softmax model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Path(PathBuf),
    Linear {
        weight: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Identity {
        dim: usize,
    },
    Affine {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    LogisticWarp {
        w: Vec<f64>,
        b: Vec<f64>,
    },
    Vae {
        path: PathBuf,
    },
    Scene {
        #[serde(default)]
        prior: ScenePrior,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SaliencyInput {
    DatasetItem { dataset_index: usize },
    Scene { scene: SceneGraph },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaliencySpec {
    pub class: usize,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default = "default_saliency_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    pub input: SaliencyInput,
}

fn default_noise_std() -> f64 {
    0.1
}

fn default_saliency_samples() -> usize {
    50
}

fn default_holdout() -> f64 {
    0.2
}

fn default_chains() -> usize {
    1
}

fn default_labels_per_class() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub spec_version: u32,
    #[serde(default)]
    pub kind: Option<Kind>,
    #[serde(default)]
    pub classifier: Option<ModelRef>,
    #[serde(default)]
    pub classifier_b: Option<ModelRef>,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
    #[serde(default)]
    pub dataset: Option<DatasetRecipe>,
    /// Models to train, keyed by output name.
    #[serde(default)]
    pub train: BTreeMap<String, TrainConfig>,
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    #[serde(default)]
    pub classes: Vec<usize>,
    #[serde(default)]
    pub pairs: Vec<[usize; 2]>,
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub sampler: Option<SamplerConfig>,
    #[serde(default)]
    pub anneal: Option<AnnealSchedule>,
    #[serde(default)]
    pub n_keep: Option<usize>,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_labels_per_class")]
    pub labels_per_class: usize,
    #[serde(default)]
    pub saliency: Option<SaliencySpec>,
}

/// A parsed spec plus the directory its relative paths are resolved against.
#[derive(Clone, Debug)]
pub struct LoadedSpec {
    pub spec: RunSpec,
    pub base: PathBuf,
}

impl LoadedSpec {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| spec_err(format!("cannot read {}: {e}", path.display())))?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self::from_str(&text, base)
    }

    pub fn from_str(text: &str, base: PathBuf) -> CliResult<Self> {
        let spec: RunSpec = serde_json::from_str(text).map_err(|e| spec_err(e.to_string()))?;
        if spec.spec_version != SPEC_VERSION {
            return Err(spec_err(format!(
                "spec_version {} is not supported (expected {SPEC_VERSION})",
                spec.spec_version
            )));
        }
        Ok(LoadedSpec { spec, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn existing(&self, p: &Path) -> CliResult<PathBuf> {
        let full = self.resolve(p);
        if !full.is_file() {
            return Err(spec_err(format!(
                "referenced file {} does not exist",
                full.display()
            )));
        }
        Ok(full)
    }

    pub fn kind(&self) -> CliResult<Kind> {
        self.spec.kind.ok_or_else(|| spec_err("missing 'kind'"))
    }

    pub fn classifier(&self) -> CliResult<Arc<MlpClassifier>> {
        let r = self
            .spec
            .classifier
            .as_ref()
            .ok_or_else(|| spec_err("missing 'classifier'"))?;
        self.load_classifier(r)
    }

    pub fn classifier_b(&self) -> CliResult<Arc<MlpClassifier>> {
        let r = self
            .spec
            .classifier_b
            .as_ref()
            .ok_or_else(|| spec_err("missing 'classifier_b'"))?;
        self.load_classifier(r)
    }

    fn load_classifier(&self, r: &ModelRef) -> CliResult<Arc<MlpClassifier>> {
        let model = match r {
            ModelRef::Path(p) => load_model(self.existing(p)?)?.into_classifier()?,
            ModelRef::Linear { weight, bias } => MlpClassifier::linear(
                matrix(weight, "classifier weight")?,
                Tensor::vector(bias.clone())?,
            )?,
        };
        Ok(Arc::new(model))
    }

    pub fn generator_spec(&self) -> CliResult<&GeneratorSpec> {
        self.spec
            .generator
            .as_ref()
            .ok_or_else(|| spec_err("missing 'generator'"))
    }

    /// The continuous-latent generator; scene sources are handled separately.
    pub fn latent_generator(&self) -> CliResult<Generator> {
        let g = match self.generator_spec()? {
            GeneratorSpec::Identity { dim } => AnalyticGenerator::identity(*dim)?.into(),
            GeneratorSpec::Affine { a, b } => {
                AnalyticGenerator::affine(matrix(a, "generator A")?, Tensor::vector(b.clone())?)?
                    .into()
            }
            GeneratorSpec::LogisticWarp { w, b } => AnalyticGenerator::logistic_warp(
                Tensor::vector(w.clone())?,
                Tensor::vector(b.clone())?,
            )?
            .into(),
            GeneratorSpec::Vae { path } => Generator::Decoder(Arc::new(self.vae(path)?)),
            GeneratorSpec::Scene { .. } => {
                return Err(spec_err("a scene generator has no continuous latent space"))
            }
        };
        Ok(g)
    }

    pub fn vae(&self, path: &Path) -> CliResult<VaeModel> {
        Ok(load_model(self.existing(path)?)?.into_vae()?)
    }

    pub fn scene_prior(&self) -> Option<&ScenePrior> {
        match self.spec.generator.as_ref()? {
            GeneratorSpec::Scene { prior } => Some(prior),
            _ => None,
        }
    }

    pub fn dataset(&self) -> CliResult<&DatasetRecipe> {
        self.spec
            .dataset
            .as_ref()
            .ok_or_else(|| spec_err("missing dataset recipe 'dataset'"))
    }

    pub fn sigma(&self) -> CliResult<f64> {
        let s = self.spec.sigma.unwrap_or(DEFAULT_SIGMA);
        if !(s > 0.0) || !s.is_finite() {
            return Err(spec_err(format!("sigma must be positive, got {s}")));
        }
        Ok(s)
    }

    /// The configured sampler; RWM for scenes and HMC otherwise when unset.
    /// `seed` overrides the configured seed.
    pub fn sampler(&self, seed: Option<u64>) -> CliResult<SamplerConfig> {
        let scene = self.scene_prior().is_some();
        let cfg = match &self.spec.sampler {
            Some(c) => c.clone(),
            None if scene => SamplerConfig::Rwm(RwmConfig::default()),
            None => SamplerConfig::Hmc(HmcConfig::default()),
        };
        if scene && matches!(cfg, SamplerConfig::Hmc(_)) {
            return Err(spec_err(
                "scene generators are not differentiable; use the rwm sampler",
            ));
        }
        cfg.validate()?;
        Ok(match seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }

    pub fn n_keep(&self) -> usize {
        self.spec.n_keep.unwrap_or(if self.scene_prior().is_some() {
            DEFAULT_SCENE_KEEP
        } else {
            DEFAULT_LATENT_KEEP
        })
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> CliResult<Tensor> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(spec_err(format!(
            "{what} must be a non-empty rectangular matrix"
        )));
    }
    Ok(Tensor::matrix(r, c, rows.concat())?)
}
