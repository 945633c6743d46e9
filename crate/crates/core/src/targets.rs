//! Relaxed level-set likelihoods and the latent-space posterior built on them.
//!
//! Each target observes a scalar (or vector) expression of the classifier's
//! confidences through Gaussian noise and conditions on a starred value:
//!
//! | variant            | observation(s)                                       | starred |
//! |--------------------|------------------------------------------------------|---------|
//! | `GeneralVector`    | `f_k` for every class                                 | `p_k`   |
//! | `HighConfidence`   | `f_i`                                                 | `1`     |
//! | `AmbiguousPair`    | `|f_i − f_j|`, `min(f_i, f_j) − max_{k≠i,j} f_k`      | `0`, `½`|
//! | `UniformAmbiguous` | `max_k f_k − min_k f_k`                               | `0`     |
//!
//! Gaussian normalising constants are kept so values stay comparable across σ.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Generator, MlpClassifier};
use crate::samplers::{Evaluation, Posterior, RwmConfig};
use crate::tensor::Tensor;

pub const DEFAULT_SIGMA: f64 = 0.05;
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "params")]
pub enum TargetSpec {
    GeneralVector {
        p: Vec<f64>,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    HighConfidence {
        class: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    AmbiguousPair {
        i: usize,
        j: usize,
        #[serde(default = "default_sigma")]
        sigma1: f64,
        #[serde(default = "default_sigma")]
        sigma2: f64,
    },
    UniformAmbiguous {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

/// One Gaussian observation: the expression's value, its starred value and width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub value: f64,
    pub target: f64,
    pub sigma: f64,
}

/// `log N(x; mean, σ²)` including the normalising constant.
pub fn log_normal_density(x: f64, mean: f64, sigma: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI).ln() - sigma.ln() - d * d / (2.0 * sigma * sigma)
}

/// Fails unless `conf` is a probability vector within [`SIMPLEX_TOLERANCE`].
pub fn check_simplex(conf: &[f64]) -> Result<()> {
    let sum: f64 = conf.iter().sum();
    let min = conf.iter().cloned().fold(f64::INFINITY, f64::min);
    if conf.is_empty() || (sum - 1.0).abs() > SIMPLEX_TOLERANCE || min < -SIMPLEX_TOLERANCE {
        return Err(Error::NotOnSimplex { sum, min });
    }
    Ok(())
}

impl TargetSpec {
    pub fn high_confidence(class: usize) -> Self {
        TargetSpec::HighConfidence {
            class,
            sigma: DEFAULT_SIGMA,
        }
    }

    pub fn ambiguous_pair(i: usize, j: usize) -> Self {
        TargetSpec::AmbiguousPair {
            i,
            j,
            sigma1: DEFAULT_SIGMA,
            sigma2: DEFAULT_SIGMA,
        }
    }

    /// Checks the widths and that every class index fits `k` classes.
    pub fn validate(&self, k: usize) -> Result<()> {
        let sigmas_ok = self.sigmas().iter().all(|s| *s > 0.0 && s.is_finite());
        if !sigmas_ok {
            return Err(Error::Config(
                "target widths must be positive and finite".into(),
            ));
        }
        match self {
            TargetSpec::GeneralVector { p, .. } => {
                if p.len() != k {
                    return Err(Error::Config(format!(
                        "target vector has {} entries for {k} classes",
                        p.len()
                    )));
                }
                check_simplex(p)
            }
            TargetSpec::HighConfidence { class, .. } if *class >= k => Err(Error::Config(format!(
                "class {class} out of range for K={k}"
            ))),
            TargetSpec::AmbiguousPair { i, j, .. } => {
                if i == j {
                    Err(Error::Config(
                        "ambiguous pair needs two distinct classes".into(),
                    ))
                } else if *i >= k || *j >= k {
                    Err(Error::Config(format!(
                        "pair ({i}, {j}) out of range for K={k}"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn sigmas(&self) -> Vec<f64> {
        match self {
            TargetSpec::GeneralVector { sigma, .. }
            | TargetSpec::HighConfidence { sigma, .. }
            | TargetSpec::UniformAmbiguous { sigma } => vec![*sigma],
            TargetSpec::AmbiguousPair { sigma1, sigma2, .. } => vec![*sigma1, *sigma2],
        }
    }

    /// The relaxation width; for pairs, the first observation's width.
    pub fn sigma(&self) -> f64 {
        self.sigmas()[0]
    }

    /// Same target with every width replaced by `sigma`.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        let mut t = self.clone();
        match &mut t {
            TargetSpec::GeneralVector { sigma: s, .. }
            | TargetSpec::HighConfidence { sigma: s, .. }
            | TargetSpec::UniformAmbiguous { sigma: s } => *s = sigma,
            TargetSpec::AmbiguousPair { sigma1, sigma2, .. } => {
                *sigma1 = sigma;
                *sigma2 = sigma;
            }
        }
        t
    }

    /// Classes whose confidence is reported in summaries.
    pub fn tracked_classes(&self, k: usize) -> Vec<usize> {
        match self {
            TargetSpec::GeneralVector { p, .. } => (0..p.len()).filter(|&c| p[c] > 0.0).collect(),
            TargetSpec::HighConfidence { class, .. } => vec![*class],
            TargetSpec::AmbiguousPair { i, j, .. } => vec![*i, *j],
            TargetSpec::UniformAmbiguous { .. } => (0..k).collect(),
        }
    }

    /// The observed expressions for confidences `conf`.
    pub fn observations(&self, conf: &[f64]) -> Vec<Observation> {
        match self {
            TargetSpec::GeneralVector { p, sigma } => conf
                .iter()
                .zip(p)
                .map(|(&f, &pk)| Observation {
                    value: f,
                    target: pk,
                    sigma: *sigma,
                })
                .collect(),
            TargetSpec::HighConfidence { class, sigma } => vec![Observation {
                value: conf[*class],
                target: 1.0,
                sigma: *sigma,
            }],
            TargetSpec::AmbiguousPair {
                i,
                j,
                sigma1,
                sigma2,
            } => {
                let (fi, fj) = (conf[*i], conf[*j]);
                // Empty max (K = 2) is taken as 0.
                let rest = conf
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| k != i && k != j)
                    .map(|(_, &f)| f)
                    .fold(None, |m: Option<f64>, f| Some(m.map_or(f, |m| m.max(f))))
                    .unwrap_or(0.0);
                vec![
                    Observation {
                        value: (fi - fj).abs(),
                        target: 0.0,
                        sigma: *sigma1,
                    },
                    Observation {
                        value: fi.min(fj) - rest,
                        target: 0.5,
                        sigma: *sigma2,
                    },
                ]
            }
            TargetSpec::UniformAmbiguous { sigma } => {
                let max = conf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = conf.iter().cloned().fold(f64::INFINITY, f64::min);
                vec![Observation {
                    value: max - min,
                    target: 0.0,
                    sigma: *sigma,
                }]
            }
        }
    }

    /// `log p(u = u* | f)` for a confidence vector on the simplex.
    pub fn log_likelihood(&self, conf: &Tensor) -> Result<f64> {
        check_simplex(conf.data())?;
        self.validate(conf.len())?;
        Ok(self
            .observations(conf.data())
            .iter()
            .map(|o| log_normal_density(o.target, o.value, o.sigma))
            .sum())
    }

    /// Records the log-likelihood for a confidence node (any shape with `K` entries).
    pub fn log_likelihood_on(&self, tape: &mut Tape, conf: Var) -> Result<Var> {
        let k = tape.value(conf).len();
        self.validate(k)?;
        let c = -0.5 * (2.0 * PI).ln();
        let gaussian = |tape: &mut Tape, value: Var, target: f64, sigma: f64| -> Result<Var> {
            // log N(target; value, σ²) summed over the entries of `value`.
            let n = tape.value(value).len() as f64;
            let d = tape.offset(value, -target)?;
            let d2 = tape.square(d)?;
            let s = tape.sum(d2)?;
            let s = tape.scale(s, -1.0 / (2.0 * sigma * sigma))?;
            tape.offset(s, n * (c - sigma.ln()))
        };
        match self {
            TargetSpec::GeneralVector { p, sigma } => {
                let flat = tape.reshape(conf, vec![k])?;
                let pv = tape.constant(Tensor::vector(p.clone())?);
                let d = tape.sub(flat, pv)?;
                gaussian(tape, d, 0.0, *sigma)
            }
            TargetSpec::HighConfidence { class, sigma } => {
                let fi = tape.index(conf, *class)?;
                gaussian(tape, fi, 1.0, *sigma)
            }
            TargetSpec::AmbiguousPair {
                i,
                j,
                sigma1,
                sigma2,
            } => {
                let fi = tape.index(conf, *i)?;
                let fj = tape.index(conf, *j)?;
                let diff = tape.sub(fi, fj)?;
                let gap = tape.abs(diff)?;
                let first = gaussian(tape, gap, 0.0, *sigma1)?;
                let pair = tape.gather(conf, &[*i, *j])?;
                let low = tape.min(pair)?;
                let rest: Vec<usize> = (0..k).filter(|c| c != i && c != j).collect();
                let margin = if rest.is_empty() {
                    low
                } else {
                    let others = tape.gather(conf, &rest)?;
                    let high = tape.max(others)?;
                    tape.sub(low, high)?
                };
                let second = gaussian(tape, margin, 0.5, *sigma2)?;
                tape.add(first, second)
            }
            TargetSpec::UniformAmbiguous { sigma } => {
                let hi = tape.max(conf)?;
                let lo = tape.min(conf)?;
                let spread = tape.sub(hi, lo)?;
                gaussian(tape, spread, 0.0, *sigma)
            }
        }
    }
}

/// Confidence interpolation between two classes over an α grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationSchedule {
    pub class_a: usize,
    pub class_b: usize,
    pub k: usize,
    pub alphas: Vec<f64>,
    pub sigma: f64,
}

impl InterpolationSchedule {
    /// α from 0.0 to 1.0 in steps of 0.1.
    pub fn new(class_a: usize, class_b: usize, k: usize, sigma: f64) -> Result<Self> {
        let s = InterpolationSchedule {
            class_a,
            class_b,
            k,
            alphas: (0..=10).map(|i| i as f64 / 10.0).collect(),
            sigma,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_a == self.class_b || self.class_a >= self.k || self.class_b >= self.k {
            return Err(Error::Config(
                "interpolation needs two distinct in-range classes".into(),
            ));
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a))
            || self.alphas.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Config("alphas must be sorted within [0, 1]".into()));
        }
        Ok(())
    }

    /// `p_a = 1 − α`, `p_b = α`, zero elsewhere.
    pub fn target_from_alpha(&self, alpha: f64) -> Result<TargetSpec> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
        }
        let mut p = vec![0.0; self.k];
        p[self.class_a] = 1.0 - alpha;
        p[self.class_b] = alpha;
        Ok(TargetSpec::GeneralVector {
            p,
            sigma: self.sigma,
        })
    }
}

/// `p(z | u = u*) ∝ N(z; 0, I) · p(u = u* | f(g(z)))` over a continuous latent.
#[derive(Clone, Debug)]
pub struct RelaxedPosterior {
    generator: Generator,
    classifier: Arc<MlpClassifier>,
    target: TargetSpec,
}

impl RelaxedPosterior {
    pub fn new(
        generator: Generator,
        classifier: Arc<MlpClassifier>,
        target: TargetSpec,
    ) -> Result<Self> {
        if generator.output_dim() != classifier.input_dim() {
            return Err(Error::dim(
                "posterior",
                format!(
                    "generator emits {} values, classifier reads {}",
                    generator.output_dim(),
                    classifier.input_dim()
                ),
            ));
        }
        target.validate(classifier.num_classes())?;
        Ok(RelaxedPosterior {
            generator,
            classifier,
            target,
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn classifier(&self) -> &Arc<MlpClassifier> {
        &self.classifier
    }

    pub fn latent_dim(&self) -> usize {
        self.generator.latent_dim()
    }

    fn record(&self, tape: &mut Tape, z: Var) -> Result<(Var, Var)> {
        let x = self.generator.forward_on(tape, z)?;
        let conf = self.classifier.forward_on(tape, x)?;
        let ll = self.target.log_likelihood_on(tape, conf)?;
        // log N(z; 0, I)
        let d = tape.value(z).len() as f64;
        let z2 = tape.square(z)?;
        let s = tape.sum(z2)?;
        let s = tape.scale(s, -0.5)?;
        let prior = tape.offset(s, -0.5 * d * (2.0 * PI).ln())?;
        Ok((tape.add(prior, ll)?, conf))
    }

    fn traced(&self, z: &Tensor, track: bool) -> Result<(Tape, Var, Var, Var)> {
        let row = crate::nn::as_row(z, self.latent_dim(), "log_posterior")?;
        let mut tape = Tape::new();
        let zv = if track {
            tape.leaf(row)
        } else {
            tape.constant(row)
        };
        let (lp, conf) = self.record(&mut tape, zv)?;
        Ok((tape, zv, lp, conf))
    }

    pub fn log_posterior(&self, z: &Tensor) -> Result<f64> {
        Ok(self.evaluate(z)?.log_posterior)
    }

    /// Exact reverse-mode `∇_z log p(z | u = u*)`.
    pub fn grad_log_posterior(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.gradient(z)?.1)
    }
}

fn evaluation(tape: &Tape, lp: Var, conf: Var) -> Result<Evaluation> {
    let log_posterior = tape.value(lp).item()?;
    if !log_posterior.is_finite() {
        return Err(Error::NonFinite("log posterior".into()));
    }
    Ok(Evaluation {
        log_posterior,
        confidence: tape.value(conf).data().to_vec(),
    })
}

impl Posterior for RelaxedPosterior {
    type State = Tensor;

    fn target(&self) -> &TargetSpec {
        &self.target
    }

    fn with_target(&self, target: TargetSpec) -> Result<Self> {
        RelaxedPosterior::new(self.generator.clone(), Arc::clone(&self.classifier), target)
    }

    fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    fn evaluate(&self, z: &Tensor) -> Result<Evaluation> {
        let (tape, _, lp, conf) = self.traced(z, false)?;
        evaluation(&tape, lp, conf)
    }

    fn gradient(&self, z: &Tensor) -> Result<(Evaluation, Tensor)> {
        let (tape, zv, lp, conf) = self.traced(z, true)?;
        let eval = evaluation(&tape, lp, conf)?;
        let grads = tape.backward(lp)?;
        let g = grads.wrt(zv).reshape(z.shape().to_vec())?;
        Ok((eval, g))
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Tensor> {
        let d = self.latent_dim();
        Tensor::vector((0..d).map(|_| StandardNormal.sample(rng)).collect())
    }

    fn propose<R: Rng + ?Sized>(&self, z: &Tensor, cfg: &RwmConfig, rng: &mut R) -> Option<Tensor> {
        let data = z
            .data()
            .iter()
            .map(|&v| {
                let e: f64 = StandardNormal.sample(rng);
                v + cfg.proposal_std * e
            })
            .collect();
        Tensor::new(z.shape().to_vec(), data).ok()
    }

    fn latent_values(&self, z: &Tensor) -> Vec<f64> {
        z.data().to_vec()
    }

    fn coordinates(&self, z: &Tensor) -> Option<Tensor> {
        Some(z.clone())
    }

    fn from_coordinates(&self, z: Tensor) -> Option<Tensor> {
        Some(z)
    }
}
