#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use trex_core::nn::{AnalyticGenerator, Generator, MlpClassifier, VaeModel};
use trex_core::samplers::{Evaluation, Posterior, RwmConfig};
use trex_core::targets::{RelaxedPosterior, TargetSpec};
use trex_core::{Activation, Result, Tensor};

/// `f(x) = sigmoid(4x)` written as a two-logit softmax `[-2x, 2x]`.
pub fn logistic_classifier() -> MlpClassifier {
    MlpClassifier::linear(
        Tensor::matrix(1, 2, vec![-2.0, 2.0]).unwrap(),
        Tensor::vector(vec![0.0, 0.0]).unwrap(),
    )
    .unwrap()
}

pub fn logistic_fixture(sigma: f64) -> RelaxedPosterior {
    RelaxedPosterior::new(
        AnalyticGenerator::identity(1).unwrap().into(),
        Arc::new(logistic_classifier()),
        TargetSpec::GeneralVector {
            p: vec![0.5, 0.5],
            sigma,
        },
    )
    .unwrap()
}

/// Unnormalised log density of the 1D fixture, written out by hand.
pub fn logistic_log_density(z: f64, sigma: f64) -> f64 {
    let f1 = 1.0 / (1.0 + (-4.0 * z).exp());
    let f0 = 1.0 - f1;
    let g = |v: f64| -(v - 0.5).powi(2) / (2.0 * sigma * sigma);
    -0.5 * z * z + g(f0) + g(f1)
}

/// Normalised density and trapezoid CDF on 2001 points of [−4, 4].
pub struct GridOracle {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl GridOracle {
    pub fn new(log_density: impl Fn(f64) -> f64) -> Self {
        let n = 2001;
        let grid: Vec<f64> = (0..n)
            .map(|i| -4.0 + 8.0 * i as f64 / (n - 1) as f64)
            .collect();
        let lp: Vec<f64> = grid.iter().map(|&z| log_density(z)).collect();
        let m = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut density: Vec<f64> = lp.iter().map(|l| (l - m).exp()).collect();
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1] + 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]);
        }
        let total = cdf[n - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        density.iter_mut().for_each(|d| *d /= total);
        GridOracle { grid, density, cdf }
    }

    pub fn cdf_at(&self, x: f64) -> f64 {
        let n = self.grid.len();
        if x <= self.grid[0] {
            return 0.0;
        }
        if x >= self.grid[n - 1] {
            return 1.0;
        }
        let f = (x - self.grid[0]) / (self.grid[1] - self.grid[0]);
        let i = (f.floor() as usize).min(n - 2);
        let t = f - i as f64;
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let i = self.cdf.iter().position(|&c| c >= p).unwrap();
        if i == 0 {
            return self.grid[0];
        }
        let t = (p - self.cdf[i - 1]) / (self.cdf[i] - self.cdf[i - 1]);
        self.grid[i - 1] + t * (self.grid[i] - self.grid[i - 1])
    }

    /// Expectation of `h` under the grid density (trapezoid rule).
    pub fn expect(&self, h: impl Fn(f64) -> f64) -> f64 {
        let w = self.grid[1] - self.grid[0];
        let v: Vec<f64> = self
            .grid
            .iter()
            .zip(&self.density)
            .map(|(&z, &d)| h(z) * d)
            .collect();
        v.windows(2).map(|p| 0.5 * (p[0] + p[1]) * w).sum()
    }

    /// TV distance between a sample histogram (50 bins over the central 99.9% interval)
    /// and the oracle; mass outside the interval counts as one more bin.
    pub fn tv(&self, xs: &[f64]) -> f64 {
        let (lo, hi) = (self.quantile(0.0005), self.quantile(0.9995));
        let bins = 50;
        let mut counts = vec![0usize; bins];
        let mut outside = 0usize;
        for &x in xs {
            if x < lo || x >= hi {
                outside += 1;
            } else {
                counts[(((x - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1)] += 1;
            }
        }
        let n = xs.len() as f64;
        let edge = |b: usize| lo + (hi - lo) * b as f64 / bins as f64;
        let inside: f64 = (0..bins)
            .map(|b| (self.cdf_at(edge(b + 1)) - self.cdf_at(edge(b)) - counts[b] as f64 / n).abs())
            .sum();
        0.5 * (inside + (outside as f64 / n - 0.001).abs())
    }
}

/// `N(0, I_d)` written directly against the sampler interface; `flat` swaps
/// the log density for a constant.
#[derive(Clone)]
pub struct StdNormal {
    pub dim: usize,
    pub target: TargetSpec,
    pub flat: bool,
}

impl StdNormal {
    pub fn new(dim: usize) -> Self {
        StdNormal {
            dim,
            target: TargetSpec::high_confidence(0),
            flat: false,
        }
    }

    pub fn flat(dim: usize) -> Self {
        StdNormal {
            flat: true,
            ..StdNormal::new(dim)
        }
    }
}

impl Posterior for StdNormal {
    type State = Tensor;

    fn target(&self) -> &TargetSpec {
        &self.target
    }

    fn with_target(&self, target: TargetSpec) -> Result<Self> {
        Ok(StdNormal {
            target,
            ..self.clone()
        })
    }

    fn num_classes(&self) -> usize {
        1
    }

    fn evaluate(&self, z: &Tensor) -> Result<Evaluation> {
        let s: f64 = if self.flat {
            0.0
        } else {
            z.data().iter().map(|v| v * v).sum()
        };
        Ok(Evaluation {
            log_posterior: -0.5 * s - 0.5 * self.dim as f64 * (2.0 * PI).ln(),
            confidence: vec![1.0],
        })
    }

    fn gradient(&self, z: &Tensor) -> Result<(Evaluation, Tensor)> {
        let flat = self.flat;
        Ok((self.evaluate(z)?, z.map(|v| if flat { 0.0 } else { -v })?))
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Tensor> {
        Tensor::vector((0..self.dim).map(|_| StandardNormal.sample(rng)).collect())
    }

    fn propose<R: Rng + ?Sized>(&self, z: &Tensor, cfg: &RwmConfig, rng: &mut R) -> Option<Tensor> {
        let data = z
            .data()
            .iter()
            .map(|v| {
                let e: f64 = StandardNormal.sample(rng);
                v + cfg.proposal_std * e
            })
            .collect();
        Tensor::vector(data).ok()
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

/// Column `c` of the latent values of a record list.
pub fn latent_column(records: &[trex_core::samplers::SampleRecord], c: usize) -> Vec<f64> {
    records.iter().map(|r| r.latent[c]).collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Five small model/generator/target combinations covering every generator kind.
pub fn gradient_configs() -> Vec<RelaxedPosterior> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut out = Vec::new();
    let clf = |w: &[usize], act, seed| Arc::new(MlpClassifier::random(w, act, seed).unwrap());

    out.push(
        RelaxedPosterior::new(
            AnalyticGenerator::identity(3).unwrap().into(),
            clf(&[3, 8, 4], Activation::Tanh, 1),
            TargetSpec::high_confidence(2),
        )
        .unwrap(),
    );
    let a = random_tensor(&mut rng, &[5, 2], 1.5);
    let b = random_tensor(&mut rng, &[5], 0.5);
    out.push(
        RelaxedPosterior::new(
            AnalyticGenerator::affine(a, b).unwrap().into(),
            clf(&[5, 6, 3], Activation::Sigmoid, 2),
            TargetSpec::ambiguous_pair(0, 2),
        )
        .unwrap(),
    );
    let w = random_tensor(&mut rng, &[4], 2.0);
    let b = random_tensor(&mut rng, &[4], 1.0);
    out.push(
        RelaxedPosterior::new(
            AnalyticGenerator::logistic_warp(w, b).unwrap().into(),
            clf(&[4, 10, 5], Activation::Tanh, 3),
            TargetSpec::UniformAmbiguous { sigma: 0.1 },
        )
        .unwrap(),
    );
    out.push(
        RelaxedPosterior::new(
            AnalyticGenerator::identity(2).unwrap().into(),
            clf(&[2, 6, 3], Activation::Relu, 4),
            TargetSpec::GeneralVector {
                p: vec![0.2, 0.3, 0.5],
                sigma: 0.2,
            },
        )
        .unwrap(),
    );
    let vae = VaeModel::random(6, 12, 5).unwrap();
    out.push(
        RelaxedPosterior::new(
            Generator::Decoder(Arc::new(vae)),
            clf(&[36, 8, 4], Activation::Tanh, 6),
            TargetSpec::ambiguous_pair(1, 3),
        )
        .unwrap(),
    );
    out
}
