//! Desk-scale models: MLP classifiers, a small VAE and analytic generators.

mod checkpoint;
mod data;
mod generator;
mod glyphs;
mod mlp;
mod train;
mod vae;

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use checkpoint::{
    checkpoint_checksum, decode_checkpoint, encode_checkpoint, load_model, save_model, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use data::{DatasetRecipe, SyntheticDataset};
pub use generator::{AnalyticGenerator, AnalyticKind, Generator};
pub use glyphs::{glyph_prototypes, render_glyph, GLYPH_CLASSES};
pub use mlp::{
    ambiguous_target, kl_target_loss, train_ambiguous_classifier, train_classifier, MlpClassifier,
};
pub use train::{LossKind, TrainConfig, TrainLog};
pub use vae::{diagonal_gaussian_kl, train_vae, VaeModel, LATENT_DIM};

/// Fully connected layer `y = x·W + b` with `W: [in×out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Arc<Tensor>,
    pub bias: Arc<Tensor>,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::dim(
                "dense",
                format!("weight {:?} with bias {:?}", weight.shape(), bias.shape()),
            ));
        }
        Ok(Dense {
            weight: Arc::new(weight),
            bias: Arc::new(bias),
        })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Arc::new(Tensor::zeros(&[input, output])),
            bias: Arc::new(Tensor::zeros(&[output])),
        }
    }

    /// Gaussian init scaled by `gain / sqrt(fan_in)`, zero bias.
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, gain / (input as f64).sqrt()).expect("valid std");
        let w = (0..input * output).map(|_| normal.sample(rng)).collect();
        Dense {
            weight: Arc::new(Tensor::raw(vec![input, output], w)),
            bias: Arc::new(Tensor::zeros(&[output])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, track: bool) -> Result<(Var, [Var; 2])> {
        let w = tape.shared(&self.weight, track);
        let b = tape.shared(&self.bias, track);
        let h = tape.matmul(x, w)?;
        Ok((tape.add_bias(h, b)?, [w, b]))
    }

    pub(crate) fn params_mut(&mut self) -> [&mut Arc<Tensor>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub(crate) fn params(&self) -> [&Arc<Tensor>; 2] {
        [&self.weight, &self.bias]
    }
}

/// Reshapes a single example to a one-row matrix, checking its width.
pub(crate) fn as_row(x: &Tensor, width: usize, op: &'static str) -> Result<Tensor> {
    if x.len() != width || x.shape().len() > 2 || (x.shape().len() == 2 && x.shape()[0] != 1) {
        return Err(Error::dim(
            op,
            format!("expected {width} inputs, got shape {:?}", x.shape()),
        ));
    }
    x.reshape(vec![1, width])
}
