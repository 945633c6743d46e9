use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    KlTarget,
    Elbo,
}

/// Optimisation settings shared by every trainer. `hidden` and `activation`
/// describe the network body the trainer builds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 0,
            loss: LossKind::CrossEntropy,
            hidden: vec![64],
            activation: Activation::Relu,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, expected: LossKind) -> Result<()> {
        if self.loss != expected {
            return Err(Error::Config(format!(
                "trainer expects loss {expected:?}, config has {:?}",
                self.loss
            )));
        }
        if !(self.learning_rate > 0.0) || self.learning_rate.is_infinite() {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Loss trajectory of a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean loss over the data before any update, then after each epoch.
    pub epoch_losses: Vec<f64>,
    pub batch_losses: Vec<f64>,
}

/// SGD with classical momentum over a fixed parameter list.
pub(crate) struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(cfg: &TrainConfig, params: &[&Arc<Tensor>]) -> Self {
        Sgd {
            lr: cfg.learning_rate,
            momentum: cfg.momentum,
            velocity: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(
        &mut self,
        params: Vec<&mut Arc<Tensor>>,
        vars: &[Var],
        grads: &Gradients,
    ) -> Result<()> {
        for ((param, var), vel) in params.into_iter().zip(vars).zip(&mut self.velocity) {
            let g = grads.wrt(*var);
            let p = Arc::make_mut(param);
            let data = p.data_mut();
            for ((w, v), gv) in data.iter_mut().zip(vel.iter_mut()).zip(g.data()) {
                *v = self.momentum * *v - self.lr * gv;
                *w += *v;
            }
            if !p.is_finite() {
                return Err(Error::NonFinite("sgd update".into()));
            }
        }
        Ok(())
    }
}

pub(crate) fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}
