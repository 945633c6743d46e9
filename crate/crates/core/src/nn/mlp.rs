use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::{batches, LossKind, Sgd, TrainConfig, TrainLog};
use super::{as_row, Dense, SyntheticDataset};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor};

/// Softmax MLP classifier `f: X → Δ_K`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpClassifier {
    widths: Vec<usize>,
    layers: Vec<Dense>,
    activation: Activation,
}

impl MlpClassifier {
    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("classifier needs at least one layer".into()));
        }
        let mut widths = vec![layers[0].input_dim()];
        for layer in &layers {
            if layer.input_dim() != *widths.last().unwrap() {
                return Err(Error::dim(
                    "classifier",
                    format!(
                        "layer input {} after width {}",
                        layer.input_dim(),
                        widths.last().unwrap()
                    ),
                ));
            }
            widths.push(layer.output_dim());
        }
        Ok(MlpClassifier {
            widths,
            layers,
            activation,
        })
    }

    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        MlpClassifier::from_layers(layers, activation)
    }

    pub fn random(widths: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        check_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = match activation {
            Activation::Relu => 2f64.sqrt(),
            _ => 1.0,
        };
        let layers = widths
            .windows(2)
            .map(|w| Dense::random(w[0], w[1], gain, &mut rng))
            .collect();
        MlpClassifier::from_layers(layers, activation)
    }

    /// Single-layer softmax model with logits `x·W + b`.
    pub fn linear(weight: Tensor, bias: Tensor) -> Result<Self> {
        MlpClassifier::from_layers(vec![Dense::new(weight, bias)?], Activation::Relu)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Records the logits for rows of `x`; returns the parameter vars in layer order.
    pub fn logits_on(
        &self,
        tape: &mut Tape,
        x: Var,
        track_params: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let mut h = x;
        let mut params = Vec::with_capacity(self.layers.len() * 2);
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, p) = layer.forward(tape, h, track_params)?;
            params.extend(p);
            h = if i + 1 < self.layers.len() {
                tape.activation(out, self.activation)?
            } else {
                out
            };
        }
        Ok((h, params))
    }

    /// Records `f(x)` with the parameters held constant.
    pub fn forward_on(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let width = tape.value(x).as_matrix_dims().1;
        if width != self.input_dim() {
            return Err(Error::dim(
                "classify",
                format!(
                    "expected {} inputs, got {:?}",
                    self.input_dim(),
                    tape.value(x).shape()
                ),
            ));
        }
        let (logits, _) = self.logits_on(tape, x, false)?;
        tape.softmax(logits)
    }

    /// Confidence vector on the simplex for a single example.
    pub fn classify(&self, x: &Tensor) -> Result<Tensor> {
        let row = as_row(x, self.input_dim(), "classify")?;
        let mut tape = Tape::new();
        let x = tape.constant(row);
        let p = self.forward_on(&mut tape, x)?;
        tape.value(p).reshape(vec![self.num_classes()])
    }

    /// Confidences for a `[B×in]` batch.
    pub fn classify_batch(&self, xs: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(xs.clone());
        let p = self.forward_on(&mut tape, x)?;
        Ok(tape.value(p).clone())
    }

    /// Gradient of `f(x)_class` with respect to the input.
    pub fn input_gradient(&self, x: &Tensor, class: usize) -> Result<Tensor> {
        if class >= self.num_classes() {
            return Err(Error::Config(format!("class {class} out of range")));
        }
        let row = as_row(x, self.input_dim(), "input_gradient")?;
        let mut tape = Tape::new();
        let xv = tape.leaf(row);
        let p = self.forward_on(&mut tape, xv)?;
        let c = tape.index(p, class)?;
        let g = tape.backward(c)?;
        g.wrt(xv).reshape(x.shape().to_vec())
    }

    /// Fraction of items whose argmax matches the label.
    pub fn accuracy(&self, data: &SyntheticDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let probs = self.classify_batch(&data.inputs_matrix()?)?;
        let k = self.num_classes();
        let correct = probs
            .data()
            .chunks(k)
            .zip(data.labels())
            .filter(|(row, &label)| argmax(row) == label)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }

    pub(crate) fn params(&self) -> Vec<&std::sync::Arc<Tensor>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut std::sync::Arc<Tensor>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Config(format!("invalid layer widths {widths:?}")));
    }
    Ok(())
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Soft target with half the mass on `label` and half on `(label + 1) mod k`.
pub fn ambiguous_target(label: usize, k: usize) -> Vec<f64> {
    let mut p = vec![0.0; k];
    p[label % k] += 0.5;
    p[(label + 1) % k] += 0.5;
    p
}

/// `KL(p ‖ q) = Σ p·(ln p − ln q)` with `0·ln 0 = 0`.
pub fn kl_target_loss(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

/// Trains a classifier with negative log-likelihood on hard labels.
pub fn train_classifier(
    data: &SyntheticDataset,
    cfg: &TrainConfig,
) -> Result<(MlpClassifier, TrainLog)> {
    cfg.validate(LossKind::CrossEntropy)?;
    let k = data.num_classes();
    let targets: Vec<Vec<f64>> = data
        .labels()
        .iter()
        .map(|&y| {
            let mut t = vec![0.0; k];
            t[y] = 1.0;
            t
        })
        .collect();
    fit_soft_targets(data, &targets, cfg)
}

/// Trains a classifier toward the "always ambiguous" targets of [`ambiguous_target`]
/// with a KL-divergence loss.
pub fn train_ambiguous_classifier(
    data: &SyntheticDataset,
    cfg: &TrainConfig,
) -> Result<(MlpClassifier, TrainLog)> {
    cfg.validate(LossKind::KlTarget)?;
    let k = data.num_classes();
    if k < 2 {
        return Err(Error::Config(
            "ambiguous training needs at least two classes".into(),
        ));
    }
    let targets: Vec<Vec<f64>> = data
        .labels()
        .iter()
        .map(|&y| ambiguous_target(y, k))
        .collect();
    fit_soft_targets(data, &targets, cfg)
}

fn fit_soft_targets(
    data: &SyntheticDataset,
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<(MlpClassifier, TrainLog)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = data.num_classes();
    let mut widths = vec![data.input_dim()];
    widths.extend(&cfg.hidden);
    widths.push(k);
    let mut model = MlpClassifier::random(&widths, cfg.activation, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut opt = Sgd::new(cfg, &model.params());
    let mut log = TrainLog::default();
    let all: Vec<usize> = (0..data.len()).collect();
    log.epoch_losses
        .push(batch_loss(&model, data, targets, &all, false)?.0);

    let mut order = all.clone();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in batches(&order, cfg.batch_size) {
            let (loss, tape, out, params) = {
                let (loss, ctx) = batch_loss(&model, data, targets, batch, true)?;
                let (tape, out, params) = ctx.expect("tracked pass");
                (loss, tape, out, params)
            };
            let grads = tape.backward(out)?;
            drop(tape);
            opt.step(model.params_mut(), &params, &grads)?;
            log.batch_losses.push(loss);
        }
        log.epoch_losses
            .push(batch_loss(&model, data, targets, &all, false)?.0);
    }
    Ok((model, log))
}

type LossContext = Option<(Tape, Var, Vec<Var>)>;

/// Mean `KL(target ‖ f(x))` over the selected rows. Hard one-hot targets make this
/// the usual cross-entropy.
fn batch_loss(
    model: &MlpClassifier,
    data: &SyntheticDataset,
    targets: &[Vec<f64>],
    rows: &[usize],
    track: bool,
) -> Result<(f64, LossContext)> {
    let k = model.num_classes();
    let x = data.rows_matrix(rows)?;
    let mut t = Vec::with_capacity(rows.len() * k);
    let mut entropy = 0.0;
    for &r in rows {
        for &p in &targets[r] {
            t.push(p);
            if p > 0.0 {
                entropy += p * p.ln();
            }
        }
    }
    let n = rows.len() as f64;
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let tv = tape.constant(Tensor::matrix(rows.len(), k, t)?);
    let (logits, params) = model.logits_on(&mut tape, xv, track)?;
    let logp = tape.log_softmax(logits)?;
    let prod = tape.mul(tv, logp)?;
    let total = tape.sum(prod)?;
    let mean = tape.scale(total, -1.0 / n)?;
    let loss = tape.offset(mean, entropy / n)?;
    let value = tape.value(loss).item()?;
    Ok((value, track.then_some((tape, loss, params))))
}
