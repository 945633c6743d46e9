use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::train::{batches, LossKind, Sgd, TrainConfig, TrainLog};
use super::{as_row, Dense, SyntheticDataset};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor};

pub const LATENT_DIM: usize = 5;

/// Fully connected VAE: `x → ReLU(H) → (μ, log σ²)` and `z → ReLU(H) → sigmoid(x̂)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    side: usize,
    pub(crate) encoder: Dense,
    pub(crate) enc_mean: Dense,
    pub(crate) enc_logvar: Dense,
    pub(crate) dec_hidden: Dense,
    pub(crate) dec_out: Dense,
}

impl VaeModel {
    pub fn random(side: usize, hidden: usize, seed: u64) -> Result<Self> {
        if side == 0 || hidden == 0 {
            return Err(Error::Config(
                "VAE side and hidden width must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = side * side;
        let relu_gain = 2f64.sqrt();
        Ok(VaeModel {
            side,
            encoder: Dense::random(n, hidden, relu_gain, &mut rng),
            enc_mean: Dense::random(hidden, LATENT_DIM, 1.0, &mut rng),
            enc_logvar: Dense::random(hidden, LATENT_DIM, 0.1, &mut rng),
            dec_hidden: Dense::random(LATENT_DIM, hidden, relu_gain, &mut rng),
            dec_out: Dense::random(hidden, n, 1.0, &mut rng),
        })
    }

    pub fn from_parts(side: usize, layers: [Dense; 5]) -> Result<Self> {
        let [encoder, enc_mean, enc_logvar, dec_hidden, dec_out] = layers;
        let n = side * side;
        let h = encoder.output_dim();
        let ok = encoder.input_dim() == n
            && enc_mean.input_dim() == h
            && enc_logvar.input_dim() == h
            && enc_mean.output_dim() == LATENT_DIM
            && enc_logvar.output_dim() == LATENT_DIM
            && dec_hidden.input_dim() == LATENT_DIM
            && dec_out.input_dim() == dec_hidden.output_dim()
            && dec_out.output_dim() == n;
        if !ok {
            return Err(Error::dim("vae", "layer shapes do not form a VAE"));
        }
        Ok(VaeModel {
            side,
            encoder,
            enc_mean,
            enc_logvar,
            dec_hidden,
            dec_out,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn image_len(&self) -> usize {
        self.side * self.side
    }

    pub fn latent_dim(&self) -> usize {
        LATENT_DIM
    }

    pub(crate) fn layers(&self) -> [&Dense; 5] {
        [
            &self.encoder,
            &self.enc_mean,
            &self.enc_logvar,
            &self.dec_hidden,
            &self.dec_out,
        ]
    }

    fn layers_mut(&mut self) -> [&mut Dense; 5] {
        [
            &mut self.encoder,
            &mut self.enc_mean,
            &mut self.enc_logvar,
            &mut self.dec_hidden,
            &mut self.dec_out,
        ]
    }

    fn params(&self) -> Vec<&Arc<Tensor>> {
        self.layers().into_iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Arc<Tensor>> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    fn encode_on(&self, tape: &mut Tape, x: Var, track: bool) -> Result<(Var, Var, Vec<Var>)> {
        let (h, p0) = self.encoder.forward(tape, x, track)?;
        let h = tape.activation(h, Activation::Relu)?;
        let (mu, p1) = self.enc_mean.forward(tape, h, track)?;
        let (logvar, p2) = self.enc_logvar.forward(tape, h, track)?;
        Ok((mu, logvar, [p0, p1, p2].concat()))
    }

    fn decode_logits_on(&self, tape: &mut Tape, z: Var, track: bool) -> Result<(Var, Vec<Var>)> {
        let (h, p0) = self.dec_hidden.forward(tape, z, track)?;
        let h = tape.activation(h, Activation::Relu)?;
        let (logits, p1) = self.dec_out.forward(tape, h, track)?;
        Ok((logits, [p0, p1].concat()))
    }

    /// Records the decoder mean image for latent rows `z`.
    pub fn decode_on(&self, tape: &mut Tape, z: Var, track: bool) -> Result<Var> {
        let (logits, _) = self.decode_logits_on(tape, z, track)?;
        tape.activation(logits, Activation::Sigmoid)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let row = as_row(z, LATENT_DIM, "decode")?;
        let mut tape = Tape::new();
        let zv = tape.constant(row);
        let x = self.decode_on(&mut tape, zv, false)?;
        tape.value(x).reshape(vec![self.image_len()])
    }

    /// Posterior mean and log-variance of `q(z | x)`.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let row = as_row(x, self.image_len(), "encode")?;
        let mut tape = Tape::new();
        let xv = tape.constant(row);
        let (mu, lv, _) = self.encode_on(&mut tape, xv, false)?;
        Ok((
            tape.value(mu).reshape(vec![LATENT_DIM])?,
            tape.value(lv).reshape(vec![LATENT_DIM])?,
        ))
    }

    /// KL term of the encoder at `x`, evaluated through the autodiff graph.
    pub fn kl_term(&self, x: &Tensor) -> Result<f64> {
        let row = as_row(x, self.image_len(), "kl_term")?;
        let mut tape = Tape::new();
        let xv = tape.constant(row);
        let (mu, lv, _) = self.encode_on(&mut tape, xv, false)?;
        let kl = kl_on(&mut tape, mu, lv)?;
        tape.value(kl).item()
    }

    /// Mean binary cross-entropy of reconstructions decoded from `μ(x)`.
    pub fn reconstruction_error(&self, data: &SyntheticDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let x = data.inputs_matrix()?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let (mu, _, _) = self.encode_on(&mut tape, xv, false)?;
        let (logits, _) = self.decode_logits_on(&mut tape, mu, false)?;
        let bce = bce_on(&mut tape, xv, logits)?;
        Ok(tape.value(bce).item()? / data.len() as f64)
    }
}

/// `Σ softplus(l) − x·l`, the summed binary cross-entropy for sigmoid outputs.
fn bce_on(tape: &mut Tape, x: Var, logits: Var) -> Result<Var> {
    let sp = tape.softplus(logits)?;
    let sp = tape.sum(sp)?;
    let xl = tape.mul(x, logits)?;
    let xl = tape.sum(xl)?;
    tape.sub(sp, xl)
}

/// `−½ Σ (1 + log σ² − μ² − σ²)`, summed over every row.
fn kl_on(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let mu2 = tape.square(mu)?;
    let var = tape.exp(logvar)?;
    let t = tape.sub(logvar, mu2)?;
    let t = tape.sub(t, var)?;
    let t = tape.offset(t, 1.0)?;
    let s = tape.sum(t)?;
    tape.scale(s, -0.5)
}

/// Closed-form `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn diagonal_gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

/// Fits a VAE by maximising the ELBO with one reparameterised sample per item.
/// The returned log's `epoch_losses` holds mean reconstruction error, starting
/// with the untrained model.
pub fn train_vae(data: &SyntheticDataset, cfg: &TrainConfig) -> Result<(VaeModel, TrainLog)> {
    cfg.validate(LossKind::Elbo)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.check_unit_range()?;
    let side = (data.input_dim() as f64).sqrt().round() as usize;
    if side * side != data.input_dim() {
        return Err(Error::Config("VAE inputs must be square images".into()));
    }
    let hidden = cfg.hidden.first().copied().unwrap_or(128);
    let mut model = VaeModel::random(side, hidden, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut opt = Sgd::new(cfg, &model.params());
    let mut log = TrainLog::default();
    log.epoch_losses.push(model.reconstruction_error(data)?);

    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in batches(&order, cfg.batch_size) {
            let n = batch.len() as f64;
            let eps: Vec<f64> = (0..batch.len() * LATENT_DIM)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let mut tape = Tape::new();
            let xv = tape.constant(data.rows_matrix(batch)?);
            let ev = tape.constant(Tensor::matrix(batch.len(), LATENT_DIM, eps)?);
            let (mu, lv, mut params) = model.encode_on(&mut tape, xv, true)?;
            let half_lv = tape.scale(lv, 0.5)?;
            let std = tape.exp(half_lv)?;
            let noise = tape.mul(std, ev)?;
            let z = tape.add(mu, noise)?;
            let (logits, dec_params) = model.decode_logits_on(&mut tape, z, true)?;
            params.extend(dec_params);
            let recon = bce_on(&mut tape, xv, logits)?;
            let kl = kl_on(&mut tape, mu, lv)?;
            let neg_elbo = tape.add(recon, kl)?;
            let loss = tape.scale(neg_elbo, 1.0 / n)?;
            log.batch_losses.push(tape.value(loss).item()?);
            let grads = tape.backward(loss)?;
            drop(tape);
            opt.step(model.params_mut(), &params, &grads)?;
        }
        log.epoch_losses.push(model.reconstruction_error(data)?);
    }
    Ok((model, log))
}
