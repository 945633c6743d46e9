use std::sync::Arc;

use super::vae::VaeModel;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum AnalyticKind {
    Identity,
    /// `x = A·z + b` with `A: [out×latent]`.
    Affine {
        a: Tensor,
        b: Tensor,
    },
    /// `x = sigmoid(w ⊙ z + b)` elementwise.
    LogisticWarp {
        w: Tensor,
        b: Tensor,
    },
}

/// Closed-form generator over a standard-normal latent.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticGenerator {
    kind: AnalyticKind,
    latent_dim: usize,
    output_dim: usize,
}

impl AnalyticGenerator {
    pub fn identity(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        Ok(AnalyticGenerator {
            kind: AnalyticKind::Identity,
            latent_dim: dim,
            output_dim: dim,
        })
    }

    pub fn affine(a: Tensor, b: Tensor) -> Result<Self> {
        if a.shape().len() != 2 || b.len() != a.shape()[0] {
            return Err(Error::dim(
                "affine generator",
                format!("A {:?}, b {:?}", a.shape(), b.shape()),
            ));
        }
        let (out, latent) = (a.shape()[0], a.shape()[1]);
        let b = b.reshape(vec![out])?;
        Ok(AnalyticGenerator {
            kind: AnalyticKind::Affine { a, b },
            latent_dim: latent,
            output_dim: out,
        })
    }

    pub fn logistic_warp(w: Tensor, b: Tensor) -> Result<Self> {
        if w.len() != b.len() {
            return Err(Error::dim(
                "logistic-warp generator",
                format!("w {:?}, b {:?}", w.shape(), b.shape()),
            ));
        }
        let n = w.len();
        Ok(AnalyticGenerator {
            kind: AnalyticKind::LogisticWarp {
                w: w.reshape(vec![n])?,
                b: b.reshape(vec![n])?,
            },
            latent_dim: n,
            output_dim: n,
        })
    }

    pub fn kind(&self) -> &AnalyticKind {
        &self.kind
    }

    fn forward_on(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        match &self.kind {
            AnalyticKind::Identity => Ok(z),
            AnalyticKind::Affine { a, b } => {
                // Row form: x = z·Aᵀ + b.
                let at = transpose(a);
                let at = tape.constant(at);
                let bv = tape.constant(b.clone());
                let h = tape.matmul(z, at)?;
                tape.add_bias(h, bv)
            }
            AnalyticKind::LogisticWarp { w, b } => {
                let shape = tape.value(z).shape().to_vec();
                let wv = tape.constant(w.reshape(shape.clone())?);
                let bv = tape.constant(b.reshape(shape)?);
                let h = tape.mul(z, wv)?;
                let h = tape.add(h, bv)?;
                tape.activation(h, crate::tensor::Activation::Sigmoid)
            }
        }
    }
}

fn transpose(a: &Tensor) -> Tensor {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.data()[i * c + j];
        }
    }
    Tensor::raw(vec![c, r], out)
}

/// Differentiable map `g: Z → X` from a standard-normal latent.
#[derive(Clone, Debug)]
pub enum Generator {
    Analytic(AnalyticGenerator),
    Decoder(Arc<VaeModel>),
}

impl From<AnalyticGenerator> for Generator {
    fn from(g: AnalyticGenerator) -> Self {
        Generator::Analytic(g)
    }
}

impl Generator {
    pub fn latent_dim(&self) -> usize {
        match self {
            Generator::Analytic(g) => g.latent_dim,
            Generator::Decoder(v) => v.latent_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Generator::Analytic(g) => g.output_dim,
            Generator::Decoder(v) => v.image_len(),
        }
    }

    /// Records `x = g(z)` for a one-row latent `z: [1×d]`; the result is `[1×out]`.
    pub fn forward_on(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let width = tape.value(z).as_matrix_dims().1;
        if width != self.latent_dim() {
            return Err(Error::dim(
                "generate",
                format!(
                    "latent has {width} entries, generator expects {}",
                    self.latent_dim()
                ),
            ));
        }
        match self {
            Generator::Analytic(g) => g.forward_on(tape, z),
            Generator::Decoder(v) => v.decode_on(tape, z, false),
        }
    }

    /// Deterministic `g(z)` as a flat vector.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        let row = super::as_row(z, self.latent_dim(), "generate")?;
        let mut tape = Tape::new();
        let zv = tape.constant(row);
        let x = self.forward_on(&mut tape, zv)?;
        tape.value(x).reshape(vec![self.output_dim()])
    }
}
