use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::glyphs::render_glyph;
use crate::error::{Error, Result};
use crate::scene::{render, Rasterizer, ScenePrior};
use crate::tensor::Tensor;

/// JSON-serialisable description of a regenerable dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecipe {
    pub recipe_id: String,
    pub seed: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    #[serde(default)]
    pub side: usize,
}

impl DatasetRecipe {
    pub fn new(recipe_id: &str, seed: u64, k: usize, n: usize, side: usize) -> Self {
        DatasetRecipe {
            recipe_id: recipe_id.to_string(),
            seed,
            k,
            n,
            side,
        }
    }

    /// Rebuilds the dataset; identical recipes give bit-identical items.
    ///
    /// * `blobs`: `K` unit-variance Gaussian blobs in 2-D, neighbouring centres 6 apart.
    /// * `glyphs`: `K ≤ 10` procedurally drawn glyph classes on a `side×side` canvas.
    /// * `scenes`: 32×32 rendered scenes labelled by their square count, capped at `K − 1`.
    pub fn generate(&self) -> Result<SyntheticDataset> {
        if self.n == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (inputs, labels) = match self.recipe_id.as_str() {
            "blobs" => blobs(self.k, self.n, &mut rng)?,
            "glyphs" => {
                if self.k > super::GLYPH_CLASSES {
                    return Err(Error::Config(format!(
                        "glyph recipe supports at most {} classes",
                        super::GLYPH_CLASSES
                    )));
                }
                if self.side < 8 {
                    return Err(Error::Config("glyph side must be at least 8".into()));
                }
                let mut xs = Vec::with_capacity(self.n);
                let mut ys = Vec::with_capacity(self.n);
                for i in 0..self.n {
                    let label = i % self.k;
                    xs.push(render_glyph(label, self.side, &mut rng)?);
                    ys.push(label);
                }
                (xs, ys)
            }
            "scenes" => {
                if self.k < 2 {
                    return Err(Error::Config("scene recipe needs K ≥ 2".into()));
                }
                let prior = ScenePrior::counting_default();
                let raster = Rasterizer::default();
                let mut xs = Vec::with_capacity(self.n);
                let mut ys = Vec::with_capacity(self.n);
                for _ in 0..self.n {
                    let scene = prior.sample(&mut rng)?;
                    let squares = scene.count_shape(crate::scene::Shape::Square);
                    xs.push(render(&raster, &scene).reshape(vec![raster.side * raster.side])?);
                    ys.push(squares.min(self.k - 1));
                }
                (xs, ys)
            }
            other => return Err(Error::Config(format!("unknown dataset recipe '{other}'"))),
        };
        SyntheticDataset::new(inputs, labels, self.k, Some(self.clone()))
    }
}

fn blobs(k: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Vec<usize>)> {
    // Centres on a circle with chord 6 between neighbours (or ±3 on a line for two classes).
    let radius = if k <= 2 {
        3.0
    } else {
        3.0 / (std::f64::consts::PI / k as f64).sin()
    };
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % k;
        let angle = 2.0 * std::f64::consts::PI * label as f64 / k.max(2) as f64;
        let (cx, cy) = (radius * angle.cos(), radius * angle.sin());
        let dx: f64 = StandardNormal.sample(rng);
        let dy: f64 = StandardNormal.sample(rng);
        xs.push(Tensor::vector(vec![cx + dx, cy + dy])?);
        ys.push(label);
    }
    Ok((xs, ys))
}

/// Labelled examples sharing one input width.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    inputs: Vec<Tensor>,
    labels: Vec<usize>,
    k: usize,
    recipe: Option<DatasetRecipe>,
}

impl SyntheticDataset {
    pub fn new(
        inputs: Vec<Tensor>,
        labels: Vec<usize>,
        k: usize,
        recipe: Option<DatasetRecipe>,
    ) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::dim(
                "dataset",
                format!("{} inputs vs {} labels", inputs.len(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Config(format!("label {bad} outside [0, {k})")));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().any(|x| x.len() != first.len()) {
                return Err(Error::dim("dataset", "inputs have mixed widths"));
            }
        }
        Ok(SyntheticDataset {
            inputs,
            labels,
            k,
            recipe,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Tensor::len)
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn recipe(&self) -> Option<&DatasetRecipe> {
        self.recipe.as_ref()
    }

    pub fn item(&self, i: usize) -> Option<(&Tensor, usize)> {
        self.inputs.get(i).map(|x| (x, self.labels[i]))
    }

    /// Stacks the selected rows into a `[B×d]` matrix.
    pub fn rows_matrix(&self, rows: &[usize]) -> Result<Tensor> {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(self.inputs[r].data());
        }
        Tensor::matrix(rows.len(), d, data)
    }

    pub fn inputs_matrix(&self) -> Result<Tensor> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.rows_matrix(&all)
    }

    /// Splits off the trailing `holdout` fraction as a test set.
    pub fn split(&self, holdout: f64) -> (SyntheticDataset, SyntheticDataset) {
        let n_test = ((self.len() as f64) * holdout).round() as usize;
        let cut = self.len() - n_test.min(self.len());
        let part = |range: std::ops::Range<usize>| SyntheticDataset {
            inputs: self.inputs[range.clone()].to_vec(),
            labels: self.labels[range].to_vec(),
            k: self.k,
            recipe: self.recipe.clone(),
        };
        (part(0..cut), part(cut..self.len()))
    }

    /// Same inputs with labels rewritten by `f`.
    pub fn relabel(&self, f: impl Fn(usize, usize) -> usize) -> Result<SyntheticDataset> {
        let labels = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, &y)| f(i, y))
            .collect();
        SyntheticDataset::new(self.inputs.clone(), labels, self.k, None)
    }

    /// Items whose label passes `keep`.
    pub fn filter_labels(&self, keep: impl Fn(usize) -> bool) -> SyntheticDataset {
        let (inputs, labels) = self
            .inputs
            .iter()
            .zip(&self.labels)
            .filter(|(_, &y)| keep(y))
            .map(|(x, &y)| (x.clone(), y))
            .unzip();
        SyntheticDataset {
            inputs,
            labels,
            k: self.k,
            recipe: None,
        }
    }

    /// Fails unless every input entry lies in `[0, 1]`.
    pub fn check_unit_range(&self) -> Result<()> {
        for x in &self.inputs {
            if x.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config("inputs must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}
