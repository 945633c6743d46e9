//! Non-differentiable scene-graph world: a prior over small 2-D scenes, a
//! 32×32 grayscale rasterizer, the mixed Gaussian/categorical proposal and
//! the object-removal probe.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::MlpClassifier;
use crate::samplers::{Evaluation, Posterior, RwmConfig};
use crate::targets::TargetSpec;
use crate::tensor::Tensor;

pub const CANVAS_SIDE: usize = 32;
pub const NUM_COLORS: usize = 4;
pub const SIZE_RANGE: (f64, f64) = (2.0, 6.0);
/// Object centres stay inside `[6, 26]²` so the largest object fits the canvas.
pub const POSITION_RANGE: (f64, f64) = (6.0, 26.0);
pub const MAX_OBJECTS: usize = 6;
pub const MIN_SEPARATION: f64 = 0.8;
const PLACEMENT_TRIES: usize = 1000;

/// Gray level of each color index.
pub const GRAY_LEVELS: [f64; NUM_COLORS] = [0.4, 0.6, 0.8, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Disc,
    Triangle,
    /// Novel class, only drawn when a prior lists it.
    Cross,
}

impl Shape {
    pub const BASE: [Shape; 3] = [Shape::Square, Shape::Disc, Shape::Triangle];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether the pixel offset `(dx, dy)` from the centre is covered.
    fn covers(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            Shape::Square => dx.abs() <= r && dy.abs() <= r,
            Shape::Disc => dx * dx + dy * dy <= r * r,
            // Upright isosceles triangle with apex at (0, −r) and base at y = r.
            Shape::Triangle => dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2.0,
            Shape::Cross => {
                let arm = r / 3.0;
                (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: usize,
    pub size: f64,
    pub cx: f64,
    pub cy: f64,
}

impl SceneObject {
    fn in_ranges(&self) -> bool {
        self.color < NUM_COLORS
            && (SIZE_RANGE.0..=SIZE_RANGE.1).contains(&self.size)
            && (POSITION_RANGE.0..=POSITION_RANGE.1).contains(&self.cx)
            && (POSITION_RANGE.0..=POSITION_RANGE.1).contains(&self.cy)
    }
}

/// Ordered object list; serialises as a JSON array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SceneGraph {
    pub objects: Vec<SceneObject>,
}

impl SceneGraph {
    pub fn new(objects: Vec<SceneObject>) -> Self {
        SceneGraph { objects }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn count_shape(&self, shape: Shape) -> usize {
        self.objects.iter().filter(|o| o.shape == shape).count()
    }

    pub fn contains_shape(&self, shape: Shape) -> bool {
        self.count_shape(shape) > 0
    }

    /// Pairwise centre distance at least `0.8·(size_a + size_b)`.
    pub fn separated(&self) -> bool {
        let objs = &self.objects;
        for a in 0..objs.len() {
            for b in a + 1..objs.len() {
                let d =
                    ((objs[a].cx - objs[b].cx).powi(2) + (objs[a].cy - objs[b].cy).powi(2)).sqrt();
                if d < MIN_SEPARATION * (objs[a].size + objs[b].size) {
                    return false;
                }
            }
        }
        true
    }

    pub fn without(&self, index: usize) -> SceneGraph {
        let mut objects = self.objects.clone();
        objects.remove(index);
        SceneGraph { objects }
    }

    /// `[shape, color, size, cx, cy]` per object.
    pub fn flatten(&self) -> Vec<f64> {
        self.objects
            .iter()
            .flat_map(|o| [o.shape.index() as f64, o.color as f64, o.size, o.cx, o.cy])
            .collect()
    }
}

/// Distribution over scenes with a configurable shape support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenePrior {
    pub count_min: usize,
    pub count_max: usize,
    pub excluded: Vec<Shape>,
    pub novel: Vec<Shape>,
}

impl Default for ScenePrior {
    fn default() -> Self {
        ScenePrior {
            count_min: 1,
            count_max: 4,
            excluded: Vec::new(),
            novel: Vec::new(),
        }
    }
}

impl ScenePrior {
    /// The full-support prior the square-counting classifier is trained on.
    pub fn counting_default() -> Self {
        ScenePrior::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.count_min == 0 || self.count_min > self.count_max || self.count_max > MAX_OBJECTS {
            return Err(Error::Config(format!(
                "object count range [{}, {}] must lie within [1, {MAX_OBJECTS}]",
                self.count_min, self.count_max
            )));
        }
        if self.allowed_shapes().is_empty() {
            return Err(Error::Config("scene support has no allowed shapes".into()));
        }
        Ok(())
    }

    /// Base shapes plus novel ones, minus exclusions, in a fixed order.
    pub fn allowed_shapes(&self) -> Vec<Shape> {
        let mut shapes: Vec<Shape> = Shape::BASE
            .iter()
            .chain(&self.novel)
            .copied()
            .filter(|s| !self.excluded.contains(s))
            .collect();
        shapes.sort();
        shapes.dedup();
        shapes
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SceneGraph> {
        self.validate()?;
        let count = rng.random_range(self.count_min..=self.count_max);
        self.sample_with_count(count, rng)
    }

    /// Draws attributes, then rejection-samples sizes and positions for the whole
    /// scene until the separation constraint holds.
    pub fn sample_with_count<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
    ) -> Result<SceneGraph> {
        self.validate()?;
        let shapes = self.allowed_shapes();
        let mut objects: Vec<SceneObject> = (0..count)
            .map(|_| SceneObject {
                shape: shapes[rng.random_range(0..shapes.len())],
                color: rng.random_range(0..NUM_COLORS),
                size: 0.0,
                cx: 0.0,
                cy: 0.0,
            })
            .collect();
        for _ in 0..PLACEMENT_TRIES {
            for o in objects.iter_mut() {
                o.size = rng.random_range(SIZE_RANGE.0..=SIZE_RANGE.1);
                o.cx = rng.random_range(POSITION_RANGE.0..=POSITION_RANGE.1);
                o.cy = rng.random_range(POSITION_RANGE.0..=POSITION_RANGE.1);
            }
            let scene = SceneGraph::new(objects.clone());
            if scene.separated() {
                return Ok(scene);
            }
        }
        Err(Error::Config(format!(
            "could not place {count} separated objects in {PLACEMENT_TRIES} tries"
        )))
    }

    /// Whether `s` lies in this prior's support.
    pub fn supports(&self, s: &SceneGraph) -> bool {
        let shapes = self.allowed_shapes();
        (self.count_min..=self.count_max).contains(&s.len())
            && s.objects
                .iter()
                .all(|o| o.in_ranges() && shapes.contains(&o.shape))
            && s.separated()
    }
}

/// Log prior density: uniform count, uniform categorical shape and color, and
/// uniform size and position densities. `−∞` outside the support.
///
/// The separation constraint only truncates the support; its normaliser is a
/// per-count constant and is left out.
pub fn log_scene_prior(prior: &ScenePrior, s: &SceneGraph) -> f64 {
    if !prior.supports(s) {
        return f64::NEG_INFINITY;
    }
    let n_counts = (prior.count_max - prior.count_min + 1) as f64;
    let n_shapes = prior.allowed_shapes().len() as f64;
    let size_width = SIZE_RANGE.1 - SIZE_RANGE.0;
    let area = (POSITION_RANGE.1 - POSITION_RANGE.0).powi(2);
    let per_object = -n_shapes.ln() - (NUM_COLORS as f64).ln() - size_width.ln() - area.ln();
    -n_counts.ln() + per_object * s.len() as f64
}

/// Deterministic painter's-order rasterizer with no anti-aliasing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rasterizer {
    pub side: usize,
}

impl Default for Rasterizer {
    fn default() -> Self {
        Rasterizer { side: CANVAS_SIDE }
    }
}

/// Renders `s` to a `[side×side]` image in `[0, 1]`; later objects overdraw earlier ones.
pub fn render(r: &Rasterizer, s: &SceneGraph) -> Tensor {
    let n = r.side;
    let mut pixels = vec![0.0; n * n];
    for o in &s.objects {
        let gray = GRAY_LEVELS[o.color.min(NUM_COLORS - 1)];
        let lo_y = ((o.cy - o.size - 1.0).floor().max(0.0)) as usize;
        let hi_y = ((o.cy + o.size + 1.0).ceil() as usize).min(n);
        let lo_x = ((o.cx - o.size - 1.0).floor().max(0.0)) as usize;
        let hi_x = ((o.cx + o.size + 1.0).ceil() as usize).min(n);
        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let dx = x as f64 + 0.5 - o.cx;
                let dy = y as f64 + 0.5 - o.cy;
                if o.shape.covers(dx, dy, o.size) {
                    pixels[y * n + x] = gray;
                }
            }
        }
    }
    Tensor::raw(vec![n, n], pixels)
}

fn normal_log_density(x: f64, std: f64) -> f64 {
    -0.5 * (2.0 * PI).ln() - std.ln() - x * x / (2.0 * std * std)
}

/// Mixed kernel: Gaussian jitter (std `cfg.proposal_std`, in pixels) on every
/// object's size and centre, plus an independent uniform resample of shape and
/// of color with probability `cfg.flip_prob` each. Proposals that leave the
/// support return `None` and are rejected whole.
pub fn propose_scene<R: Rng + ?Sized>(
    s: &SceneGraph,
    cfg: &RwmConfig,
    support: &ScenePrior,
    rng: &mut R,
) -> Option<SceneGraph> {
    let shapes = support.allowed_shapes();
    let std = cfg.proposal_std;
    let mut jitter = |v: f64| {
        let e: f64 = StandardNormal.sample(rng);
        v + std * e
    };
    let mut objects = Vec::with_capacity(s.len());
    for o in &s.objects {
        let size = jitter(o.size);
        let cx = jitter(o.cx);
        let cy = jitter(o.cy);
        objects.push(SceneObject { size, cx, cy, ..*o });
    }
    for o in objects.iter_mut() {
        if rng.random::<f64>() < cfg.flip_prob {
            o.shape = shapes[rng.random_range(0..shapes.len())];
        }
        if rng.random::<f64>() < cfg.flip_prob {
            o.color = rng.random_range(0..NUM_COLORS);
        }
    }
    let proposal = SceneGraph::new(objects);
    support.supports(&proposal).then_some(proposal)
}

/// Log density of the mixed kernel moving `from` to `to` (before support rejection).
pub fn proposal_log_density(
    from: &SceneGraph,
    to: &SceneGraph,
    cfg: &RwmConfig,
    support: &ScenePrior,
) -> f64 {
    if from.len() != to.len() {
        return f64::NEG_INFINITY;
    }
    let n_shapes = support.allowed_shapes().len() as f64;
    let categorical = |same: bool, n: f64| {
        let p = cfg.flip_prob / n + if same { 1.0 - cfg.flip_prob } else { 0.0 };
        p.ln()
    };
    from.objects
        .iter()
        .zip(&to.objects)
        .map(|(a, b)| {
            normal_log_density(b.size - a.size, cfg.proposal_std)
                + normal_log_density(b.cx - a.cx, cfg.proposal_std)
                + normal_log_density(b.cy - a.cy, cfg.proposal_std)
                + categorical(a.shape == b.shape, n_shapes)
                + categorical(a.color == b.color, NUM_COLORS as f64)
        })
        .sum()
}

/// Confidence after deleting one object.
#[derive(Clone, Debug, PartialEq)]
pub struct RemovalEffect {
    pub index: usize,
    pub confidence: f64,
    pub drop: f64,
}

/// Re-renders the scene without each object in turn and reports the
/// target-class confidence, largest drop first.
pub fn remove_object_probe(
    s: &SceneGraph,
    raster: &Rasterizer,
    classifier: &MlpClassifier,
    class: usize,
) -> Result<Vec<RemovalEffect>> {
    if s.len() < 2 {
        return Err(Error::Config(
            "removal probe needs at least two objects".into(),
        ));
    }
    if class >= classifier.num_classes() {
        return Err(Error::Config(format!("class {class} out of range")));
    }
    let classify = |scene: &SceneGraph| -> Result<f64> {
        let img = render(raster, scene);
        Ok(classifier.classify(&img.reshape(vec![img.len()])?)?.data()[class])
    };
    let base = classify(s)?;
    let mut effects = (0..s.len())
        .map(|i| {
            let confidence = classify(&s.without(i))?;
            Ok(RemovalEffect {
                index: i,
                confidence,
                drop: base - confidence,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    effects.sort_by(|a, b| b.drop.total_cmp(&a.drop).then(a.index.cmp(&b.index)));
    Ok(effects)
}

/// Relaxed level-set posterior over scene graphs.
#[derive(Clone, Debug)]
pub struct ScenePosterior {
    prior: ScenePrior,
    raster: Rasterizer,
    classifier: Arc<MlpClassifier>,
    target: TargetSpec,
}

impl ScenePosterior {
    pub fn new(
        prior: ScenePrior,
        raster: Rasterizer,
        classifier: Arc<MlpClassifier>,
        target: TargetSpec,
    ) -> Result<Self> {
        prior.validate()?;
        if classifier.input_dim() != raster.side * raster.side {
            return Err(Error::dim(
                "scene posterior",
                format!(
                    "classifier reads {} values, renderer emits {}",
                    classifier.input_dim(),
                    raster.side * raster.side
                ),
            ));
        }
        target.validate(classifier.num_classes())?;
        Ok(ScenePosterior {
            prior,
            raster,
            classifier,
            target,
        })
    }

    pub fn prior(&self) -> &ScenePrior {
        &self.prior
    }

    pub fn rasterizer(&self) -> &Rasterizer {
        &self.raster
    }

    pub fn classifier(&self) -> &Arc<MlpClassifier> {
        &self.classifier
    }

    pub fn confidence(&self, s: &SceneGraph) -> Result<Tensor> {
        let img = render(&self.raster, s);
        self.classifier.classify(&img.reshape(vec![img.len()])?)
    }
}

impl Posterior for ScenePosterior {
    type State = SceneGraph;

    fn target(&self) -> &TargetSpec {
        &self.target
    }

    fn with_target(&self, target: TargetSpec) -> Result<Self> {
        ScenePosterior::new(
            self.prior.clone(),
            self.raster,
            Arc::clone(&self.classifier),
            target,
        )
    }

    fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    fn evaluate(&self, s: &SceneGraph) -> Result<Evaluation> {
        let log_prior = log_scene_prior(&self.prior, s);
        if !log_prior.is_finite() {
            return Err(Error::NonFinite("scene outside prior support".into()));
        }
        let conf = self.confidence(s)?;
        let ll = self.target.log_likelihood(&conf)?;
        Ok(Evaluation {
            log_posterior: log_prior + ll,
            confidence: conf.into_data(),
        })
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SceneGraph> {
        self.prior.sample(rng)
    }

    fn propose<R: Rng + ?Sized>(
        &self,
        s: &SceneGraph,
        cfg: &RwmConfig,
        rng: &mut R,
    ) -> Option<SceneGraph> {
        propose_scene(s, cfg, &self.prior, rng)
    }

    fn latent_values(&self, s: &SceneGraph) -> Vec<f64> {
        s.flatten()
    }
}
