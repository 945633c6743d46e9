//! `trexd sample`: level-set sampling for every sampling regime.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use trex_core::nn::{Generator, MlpClassifier};
use trex_core::samplers::{
    anneal_run, run_chain, summarize, write_samples_csv, AnnealSchedule, ChainOutput, Posterior,
    SampleRecord, SamplerConfig,
};
use trex_core::scene::{render, Rasterizer, SceneGraph, ScenePosterior, ScenePrior, Shape};
use trex_core::targets::{InterpolationSchedule, RelaxedPosterior, TargetSpec};
use trex_core::Tensor;

use crate::error::{spec_err, CliResult};
use crate::output::{
    export_grid, spread_indices, square_side, summary_csv, OutputSet, GRID_COLUMNS, GRID_MAX_IMAGES,
};
use crate::parallel::parallel_map;
use crate::spec::{Kind, LoadedSpec};
use crate::Outcome;

/// The shape the scene count classifier counts, and the one misclassification
/// runs remove from the support.
pub const COUNTED_SHAPE: Shape = Shape::Square;
pub const NOVEL_SHAPE: Shape = Shape::Cross;

#[derive(Clone, Debug)]
pub struct RunPlan {
    pub name: String,
    pub target: TargetSpec,
}

/// One target's pooled chains.
#[derive(Clone, Debug)]
pub struct RunResult<S> {
    pub name: String,
    pub target: TargetSpec,
    pub records: Vec<SampleRecord>,
    pub states: Vec<S>,
    pub success: bool,
    pub reason: Option<String>,
    pub accepted: usize,
    pub proposed: usize,
    pub rejected_invalid: usize,
}

impl<S> RunResult<S> {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Chain settings shared by every run of a command.
#[derive(Clone, Debug)]
pub struct ChainPlan {
    pub sampler: SamplerConfig,
    pub anneal: Option<AnnealSchedule>,
    pub n_keep: usize,
    pub chains: usize,
}

impl ChainPlan {
    pub fn from_spec(spec: &LoadedSpec, seed: Option<u64>) -> CliResult<Self> {
        if spec.spec.chains == 0 {
            return Err(spec_err("chains must be at least 1"));
        }
        let n_keep = spec.n_keep();
        if n_keep == 0 {
            return Err(spec_err("n_keep must be at least 1"));
        }
        if let Some(a) = &spec.spec.anneal {
            a.validate()?;
        }
        Ok(ChainPlan {
            sampler: spec.sampler(seed)?,
            anneal: spec.spec.anneal.clone(),
            n_keep,
            chains: spec.spec.chains,
        })
    }
}

pub fn plan_runs(spec: &LoadedSpec, kind: Kind, k: usize) -> CliResult<Vec<RunPlan>> {
    let sigma = spec.sigma()?;
    let check_class = |c: usize| {
        if c >= k {
            Err(spec_err(format!("class {c} out of range for {k} classes")))
        } else {
            Ok(c)
        }
    };
    let check_pair = |[i, j]: [usize; 2]| {
        check_class(i)?;
        check_class(j)?;
        if i == j {
            return Err(spec_err(format!(
                "pair ({i}, {j}) must name two different classes"
            )));
        }
        Ok((i, j))
    };
    let classes = |min: usize| -> CliResult<Vec<RunPlan>> {
        if spec.spec.classes.is_empty() {
            return Err(spec_err("missing 'classes'"));
        }
        spec.spec
            .classes
            .iter()
            .map(|&c| {
                check_class(c)?;
                if c < min {
                    return Err(spec_err(format!(
                        "class {c} is not a misclassification target under this support"
                    )));
                }
                Ok(RunPlan {
                    name: format!("class_{c}"),
                    target: TargetSpec::HighConfidence { class: c, sigma },
                })
            })
            .collect()
    };
    let runs = match kind {
        Kind::HighConf => classes(0)?,
        // The support holds no counted shape, so every class but 0 is wrong.
        Kind::Misclassify | Kind::NovelClass => classes(1)?,
        Kind::AmbiguousPair => {
            if spec.spec.pairs.is_empty() {
                return Err(spec_err("missing 'pairs'"));
            }
            spec.spec
                .pairs
                .iter()
                .map(|&p| {
                    let (i, j) = check_pair(p)?;
                    Ok(RunPlan {
                        name: format!("pair_{i}v{j}"),
                        target: TargetSpec::AmbiguousPair {
                            i,
                            j,
                            sigma1: sigma,
                            sigma2: sigma,
                        },
                    })
                })
                .collect::<CliResult<_>>()?
        }
        Kind::UniformAmbiguous => vec![RunPlan {
            name: "uniform".into(),
            target: TargetSpec::UniformAmbiguous { sigma },
        }],
        Kind::Interpolate => {
            let [pair] = spec.spec.pairs.as_slice() else {
                return Err(spec_err("interpolate needs exactly one entry in 'pairs'"));
            };
            let (a, b) = check_pair(*pair)?;
            let mut sched = InterpolationSchedule::new(a, b, k, sigma)?;
            if let Some(alphas) = &spec.spec.alphas {
                sched.alphas = alphas.clone();
                sched.validate().map_err(|e| spec_err(e.to_string()))?;
            }
            sched
                .alphas
                .iter()
                .map(|&alpha| {
                    Ok(RunPlan {
                        name: format!("alpha_{alpha}"),
                        target: sched.target_from_alpha(alpha)?,
                    })
                })
                .collect::<CliResult<_>>()?
        }
        other => return Err(spec_err(format!("{other:?} is not a sampling experiment"))),
    };
    Ok(runs)
}

/// Runs every (target, chain) pair, pooling chains per target.
pub fn execute<P>(
    post: &P,
    runs: &[RunPlan],
    plan: &ChainPlan,
) -> CliResult<Vec<RunResult<P::State>>>
where
    P: Posterior + Sync,
    P::State: Send,
{
    let posts = runs
        .iter()
        .map(|r| post.with_target(r.target.clone()))
        .collect::<trex_core::Result<Vec<P>>>()?;
    let jobs: Vec<(usize, usize)> = (0..runs.len())
        .flat_map(|r| (0..plan.chains).map(move |c| (r, c)))
        .collect();
    let outputs = parallel_map(jobs, |(r, c)| {
        let sampler = plan
            .sampler
            .with_seed(plan.sampler.seed().wrapping_add(c as u64));
        match &plan.anneal {
            Some(a) => anneal_run(&posts[r], &sampler, a, plan.n_keep, c),
            None => run_chain(&posts[r], &sampler, plan.n_keep, c),
        }
    });
    let mut outputs = outputs.into_iter();
    let mut results = Vec::with_capacity(runs.len());
    for run in runs {
        let mut res = RunResult {
            name: run.name.clone(),
            target: run.target.clone(),
            records: Vec::new(),
            states: Vec::new(),
            success: true,
            reason: None,
            accepted: 0,
            proposed: 0,
            rejected_invalid: 0,
        };
        for _ in 0..plan.chains {
            let out: ChainOutput<P::State> = outputs.next().expect("one output per job")?;
            if !out.check.success && res.success {
                res.success = false;
                res.reason = out.check.reason.map(|r| r.as_str().to_string());
            }
            res.accepted += out.accepted;
            res.proposed += out.proposed;
            res.rejected_invalid += out.rejected_invalid;
            res.records.extend(out.records);
            res.states.extend(out.states);
        }
        if let Some(a) = &plan.anneal {
            res.target = res
                .target
                .with_sigma(*a.sigmas.last().expect("validated schedule"));
        }
        results.push(res);
    }
    Ok(results)
}

#[derive(Serialize)]
struct RunEntry<'a> {
    name: &'a str,
    target: &'a TargetSpec,
    success: bool,
    reason: Option<&'a str>,
    acceptance_rate: f64,
    rejected_invalid: usize,
    n_records: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    support_violations: Option<usize>,
}

#[derive(Serialize)]
struct SampleManifest<'a> {
    command: &'static str,
    kind: Kind,
    seed: u64,
    n_keep: usize,
    chains: usize,
    runs: Vec<RunEntry<'a>>,
}

/// Files for one run, under `dir` (empty for a single-run spec).
fn stage_run<S>(
    out: &mut OutputSet,
    dir: &Path,
    res: &RunResult<S>,
    k: usize,
    image: &dyn Fn(&S) -> CliResult<Option<Tensor>>,
) -> CliResult<()> {
    let mut csv = Vec::new();
    write_samples_csv(&mut csv, &res.records)?;
    out.add(dir.join("samples.csv"), csv);
    let summary = summarize(&res.records, &res.target.tracked_classes(k))?;
    out.add(
        dir.join("summary.csv"),
        summary_csv(
            &summary,
            res.target.sigma(),
            res.success,
            res.reason.as_deref(),
        ),
    );
    let mut images = Vec::new();
    for i in spread_indices(res.states.len(), GRID_MAX_IMAGES) {
        match image(&res.states[i])? {
            Some(img) => images.push(img),
            None => break,
        }
    }
    if !images.is_empty() {
        out.add(dir.join("grid.pgm"), export_grid(&images, GRID_COLUMNS)?);
    }
    Ok(())
}

fn stage_all<S>(
    kind: Kind,
    plan: &ChainPlan,
    k: usize,
    results: &[RunResult<S>],
    image: &dyn Fn(&S) -> CliResult<Option<Tensor>>,
    violations: Option<&dyn Fn(&RunResult<S>) -> usize>,
    extra: &dyn Fn(&mut OutputSet, &Path, &RunResult<S>) -> CliResult<()>,
) -> CliResult<(OutputSet, Outcome)> {
    let mut out = OutputSet::default();
    let multi = results.len() > 1;
    let mut entries = Vec::new();
    let mut index = String::from("run,success,reason,acceptance_rate\n");
    let mut failures = Vec::new();
    for res in results {
        let dir = if multi {
            PathBuf::from(&res.name)
        } else {
            PathBuf::new()
        };
        stage_run(&mut out, &dir, res, k, image)?;
        extra(&mut out, &dir, res)?;
        if !res.success {
            failures.push(format!(
                "{}: {}",
                res.name,
                res.reason.as_deref().unwrap_or("sampling failure")
            ));
        }
        index.push_str(&format!(
            "{},{},{},{}\n",
            res.name,
            res.success,
            res.reason.as_deref().unwrap_or(""),
            trex_core::samplers::format_float(res.acceptance_rate())
        ));
        entries.push(RunEntry {
            name: &res.name,
            target: &res.target,
            success: res.success,
            reason: res.reason.as_deref(),
            acceptance_rate: res.acceptance_rate(),
            rejected_invalid: res.rejected_invalid,
            n_records: res.records.len(),
            support_violations: violations.map(|f| f(res)),
        });
    }
    if multi {
        out.add("runs.csv", index.into_bytes());
    }
    out.add_json(
        "manifest.json",
        &SampleManifest {
            command: "sample",
            kind,
            seed: plan.sampler.seed(),
            n_keep: plan.n_keep,
            chains: plan.chains,
            runs: entries,
        },
    )?;
    Ok((out, Outcome { failures }))
}

/// The support a scene regime samples from.
pub fn regime_support(kind: Kind, prior: &ScenePrior) -> ScenePrior {
    let mut support = prior.clone();
    if matches!(kind, Kind::Misclassify | Kind::NovelClass)
        && !support.excluded.contains(&COUNTED_SHAPE)
    {
        support.excluded.push(COUNTED_SHAPE);
    }
    if kind == Kind::NovelClass && !support.novel.contains(&NOVEL_SHAPE) {
        support.novel.push(NOVEL_SHAPE);
    }
    support
}

pub fn cmd_sample(spec: &LoadedSpec, seed: Option<u64>) -> CliResult<(OutputSet, Outcome)> {
    let kind = spec.kind()?;
    if !kind.is_sampling() {
        return Err(spec_err(format!("{kind:?} is not a sampling experiment")));
    }
    let clf = spec.classifier()?;
    let k = clf.num_classes();
    spec.generator_spec()?;
    let plan = ChainPlan::from_spec(spec, seed)?;
    let runs = plan_runs(spec, kind, k)?;

    match spec.scene_prior() {
        Some(prior) => sample_scenes(kind, &plan, &runs, prior, clf, k),
        None => {
            if matches!(kind, Kind::Misclassify | Kind::NovelClass) {
                return Err(spec_err(format!(
                    "{kind:?} runs need a scene generator, whose support can exclude a class"
                )));
            }
            sample_latent(spec, kind, &plan, &runs, clf, k)
        }
    }
}

fn sample_latent(
    spec: &LoadedSpec,
    kind: Kind,
    plan: &ChainPlan,
    runs: &[RunPlan],
    clf: Arc<MlpClassifier>,
    k: usize,
) -> CliResult<(OutputSet, Outcome)> {
    let generator: Generator = spec.latent_generator()?;
    let post = RelaxedPosterior::new(generator.clone(), clf, runs[0].target.clone())?;
    let results = execute(&post, runs, plan)?;
    let side = square_side(generator.output_dim());
    let image = |z: &Tensor| -> CliResult<Option<Tensor>> {
        let Some(side) = side else { return Ok(None) };
        Ok(Some(generator.generate(z)?.reshape(vec![side, side])?))
    };
    stage_all(kind, plan, k, &results, &image, None, &|_, _, _| Ok(()))
}

fn sample_scenes(
    kind: Kind,
    plan: &ChainPlan,
    runs: &[RunPlan],
    prior: &ScenePrior,
    clf: Arc<MlpClassifier>,
    k: usize,
) -> CliResult<(OutputSet, Outcome)> {
    let support = regime_support(kind, prior);
    let raster = Rasterizer::default();
    let post = ScenePosterior::new(support.clone(), raster, clf, runs[0].target.clone())?;
    let results = execute(&post, runs, plan)?;
    let image = |s: &SceneGraph| -> CliResult<Option<Tensor>> { Ok(Some(render(&raster, s))) };
    let violations =
        |res: &RunResult<SceneGraph>| res.states.iter().filter(|s| !support.supports(s)).count();
    let scenes = |out: &mut OutputSet, dir: &Path, res: &RunResult<SceneGraph>| {
        out.add_json(dir.join("scenes.json"), &res.states)
    };
    let check: Option<&dyn Fn(&RunResult<SceneGraph>) -> usize> = Some(&violations);
    let (out, outcome) = stage_all(kind, plan, k, &results, &image, check, &scenes)?;
    for res in &results {
        let bad = violations(res);
        if bad > 0 {
            return Err(crate::error::CliError::Core(trex_core::Error::Contract(
                format!(
                    "{bad} kept scenes in run {} fall outside the sampling support",
                    res.name
                ),
            )));
        }
    }
    Ok((out, outcome))
}
