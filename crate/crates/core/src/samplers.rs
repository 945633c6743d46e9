//! MCMC over relaxed level-set posteriors: random-walk Metropolis, fixed-length
//! HMC, σ-annealing, summaries and the sample-failure rule.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::TargetSpec;
use crate::tensor::Tensor;

/// Log-posterior and classifier confidences at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub log_posterior: f64,
    pub confidence: Vec<f64>,
}

/// A target distribution the samplers can walk over.
pub trait Posterior: Sized {
    type State: Clone;

    fn target(&self) -> &TargetSpec;

    /// Same model and prior with a different level-set target.
    fn with_target(&self, target: TargetSpec) -> Result<Self>;

    fn num_classes(&self) -> usize;

    fn evaluate(&self, state: &Self::State) -> Result<Evaluation>;

    /// Log-posterior gradient; only differentiable latent spaces provide one.
    fn gradient(&self, _state: &Self::State) -> Result<(Evaluation, Tensor)> {
        Err(Error::Unsupported(
            "gradient of a non-differentiable generator".into(),
        ))
    }

    fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self::State>;

    /// Symmetric random-walk proposal; `None` means the move left the support
    /// and the step is rejected.
    fn propose<R: Rng + ?Sized>(
        &self,
        state: &Self::State,
        cfg: &RwmConfig,
        rng: &mut R,
    ) -> Option<Self::State>;

    /// Flat numeric view of a state for CSV output.
    fn latent_values(&self, state: &Self::State) -> Vec<f64>;

    /// Euclidean coordinates of a state, when the latent space has them.
    fn coordinates(&self, _state: &Self::State) -> Option<Tensor> {
        None
    }

    fn from_coordinates(&self, _z: Tensor) -> Option<Self::State> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RwmConfig {
    /// Gaussian jitter std per continuous coordinate.
    pub proposal_std: f64,
    /// Per discrete variable, probability of a uniform resample.
    pub flip_prob: f64,
    pub burn_in: usize,
    pub thin: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RwmConfig {
    fn default() -> Self {
        RwmConfig {
            proposal_std: 0.2,
            flip_prob: 0.3,
            burn_in: 500,
            thin: 1,
            max_iterations: 10_000_000,
            seed: 0,
        }
    }
}

impl RwmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.proposal_std >= 0.0 && self.proposal_std.is_finite()) {
            return Err(Error::Config("proposal std must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("flip probability must lie in [0, 1]".into()));
        }
        check_thin(self.thin)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        HmcConfig {
            step_size: 0.05,
            leapfrog_steps: 20,
            burn_in: 500,
            thin: 1,
            max_iterations: 10_000_000,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config("HMC step size must be positive".into()));
        }
        if self.leapfrog_steps == 0 {
            return Err(Error::Config("HMC needs at least one leapfrog step".into()));
        }
        check_thin(self.thin)
    }
}

fn check_thin(thin: usize) -> Result<()> {
    if thin == 0 {
        Err(Error::Config("thinning stride must be at least 1".into()))
    } else {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SamplerConfig {
    Rwm(RwmConfig),
    Hmc(HmcConfig),
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            SamplerConfig::Rwm(c) => c.validate(),
            SamplerConfig::Hmc(c) => c.validate(),
        }
    }

    fn schedule(&self) -> (usize, usize, usize, u64) {
        match self {
            SamplerConfig::Rwm(c) => (c.burn_in, c.thin, c.max_iterations, c.seed),
            SamplerConfig::Hmc(c) => (c.burn_in, c.thin, c.max_iterations, c.seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.schedule().3
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        match &mut c {
            SamplerConfig::Rwm(r) => r.seed = seed,
            SamplerConfig::Hmc(h) => h.seed = seed,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub log_posterior: f64,
    pub confidence: Vec<f64>,
}

/// Mutable MCMC state for one chain.
#[derive(Clone, Debug)]
pub struct Chain<S> {
    pub id: usize,
    state: S,
    eval: Evaluation,
    rng: ChaCha8Rng,
    iteration: usize,
    accepted: usize,
    proposed: usize,
    rejected_invalid: usize,
    trace: Vec<TraceEntry>,
}

impl<S: Clone> Chain<S> {
    /// Starts a chain at a draw from the prior.
    pub fn from_prior<P: Posterior<State = S>>(id: usize, post: &P, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last_err = None;
        for _ in 0..100 {
            let state = post.sample_prior(&mut rng)?;
            match post.evaluate(&state) {
                Ok(eval) => return Ok(Chain::with_state(id, state, eval, rng)),
                Err(e @ Error::NonFinite(_)) => last_err = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last_err.unwrap())
    }

    /// Starts a chain at a given state.
    pub fn at<P: Posterior<State = S>>(id: usize, post: &P, state: S, seed: u64) -> Result<Self> {
        let eval = post.evaluate(&state)?;
        Ok(Chain::with_state(
            id,
            state,
            eval,
            ChaCha8Rng::seed_from_u64(seed),
        ))
    }

    fn with_state(id: usize, state: S, eval: Evaluation, rng: ChaCha8Rng) -> Self {
        Chain {
            id,
            state,
            eval,
            rng,
            iteration: 0,
            accepted: 0,
            proposed: 0,
            rejected_invalid: 0,
            trace: Vec::new(),
        }
    }

    pub fn state(&self) -> &S {
        &self.state
    }

    pub fn log_posterior(&self) -> f64 {
        self.eval.log_posterior
    }

    pub fn confidence(&self) -> &[f64] {
        &self.eval.confidence
    }

    pub fn accepted(&self) -> usize {
        self.accepted
    }

    pub fn proposed(&self) -> usize {
        self.proposed
    }

    /// Proposals rejected because they left the support or evaluated non-finite.
    pub fn rejected_invalid(&self) -> usize {
        self.rejected_invalid
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// Re-evaluates the current state, e.g. after the target changes.
    pub fn refresh<P: Posterior<State = S>>(&mut self, post: &P) -> Result<()> {
        self.eval = post.evaluate(&self.state)?;
        Ok(())
    }

    /// Checks the cached log-posterior against a fresh evaluation.
    pub fn verify_cache<P: Posterior<State = S>>(&self, post: &P) -> Result<()> {
        let fresh = post.evaluate(&self.state)?.log_posterior;
        if (fresh - self.eval.log_posterior).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "cached log posterior {} differs from recomputation {fresh}",
                self.eval.log_posterior
            )));
        }
        Ok(())
    }

    fn finish_step(&mut self, accept: Option<(S, Evaluation)>) {
        self.proposed += 1;
        self.iteration += 1;
        if let Some((state, eval)) = accept {
            self.state = state;
            self.eval = eval;
            self.accepted += 1;
        }
        self.trace.push(TraceEntry {
            iteration: self.iteration,
            log_posterior: self.eval.log_posterior,
            confidence: self.eval.confidence.clone(),
        });
    }
}

/// One Metropolis step with a symmetric proposal; no Hastings correction.
pub fn rwm_step<P: Posterior>(
    chain: &mut Chain<P::State>,
    post: &P,
    cfg: &RwmConfig,
) -> Result<()> {
    let Some(candidate) = post.propose(&chain.state, cfg, &mut chain.rng) else {
        chain.rejected_invalid += 1;
        chain.finish_step(None);
        return Ok(());
    };
    let eval = match post.evaluate(&candidate) {
        Ok(e) => Some(e),
        Err(Error::NonFinite(_)) => None,
        Err(e) => return Err(e),
    };
    let u: f64 = chain.rng.random();
    match eval {
        Some(e) if u.ln() < e.log_posterior - chain.eval.log_posterior => {
            chain.finish_step(Some((candidate, e)))
        }
        Some(_) => chain.finish_step(None),
        None => {
            chain.rejected_invalid += 1;
            chain.finish_step(None)
        }
    }
    Ok(())
}

/// Integrates `L` leapfrog steps of `H(z, m) = −log p(z) + ½|m|²`.
///
/// `grad` returns the log-density and its gradient. Returns the end point, its
/// momentum and the log-density there.
pub fn leapfrog<F>(
    mut grad: F,
    z: &Tensor,
    momentum: &Tensor,
    step_size: f64,
    steps: usize,
) -> Result<(Tensor, Tensor, f64)>
where
    F: FnMut(&Tensor) -> Result<(f64, Tensor)>,
{
    let (_, g0) = grad(z)?;
    let mut q = z.data().to_vec();
    let mut p: Vec<f64> = momentum
        .data()
        .iter()
        .zip(g0.data())
        .map(|(m, g)| m + 0.5 * step_size * g)
        .collect();
    let mut logp = 0.0;
    for l in 0..steps {
        for (qi, pi) in q.iter_mut().zip(&p) {
            *qi += step_size * pi;
        }
        let (lp, g) = grad(&Tensor::new(z.shape().to_vec(), q.clone())?)?;
        logp = lp;
        let w = if l + 1 == steps { 0.5 } else { 1.0 };
        for (pi, gi) in p.iter_mut().zip(g.data()) {
            *pi += w * step_size * gi;
        }
    }
    Ok((
        Tensor::new(z.shape().to_vec(), q)?,
        Tensor::new(momentum.shape().to_vec(), p)?,
        logp,
    ))
}

/// One HMC transition with identity mass matrix.
pub fn hmc_step<P: Posterior>(
    chain: &mut Chain<P::State>,
    post: &P,
    cfg: &HmcConfig,
) -> Result<()> {
    let unsupported = || Error::Unsupported("HMC needs a continuous latent space".into());
    let start = post.coordinates(&chain.state).ok_or_else(unsupported)?;
    let momentum = Tensor::new(
        start.shape().to_vec(),
        (0..start.len())
            .map(|_| StandardNormal.sample(&mut chain.rng))
            .collect(),
    )?;
    let kinetic0 = 0.5 * momentum.data().iter().map(|m| m * m).sum::<f64>();
    let h0 = -chain.eval.log_posterior + kinetic0;

    let grad = |z: &Tensor| {
        let state = post.from_coordinates(z.clone()).ok_or_else(unsupported)?;
        post.gradient(&state).map(|(e, g)| (e.log_posterior, g))
    };
    let end = match leapfrog(grad, &start, &momentum, cfg.step_size, cfg.leapfrog_steps) {
        Ok((z, m, _)) => {
            let state = post.from_coordinates(z).ok_or_else(unsupported)?;
            match post.evaluate(&state) {
                Ok(eval) => {
                    let kinetic1 = 0.5 * m.data().iter().map(|v| v * v).sum::<f64>();
                    let h1 = -eval.log_posterior + kinetic1;
                    h1.is_finite().then_some((state, eval, h1))
                }
                Err(Error::NonFinite(_)) => None,
                Err(e) => return Err(e),
            }
        }
        Err(Error::NonFinite(_)) => None,
        Err(e) => return Err(e),
    };
    let u: f64 = chain.rng.random();
    match end {
        Some((state, eval, h1)) if u.ln() < h0 - h1 => chain.finish_step(Some((state, eval))),
        Some(_) => chain.finish_step(None),
        None => {
            chain.rejected_invalid += 1;
            chain.finish_step(None)
        }
    }
    Ok(())
}

/// One kept sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub chain_id: usize,
    pub iteration: usize,
    pub sigma: f64,
    pub latent: Vec<f64>,
    pub confidence: Vec<f64>,
    pub log_posterior: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    MeanDeviation,
    ChainStuck,
    NoSamples,
}

impl FailureReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureReason::MeanDeviation => "mean deviation",
            FailureReason::ChainStuck => "chain stuck",
            FailureReason::NoSamples => "no samples",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FailureCheck {
    pub success: bool,
    pub reason: Option<FailureReason>,
    /// Largest |mean observation − starred value| over the target's observations.
    pub max_deviation: f64,
}

pub const DEFAULT_FAILURE_BAND: f64 = 0.15;
pub const ACCEPTANCE_FLOOR: f64 = 0.01;

/// Declares a run failed when the mean of any observed expression misses its
/// starred value by more than `band`, or when acceptance fell below 1%.
pub fn detect_failure(
    records: &[SampleRecord],
    target: &TargetSpec,
    band: f64,
    acceptance_rate: f64,
) -> FailureCheck {
    if records.is_empty() {
        return FailureCheck {
            success: false,
            reason: Some(FailureReason::NoSamples),
            max_deviation: f64::INFINITY,
        };
    }
    let mut sums: Vec<f64> = Vec::new();
    let mut starred: Vec<f64> = Vec::new();
    for r in records {
        let obs = target.observations(&r.confidence);
        if sums.is_empty() {
            sums = vec![0.0; obs.len()];
            starred = obs.iter().map(|o| o.target).collect();
        }
        for (s, o) in sums.iter_mut().zip(&obs) {
            *s += o.value;
        }
    }
    let n = records.len() as f64;
    let max_deviation = sums
        .iter()
        .zip(&starred)
        .map(|(s, t)| (s / n - t).abs())
        .fold(0.0, f64::max);
    let reason = if acceptance_rate < ACCEPTANCE_FLOOR {
        Some(FailureReason::ChainStuck)
    } else if max_deviation > band {
        Some(FailureReason::MeanDeviation)
    } else {
        None
    };
    FailureCheck {
        success: reason.is_none(),
        reason,
        max_deviation,
    }
}

/// Kept samples of a run plus its diagnostics.
#[derive(Clone, Debug)]
pub struct ChainOutput<S> {
    pub records: Vec<SampleRecord>,
    pub states: Vec<S>,
    pub accepted: usize,
    pub proposed: usize,
    pub rejected_invalid: usize,
    pub trace: Vec<TraceEntry>,
    pub check: FailureCheck,
}

impl<S> ChainOutput<S> {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// The records when the run passed [`detect_failure`], otherwise an error naming the reason.
    pub fn into_success(self) -> Result<Vec<SampleRecord>> {
        match self.check.reason {
            None => Ok(self.records),
            Some(r) => Err(Error::SamplingFailure(r.as_str().to_string())),
        }
    }
}

/// Decreasing σ values; every entry but the last runs for `segment_iterations`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub sigmas: Vec<f64>,
    pub segment_iterations: usize,
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(Error::Config("anneal schedule is empty".into()));
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("anneal widths must be positive".into()));
        }
        if self.sigmas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config(
                "anneal schedule must be non-increasing".into(),
            ));
        }
        Ok(())
    }
}

fn step<P: Posterior>(
    chain: &mut Chain<P::State>,
    post: &P,
    sampler: &SamplerConfig,
) -> Result<()> {
    match sampler {
        SamplerConfig::Rwm(cfg) => rwm_step(chain, post, cfg),
        SamplerConfig::Hmc(cfg) => hmc_step(chain, post, cfg),
    }
}

/// Runs the final sampling segment: burn-in, then `n_keep` records at stride `thin`.
fn sample_segment<P>(
    chain: &mut Chain<P::State>,
    post: &P,
    sampler: &SamplerConfig,
    n_keep: usize,
) -> Result<(Vec<SampleRecord>, Vec<P::State>)>
where
    P: Posterior,
{
    let (burn_in, thin, _, _) = sampler.schedule();
    let sigma = post.target().sigma();
    for i in 0..burn_in {
        step(chain, post, sampler)?;
        if cfg!(debug_assertions) && i % 100 == 99 {
            chain.verify_cache(post)?;
        }
    }
    let mut records = Vec::with_capacity(n_keep);
    let mut states = Vec::with_capacity(n_keep);
    for k in 0..n_keep * thin {
        step(chain, post, sampler)?;
        if cfg!(debug_assertions) && k % 100 == 99 {
            chain.verify_cache(post)?;
        }
        if (k + 1) % thin == 0 {
            records.push(SampleRecord {
                chain_id: chain.id,
                iteration: chain.iteration,
                sigma,
                latent: post.latent_values(&chain.state),
                confidence: chain.eval.confidence.clone(),
                log_posterior: chain.eval.log_posterior,
            });
            states.push(chain.state.clone());
        }
    }
    Ok((records, states))
}

fn finish<S: Clone>(
    chain: Chain<S>,
    records: Vec<SampleRecord>,
    states: Vec<S>,
    target: &TargetSpec,
) -> ChainOutput<S> {
    let check = detect_failure(
        &records,
        target,
        DEFAULT_FAILURE_BAND,
        chain.acceptance_rate(),
    );
    ChainOutput {
        records,
        states,
        accepted: chain.accepted,
        proposed: chain.proposed,
        rejected_invalid: chain.rejected_invalid,
        trace: chain.trace,
        check,
    }
}

fn check_budget(sampler: &SamplerConfig, extra: usize, n_keep: usize) -> Result<()> {
    sampler.validate()?;
    if n_keep == 0 {
        return Err(Error::Config("n_keep must be at least 1".into()));
    }
    let (burn_in, thin, max_iterations, _) = sampler.schedule();
    let needed = extra + burn_in + n_keep * thin;
    if needed > max_iterations {
        return Err(Error::Config(format!(
            "run needs {needed} iterations, above max_iterations {max_iterations}"
        )));
    }
    Ok(())
}

/// Starts from the prior, discards burn-in, thins and keeps `n_keep` records.
/// The output's `check` carries the [`detect_failure`] verdict.
pub fn run_chain<P>(
    post: &P,
    sampler: &SamplerConfig,
    n_keep: usize,
    chain_id: usize,
) -> Result<ChainOutput<P::State>>
where
    P: Posterior,
{
    check_budget(sampler, 0, n_keep)?;
    let mut chain = Chain::from_prior(chain_id, post, sampler.seed())?;
    let (records, states) = sample_segment(&mut chain, post, sampler, n_keep)?;
    Ok(finish(chain, records, states, post.target()))
}

/// Like [`run_chain`], but walks the σ schedule first; only the final σ's samples are kept.
pub fn anneal_run<P>(
    post: &P,
    sampler: &SamplerConfig,
    schedule: &AnnealSchedule,
    n_keep: usize,
    chain_id: usize,
) -> Result<ChainOutput<P::State>>
where
    P: Posterior,
{
    schedule.validate()?;
    let warm = schedule.segment_iterations * (schedule.sigmas.len() - 1);
    check_budget(sampler, warm, n_keep)?;
    let first = post.with_target(post.target().with_sigma(schedule.sigmas[0]))?;
    let mut chain = Chain::from_prior(chain_id, &first, sampler.seed())?;
    let last = schedule.sigmas.len() - 1;
    for &sigma in &schedule.sigmas[..last] {
        let stage = post.with_target(post.target().with_sigma(sigma))?;
        chain.refresh(&stage)?;
        for _ in 0..schedule.segment_iterations {
            step(&mut chain, &stage, sampler)?;
        }
    }
    let final_post = post.with_target(post.target().with_sigma(schedule.sigmas[last]))?;
    chain.refresh(&final_post)?;
    let (records, states) = sample_segment(&mut chain, &final_post, sampler, n_keep)?;
    Ok(finish(chain, records, states, final_post.target()))
}

/// Mean and population std of one class's confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSummary {
    pub class: usize,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl std::fmt::Display for ClassSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

pub fn summarize(records: &[SampleRecord], classes: &[usize]) -> Result<Vec<ClassSummary>> {
    if records.is_empty() {
        return Err(Error::Contract("cannot summarise zero records".into()));
    }
    let n = records.len() as f64;
    classes
        .iter()
        .map(|&c| {
            if records.iter().any(|r| c >= r.confidence.len()) {
                return Err(Error::Config(format!("class {c} not present in records")));
            }
            let mean = records.iter().map(|r| r.confidence[c]).sum::<f64>() / n;
            let var = records
                .iter()
                .map(|r| (r.confidence[c] - mean).powi(2))
                .sum::<f64>()
                / n;
            Ok(ClassSummary {
                class: c,
                mean,
                std: var.sqrt(),
                n: records.len(),
            })
        })
        .collect()
}

/// Shortest round-trip-safe rendering used in every CSV (17 significant digits).
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes records as `chain_id,iter,sigma,z_*,conf_*,log_post`.
pub fn write_samples_csv<W: Write>(mut out: W, records: &[SampleRecord]) -> Result<()> {
    let (d, k) = records
        .first()
        .map_or((0, 0), |r| (r.latent.len(), r.confidence.len()));
    let mut header = vec!["chain_id".to_string(), "iter".into(), "sigma".into()];
    header.extend((0..d).map(|i| format!("z_{i}")));
    header.extend((0..k).map(|i| format!("conf_{i}")));
    header.push("log_post".into());
    writeln!(out, "{}", header.join(","))?;
    for r in records {
        let mut row = vec![
            r.chain_id.to_string(),
            r.iteration.to_string(),
            format_float(r.sigma),
        ];
        row.extend(r.latent.iter().map(|&v| format_float(v)));
        row.extend(r.confidence.iter().map(|&v| format_float(v)));
        row.push(format_float(r.log_posterior));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
