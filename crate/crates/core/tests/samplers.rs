mod common;

use std::sync::Arc;

use common::{
    latent_column, logistic_fixture, logistic_log_density, mean, variance, GridOracle, StdNormal,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use trex_core::nn::{AnalyticGenerator, MlpClassifier};
use trex_core::samplers::{
    anneal_run, hmc_step, leapfrog, run_chain, rwm_step, AnnealSchedule, Chain, HmcConfig,
    RwmConfig, SamplerConfig,
};
use trex_core::targets::{RelaxedPosterior, TargetSpec};
use trex_core::{Activation, Tensor};

fn rwm(proposal_std: f64, thin: usize, seed: u64) -> SamplerConfig {
    SamplerConfig::Rwm(RwmConfig {
        proposal_std,
        thin,
        seed,
        ..Default::default()
    })
}

fn hmc(step_size: f64, leapfrog_steps: usize, seed: u64) -> SamplerConfig {
    SamplerConfig::Hmc(HmcConfig {
        step_size,
        leapfrog_steps,
        seed,
        ..Default::default()
    })
}

/// Identity generator into a random classifier, with a likelihood too wide to matter.
fn prior_only(dim: usize) -> RelaxedPosterior {
    RelaxedPosterior::new(
        AnalyticGenerator::identity(dim).unwrap().into(),
        Arc::new(MlpClassifier::random(&[dim, 4, 3], Activation::Tanh, 2).unwrap()),
        TargetSpec::HighConfidence {
            class: 0,
            sigma: 1e6,
        },
    )
    .unwrap()
}

#[test]
fn logistic_histograms_match_grid_oracle() {
    let post = logistic_fixture(0.05);
    let oracle = GridOracle::new(|z| logistic_log_density(z, 0.05));
    for cfg in [rwm(0.08, 10, 1), hmc(0.01, 10, 1)] {
        let out = run_chain(&post, &cfg, 20_000, 0).unwrap();
        assert_eq!(out.records.len(), 20_000);
        let tv = oracle.tv(&latent_column(&out.records, 0));
        assert!(tv <= 0.05, "{cfg:?}: tv {tv}");
    }
}

#[test]
fn flat_target_accepts_every_step() {
    let post = StdNormal::flat(3);
    let mut chain = Chain::from_prior(0, &post, 5).unwrap();
    let cfg = RwmConfig::default();
    for _ in 0..1000 {
        rwm_step(&mut chain, &post, &cfg).unwrap();
    }
    assert_eq!(chain.proposed(), 1000);
    assert_eq!(chain.acceptance_rate(), 1.0);
}

#[test]
fn prior_only_chain_recovers_prior_mean() {
    let out = run_chain(&prior_only(2), &rwm(1.0, 1, 9), 20_000, 0).unwrap();
    for c in 0..2 {
        let m = mean(&latent_column(&out.records, c));
        assert!(m.abs() <= 0.05, "coordinate {c}: mean {m}");
    }
}

#[test]
fn prior_only_samples_pass_kolmogorov_smirnov() {
    let n = 2000;
    let out = run_chain(&prior_only(2), &hmc(0.3, 5, 4).with_thin(3), n, 0).unwrap();
    let normal = Normal::new(0.0, 1.0).unwrap();
    // Asymptotic critical value at α = 0.01.
    let critical = 1.628 / (n as f64).sqrt();
    for c in 0..2 {
        let mut xs = latent_column(&out.records, c);
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = normal.cdf(x);
                (f - i as f64 / n as f64).max((i + 1) as f64 / n as f64 - f)
            })
            .fold(0.0, f64::max);
        assert!(d < critical, "coordinate {c}: D = {d}");
    }
}

trait Thin {
    fn with_thin(self, thin: usize) -> Self;
}

impl Thin for SamplerConfig {
    fn with_thin(mut self, t: usize) -> Self {
        match &mut self {
            SamplerConfig::Rwm(c) => c.thin = t,
            SamplerConfig::Hmc(c) => c.thin = t,
        }
        self
    }
}

#[test]
fn hmc_on_standard_normal() {
    let post = StdNormal::new(3);
    let out = run_chain(&post, &hmc(0.1, 10, 12), 20_000, 0).unwrap();
    assert!(
        out.acceptance_rate() >= 0.95,
        "acceptance {}",
        out.acceptance_rate()
    );
    for c in 0..3 {
        let v = variance(&latent_column(&out.records, c));
        assert!((v - 1.0).abs() <= 0.05, "coordinate {c}: variance {v}");
    }
}

/// Gradient of `log N(z; 0, diag(s²))`.
fn quadratic(scales: &'static [f64]) -> impl Fn(&Tensor) -> trex_core::Result<(f64, Tensor)> {
    move |z: &Tensor| {
        let lp = -0.5
            * z.data()
                .iter()
                .zip(scales)
                .map(|(v, s)| (v / s).powi(2))
                .sum::<f64>();
        let g = z
            .data()
            .iter()
            .zip(scales)
            .map(|(v, s)| -v / (s * s))
            .collect();
        Ok((lp, Tensor::vector(g)?))
    }
}

#[test]
fn leapfrog_is_reversible() {
    let grad = quadratic(&[1.0, 0.5, 2.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let draw = |rng: &mut ChaCha8Rng| {
            Tensor::vector((0..3).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
        };
        let (z0, m0) = (draw(&mut rng), draw(&mut rng));
        let (z1, m1, _) = leapfrog(&grad, &z0, &m0, 0.1, 25).unwrap();
        let (z2, m2, _) = leapfrog(&grad, &z1, &m1.map(|v| -v).unwrap(), 0.1, 25).unwrap();
        for (a, b) in z0.data().iter().zip(z2.data()) {
            assert!((a - b).abs() <= 1e-8);
        }
        for (a, b) in m0.data().iter().zip(m2.data()) {
            assert!((a + b).abs() <= 1e-8);
        }
    }
}

#[test]
fn energy_error_is_second_order_in_step_size() {
    let grad = quadratic(&[1.0, 0.5, 2.0]);
    let energy = |z: &Tensor, m: &Tensor| {
        let (lp, _) = grad(z).unwrap();
        -lp + 0.5 * m.data().iter().map(|v| v * v).sum::<f64>()
    };
    let mean_error = |eps: f64, steps: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut total = 0.0;
        for _ in 0..400 {
            let z0 =
                Tensor::vector((0..3).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
            let m0 =
                Tensor::vector((0..3).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
            let (z1, m1, _) = leapfrog(&grad, &z0, &m0, eps, steps).unwrap();
            total += (energy(&z1, &m1) - energy(&z0, &m0)).abs();
        }
        total / 400.0
    };
    let ratio = mean_error(0.1, 10) / mean_error(0.05, 20);
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn diverging_trajectory_is_rejected() {
    let post = StdNormal::new(2);
    let mut chain = Chain::from_prior(0, &post, 1).unwrap();
    // A huge step diverges to an infinite energy, which must be rejected, not accepted.
    let cfg = HmcConfig {
        step_size: 1e200,
        leapfrog_steps: 3,
        ..Default::default()
    };
    let before = chain.state().clone();
    hmc_step(&mut chain, &post, &cfg).unwrap();
    assert_eq!(chain.state(), &before);
    assert_eq!(chain.accepted(), 0);
}

#[test]
fn runs_are_seed_deterministic() {
    let post = logistic_fixture(0.05);
    for cfg in [rwm(0.1, 2, 7), hmc(0.02, 10, 7)] {
        let a = run_chain(&post, &cfg, 300, 0).unwrap();
        let b = run_chain(&post, &cfg, 300, 0).unwrap();
        let c = run_chain(&post, &cfg.with_seed(8), 300, 0).unwrap();
        assert_eq!(a.records, b.records);
        assert_ne!(a.records, c.records);
    }
}

#[test]
fn single_entry_schedule_is_a_plain_run() {
    let post = logistic_fixture(0.05);
    let cfg = hmc(0.02, 10, 3);
    let plain = run_chain(&post, &cfg, 200, 0).unwrap();
    let schedule = AnnealSchedule {
        sigmas: vec![0.05],
        segment_iterations: 100,
    };
    let annealed = anneal_run(&post, &cfg, &schedule, 200, 0).unwrap();
    assert_eq!(plain.records, annealed.records);
}

#[test]
fn annealed_records_carry_final_sigma() {
    let post = logistic_fixture(0.05);
    let schedule = AnnealSchedule {
        sigmas: vec![0.2, 0.1, 0.05],
        segment_iterations: 50,
    };
    let out = anneal_run(&post, &rwm(0.1, 1, 2), &schedule, 100, 3).unwrap();
    assert!(out
        .records
        .iter()
        .all(|r| r.sigma == 0.05 && r.chain_id == 3));
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
}

#[test]
fn annealing_matches_or_beats_cold_start() {
    let target = TargetSpec::HighConfidence {
        class: 1,
        sigma: 0.05,
    };
    let post = RelaxedPosterior::new(
        AnalyticGenerator::identity(1).unwrap().into(),
        Arc::new(common::logistic_classifier()),
        target,
    )
    .unwrap();
    let schedule = AnnealSchedule {
        sigmas: vec![0.2, 0.1, 0.05],
        segment_iterations: 100,
    };
    let deviation = |recs: &[trex_core::samplers::SampleRecord]| {
        mean(
            &recs
                .iter()
                .map(|r| (r.confidence[1] - 1.0).abs())
                .collect::<Vec<_>>(),
        )
    };
    let (mut warm, mut cold) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let a = anneal_run(
            &post,
            &hmc(0.05, 10, seed).with_burn_in(100),
            &schedule,
            200,
            0,
        )
        .unwrap();
        // Same total budget: the cold run spends the warm-up segments as burn-in.
        let b = run_chain(&post, &hmc(0.05, 10, seed).with_burn_in(300), 200, 0).unwrap();
        warm.push(deviation(&a.records));
        cold.push(deviation(&b.records));
    }
    assert!(
        median(warm.clone()) <= median(cold.clone()),
        "{warm:?} vs {cold:?}"
    );
}

trait BurnIn {
    fn with_burn_in(self, n: usize) -> Self;
}

impl BurnIn for SamplerConfig {
    fn with_burn_in(mut self, n: usize) -> Self {
        match &mut self {
            SamplerConfig::Rwm(c) => c.burn_in = n,
            SamplerConfig::Hmc(c) => c.burn_in = n,
        }
        self
    }
}

#[test]
fn cache_matches_recomputation_along_a_chain() {
    let post = logistic_fixture(0.1);
    let mut chain = Chain::from_prior(0, &post, 6).unwrap();
    let cfg = HmcConfig::default();
    for _ in 0..300 {
        hmc_step(&mut chain, &post, &cfg).unwrap();
        chain.verify_cache(&post).unwrap();
    }
}

#[test]
fn budget_and_config_errors() {
    let post = logistic_fixture(0.05);
    let tight = SamplerConfig::Rwm(RwmConfig {
        max_iterations: 10,
        ..Default::default()
    });
    assert!(run_chain(&post, &tight, 5, 0).is_err());
    assert!(run_chain(&post, &rwm(0.1, 0, 1), 5, 0).is_err());
    assert!(run_chain(&post, &rwm(0.1, 1, 1), 0, 0).is_err());
    let bad = AnnealSchedule {
        sigmas: vec![0.05, 0.1],
        segment_iterations: 10,
    };
    assert!(anneal_run(&post, &rwm(0.1, 1, 1), &bad, 5, 0).is_err());
}
