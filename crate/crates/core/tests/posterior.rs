mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use common::{gradient_configs, logistic_fixture, logistic_log_density, random_tensor, GridOracle};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trex_core::autodiff::{finite_difference_gradient, max_relative_error};
use trex_core::nn::{AnalyticGenerator, MlpClassifier, VaeModel};
use trex_core::targets::{RelaxedPosterior, TargetSpec};
use trex_core::{Activation, Tensor};

#[test]
fn posterior_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for post in gradient_configs() {
        for _ in 0..100 {
            let z = random_tensor(&mut rng, &[post.latent_dim()], 2.0);
            let g = post.grad_log_posterior(&z).unwrap();
            let fd = finite_difference_gradient(|t| post.log_posterior(t), &z, 1e-5).unwrap();
            worst = worst.max(max_relative_error(&g, &fd));
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn decoder_gradient_matches_finite_differences() {
    let vae = VaeModel::random(5, 10, 9).unwrap();
    let w = ChaCha8Rng::seed_from_u64(1).random_range(0.0..1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let weights = random_tensor(&mut rng, &[25], 1.0);
    // Scalar read-out of the decoded image so the full Jacobian is exercised.
    let f = |z: &Tensor| -> trex_core::Result<f64> {
        let x = vae.decode(z)?;
        Ok(x.dot(&weights)? + w)
    };
    for _ in 0..20 {
        let z = random_tensor(&mut rng, &[5], 2.0);
        let mut tape = trex_core::autodiff::Tape::new();
        let zv = tape.leaf(z.reshape(vec![1, 5]).unwrap());
        let x = vae.decode_on(&mut tape, zv, false).unwrap();
        let wv = tape.constant(weights.reshape(vec![1, 25]).unwrap());
        let p = tape.mul(x, wv).unwrap();
        let s = tape.sum(p).unwrap();
        let g = tape.backward(s).unwrap().wrt(zv).reshape(vec![5]).unwrap();
        let fd = finite_difference_gradient(f, &z, 1e-5).unwrap();
        assert!(max_relative_error(&g, &fd) <= 1e-4);
    }
}

#[test]
fn symmetric_fixture_is_stationary_at_origin() {
    let post = logistic_fixture(0.05);
    let g = post
        .grad_log_posterior(&Tensor::vector(vec![0.0]).unwrap())
        .unwrap();
    assert!(g.data()[0].abs() < 1e-12);
}

#[test]
fn flat_likelihood_leaves_the_prior() {
    let post = logistic_fixture(1e6);
    let diff: Vec<f64> = [-2.0, -0.3, 0.0, 0.7, 3.1]
        .iter()
        .map(|&z: &f64| {
            let lp = post
                .log_posterior(&Tensor::vector(vec![z]).unwrap())
                .unwrap();
            lp - (-0.5 * z * z - 0.5 * (2.0 * PI).ln())
        })
        .collect();
    assert!(diff.iter().all(|d| (d - diff[0]).abs() < 1e-9));
}

#[test]
fn halving_sigma_quadruples_likelihood_gradient() {
    let clf = Arc::new(MlpClassifier::random(&[3, 6, 4], Activation::Tanh, 8).unwrap());
    let make = |sigma| {
        RelaxedPosterior::new(
            AnalyticGenerator::identity(3).unwrap().into(),
            clf.clone(),
            TargetSpec::HighConfidence { class: 1, sigma },
        )
        .unwrap()
    };
    let z = Tensor::vector(vec![0.3, -0.8, 1.1]).unwrap();
    let lik_grad = |p: &RelaxedPosterior| {
        // Remove the prior's −z.
        let g = p.grad_log_posterior(&z).unwrap();
        g.zip_map(&z, |a, b| a + b).unwrap()
    };
    let (g1, g2) = (lik_grad(&make(0.1)), lik_grad(&make(0.05)));
    for (a, b) in g1.data().iter().zip(g2.data()) {
        assert!((b - 4.0 * a).abs() <= 1e-9 * b.abs().max(1.0));
    }
}

#[test]
fn library_density_matches_hand_written_oracle() {
    for sigma in [0.2, 0.05] {
        let post = logistic_fixture(sigma);
        let offsets: Vec<f64> = (0..41)
            .map(|i| {
                let z = -4.0 + 0.2 * i as f64;
                post.log_posterior(&Tensor::vector(vec![z]).unwrap())
                    .unwrap()
                    - logistic_log_density(z, sigma)
            })
            .collect();
        assert!(offsets.iter().all(|o| (o - offsets[0]).abs() < 1e-9));
    }
}

#[test]
fn sigma_limit_tightens_the_level_set() {
    let dev: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&s| {
            GridOracle::new(|z| logistic_log_density(z, s))
                .expect(|z| (1.0 / (1.0 + (-4.0 * z).exp()) - 0.5).abs())
        })
        .collect();
    assert!(dev.windows(2).all(|w| w[1] <= w[0]), "{dev:?}");
}

/// All points of Δ₃ at resolution 0.01, as integer percentages.
fn simplex_grid() -> Vec<[u32; 3]> {
    (0..=100u32)
        .flat_map(|i| (0..=100 - i).map(move |j| [i, j, 100 - i - j]))
        .collect()
}

fn argmax_set(target: &TargetSpec) -> Vec<[u32; 3]> {
    let grid = simplex_grid();
    let ll: Vec<f64> = grid
        .iter()
        .map(|c| {
            let conf = Tensor::vector(c.iter().map(|&v| v as f64 / 100.0).collect()).unwrap();
            target.log_likelihood(&conf).unwrap()
        })
        .collect();
    let best = ll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<[u32; 3]> = grid
        .iter()
        .zip(&ll)
        .filter(|(_, &l)| l >= best - 1e-9)
        .map(|(c, _)| *c)
        .collect();
    out.sort();
    out
}

#[test]
fn likelihood_peaks_exactly_on_the_level_set() {
    let peak = |s: f64| -(s * (2.0 * PI).sqrt()).ln();
    assert_eq!(
        argmax_set(&TargetSpec::high_confidence(0)),
        vec![[100, 0, 0]]
    );
    assert_eq!(
        argmax_set(&TargetSpec::ambiguous_pair(0, 1)),
        vec![[50, 50, 0]]
    );
    assert_eq!(
        argmax_set(&TargetSpec::ambiguous_pair(2, 1)),
        vec![[0, 50, 50]]
    );
    let general = TargetSpec::GeneralVector {
        p: vec![0.2, 0.3, 0.5],
        sigma: 0.05,
    };
    assert_eq!(argmax_set(&general), vec![[20, 30, 50]]);
    // 1/3 is off the grid; the peak sits on the flattest grid points.
    assert_eq!(
        argmax_set(&TargetSpec::UniformAmbiguous { sigma: 0.05 }),
        vec![[33, 33, 34], [33, 34, 33], [34, 33, 33]]
    );

    let at = |t: &TargetSpec, c: [f64; 3]| {
        t.log_likelihood(&Tensor::vector(c.to_vec()).unwrap())
            .unwrap()
    };
    assert!((at(&TargetSpec::high_confidence(0), [1.0, 0.0, 0.0]) - peak(0.05)).abs() < 1e-12);
    assert!(
        (at(&TargetSpec::ambiguous_pair(0, 1), [0.5, 0.5, 0.0]) - 2.0 * peak(0.05)).abs() < 1e-12
    );
    assert!((at(&general, [0.2, 0.3, 0.5]) - 3.0 * peak(0.05)).abs() < 1e-12);
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn pair_likelihood_ignores_order_outside_the_pair(conf in simplex(6), perm in Just(()).prop_perturb(|_, mut rng| {
        let mut idx = vec![0usize, 2, 4, 5];
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        idx
    })) {
        let t = TargetSpec::ambiguous_pair(1, 3);
        let mut shuffled = conf.clone();
        for (slot, &from) in [0usize, 2, 4, 5].iter().zip(&perm) {
            shuffled[*slot] = conf[from];
        }
        let a = t.log_likelihood(&Tensor::vector(conf.clone()).unwrap()).unwrap();
        let b = t.log_likelihood(&Tensor::vector(shuffled).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn uniform_likelihood_ignores_class_order(conf in simplex(5)) {
        let t = TargetSpec::UniformAmbiguous { sigma: 0.05 };
        let mut rev = conf.clone();
        rev.reverse();
        prop_assert_eq!(
            t.log_likelihood(&Tensor::vector(conf).unwrap()).unwrap(),
            t.log_likelihood(&Tensor::vector(rev).unwrap()).unwrap()
        );
    }

    #[test]
    fn likelihood_never_exceeds_its_peak(conf in simplex(4), sigma in 0.01f64..1.0) {
        let peak = -(sigma * (2.0 * PI).sqrt()).ln();
        let c = Tensor::vector(conf).unwrap();
        for (t, n) in [
            (TargetSpec::HighConfidence { class: 2, sigma }, 1.0),
            (TargetSpec::AmbiguousPair { i: 0, j: 3, sigma1: sigma, sigma2: sigma }, 2.0),
            (TargetSpec::UniformAmbiguous { sigma }, 1.0),
        ] {
            prop_assert!(t.log_likelihood(&c).unwrap() <= n * peak + 1e-12);
        }
    }
}

#[test]
fn off_simplex_and_non_finite_inputs_are_flagged() {
    let t = TargetSpec::high_confidence(0);
    assert!(t
        .log_likelihood(&Tensor::vector(vec![0.7, 0.7]).unwrap())
        .is_err());
    assert!(Tensor::vector(vec![f64::NAN, 1.0]).is_err());
    let post = logistic_fixture(0.05);
    assert!(post
        .log_posterior(&Tensor::vector(vec![1.0, 2.0]).unwrap())
        .is_err());
}
