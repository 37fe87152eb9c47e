use bnnlab_core::data::{make_toy_dataset, ToyKind};
use bnnlab_core::hmc::*;
use bnnlab_core::nets::{Activation, NetworkSpec, ParameterSet, Task};
use bnnlab_core::prob::{log_posterior_unnorm, LikelihoodSpec, PriorSpec};
use bnnlab_core::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn harmonic() -> impl Potential {
    FnPotential::new(1, |x: &[f64]| Ok((0.5 * x[0] * x[0], vec![x[0]])))
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

fn start(pot: &mut impl Potential, position: Vec<f64>, momentum: Vec<f64>) -> ChainState {
    let mut s = ChainState::new(pot, position).unwrap();
    s.momentum = momentum;
    s
}

#[test]
fn leapfrog_is_reversible_on_a_network_posterior() {
    let spec = NetworkSpec::mlp(1, &[5], 1, Activation::Tanh, Task::Regression, true).unwrap();
    let d = make_toy_dataset(ToyKind::SinusoidGap, 20, 1).unwrap();
    let (x, y) = d.train_set().unwrap();
    let mut pot = BnnPotential::new(&spec, PriorSpec::standard_normal(), LikelihoodSpec::Gaussian { noise_std: 0.1 }, &x, &y).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p0 = ParameterSet::random(&spec, 0.5, &mut rng).to_flat();
    let mass = vec![1.0; p0.len()];
    let v0 = sample_momentum(&mass, &mut rng);
    let s0 = start(&mut pot, p0.clone(), v0.clone());
    let fwd = leapfrog(&mut pot, &s0, 0.002, 50, &mass).unwrap();
    assert!(!fwd.diverged);
    let mut back = fwd.state.clone();
    back.momentum.iter_mut().for_each(|v| *v = -*v);
    let rev = leapfrog(&mut pot, &back, 0.002, 50, &mass).unwrap();
    for (a, b) in rev.state.position.iter().zip(&p0) {
        assert!((a - b).abs() < 1e-8);
    }
    for (a, b) in rev.state.momentum.iter().zip(&v0) {
        assert!((a + b).abs() < 1e-8);
    }
}

fn harmonic_run(eps: f64, steps: usize) -> (f64, f64) {
    let mut pot = harmonic();
    let s = start(&mut pot, vec![1.0], vec![0.5]);
    let t = leapfrog(&mut pot, &s, eps, steps, &[1.0]).unwrap();
    let h0 = s.u + 0.125;
    let dh = (t.state.u + t.kinetic - h0).abs();
    // Exact flow: q(t) = cos t + 0.5 sin t.
    let time = eps * steps as f64;
    let perr = (t.state.position[0] - (time.cos() + 0.5 * time.sin())).abs();
    (dh, perr)
}

#[test]
fn harmonic_errors_scale_with_step_squared() {
    let (dh1, pe1) = harmonic_run(0.1, 13);
    let (dh2, pe2) = harmonic_run(0.05, 26);
    assert!((3.5..=4.5).contains(&(dh1 / dh2)), "energy ratio {}", dh1 / dh2);
    assert!((3.5..=4.5).contains(&(pe1 / pe2)), "position ratio {}", pe1 / pe2);
    let (drift, _) = harmonic_run(0.1, 20);
    assert!(drift < 1e-2);
}

#[test]
fn correlated_gaussian_covariance_recovered() {
    let mut pot = GaussianTarget::correlated_2d(0.9);
    let cfg = HmcConfig {
        step_size: 0.15,
        n_leapfrog: 15,
        mass: None,
        n_samples: 10_000,
        burn_in: 500,
        seed: 3,
    };
    let chain = hmc_run(&mut pot, vec![0.0, 0.0], &cfg).unwrap();
    let (a, b) = (chain.coordinate(0), chain.coordinate(1));
    let (ma, va) = mean_var(&a);
    let (mb, vb) = mean_var(&b);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    assert!((va - 1.0).abs() < 0.1, "{va}");
    assert!((vb - 1.0).abs() < 0.1, "{vb}");
    assert!((cov - 0.9).abs() < 0.09, "{cov}");
}

#[test]
fn tiny_steps_are_almost_always_accepted() {
    let cfg = HmcConfig {
        step_size: 1e-5,
        n_leapfrog: 1,
        mass: None,
        n_samples: 5000,
        burn_in: 0,
        seed: 0,
    };
    let chain = hmc_run(&mut harmonic(), vec![0.3], &cfg).unwrap();
    assert!(chain.diagnostics.acceptance_rate >= 0.999);
    let rw = random_walk_mh(&mut harmonic(), vec![0.3], 1e-6, 5000, 0, 0).unwrap();
    assert!(rw.diagnostics.acceptance_rate >= 0.999);
}

#[test]
fn oversized_steps_raise_a_burn_in_warning() {
    let cfg = HmcConfig {
        step_size: 50.0,
        n_leapfrog: 10,
        mass: None,
        n_samples: 10,
        burn_in: 200,
        seed: 0,
    };
    let mut pot = GaussianTarget::correlated_2d(0.99);
    let chain = hmc_run(&mut pot, vec![0.5, 0.5], &cfg).unwrap();
    assert!(chain.diagnostics.burn_in_acceptance < 0.01);
    assert!(chain.diagnostics.warnings.iter().any(|w| w.contains("burn-in")));
}

#[test]
fn kinetic_energy_equipartition() {
    let mass = [1.0, 2.0, 0.5, 4.0];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ks: Vec<f64> = (0..100_000).map(|_| kinetic_energy(&sample_momentum(&mass, &mut rng), &mass).unwrap()).collect();
    let (m, v) = mean_var(&ks);
    assert!((m - 2.0).abs() < 3.0 * (v / ks.len() as f64).sqrt());
}

#[test]
fn gibbs_precision_means_match_gamma_oracle() {
    let hyper = HyperPriorSpec::default();
    let omega = [0.5, -1.2, 0.3, 2.0, 0.0, -0.7];
    let resid = [0.1, -0.2, 0.05];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 100_000;
    let draws: Vec<(f64, f64)> = (0..n).map(|_| gibbs_update_precisions(&omega, &resid, &hyper, &mut rng).unwrap()).collect();
    let ss_w: f64 = omega.iter().map(|w| w * w).sum();
    let ss_r: f64 = resid.iter().map(|r| r * r).sum();
    let shape_p = hyper.prior_shape + 3.0;
    let rate_p = hyper.prior_rate + 0.5 * ss_w;
    let shape_n = hyper.noise_shape + 1.5;
    let rate_n = hyper.noise_rate + 0.5 * ss_r;
    let (mp, vp) = mean_var(&draws.iter().map(|d| d.0).collect::<Vec<_>>());
    let (mn, vn) = mean_var(&draws.iter().map(|d| d.1).collect::<Vec<_>>());
    assert!((mp - shape_p / rate_p).abs() < 3.0 * (vp / n as f64).sqrt());
    assert!((mn - shape_n / rate_n).abs() < 3.0 * (vn / n as f64).sqrt());

    // Zero statistics fall back to the prior rate.
    let z: Vec<f64> = (0..n).map(|_| gibbs_update_precisions(&[0.0; 4], &[0.0; 2], &hyper, &mut rng).unwrap().0).collect();
    let (mz, vz) = mean_var(&z);
    assert!((mz - (hyper.prior_shape + 2.0) / hyper.prior_rate).abs() < 3.0 * (vz / n as f64).sqrt());
}

#[test]
fn gibbs_draws_match_grid_posterior() {
    // τ | ω ∝ τ^{a−1} e^{−bτ} · τ^{P/2} e^{−τ S/2}, tabulated on a grid.
    let hyper = HyperPriorSpec::default();
    let omega = [0.9, -0.4, 1.3];
    let s: f64 = omega.iter().map(|w| w * w).sum();
    let log_post = |t: f64| (hyper.prior_shape - 1.0 + 1.5) * t.ln() - (hyper.prior_rate + 0.5 * s) * t;
    let grid: Vec<f64> = (1..=200_000).map(|i| i as f64 * 1e-4).collect();
    let dens: Vec<f64> = grid.iter().map(|&t| log_post(t).exp()).collect();
    let mut cdf = vec![0.0; grid.len()];
    for i in 1..grid.len() {
        cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * 1e-4;
    }
    let total = *cdf.last().unwrap();
    cdf.iter_mut().for_each(|c| *c /= total);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let mut draws: Vec<f64> = (0..n).map(|_| gibbs_update_precisions(&omega, &[0.0], &hyper, &mut rng).unwrap().0).collect();
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ks: f64 = 0.0;
    for (i, &t) in draws.iter().enumerate() {
        let idx = ((t / 1e-4).round() as usize).clamp(1, grid.len()) - 1;
        let f = cdf[idx];
        ks = ks.max((f - i as f64 / n as f64).abs()).max((f - (i + 1) as f64 / n as f64).abs());
    }
    assert!(ks < 0.01, "KS {ks}");
}

#[test]
fn potential_is_negative_log_posterior() {
    let spec = NetworkSpec::mlp(2, &[3], 1, Activation::Tanh, Task::Regression, true).unwrap();
    let x = Tensor::matrix(4, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.0, 1.0]).unwrap();
    let y = Tensor::matrix(4, 1, vec![0.3, -0.1, 0.2, 0.9]).unwrap();
    let prior = PriorSpec::default();
    let lik = LikelihoodSpec::Gaussian { noise_std: 0.3 };
    let mut pot = BnnPotential::new(&spec, prior, lik, &x, &y).unwrap();
    let w = ParameterSet::random(&spec, 0.7, &mut ChaCha8Rng::seed_from_u64(4));
    let (u, _) = pot.potential(&w.to_flat()).unwrap();
    assert_eq!(u, -log_posterior_unnorm(&prior, &lik, &spec, &w, &x, &y).unwrap());
    assert!((pot.energy(&w.to_flat()).unwrap() - u).abs() < 1e-12);
}

#[test]
fn linear_model_gradient_matches_normal_equations() {
    // U(w) = ½‖y − Xw‖²/s² + ½‖w‖²/t²  ⇒  ∇U = −Xᵀ(y − Xw)/s² + w/t²
    let spec = NetworkSpec::mlp(3, &[], 1, Activation::Identity, Task::Regression, false).unwrap();
    let xd = [0.2, -1.0, 0.5, 1.5, 0.3, -0.2, -0.7, 0.8, 1.1, 0.0, 0.4, -0.9];
    let x = Tensor::matrix(4, 3, xd.to_vec()).unwrap();
    let y = Tensor::matrix(4, 1, vec![1.0, -0.5, 0.3, 0.8]).unwrap();
    let (s, t) = (0.4, 2.0);
    let mut pot = BnnPotential::new(&spec, PriorSpec::Gaussian { mean: 0.0, std: t }, LikelihoodSpec::Gaussian { noise_std: s }, &x, &y).unwrap();
    let w = [0.3, -0.6, 1.2];
    let (_, g) = pot.potential(&w).unwrap();
    for j in 0..3 {
        let mut expect = w[j] / (t * t);
        for i in 0..4 {
            let r = y.data()[i] - (0..3).map(|k| xd[i * 3 + k] * w[k]).sum::<f64>();
            expect -= xd[i * 3 + j] * r / (s * s);
        }
        assert!((g[j] - expect).abs() < 1e-8 * expect.abs().max(1.0));
    }
    let zero_y = Tensor::zeros(&[4, 1]);
    let mut pot0 = BnnPotential::new(&spec, PriorSpec::standard_normal(), LikelihoodSpec::Gaussian { noise_std: s }, &x, &zero_y).unwrap();
    assert!(pot0.potential(&[0.0; 3]).unwrap().1.iter().all(|v| *v == 0.0));
}

#[test]
fn conjugate_chain_mean_matches_closed_form() {
    let spec = NetworkSpec::mlp(1, &[], 1, Activation::Identity, Task::Regression, false).unwrap();
    let xs = [0.5, -0.3, 0.9, 0.1, -0.8, 0.4];
    let ys = [0.8, -0.2, 1.5, 0.0, -1.1, 0.7];
    let x = Tensor::matrix(6, 1, xs.to_vec()).unwrap();
    let y = Tensor::matrix(6, 1, ys.to_vec()).unwrap();
    let s2: f64 = 0.25;
    let prec = 1.0 + xs.iter().map(|v| v * v).sum::<f64>() / s2;
    let mean = xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>() / s2 / prec;
    let mut pot = BnnPotential::new(&spec, PriorSpec::standard_normal(), LikelihoodSpec::Gaussian { noise_std: 0.5 }, &x, &y).unwrap();
    let cfg = HmcConfig {
        step_size: 0.1,
        n_leapfrog: 3,
        mass: None,
        n_samples: 5000,
        burn_in: 200,
        seed: 9,
    };
    let chain = hmc_run(&mut pot, vec![0.0], &cfg).unwrap();
    let w = chain.coordinate(0);
    let (m, v) = mean_var(&w);
    let se = (v / chain.diagnostics.ess[0]).sqrt();
    assert!((m - mean).abs() < 3.0 * se, "{m} vs {mean} ± {se}");
    assert!((v * prec - 1.0).abs() < 0.1, "{}", v * prec);
}

#[test]
fn random_walk_mean_on_symmetric_target() {
    let chain = random_walk_mh(&mut harmonic(), vec![2.0], 2.4, 20_000, 1000, 5).unwrap();
    let x = chain.coordinate(0);
    let (m, v) = mean_var(&x);
    assert!(m.abs() < 3.0 * (v / chain.diagnostics.ess[0]).sqrt());
}

/// Counts transitions between three bins of a 1-D chain.
fn transition_counts(xs: &[f64]) -> [[usize; 3]; 3] {
    let bin = |x: f64| if x < -0.5 { 0 } else if x < 0.5 { 1 } else { 2 };
    let mut c = [[0; 3]; 3];
    for w in xs.windows(2) {
        c[bin(w[0])][bin(w[1])] += 1;
    }
    c
}

#[test]
fn discretised_chain_satisfies_detailed_balance() {
    let cfg = HmcConfig {
        step_size: 0.8,
        n_leapfrog: 1,
        mass: None,
        n_samples: 1_000_000,
        burn_in: 100,
        seed: 11,
    };
    let chain = hmc_run(&mut harmonic(), vec![0.0], &cfg).unwrap();
    let c = transition_counts(&chain.coordinate(0));
    for (i, j) in [(0, 1), (1, 2), (0, 2)] {
        let (a, b) = (c[i][j] as f64, c[j][i] as f64);
        assert!((a - b).abs() / (0.5 * (a + b)) < 0.02, "{i}->{j}: {a} vs {b}");
    }
}

#[test]
fn hmc_beats_random_walk_on_correlated_gaussian() {
    let mut pot = GaussianTarget::correlated_2d(0.95);
    let cfg = HmcConfig {
        step_size: 0.15,
        n_leapfrog: 20,
        mass: None,
        n_samples: 2000,
        burn_in: 100,
        seed: 2,
    };
    let h = hmc_run(&mut pot, vec![0.0, 0.0], &cfg).unwrap();
    let budget = h.diagnostics.grad_evals;
    let rw = random_walk_mh(&mut pot, vec![0.0, 0.0], 0.5, budget - 2000, 2000, 2).unwrap();
    assert!(rw.diagnostics.density_evals <= budget + 1);
    assert!(rw.diagnostics.min_ess() < h.diagnostics.min_ess());
}

/// Mean ESS per gradient or density evaluation for pilot-tuned HMC and
/// random-walk Metropolis, at the same evaluation budget.
fn bnn_efficiency(seed: u64) -> (f64, f64) {
    let spec = NetworkSpec::mlp(1, &[5], 1, Activation::Tanh, Task::Regression, true).unwrap();
    let (x, y) = make_toy_dataset(ToyKind::SinusoidGap, 22, seed).unwrap().train_set().unwrap();
    let mut pot = BnnPotential::new(&spec, PriorSpec::standard_normal(), LikelihoodSpec::Gaussian { noise_std: 0.1 }, &x, &y).unwrap();

    // Shared warm start near the posterior bulk.
    let warm = HmcConfig {
        step_size: 0.002,
        n_leapfrog: 50,
        mass: None,
        n_samples: 1,
        burn_in: 300,
        seed,
    };
    let init = hmc_run(&mut pot, vec![0.0; spec.num_params()], &warm).unwrap().samples[0].position.clone();

    let l = 100;
    let eps = pilot_step_size(&mut pot, &init, l, (0.6, 0.9), 100, seed).unwrap();
    let cfg = HmcConfig {
        step_size: eps,
        n_leapfrog: l,
        mass: None,
        n_samples: 1000,
        burn_in: 100,
        seed,
    };
    let h = hmc_run(&mut pot, init.clone(), &cfg).unwrap();
    let sigma = pilot_proposal_std(&mut pot, &init, (0.15, 0.35), 2000, seed).unwrap();
    let rw = random_walk_mh(&mut pot, init, sigma, 1000 * l, 100 * l, seed).unwrap();
    (
        h.diagnostics.mean_ess() / h.diagnostics.grad_evals as f64,
        rw.diagnostics.mean_ess() / rw.diagnostics.density_evals as f64,
    )
}

#[test]
fn hmc_beats_random_walk_on_small_network() {
    for seed in 0..3 {
        let (h, r) = bnn_efficiency(seed);
        assert!(h >= 3.0 * r, "seed {seed}: hmc {h:e} vs rw {r:e}");
    }
}
