//! One PASS/FAIL line per acceptance criterion, with the measured value next
//! to its tolerance. Runs without the libtest harness so the table is always
//! printed; exits non-zero if any line reads FAIL.
//!
//! The MNIST criterion needs the four IDX files; point `BNNLAB_MNIST_DIR` at
//! them. Without it the line reads UNVERIFIED and does not fail the run.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use bnnlab::config::{ExperimentConfig, Method};
use bnnlab::experiment;
use bnnlab_core::autodiff::Tape;
use bnnlab_core::data::{make_toy_dataset, polynomial_features, ToyKind};
use bnnlab_core::evidence::*;
use bnnlab_core::gp::{nn_prior_sample_outputs, normality_statistic, NnPriorConfig};
use bnnlab_core::hmc::*;
use bnnlab_core::nets::{self, Activation, NetworkSpec, ParamVars, ParameterSet, Task};
use bnnlab_core::optim::OptimizerKind;
use bnnlab_core::prob::*;
use bnnlab_core::tensor::Tensor;
use bnnlab_core::vi::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

struct Verdict {
    id: u32,
    pass: Option<bool>,
    detail: String,
}

fn verdict(id: u32, pass: bool, detail: String) -> Verdict {
    Verdict { id, pass: Some(pass), detail }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

// ---------------------------------------------------------------- gradients

/// Five-point central stencil, fourth order in `h`. The wider step keeps
/// roundoff on O(100)-sized losses well under the comparison floor.
fn central_difference(f: &dyn Fn(&[f64]) -> f64, w: &[f64]) -> Vec<f64> {
    let mut v = w.to_vec();
    let mut at = |i: usize, x: f64| {
        v[i] = x;
        let y = f(&v);
        v[i] = w[i];
        y
    };
    (0..w.len())
        .map(|i| {
            let h = 1e-4 * w[i].abs().max(1.0);
            let (p1, m1, p2, m2) = (at(i, w[i] + h), at(i, w[i] - h), at(i, w[i] + 2.0 * h), at(i, w[i] - 2.0 * h));
            (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
        })
        .collect()
}

fn c1_gradients() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let acts = [Activation::Tanh, Activation::Sigmoid, Activation::LeakyRelu(0.1)];
    let lik = LikelihoodSpec::Gaussian { noise_std: 0.7 };
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let layers = rng.random_range(1..=3);
        let hidden: Vec<usize> = (1..layers).map(|_| rng.random_range(1..=50)).collect();
        let d_in = rng.random_range(1..=4);
        let spec = NetworkSpec::mlp(d_in, &hidden, 2, acts[trial % 3], Task::Regression, trial % 2 == 0).unwrap();
        let w = ParameterSet::random(&spec, 0.5, &mut rng).to_flat();
        let x = Tensor::matrix(5, d_in, randn(&mut rng, 5 * d_in)).unwrap();
        let y = Tensor::matrix(5, 2, randn(&mut rng, 10)).unwrap();
        let loss = |v: &[f64]| log_likelihood(&lik, &nets::mlp_forward(&spec, &ParameterSet::from_flat(&spec, v).unwrap(), &x).unwrap(), &y).unwrap();
        let p = ParameterSet::from_flat(&spec, &w).unwrap();
        let mut tape = Tape::new();
        let vars = ParamVars::bind(&mut tape, &p, "w", true).unwrap();
        let xv = tape.constant(x.clone());
        let out = nets::forward_tape(&mut tape, &spec, &vars, xv, None).unwrap();
        let ll = log_likelihood_tape(&mut tape, &lik, out, &y).unwrap();
        let g = vars.flat_grad(&tape, &tape.backward(ll).unwrap());
        for (a, b) in g.iter().zip(central_difference(&loss, &w)) {
            // Coordinates with a vanishing gradient are compared against a 1e-4 floor.
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-4));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(1, worst < 1e-5 && secs < 60.0, format!("worst rel err {worst:.2e} (< 1e-5), {secs:.1}s (< 60s)"))
}

fn square(w: &[f64]) -> bnnlab_core::Result<(f64, Vec<f64>)> {
    Ok((w[0] * w[0], vec![2.0 * w[0]]))
}

fn c2_estimators() -> Verdict {
    let (mu, sigma) = (0.8, 1.5);
    let q = DiagGaussian::new(vec![mu], vec![sigma]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sf = score_function_grad(|w| Ok(w[0] * w[0]), &q, 100_000, &mut rng).unwrap();
    let pw = pathwise_grad(square, &q, 100_000, &mut rng).unwrap();
    let z_sf = (sf.d_mean[0] - 2.0 * mu).abs() / sf.se_mean()[0];
    let z_pw = (pw.d_mean[0] - 2.0 * mu).abs() / pw.se_mean()[0];
    let q1 = DiagGaussian::new(vec![1.0], vec![1.0]).unwrap();
    let wins = (0..20)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let sf = score_function_grad(|w| Ok(w[0] * w[0]), &q1, 1000, &mut rng).unwrap();
            let pw = pathwise_grad(square, &q1, 1000, &mut rng).unwrap();
            sf.var_mean[0] > pw.var_mean[0]
        })
        .count();
    verdict(
        2,
        z_sf < 3.0 && z_pw < 3.0 && wins >= 18,
        format!("|err|/SE score-fn {z_sf:.2}, pathwise {z_pw:.2} (< 3); SF variance larger in {wins}/20 seeds (≥ 18)"),
    )
}

fn c3_identities() -> Verdict {
    let a = 1.7;
    let q = DiagGaussian::new(vec![0.6], vec![0.9]).unwrap();
    let quad = gaussian_identity_check(|w| Ok((a * w[0] * w[0], vec![2.0 * a * w[0]])), &q, 100_000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();

    let spec = NetworkSpec::mlp(2, &[3], 1, Activation::Tanh, Task::Regression, true).unwrap();
    let x = Tensor::matrix(4, 2, vec![0.5, -0.1, -0.3, 0.8, 1.0, 0.2, -0.7, -0.6]).unwrap();
    let y = Tensor::matrix(4, 1, vec![0.3, -0.2, 0.9, 0.0]).unwrap();
    let lik = LikelihoodSpec::Gaussian { noise_std: 0.5 };
    let f = |w: &[f64]| -> bnnlab_core::Result<(f64, Vec<f64>)> {
        let params = ParameterSet::from_flat(&spec, w)?;
        let mut tape = Tape::new();
        let vars = ParamVars::bind(&mut tape, &params, "w", true)?;
        let xv = tape.constant(x.clone());
        let out = nets::forward_tape(&mut tape, &spec, &vars, xv, None)?;
        let ll = log_likelihood_tape(&mut tape, &lik, out, &y)?;
        let grads = tape.backward(ll)?;
        Ok((tape.value(ll).item().unwrap(), vars.flat_grad(&tape, &grads)))
    };
    let k = spec.num_params();
    let mean: Vec<f64> = (0..k).map(|i| 0.2 * ((i as f64) * 0.9).cos()).collect();
    let q = DiagGaussian::new(mean, vec![0.3; k]).unwrap();
    let mlp = gaussian_identity_check(f, &q, 20_000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    verdict(
        3,
        quad.max_z < 4.0 && mlp.max_z < 4.0,
        format!("max two-sided z: quadratic {:.2}, small MLP {:.2} (< 4)", quad.max_z, mlp.max_z),
    )
}

// ---------------------------------------------------------------- BbB

/// `y = w x + N(0, s²)`, `w ~ N(0, 1)`, solved in closed form.
struct Conjugate {
    x: Vec<f64>,
    y: Vec<f64>,
    noise: f64,
}

impl Conjugate {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = Normal::new(0.0, 0.5).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = x.iter().map(|x| 1.5 * x + e.sample(&mut rng)).collect();
        Self { x, y, noise: 0.5 }
    }

    fn sums(&self) -> (f64, f64, f64) {
        let sxx = self.x.iter().map(|x| x * x).sum();
        let sxy = self.x.iter().zip(&self.y).map(|(x, y)| x * y).sum();
        let syy = self.y.iter().map(|y| y * y).sum();
        (sxx, sxy, syy)
    }

    fn posterior(&self) -> (f64, f64) {
        let (sxx, sxy, _) = self.sums();
        let s2 = self.noise * self.noise;
        let prec = 1.0 + sxx / s2;
        (sxy / s2 / prec, prec.recip().sqrt())
    }

    fn log_evidence(&self) -> f64 {
        let (sxx, sxy, syy) = self.sums();
        let n = self.x.len() as f64;
        let s2 = self.noise * self.noise;
        let c = 1.0 + sxx / s2;
        -0.5 * (n * LN_2PI + n * s2.ln() + c.ln() + syy / s2 - sxy * sxy / (s2 * s2 * c))
    }

    fn elbo(&self, m: f64, v: f64) -> f64 {
        let (sxx, _, _) = self.sums();
        let n = self.x.len() as f64;
        let s2 = self.noise * self.noise;
        let sse: f64 = self.x.iter().zip(&self.y).map(|(x, y)| (y - m * x).powi(2)).sum();
        let ell = -0.5 * n * (LN_2PI + s2.ln()) - (sse + v * v * sxx) / (2.0 * s2);
        ell - (-v.ln() + 0.5 * (v * v + m * m) - 0.5)
    }
}

fn c4_bbb() -> Verdict {
    let start = Instant::now();
    let spec = NetworkSpec::mlp(1, &[], 1, Activation::Identity, Task::Regression, false).unwrap();
    let (mut mu_err, mut sd_err, mut mc_z): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for seed in 0..3 {
        let data = Conjugate::new(20, 200 + seed);
        let n = data.x.len();
        let x = Tensor::matrix(n, 1, data.x.clone()).unwrap();
        let y = Tensor::matrix(n, 1, data.y.clone()).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            mc_samples: 8,
            batch_size: 20,
            epochs: 3000,
            seed,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        let lik = LikelihoodSpec::Gaussian { noise_std: data.noise };
        let fit = bbb_train(&spec, &PriorSpec::standard_normal(), &lik, &x, &y, &cfg).unwrap();
        let (pm, ps) = data.posterior();
        let m = fit.posterior.mu.to_flat()[0];
        let s = fit.posterior.sigma().to_flat()[0];
        mu_err = mu_err.max((m - pm).abs() / pm.abs());
        sd_err = sd_err.max((s - ps).abs() / ps);

        // The library's Monte Carlo ELBO agrees with the closed form at the fit.
        let batch = Batch { inputs: &x, targets: &y, n_data: n };
        let opts = ElboOptions { kl: KlEstimate::ClosedForm, ..ElboOptions::default() };
        let est = elbo_estimate(&fit.posterior, &PriorSpec::standard_normal(), &lik, &spec, &batch, 4000, opts, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        mc_z = mc_z.max((est.value - data.elbo(m, s)).abs() / est.std_error);
    }

    let data = Conjugate::new(15, 210);
    let z = data.log_evidence();
    let mut runner = TestRunner::new(PropConfig { cases: 2000, failure_persistence: None, ..PropConfig::default() });
    let bound = runner
        .run(&(-5.0f64..5.0, 1e-3f64..3.0), |(m, v)| {
            proptest::prop_assert!(data.elbo(m, v) <= z + 1e-6);
            Ok(())
        })
        .is_ok();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        4,
        mu_err < 0.05 && sd_err < 0.2 && bound && mc_z < 4.0 && secs < 120.0,
        format!(
            "worst μ rel err {:.1}% (< 5%), σ rel err {:.1}% (< 20%), ELBO ≤ log Z + 1e-6 over 2000 cases: {bound}, MC ELBO |z| {mc_z:.2}, {secs:.1}s (< 120s)",
            100.0 * mu_err,
            100.0 * sd_err
        ),
    )
}

// ---------------------------------------------------------------- HMC

fn harmonic() -> impl Potential {
    FnPotential::new(1, |x: &[f64]| Ok((0.5 * x[0] * x[0], vec![x[0]])))
}

fn start_at(pot: &mut impl Potential, position: Vec<f64>, momentum: Vec<f64>) -> ChainState {
    let mut s = ChainState::new(pot, position).unwrap();
    s.momentum = momentum;
    s
}

fn energy_error(eps: f64, steps: usize) -> f64 {
    let mut pot = harmonic();
    let s = start_at(&mut pot, vec![1.0], vec![0.5]);
    let t = leapfrog(&mut pot, &s, eps, steps, &[1.0]).unwrap();
    (t.state.u + t.kinetic - (s.u + 0.125)).abs()
}

fn c5_hmc_battery() -> Verdict {
    let start = Instant::now();
    let spec = NetworkSpec::mlp(1, &[5], 1, Activation::Tanh, Task::Regression, true).unwrap();
    let (x, y) = make_toy_dataset(ToyKind::SinusoidGap, 20, 5).unwrap().train_set().unwrap();
    let mut pot = BnnPotential::new(&spec, PriorSpec::standard_normal(), LikelihoodSpec::Gaussian { noise_std: 0.1 }, &x, &y).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p0 = ParameterSet::random(&spec, 0.5, &mut rng).to_flat();
    let mass = vec![1.0; p0.len()];
    let v0 = sample_momentum(&mass, &mut rng);
    let s0 = start_at(&mut pot, p0.clone(), v0.clone());
    let fwd = leapfrog(&mut pot, &s0, 0.002, 50, &mass).unwrap();
    let mut back = fwd.state.clone();
    back.momentum.iter_mut().for_each(|v| *v = -*v);
    let rev = leapfrog(&mut pot, &back, 0.002, 50, &mass).unwrap();
    let rev_err = rev
        .state
        .position
        .iter()
        .zip(&p0)
        .map(|(a, b)| (a - b).abs())
        .chain(rev.state.momentum.iter().zip(&v0).map(|(a, b)| (a + b).abs()))
        .fold(0.0, f64::max);

    let ratio = energy_error(0.1, 13) / energy_error(0.05, 26);

    let cfg = HmcConfig {
        step_size: 0.15,
        n_leapfrog: 15,
        mass: None,
        n_samples: 10_000,
        burn_in: 500,
        seed: 105,
    };
    let chain = hmc_run(&mut GaussianTarget::correlated_2d(0.9), vec![0.0, 0.0], &cfg).unwrap();
    let (a, b) = (chain.coordinate(0), chain.coordinate(1));
    let (ma, va) = mean_var(&a);
    let (mb, vb) = mean_var(&b);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    let cov_err = [(va - 1.0).abs(), (vb - 1.0).abs(), (cov - 0.9).abs() / 0.9].into_iter().fold(0.0, f64::max);

    // Gamma(a + P/2, b + ‖ω‖²/2) and Gamma(a + N/2, b + ‖r‖²/2) means.
    let hyper = HyperPriorSpec::default();
    let omega = [0.5, -1.2, 0.3, 2.0, 0.0, -0.7];
    let resid = [0.1, -0.2, 0.05];
    let n = 100_000;
    let draws: Vec<(f64, f64)> = (0..n).map(|_| gibbs_update_precisions(&omega, &resid, &hyper, &mut rng).unwrap()).collect();
    let ss_w: f64 = omega.iter().map(|w| w * w).sum();
    let ss_r: f64 = resid.iter().map(|r| r * r).sum();
    let (mp, vp) = mean_var(&draws.iter().map(|d| d.0).collect::<Vec<_>>());
    let (mn, vn) = mean_var(&draws.iter().map(|d| d.1).collect::<Vec<_>>());
    let zp = (mp - (hyper.prior_shape + 3.0) / (hyper.prior_rate + 0.5 * ss_w)).abs() / (vp / n as f64).sqrt();
    let zn = (mn - (hyper.noise_shape + 1.5) / (hyper.noise_rate + 0.5 * ss_r)).abs() / (vn / n as f64).sqrt();

    let secs = start.elapsed().as_secs_f64();
    verdict(
        5,
        rev_err < 1e-8 && (3.5..=4.5).contains(&ratio) && cov_err < 0.1 && zp < 3.0 && zn < 3.0 && secs < 300.0,
        format!(
            "reversal err {rev_err:.1e} (< 1e-8), ΔH ratio {ratio:.3} ([3.5, 4.5]), covariance err {:.1}% (< 10%), Gibbs |z| {zp:.2}/{zn:.2} (< 3), {secs:.1}s (< 300s)",
            100.0 * cov_err
        ),
    )
}

fn ess_per_eval(seed: u64) -> (f64, f64) {
    let spec = NetworkSpec::mlp(1, &[5], 1, Activation::Tanh, Task::Regression, true).unwrap();
    let (x, y) = make_toy_dataset(ToyKind::SinusoidGap, 22, seed).unwrap().train_set().unwrap();
    let mut pot = BnnPotential::new(&spec, PriorSpec::standard_normal(), LikelihoodSpec::Gaussian { noise_std: 0.1 }, &x, &y).unwrap();
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

fn c6_hmc_vs_random_walk() -> Verdict {
    let ratios: Vec<f64> = (0..3).map(|s| ess_per_eval(s)).map(|(h, r)| h / r).collect();
    let worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    verdict(6, worst >= 3.0, format!("ESS-per-evaluation ratio HMC/RW by seed {ratios:.1?} (each ≥ 3)"))
}

// ---------------------------------------------------------------- NN prior

fn c7_prior_kurtosis() -> Verdict {
    let start = Instant::now();
    let widths = [1usize, 3, 10, 100];
    let kurt: Vec<f64> = widths
        .iter()
        .map(|&h| {
            let draws = nn_prior_sample_outputs(&NnPriorConfig::new(h), 10_000, (0.2, -0.4), &mut ChaCha8Rng::seed_from_u64(700 + h as u64)).unwrap();
            normality_statistic(&draws).unwrap().max_abs_kurtosis()
        })
        .collect();
    let inversions = kurt.windows(2).filter(|w| w[1] > w[0]).count();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        7,
        kurt[0] > 0.5 && kurt[3] < 0.2 && inversions <= 1 && secs < 60.0,
        format!("|excess kurtosis| at H = 1, 3, 10, 100: {kurt:.3?} (H=1 > 0.5, H=100 < 0.2), {inversions} inversions (≤ 1), {secs:.1}s (< 60s)"),
    )
}

// ---------------------------------------------------------------- toy comparison

fn c8_toy_comparison() -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let methods = [Method::Bbb, Method::McDropout, Method::Gp];
    let (mut bbb_gap, mut gp_gap, mut bbb_in, mut drop_in) = (0.0, 0.0, 0.0, 0.0);
    let seeds = 5;
    for seed in 0..seeds {
        let cfg = experiment::toy_config(ToyKind::SinusoidGap, Method::Bbb, seed, &dir.path().join(seed.to_string())).unwrap();
        let (lo, hi) = experiment::gap_of(&cfg).unwrap();
        let runs = experiment::compare(&cfg, &methods, true).unwrap();
        let reg = |m: Method| runs.iter().find(|r| r.method == m).unwrap().regression.clone().unwrap();
        bbb_gap += reg(Method::Bbb).mean_std_in(lo, hi).unwrap();
        gp_gap += reg(Method::Gp).mean_std_in(lo, hi).unwrap();
        bbb_in += reg(Method::Bbb).mean_std_train();
        drop_in += reg(Method::McDropout).mean_std_train();
    }
    let k = seeds as f64;
    let (bbb_gap, gp_gap, bbb_in, drop_in) = (bbb_gap / k, gp_gap / k, bbb_in / k, drop_in / k);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        8,
        bbb_gap < gp_gap && drop_in >= bbb_in && secs < 1200.0,
        format!("gap mean σ BbB {bbb_gap:.4} < GP {gp_gap:.4}; in-distribution mean σ dropout {drop_in:.4} ≥ BbB {bbb_in:.4}; 5 seeds, {secs:.1}s (< 1200s)"),
    )
}

// ---------------------------------------------------------------- evidence and ADF

/// `ln N(y; 0, σ²I + s₀² D Dᵀ)` with `D = [Φ 1]`, by a hand-rolled Cholesky.
fn exact_log_evidence(features: &Tensor, y: &[f64], prior_std: f64, noise_std: f64) -> f64 {
    let n = features.rows();
    let d = features.row_len();
    let row = |i: usize| -> Vec<f64> { features.row(i).iter().copied().chain([1.0]).collect() };
    let rows: Vec<Vec<f64>> = (0..n).map(row).collect();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = (0..=d).map(|k| rows[i][k] * rows[j][k]).sum();
            c[i][j] = prior_std * prior_std * dot + if i == j { noise_std * noise_std } else { 0.0 };
        }
    }
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = c[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = if i == j { s.sqrt() } else { s / l[j][j] };
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (y[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    let log_det: f64 = 2.0 * (0..n).map(|i| l[i][i].ln()).sum::<f64>();
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * log_det - 0.5 * n as f64 * LN_2PI
}

fn cubic_data(n: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.3 - 0.8 * x + 0.5 * x * x + 1.5 * x * x * x + 0.1 * z
        })
        .collect();
    (Tensor::matrix(n, 1, xs).unwrap(), Tensor::matrix(n, 1, ys).unwrap())
}

fn polynomial_report(x: &Tensor, y: &Tensor, degree: usize, prior_std: f64) -> LaplaceReport {
    let feats = polynomial_features(x, degree).unwrap();
    let spec = NetworkSpec::mlp(degree, &[], 1, Activation::Identity, Task::Regression, true).unwrap();
    let mut model = BnnModel {
        spec: &spec,
        prior: PriorSpec::Gaussian { mean: 0.0, std: prior_std },
        lik: LikelihoodSpec::Gaussian { noise_std: 0.1 },
        inputs: &feats,
        targets: y,
    };
    laplace_evidence(&mut model, &MapOptions::default()).unwrap()
}

fn c9_evidence() -> Verdict {
    let (x, y) = cubic_data(30, 109);
    let worst = (1..=4)
        .map(|d| {
            let r = polynomial_report(&x, &y, d, 1.0);
            let exact = exact_log_evidence(&polynomial_features(&x, d).unwrap(), y.data(), 1.0, 0.1);
            (r.log_evidence - exact).abs() / exact.abs()
        })
        .fold(0.0, f64::max);
    let picks: Vec<usize> = (0..5)
        .map(|seed| {
            let (x, y) = cubic_data(40, seed);
            let logs: Vec<f64> = (1..=6).map(|d| polynomial_report(&x, &y, d, 10.0).log_evidence).collect();
            logs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 + 1
        })
        .collect();
    let hits = picks.iter().filter(|&&d| d == 3).count();
    let (x, y) = cubic_data(40, 3);
    let narrow = polynomial_report(&x, &y, 3, 1.0).log_occam;
    let wide = polynomial_report(&x, &y, 3, 10.0).log_occam;
    verdict(
        9,
        worst < 1e-6 && hits == 5 && wide < narrow,
        format!("Laplace rel err {worst:.1e} (< 1e-6); selected degrees {picks:?} (3 on 5/5); log Occam {narrow:.3} → {wide:.3} when prior widens ×10 (decreases)"),
    )
}

fn c10_adf() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let mut state = AdfState::new(vec![0.0], vec![1.0]).unwrap();
    let (mut prec, mut shift) = (1.0, 0.0);
    let mut first = 0.0;
    for t in 0..50 {
        let z: f64 = StandardNormal.sample(&mut rng);
        let obs = 0.7 + z;
        let g = log_z_quadrature(state.mean[0], state.variance[0], |w| normal_log_density(obs, w, 1.0), 4001).unwrap();
        state = adf_update(&state, &g.d_mean, &g.d_var).unwrap();
        prec += 1.0;
        shift += obs;
        if t == 0 {
            first = (state.mean[0] - shift / prec).abs().max((state.variance[0] - 1.0 / prec).abs());
        }
    }
    let (m, v) = (shift / prec, 1.0 / prec);
    let final_rel = ((state.mean[0] - m).abs() / m.abs()).max((state.variance[0] - v).abs() / v);
    verdict(
        10,
        first < 1e-6 && final_rel < 0.05,
        format!("one-step moment err {first:.1e} (< 1e-6); 50-step rel err {:.2e}% (< 5%)", 100.0 * final_rel),
    )
}

// ---------------------------------------------------------------- divergences

fn gauss_pdf(x: f64, m: f64, s: f64) -> f64 {
    (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

/// Simpson rule for KL(q‖p) between two Gaussians on [−30, 30].
fn kl_simpson(q: (f64, f64), p: (f64, f64)) -> f64 {
    let n = 100_000;
    let h = 60.0 / n as f64;
    let f = |x: f64| {
        let a = gauss_pdf(x, q.0, q.1);
        if a == 0.0 {
            0.0
        } else {
            a * (a.ln() - gauss_pdf(x, p.0, p.1).ln())
        }
    };
    let inner: f64 = (1..n).map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(-30.0 + i as f64 * h)).sum();
    (f(-30.0) + f(30.0) + inner) * h / 3.0
}

fn c11_divergences() -> Verdict {
    let closed = kl_diag_gaussians(&[1.0], &[1.0], &[0.0], &[1.0]).unwrap();
    let quad = kl_simpson((1.0, 1.0), (0.0, 1.0));
    let kl_err = (closed - 0.5).abs().max((quad - 0.5).abs());

    let grid = uniform_grid(-20.0, 20.0, 20_001);
    let mut alpha_err: f64 = 0.0;
    for (p, q) in [((0.0, 1.0), (1.0, 1.0)), ((0.0, 1.0), (0.5, 2.0))] {
        let pair = DensityPair::from_gaussians(grid.clone(), p, q).unwrap();
        let kl_pq = kl_simpson(p, q);
        let kl_qp = kl_simpson(q, p);
        alpha_err = alpha_err.max((alpha_divergence(&pair, 1.0 - 1e-4).unwrap() - kl_pq).abs());
        alpha_err = alpha_err.max((alpha_divergence(&pair, 1e-4).unwrap() - kl_qp).abs());
    }

    let (m1, s1, m2, s2): (f64, f64, f64, f64) = (0.3, 0.8, -0.4, 1.7);
    let pair = DensityPair::from_gaussians(grid, (m1, s1), (m2, s2)).unwrap();
    let d = hellinger_distance(&pair).unwrap();
    let symmetric = d == hellinger_distance(&pair.swapped()).unwrap();
    let bc = (2.0 * s1 * s2 / (s1 * s1 + s2 * s2)).sqrt() * (-(m1 - m2).powi(2) / (4.0 * (s1 * s1 + s2 * s2))).exp();
    let h_err = (d - (2.0 - 2.0 * bc).sqrt()).abs();
    verdict(
        11,
        kl_err < 1e-6 && alpha_err < 1e-2 && symmetric && h_err < 1e-6,
        format!("KL(N(1,1)‖N(0,1)) err {kl_err:.1e} (< 1e-6); α-limit err {alpha_err:.1e} (< 1e-2); Hellinger symmetric: {symmetric}, closed-form err {h_err:.1e} (< 1e-6)"),
    )
}

// ---------------------------------------------------------------- MNIST

fn c12_mnist() -> Verdict {
    let Some(dir) = std::env::var_os("BNNLAB_MNIST_DIR") else {
        return Verdict {
            id: 12,
            pass: None,
            detail: "BNNLAB_MNIST_DIR unset; needs ≥ 95% test accuracy within 1800s on a 10k-image train subset".into(),
        };
    };
    let out = tempfile::tempdir().unwrap();
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/mnist_bbb.ini");
    let text = fs::read_to_string(&shipped).unwrap().replace("source = mnist:mnist", &format!("source = mnist:{}", Path::new(&dir).display()));
    let mut cfg = match ExperimentConfig::parse(&text, Path::new(".")) {
        Ok(c) => c,
        Err(e) => return verdict(12, false, format!("config rejected: {e}")),
    };
    cfg.out_dir = out.path().to_path_buf();
    let start = Instant::now();
    let run = match experiment::run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => return verdict(12, false, format!("run failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let acc = run.classification.map_or(0.0, |c| c.metrics.accuracy);
    let table = fs::read_to_string(out.path().join("intervals.txt")).unwrap_or_default();
    let rows = table.lines().count().saturating_sub(1);
    let finite = !table.contains("NaN");
    verdict(
        12,
        acc >= 0.95 && secs < 1800.0 && rows == experiment::INTERVAL_TABLE_ROWS && finite,
        format!("test accuracy {:.2}% (≥ 95%), {secs:.0}s (< 1800s), interval table {rows} rows (20), finite: {finite}", 100.0 * acc),
    )
}

// ---------------------------------------------------------------- determinism

fn c13_determinism() -> Verdict {
    let cases = [
        ("bbb", "[train]\nepochs = 40\n"),
        ("mc_dropout", "[train]\nepochs = 40\n"),
        ("map", "[train]\nepochs = 40\n"),
        ("gp", ""),
        ("hmc", "[hmc]\nn_samples = 60\nburn_in = 20\nwarm_steps = 200\npilot_iters = 10\nn_leapfrog = 20\n"),
    ];
    let mut differing = Vec::new();
    for (method, extra) in cases {
        let text = format!("[method]\nname = {method}\nseed = 13\n{extra}");
        let bytes: Vec<Vec<u8>> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                let mut cfg = ExperimentConfig::parse(&text, Path::new(".")).unwrap();
                cfg.out_dir = dir.path().to_path_buf();
                experiment::run_experiment(&cfg).unwrap();
                fs::read(dir.path().join("metrics.csv")).unwrap()
            })
            .collect();
        if bytes[0] != bytes[1] {
            differing.push(method);
        }
    }
    verdict(
        13,
        differing.is_empty(),
        format!("metrics.csv byte-identical across reruns for bbb, mc_dropout, map, gp, hmc; differing: {differing:?}"),
    )
}

fn main() -> ExitCode {
    let checks: [fn() -> Verdict; 13] = [
        c1_gradients,
        c2_estimators,
        c3_identities,
        c4_bbb,
        c5_hmc_battery,
        c6_hmc_vs_random_walk,
        c7_prior_kurtosis,
        c8_toy_comparison,
        c9_evidence,
        c10_adf,
        c11_divergences,
        c12_mnist,
        c13_determinism,
    ];
    let mut verdicts: Vec<Verdict> = std::thread::scope(|s| {
        let handles: Vec<_> = checks.iter().map(|c| s.spawn(*c)).collect();
        handles.into_iter().map(|h| h.join().expect("criterion panicked")).collect()
    });
    verdicts.sort_by_key(|v| v.id);
    let mut failed = 0;
    for v in &verdicts {
        let tag = match v.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "UNVERIFIED",
        };
        println!("C{:<2} {tag:<10} {}", v.id, v.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
