//! Variational inference: Bayes by Backprop over a mean-field Gaussian,
//! MC Dropout, gradient estimators and local reparameterisation.

mod dropout;
mod estimators;
mod local;

pub use dropout::{
    dropout_forward, dropout_forward_with_masks, mc_dropout_predict, mc_dropout_train, sample_masks, DropoutFit,
    DropoutMasks, DropoutPosterior,
};
pub use estimators::{
    gaussian_identity_check, pathwise_grad, score_function_grad, DiagGaussian, GradientEstimate, IdentityReport,
    IdentityRow,
};
pub use local::{local_reparam_forward, sampled_weight_forward};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nets::{self, NetworkSpec, ParamVars, ParameterSet};
use crate::optim::{Optimizer, OptimizerKind};
use crate::prob::{self, LikelihoodSpec, PriorSpec, LN_2PI};
use crate::summary::{self, PredictiveSummary};
use crate::tensor::Tensor;

/// `ln(1 + eʳ)`, evaluated without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Per-epoch training record. Wall time is added by the caller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    /// Mean objective over the epoch's steps (ELBO, or negative loss for dropout).
    pub elbo: f64,
    /// Mean data-scaled negative log likelihood.
    pub nll: f64,
    /// Mean KL (or weight-decay penalty for dropout).
    pub kl: f64,
}

/// Factorised Gaussian `q(ω | μ, ρ)` with `σ = softplus(ρ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPosterior {
    pub mu: ParameterSet,
    pub rho: ParameterSet,
}

impl VariationalPosterior {
    pub fn new(mu: ParameterSet, rho: ParameterSet) -> Result<Self> {
        let same = mu.len() == rho.len()
            && mu
                .iter()
                .zip(rho.iter())
                .all(|((i, a), (j, b))| i == j && a.weight.shape() == b.weight.shape() && a.bias.as_ref().map(Tensor::shape) == b.bias.as_ref().map(Tensor::shape));
        if !same {
            return Err(Error::InvalidShape("μ and ρ parameter sets differ in shape".into()));
        }
        Ok(Self { mu, rho })
    }

    /// μ ~ N(0, mu_std²), ρ = softplus⁻¹(sigma).
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, mu_std: f64, sigma: f64, rng: &mut R) -> Result<Self> {
        if !(sigma > 0.0) || !(mu_std >= 0.0) {
            return Err(Error::invalid(format!("initial σ {sigma} and μ std {mu_std} must be positive")));
        }
        Ok(Self {
            mu: ParameterSet::random(spec, mu_std, rng),
            rho: ParameterSet::filled(spec, softplus_inv(sigma)),
        })
    }

    pub fn sigma(&self) -> ParameterSet {
        self.rho.map(softplus)
    }

    pub fn num_params(&self) -> usize {
        self.mu.len()
    }

    /// `ln q(ω | θ)` for a concrete weight assignment.
    pub fn log_q(&self, w: &ParameterSet) -> f64 {
        self.mu
            .values()
            .zip(self.rho.values())
            .zip(w.values())
            .map(|((&m, &r), &x)| prob::normal_log_density(x, m, softplus(r)))
            .sum()
    }
}

fn standard_normal_like<R: Rng + ?Sized>(template: &ParameterSet, rng: &mut R) -> ParameterSet {
    let mut eps = template.clone();
    for v in eps.values_mut() {
        *v = StandardNormal.sample(rng);
    }
    eps
}

/// `ω = μ + softplus(ρ) ⊙ ε` with `ε ~ N(0, I)`.
pub fn sample_weights<R: Rng + ?Sized>(vp: &VariationalPosterior, rng: &mut R) -> ParameterSet {
    let eps = standard_normal_like(&vp.mu, rng);
    weights_for_noise(vp, &eps)
}

/// The deterministic map `ε ↦ μ + softplus(ρ) ⊙ ε`.
pub fn weights_for_noise(vp: &VariationalPosterior, eps: &ParameterSet) -> ParameterSet {
    let mut w = vp.mu.clone();
    for ((o, &r), &e) in w.values_mut().zip(vp.rho.values()).zip(eps.values()) {
        let s = softplus(r);
        if s != 0.0 {
            *o += s * e;
        }
    }
    w
}

/// How the likelihood term is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightSampling {
    /// One weight draw per MC sample shared across the batch.
    #[default]
    Weights,
    /// Per-example pre-activation draws (dense layers only).
    LocalReparam,
}

/// How the `ln q − ln p` term is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlEstimate {
    /// `ln q(ω) − ln p(ω)` on the sampled weights.
    #[default]
    MonteCarlo,
    /// Analytic `KL(q ‖ p)`; needs a Gaussian prior.
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ElboOptions {
    pub sampling: WeightSampling,
    pub kl: KlEstimate,
}

/// A mini-batch plus the size of the dataset it was drawn from.
/// `n_data = 0` drops the likelihood term.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a Tensor,
    pub targets: &'a Tensor,
    pub n_data: usize,
}

impl Batch<'_> {
    fn check(&self) -> Result<usize> {
        let m = if self.inputs.ndim() == 0 { 0 } else { self.inputs.rows() };
        if m == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if self.n_data != 0 && self.n_data < m {
            return Err(Error::invalid(format!("dataset size {} below batch size {m}", self.n_data)));
        }
        Ok(m)
    }

    fn scale(&self, m: usize) -> f64 {
        self.n_data as f64 / m as f64
    }
}

/// One reparameterised ELBO sample and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboSample {
    pub value: f64,
    /// `(N/M) · ln p(batch | ω)`.
    pub log_likelihood: f64,
    pub kl: f64,
    pub grad_mu: Vec<f64>,
    pub grad_rho: Vec<f64>,
}

/// Monte Carlo ELBO estimate averaged over samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboEstimate {
    pub value: f64,
    /// Standard error of `value` across samples (0 for a single sample).
    pub std_error: f64,
    pub log_likelihood: f64,
    pub kl: f64,
    pub grad_mu: Vec<f64>,
    pub grad_rho: Vec<f64>,
    pub samples: Vec<f64>,
}

struct Bound {
    mu: ParamVars,
    rho: ParamVars,
}

fn bind_posterior(tape: &mut Tape, vp: &VariationalPosterior) -> Result<Bound> {
    Ok(Bound {
        mu: ParamVars::bind(tape, &vp.mu, "mu.", true)?,
        rho: ParamVars::bind(tape, &vp.rho, "rho.", true)?,
    })
}

fn sigma_var(tape: &mut Tape, rho: Var) -> Result<Var> {
    tape.softplus(rho)
}

/// Records `ω = μ + σ ε` per tensor and returns the weights plus `ln q(ω)`.
fn reparam_weights(tape: &mut Tape, b: &Bound, eps: &ParameterSet) -> Result<(ParamVars, Var, Vec<Var>)> {
    let mut w = ParamVars::default();
    let mut log_q: Option<Var> = None;
    let mut flat = Vec::new();
    let mut one = |tape: &mut Tape, mu: Var, rho: Var, e: &Tensor| -> Result<Var> {
        let s = sigma_var(tape, rho)?;
        let se = tape.mul_const(s, e.clone())?;
        let omega = tape.add(mu, se)?;
        // ln N(ω; μ, σ²) written on ω so the total derivative flows through both paths
        let d = tape.sub(omega, mu)?;
        let inv = tape.recip(s)?;
        let z = tape.mul(d, inv)?;
        let z2 = tape.square(z)?;
        let z2 = tape.scale(z2, -0.5)?;
        let ls = tape.log(s)?;
        let t = tape.sub(z2, ls)?;
        let t = tape.sum(t)?;
        let t = tape.add_scalar(t, -0.5 * LN_2PI * e.len() as f64)?;
        log_q = Some(match log_q {
            Some(acc) => tape.add(acc, t)?,
            None => t,
        });
        Ok(omega)
    };
    for (i, mw, mb) in b.mu.iter() {
        let (rw, rb) = b.rho.get(i).expect("ρ bound for every μ layer");
        let lp = eps.layer(i).ok_or_else(|| Error::invalid(format!("no noise for layer {i}")))?;
        let ww = one(tape, mw, rw, &lp.weight)?;
        flat.push(ww);
        let wb = match (mb, rb, &lp.bias) {
            (Some(mb), Some(rb), Some(eb)) => {
                let v = one(tape, mb, rb, eb)?;
                flat.push(v);
                Some(v)
            }
            (None, None, None) => None,
            _ => return Err(Error::InvalidShape(format!("bias presence mismatch at layer {i}"))),
        };
        w.insert(i, ww, wb);
    }
    let log_q = match log_q {
        Some(v) => v,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    Ok((w, log_q, flat))
}

/// Closed-form `KL(q ‖ N(m, s²))` summed over all parameters.
fn closed_form_kl_tape(tape: &mut Tape, b: &Bound, prior: &PriorSpec) -> Result<Var> {
    let (pm, ps) = match *prior {
        PriorSpec::Gaussian { mean, std } => (mean, std),
        PriorSpec::SpikeSlab { pi, slab_std, .. } if pi == 1.0 => (0.0, slab_std),
        PriorSpec::SpikeSlab { pi, spike_std, .. } if pi == 0.0 => (0.0, spike_std),
        _ => return Err(Error::invalid("closed-form KL needs a Gaussian prior")),
    };
    let mut total: Option<Var> = None;
    let mut pairs = Vec::new();
    for (i, mw, mb) in b.mu.iter() {
        let (rw, rb) = b.rho.get(i).expect("ρ bound for every μ layer");
        pairs.push((mw, rw));
        if let (Some(mb), Some(rb)) = (mb, rb) {
            pairs.push((mb, rb));
        }
    }
    for (mu, rho) in pairs {
        let n = tape.value(mu).len() as f64;
        let s = sigma_var(tape, rho)?;
        let ls = tape.log(s)?;
        let s2 = tape.square(s)?;
        let d = tape.add_scalar(mu, -pm)?;
        let d2 = tape.square(d)?;
        let q = tape.add(s2, d2)?;
        let q = tape.scale(q, 0.5 / (ps * ps))?;
        let t = tape.sub(q, ls)?;
        let t = tape.sum(t)?;
        let t = tape.add_scalar(t, n * (ps.ln() - 0.5))?;
        total = Some(match total {
            Some(acc) => tape.add(acc, t)?,
            None => t,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(0.0)),
    })
}

fn finish_sample(tape: &Tape, b: &Bound, ll: Option<Var>, kl: Var, elbo: Var) -> Result<ElboSample> {
    let value = tape.value(elbo).data()[0];
    let grads = tape.backward(elbo)?;
    Ok(ElboSample {
        value,
        log_likelihood: ll.map_or(0.0, |v| tape.value(v).data()[0]),
        kl: tape.value(kl).data()[0],
        grad_mu: b.mu.flat_grad(tape, &grads),
        grad_rho: b.rho.flat_grad(tape, &grads),
    })
}

fn check_setup(vp: &VariationalPosterior, prior: &PriorSpec, lik: &LikelihoodSpec, spec: &NetworkSpec) -> Result<()> {
    prior.validate()?;
    lik.validate()?;
    lik.check_task(spec.task())?;
    if vp.num_params() != spec.num_params() {
        return Err(Error::InvalidShape(format!(
            "posterior has {} parameters, network {}",
            vp.num_params(),
            spec.num_params()
        )));
    }
    Ok(())
}

/// ELBO sample for a fixed noise draw `ε` (weight sampling).
///
/// `(N/M)·ln p(batch | ω) − KL` with `ω = μ + softplus(ρ) ε`. Used directly
/// for common-random-number checks.
pub fn elbo_for_noise(
    vp: &VariationalPosterior,
    prior: &PriorSpec,
    lik: &LikelihoodSpec,
    spec: &NetworkSpec,
    batch: &Batch<'_>,
    eps: &ParameterSet,
    kl: KlEstimate,
) -> Result<ElboSample> {
    check_setup(vp, prior, lik, spec)?;
    let m = batch.check()?;
    let mut tape = Tape::new();
    let b = bind_posterior(&mut tape, vp)?;
    let (w, log_q, flat) = reparam_weights(&mut tape, &b, eps)?;
    let kl_var = match kl {
        KlEstimate::MonteCarlo => {
            let lp = prob::log_prior_tape(&mut tape, prior, &flat)?;
            tape.sub(log_q, lp)?
        }
        KlEstimate::ClosedForm => closed_form_kl_tape(&mut tape, &b, prior)?,
    };
    let (ll, elbo) = if batch.n_data == 0 {
        (None, tape.neg(kl_var)?)
    } else {
        let x = tape.constant(batch.inputs.clone());
        let out = nets::forward_tape(&mut tape, spec, &w, x, None)?;
        let ll = prob::log_likelihood_tape(&mut tape, lik, out, batch.targets)?;
        let ll = tape.scale(ll, batch.scale(m))?;
        (Some(ll), tape.sub(ll, kl_var)?)
    };
    finish_sample(&tape, &b, ll, kl_var, elbo)
}

fn elbo_local_sample<R: Rng + ?Sized>(
    vp: &VariationalPosterior,
    prior: &PriorSpec,
    lik: &LikelihoodSpec,
    spec: &NetworkSpec,
    batch: &Batch<'_>,
    kl: KlEstimate,
    rng: &mut R,
) -> Result<ElboSample> {
    let m = batch.check()?;
    let mut tape = Tape::new();
    let b = bind_posterior(&mut tape, vp)?;
    let kl_var = match kl {
        KlEstimate::MonteCarlo => {
            let eps = standard_normal_like(&vp.mu, rng);
            let (_, log_q, flat) = reparam_weights(&mut tape, &b, &eps)?;
            let lp = prob::log_prior_tape(&mut tape, prior, &flat)?;
            tape.sub(log_q, lp)?
        }
        KlEstimate::ClosedForm => closed_form_kl_tape(&mut tape, &b, prior)?,
    };
    let (ll, elbo) = if batch.n_data == 0 {
        (None, tape.neg(kl_var)?)
    } else {
        let x = tape.constant(batch.inputs.clone());
        let out = local::local_reparam_forward_tape(&mut tape, spec, &b.mu, &b.rho, x, rng)?;
        let ll = prob::log_likelihood_tape(&mut tape, lik, out, batch.targets)?;
        let ll = tape.scale(ll, batch.scale(m))?;
        (Some(ll), tape.sub(ll, kl_var)?)
    };
    finish_sample(&tape, &b, ll, kl_var, elbo)
}

/// Monte Carlo estimate of the mini-batch ELBO and its reparameterised
/// gradient with respect to `(μ, ρ)`.
#[allow(clippy::too_many_arguments)]
pub fn elbo_estimate<R: Rng + ?Sized>(
    vp: &VariationalPosterior,
    prior: &PriorSpec,
    lik: &LikelihoodSpec,
    spec: &NetworkSpec,
    batch: &Batch<'_>,
    n_samples: usize,
    opts: ElboOptions,
    rng: &mut R,
) -> Result<ElboEstimate> {
    check_setup(vp, prior, lik, spec)?;
    batch.check()?;
    if n_samples == 0 {
        return Err(Error::invalid("at least one Monte Carlo sample is required"));
    }
    let p = vp.num_params();
    let mut est = ElboEstimate {
        value: 0.0,
        std_error: 0.0,
        log_likelihood: 0.0,
        kl: 0.0,
        grad_mu: vec![0.0; p],
        grad_rho: vec![0.0; p],
        samples: Vec::with_capacity(n_samples),
    };
    for _ in 0..n_samples {
        let s = match opts.sampling {
            WeightSampling::Weights => {
                let eps = standard_normal_like(&vp.mu, rng);
                elbo_for_noise(vp, prior, lik, spec, batch, &eps, opts.kl)?
            }
            WeightSampling::LocalReparam => elbo_local_sample(vp, prior, lik, spec, batch, opts.kl, rng)?,
        };
        est.log_likelihood += s.log_likelihood;
        est.kl += s.kl;
        for (a, g) in est.grad_mu.iter_mut().zip(&s.grad_mu) {
            *a += g;
        }
        for (a, g) in est.grad_rho.iter_mut().zip(&s.grad_rho) {
            *a += g;
        }
        est.samples.push(s.value);
    }
    let n = n_samples as f64;
    est.value = est.samples.iter().sum::<f64>() / n;
    est.log_likelihood /= n;
    est.kl /= n;
    est.grad_mu.iter_mut().chain(est.grad_rho.iter_mut()).for_each(|g| *g /= n);
    if n_samples > 1 {
        let var = est.samples.iter().map(|v| (v - est.value) * (v - est.value)).sum::<f64>() / (n - 1.0);
        est.std_error = (var / n).sqrt();
    }
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub mc_samples: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Std of the initial μ draw (also the dropout weight init).
    pub init_mu_std: f64,
    /// Initial posterior σ.
    pub init_sigma: f64,
    pub elbo: ElboOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            mc_samples: 1,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            init_mu_std: 0.1,
            init_sigma: 0.05,
            elbo: ElboOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_data: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.mc_samples == 0 || self.batch_size == 0 {
            return Err(Error::invalid("learning rate, MC samples and batch size must be positive"));
        }
        if self.batch_size > n_data {
            return Err(Error::invalid(format!("batch size {} exceeds dataset size {n_data}", self.batch_size)));
        }
        Ok(())
    }
}

/// Statistics of one optimisation step.
pub(crate) struct StepStats {
    pub objective: f64,
    pub nll: f64,
    pub kl: f64,
}

/// Shuffled mini-batch epochs. `step` receives the batch row indices and
/// returns its objective, or an error. A non-finite objective aborts with
/// [`Error::Diverged`].
pub(crate) fn run_epochs<R: Rng + ?Sized>(
    n_data: usize,
    cfg: &TrainConfig,
    rng: &mut R,
    step_trace: &mut Vec<f64>,
    mut step: impl FnMut(&[usize], &mut R) -> Result<StepStats>,
) -> Result<Vec<TraceRow>> {
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n_data).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let (mut obj, mut nll, mut kl, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let s = step(chunk, rng)?;
            if !s.objective.is_finite() {
                return Err(Error::Diverged { epoch, trace });
            }
            step_trace.push(s.objective);
            obj += s.objective;
            nll += s.nll;
            kl += s.kl;
            steps += 1;
        }
        let n = steps as f64;
        trace.push(TraceRow {
            epoch,
            elbo: obj / n,
            nll: nll / n,
            kl: kl / n,
        });
    }
    Ok(trace)
}

/// Trained posterior plus its per-epoch and per-step traces.
#[derive(Debug, Clone, PartialEq)]
pub struct BbbFit {
    pub posterior: VariationalPosterior,
    pub trace: Vec<TraceRow>,
    pub step_elbo: Vec<f64>,
}

/// Bayes by Backprop from a seeded initial posterior.
pub fn bbb_train(
    spec: &NetworkSpec,
    prior: &PriorSpec,
    lik: &LikelihoodSpec,
    inputs: &Tensor,
    targets: &Tensor,
    cfg: &TrainConfig,
) -> Result<BbbFit> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = VariationalPosterior::init(spec, cfg.init_mu_std, cfg.init_sigma, &mut rng)?;
    bbb_train_with(init, spec, prior, lik, inputs, targets, cfg, &mut rng)
}

/// Bayes by Backprop from a given starting posterior.
///
/// Each step samples ε, forms ω, evaluates the mini-batch ELBO and moves
/// θ = (μ, ρ) uphill on it.
#[allow(clippy::too_many_arguments)]
pub fn bbb_train_with<R: Rng + ?Sized>(
    init: VariationalPosterior,
    spec: &NetworkSpec,
    prior: &PriorSpec,
    lik: &LikelihoodSpec,
    inputs: &Tensor,
    targets: &Tensor,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<BbbFit> {
    check_setup(&init, prior, lik, spec)?;
    let n_data = inputs.rows();
    if targets.rows() != n_data {
        return Err(Error::InvalidShape(format!("{n_data} inputs for {} targets", targets.rows())));
    }
    cfg.validate(n_data)?;
    let p = init.num_params();
    let mut theta: Vec<f64> = init.mu.to_flat();
    theta.extend(init.rho.to_flat());
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, 2 * p);
    let mut vp = init;
    let mut step_elbo = Vec::new();
    let trace = run_epochs(n_data, cfg, rng, &mut step_elbo, |idx, rng| {
        let xb = inputs.select_rows(idx)?;
        let yb = targets.select_rows(idx)?;
        let batch = Batch {
            inputs: &xb,
            targets: &yb,
            n_data,
        };
        let est = elbo_estimate(&vp, prior, lik, spec, &batch, cfg.mc_samples, cfg.elbo, rng)?;
        if est.value.is_finite() {
            let grad: Vec<f64> = est.grad_mu.iter().chain(&est.grad_rho).map(|g| -g).collect();
            opt.step(&mut theta, &grad);
            vp.mu = ParameterSet::from_flat(spec, &theta[..p])?;
            vp.rho = ParameterSet::from_flat(spec, &theta[p..])?;
        }
        Ok(StepStats {
            objective: est.value,
            nll: -est.log_likelihood,
            kl: est.kl,
        })
    })?;
    Ok(BbbFit {
        posterior: vp,
        trace,
        step_elbo,
    })
}

/// Network outputs under `t` independent weight draws from `vp`.
pub fn posterior_output_samples<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    vp: &VariationalPosterior,
    x: &Tensor,
    t: usize,
    rng: &mut R,
) -> Result<Vec<Tensor>> {
    (0..t).map(|_| nets::mlp_forward(spec, &sample_weights(vp, rng), x)).collect()
}

/// Predictive moments of `vp` at `x` from `t` weight draws.
pub fn bbb_predict<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    vp: &VariationalPosterior,
    x: &Tensor,
    t: usize,
    noise_std: Option<f64>,
    level: f64,
    rng: &mut R,
) -> Result<PredictiveSummary> {
    if t < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: t });
    }
    let samples = posterior_output_samples(spec, vp, x, t, rng)?;
    summary::predictive_moments(&samples, noise_std, level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Activation, Task};

    fn scalar_net() -> NetworkSpec {
        NetworkSpec::mlp(1, &[], 1, Activation::Identity, Task::Regression, false).unwrap()
    }

    #[test]
    fn softplus_roundtrip_and_positive() {
        for y in [1e-8, 0.05, 1.0, 40.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12 * (1.0 + y));
        }
        assert!(softplus(-700.0) > 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
    }

    #[test]
    fn collapsed_sigma_returns_mean() {
        let spec = scalar_net();
        let vp = VariationalPosterior::new(ParameterSet::filled(&spec, 0.7), ParameterSet::filled(&spec, -1e4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_weights(&vp, &mut rng).to_flat(), vec![0.7]);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let spec = scalar_net();
        let x = Tensor::matrix(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 3,
            seed: 4,
            ..TrainConfig::default()
        };
        let lik = LikelihoodSpec::Gaussian { noise_std: 1.0 };
        let fit = bbb_train(&spec, &PriorSpec::standard_normal(), &lik, &x, &x, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let init = VariationalPosterior::init(&spec, 0.1, 0.05, &mut rng).unwrap();
        assert_eq!(fit.posterior, init);
        assert!(fit.trace.is_empty());
    }

    #[test]
    fn dataset_smaller_than_batch_rejected() {
        let spec = scalar_net();
        let vp = VariationalPosterior::init(&spec, 0.1, 0.05, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = Tensor::zeros(&[2, 1]);
        let batch = Batch {
            inputs: &x,
            targets: &x,
            n_data: 1,
        };
        let lik = LikelihoodSpec::Gaussian { noise_std: 1.0 };
        let r = elbo_estimate(&vp, &PriorSpec::standard_normal(), &lik, &spec, &batch, 1, ElboOptions::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(r.is_err());
    }
}
