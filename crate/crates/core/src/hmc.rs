//! Hamiltonian Monte Carlo with Gibbs updates of Gamma-distributed
//! precisions, plus a random-walk Metropolis baseline.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nets::{self, NetworkSpec, ParamVars, ParameterSet};
use crate::prob::{self, LikelihoodSpec, PriorSpec};
use crate::tensor::Tensor;

/// A differentiable potential energy `U(ω) = −ln π(ω) + const`.
pub trait Potential {
    fn dim(&self) -> usize;

    /// `(U, ∇U)` at `x`.
    fn potential(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// `U` alone; override when it is cheaper than the gradient.
    fn energy(&mut self, x: &[f64]) -> Result<f64> {
        Ok(self.potential(x)?.0)
    }

    /// Gibbs step for any hyperparameters, run between HMC transitions.
    /// Returns the new `(τ_prior, τ_noise)` if the potential has them.
    fn resample_hyper(&mut self, _x: &[f64], _rng: &mut dyn RngCore) -> Result<Option<(f64, f64)>> {
        Ok(None)
    }

    fn hyper(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Wraps a closure returning `(U, ∇U)`.
pub struct FnPotential<F> {
    dim: usize,
    f: F,
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> FnPotential<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>> Potential for FnPotential<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn potential(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        (self.f)(x)
    }
}

/// Zero-mean Gaussian target `U = ½ xᵀ P x` for a dense precision `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    mean: Vec<f64>,
    precision: Vec<f64>,
}

impl GaussianTarget {
    /// From a mean and a row-major precision matrix.
    pub fn new(mean: Vec<f64>, precision: Vec<f64>) -> Result<Self> {
        if precision.len() != mean.len() * mean.len() {
            return Err(Error::InvalidShape("precision must be d×d".into()));
        }
        Ok(Self { mean, precision })
    }

    /// 2-D target with unit variances and correlation `r`.
    pub fn correlated_2d(r: f64) -> Self {
        let det = 1.0 - r * r;
        Self {
            mean: vec![0.0, 0.0],
            precision: vec![1.0 / det, -r / det, -r / det, 1.0 / det],
        }
    }
}

impl Potential for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn potential(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.dim();
        let z: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let g: Vec<f64> = (0..d).map(|i| (0..d).map(|j| self.precision[i * d + j] * z[j]).sum()).collect();
        let u = 0.5 * z.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        Ok((u, g))
    }
}

/// Gamma hyper-priors (shape `a`, rate `b`) on the prior and noise precisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperPriorSpec {
    pub prior_shape: f64,
    pub prior_rate: f64,
    pub noise_shape: f64,
    pub noise_rate: f64,
}

impl Default for HyperPriorSpec {
    fn default() -> Self {
        Self {
            prior_shape: 1.0,
            prior_rate: 0.1,
            noise_shape: 1.0,
            noise_rate: 0.1,
        }
    }
}

impl HyperPriorSpec {
    pub fn validate(&self) -> Result<()> {
        let all = [self.prior_shape, self.prior_rate, self.noise_shape, self.noise_rate];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("Gamma hyper-prior shapes and rates must be positive"));
        }
        Ok(())
    }
}

fn gamma_draw(shape: f64, rate: f64, rng: &mut dyn RngCore) -> Result<f64> {
    // rand_distr parameterises by scale = 1/rate
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::invalid(format!("Gamma({shape}, {rate}): {e}")))?;
    Ok(g.sample(rng))
}

/// Conditionally conjugate draws
/// `τ_prior ~ Gamma(a + P/2, b + ½Σω²)`, `τ_noise ~ Gamma(a + N/2, b + ½Σr²)`.
pub fn gibbs_update_precisions(omega: &[f64], residuals: &[f64], hyper: &HyperPriorSpec, rng: &mut dyn RngCore) -> Result<(f64, f64)> {
    hyper.validate()?;
    let ss_w: f64 = omega.iter().map(|w| w * w).sum();
    let ss_r: f64 = residuals.iter().map(|r| r * r).sum();
    let tp = gamma_draw(hyper.prior_shape + 0.5 * omega.len() as f64, hyper.prior_rate + 0.5 * ss_w, rng)?;
    let tn = gamma_draw(hyper.noise_shape + 0.5 * residuals.len() as f64, hyper.noise_rate + 0.5 * ss_r, rng)?;
    Ok((tp, tn))
}

/// `U(ω) = −ln p(ω) − ln p(D | ω)` for a network and dataset.
///
/// With precisions set, the prior is `N(0, 1/τ_prior)` and the Gaussian
/// noise has variance `1/τ_noise`, and [`Potential::resample_hyper`] draws
/// them by Gibbs.
#[derive(Debug, Clone)]
pub struct BnnPotential<'a> {
    spec: &'a NetworkSpec,
    prior: PriorSpec,
    lik: LikelihoodSpec,
    inputs: &'a Tensor,
    targets: &'a Tensor,
    hyper: Option<(HyperPriorSpec, f64, f64)>,
}

impl<'a> BnnPotential<'a> {
    pub fn new(spec: &'a NetworkSpec, prior: PriorSpec, lik: LikelihoodSpec, inputs: &'a Tensor, targets: &'a Tensor) -> Result<Self> {
        prior.validate()?;
        lik.validate()?;
        lik.check_task(spec.task())?;
        if inputs.rows() != targets.rows() {
            return Err(Error::InvalidShape(format!("{} inputs for {} targets", inputs.rows(), targets.rows())));
        }
        Ok(Self {
            spec,
            prior,
            lik,
            inputs,
            targets,
            hyper: None,
        })
    }

    /// Enables Gibbs-sampled precisions starting from `(τ_prior, τ_noise)`.
    pub fn with_precisions(mut self, hyper: HyperPriorSpec, tau_prior: f64, tau_noise: f64) -> Result<Self> {
        hyper.validate()?;
        if !matches!(self.lik, LikelihoodSpec::Gaussian { .. }) {
            return Err(Error::invalid("precision sampling needs a Gaussian likelihood"));
        }
        if !(tau_prior > 0.0 && tau_noise > 0.0) {
            return Err(Error::invalid("precisions must be positive"));
        }
        self.hyper = Some((hyper, tau_prior, tau_noise));
        self.sync_precisions();
        Ok(self)
    }

    fn sync_precisions(&mut self) {
        if let Some((_, tp, tn)) = self.hyper {
            self.prior = PriorSpec::Gaussian {
                mean: 0.0,
                std: 1.0 / tp.sqrt(),
            };
            self.lik = LikelihoodSpec::Gaussian {
                noise_std: 1.0 / tn.sqrt(),
            };
        }
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn likelihood(&self) -> &LikelihoodSpec {
        &self.lik
    }

    fn params(&self, x: &[f64]) -> Result<ParameterSet> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePotential { position: x.to_vec() });
        }
        ParameterSet::from_flat(self.spec, x)
    }

    /// `y − f(x)` over the dataset.
    pub fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = nets::mlp_forward(self.spec, &self.params(x)?, self.inputs)?;
        Ok(self.targets.data().iter().zip(out.data()).map(|(y, f)| y - f).collect())
    }
}

impl Potential for BnnPotential<'_> {
    fn dim(&self) -> usize {
        self.spec.num_params()
    }

    fn potential(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let params = self.params(x)?;
        let mut tape = Tape::new();
        let vars = ParamVars::bind(&mut tape, &params, "", true)?;
        let nodes = prob::log_joint_tape(&mut tape, &self.prior, &self.lik, self.spec, &vars, self.inputs, self.targets)?;
        let lj = tape.add(nodes.log_likelihood, nodes.log_prior)?;
        let u = -tape.value(lj).data()[0];
        if !u.is_finite() {
            return Err(Error::NonFinitePotential { position: x.to_vec() });
        }
        let grads = tape.backward(lj)?;
        let g = vars.flat_grad(&tape, &grads).into_iter().map(|v| -v).collect();
        Ok((u, g))
    }

    fn energy(&mut self, x: &[f64]) -> Result<f64> {
        let params = self.params(x)?;
        let u = -prob::log_posterior_unnorm(&self.prior, &self.lik, self.spec, &params, self.inputs, self.targets)?;
        if !u.is_finite() {
            return Err(Error::NonFinitePotential { position: x.to_vec() });
        }
        Ok(u)
    }

    fn resample_hyper(&mut self, x: &[f64], rng: &mut dyn RngCore) -> Result<Option<(f64, f64)>> {
        let Some((hyper, _, _)) = self.hyper else {
            return Ok(None);
        };
        let r = self.residuals(x)?;
        let (tp, tn) = gibbs_update_precisions(x, &r, &hyper, rng)?;
        self.hyper = Some((hyper, tp, tn));
        self.sync_precisions();
        Ok(Some((tp, tn)))
    }

    fn hyper(&self) -> Option<(f64, f64)> {
        self.hyper.map(|(_, tp, tn)| (tp, tn))
    }
}

fn check_mass(v: &[f64], mass: &[f64]) -> Result<()> {
    if v.len() != mass.len() {
        return Err(Error::InvalidShape(format!("momentum {} / mass {}", v.len(), mass.len())));
    }
    if mass.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
        return Err(Error::invalid("mass entries must be positive"));
    }
    Ok(())
}

/// `K(v) = ½ vᵀ M⁻¹ v` for a diagonal mass.
pub fn kinetic_energy(v: &[f64], mass: &[f64]) -> Result<f64> {
    check_mass(v, mass)?;
    Ok(0.5 * v.iter().zip(mass).map(|(a, m)| a * a / m).sum::<f64>())
}

/// `v ~ N(0, M)`.
pub fn sample_momentum<R: Rng + ?Sized>(mass: &[f64], rng: &mut R) -> Vec<f64> {
    mass.iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(rng);
            m.sqrt() * z
        })
        .collect()
}

/// Position, momentum and cached potential of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    pub precisions: Option<(f64, f64)>,
    pub u: f64,
    pub grad: Vec<f64>,
}

impl ChainState {
    pub fn new<P: Potential + ?Sized>(pot: &mut P, position: Vec<f64>) -> Result<Self> {
        if position.len() != pot.dim() {
            return Err(Error::InvalidShape(format!("position {} for dimension {}", position.len(), pot.dim())));
        }
        let (u, grad) = pot.potential(&position)?;
        if !u.is_finite() {
            return Err(Error::NonFinitePotential { position });
        }
        Ok(Self {
            momentum: vec![0.0; position.len()],
            precisions: pot.hyper(),
            position,
            u,
            grad,
        })
    }
}

/// Result of one leapfrog trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub state: ChainState,
    pub kinetic: f64,
    pub diverged: bool,
    pub grad_evals: usize,
}

/// `L` leapfrog steps: half momentum step, full position step, half
/// momentum step, with interior half steps merged.
pub fn leapfrog<P: Potential + ?Sized>(pot: &mut P, start: &ChainState, eps: f64, steps: usize, mass: &[f64]) -> Result<Trajectory> {
    if !(eps > 0.0) || steps == 0 {
        return Err(Error::invalid(format!("step size {eps} and {steps} steps must be positive")));
    }
    check_mass(&start.momentum, mass)?;
    let mut x = start.position.clone();
    let mut v = start.momentum.clone();
    let mut g = start.grad.clone();
    let mut u = start.u;
    let mut evals = 0;
    let diverged = |state: ChainState, evals| Trajectory {
        state,
        kinetic: f64::INFINITY,
        diverged: true,
        grad_evals: evals,
    };
    for (vi, gi) in v.iter_mut().zip(&g) {
        *vi -= 0.5 * eps * gi;
    }
    for step in 0..steps {
        for ((xi, vi), m) in x.iter_mut().zip(&v).zip(mass) {
            *xi += eps * vi / m;
        }
        evals += 1;
        match pot.potential(&x) {
            Ok((nu, ng)) if nu.is_finite() && ng.iter().all(|v| v.is_finite()) => {
                u = nu;
                g = ng;
            }
            Ok(_) | Err(Error::NonFinitePotential { .. }) => return Ok(diverged(start.clone(), evals)),
            Err(e) => return Err(e),
        }
        let w = if step + 1 == steps { 0.5 * eps } else { eps };
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi -= w * gi;
        }
    }
    let kinetic = kinetic_energy(&v, mass)?;
    if !kinetic.is_finite() {
        return Ok(diverged(start.clone(), evals));
    }
    Ok(Trajectory {
        state: ChainState {
            position: x,
            momentum: v,
            precisions: start.precisions,
            u,
            grad: g,
        },
        kinetic,
        diverged: false,
        grad_evals: evals,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmcConfig {
    pub step_size: f64,
    pub n_leapfrog: usize,
    /// Diagonal mass; `None` means the identity.
    pub mass: Option<Vec<f64>>,
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            n_leapfrog: 20,
            mass: None,
            n_samples: 1000,
            burn_in: 200,
            seed: 0,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self, dim: usize) -> Result<Vec<f64>> {
        if !(self.step_size > 0.0) || self.n_leapfrog == 0 || self.n_samples == 0 {
            return Err(Error::invalid("step size, leapfrog steps and sample count must be positive"));
        }
        let mass = self.mass.clone().unwrap_or_else(|| vec![1.0; dim]);
        check_mass(&vec![0.0; dim], &mass)?;
        Ok(mass)
    }
}

/// One stored draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub iteration: usize,
    pub accepted: bool,
    pub u: f64,
    pub k: f64,
    pub precisions: Option<(f64, f64)>,
    pub position: Vec<f64>,
}

/// Equal-width histogram over the finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() || bins == 0 {
            return Self {
                edges: Vec::new(),
                counts: Vec::new(),
            };
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi == lo {
            hi = lo + 1.0;
        }
        let w = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + w * i as f64).collect();
        let mut counts = vec![0; bins];
        for v in finite {
            counts[(((v - lo) / w) as usize).min(bins - 1)] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Over the kept samples.
    pub acceptance_rate: f64,
    pub burn_in_acceptance: f64,
    pub n_divergent: usize,
    pub grad_evals: usize,
    pub density_evals: usize,
    /// `H_new − H_old` per kept iteration (∞ for divergent trajectories).
    pub energy_errors: Vec<f64>,
    pub energy_histogram: Histogram,
    pub ess: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn min_ess(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean_ess(&self) -> f64 {
        self.ess.iter().sum::<f64>() / self.ess.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub samples: Vec<ChainRecord>,
    pub diagnostics: Diagnostics,
}

impl Chain {
    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.position.clone()).collect()
    }

    /// Trace of coordinate `i`.
    pub fn coordinate(&self, i: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.position[i]).collect()
    }
}

fn finish_diagnostics(samples: &[ChainRecord], acc: (usize, usize), burn_acc: (usize, usize), mut d: Diagnostics) -> Diagnostics {
    d.acceptance_rate = acc.0 as f64 / acc.1.max(1) as f64;
    d.burn_in_acceptance = burn_acc.0 as f64 / burn_acc.1.max(1) as f64;
    if burn_acc.1 > 0 && d.burn_in_acceptance < 0.01 {
        d.warnings
            .push(format!("burn-in acceptance rate {:.4} is below 1%", d.burn_in_acceptance));
    }
    if d.n_divergent > 0 {
        d.warnings.push(format!("{} divergent trajectories", d.n_divergent));
    }
    let dim = samples.first().map_or(0, |s| s.position.len());
    d.ess = (0..dim)
        .map(|i| effective_sample_size(&samples.iter().map(|s| s.position[i]).collect::<Vec<_>>()))
        .collect();
    d.energy_histogram = Histogram::new(&d.energy_errors, 20);
    d
}

fn empty_diagnostics() -> Diagnostics {
    Diagnostics {
        acceptance_rate: 0.0,
        burn_in_acceptance: 0.0,
        n_divergent: 0,
        grad_evals: 0,
        density_evals: 0,
        energy_errors: Vec::new(),
        energy_histogram: Histogram {
            edges: Vec::new(),
            counts: Vec::new(),
        },
        ess: Vec::new(),
        warnings: Vec::new(),
    }
}

/// HMC over any [`Potential`]: per iteration resample momentum, integrate,
/// accept with probability `min(1, exp(H_old − H_new))`, then run the
/// potential's Gibbs step.
pub fn hmc_run<P: Potential + ?Sized>(pot: &mut P, init: Vec<f64>, cfg: &HmcConfig) -> Result<Chain> {
    let mass = cfg.validate(pot.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = ChainState::new(pot, init)?;
    let mut diag = empty_diagnostics();
    diag.grad_evals = 1;
    let (mut acc, mut burn_acc) = ((0, 0), (0, 0));
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for it in 0..cfg.burn_in + cfg.n_samples {
        state.momentum = sample_momentum(&mass, &mut rng);
        let k0 = kinetic_energy(&state.momentum, &mass)?;
        let h0 = state.u + k0;
        let traj = leapfrog(pot, &state, cfg.step_size, cfg.n_leapfrog, &mass)?;
        diag.grad_evals += traj.grad_evals;
        let (accepted, dh) = if traj.diverged {
            diag.n_divergent += 1;
            (false, f64::INFINITY)
        } else {
            let h1 = traj.state.u + traj.kinetic;
            let log_u: f64 = rng.random::<f64>().ln();
            (log_u < h0 - h1, h1 - h0)
        };
        let k = if accepted { traj.kinetic } else { k0 };
        if accepted {
            state = traj.state;
        }
        if let Some(tau) = pot.resample_hyper(&state.position, &mut rng)? {
            state.precisions = Some(tau);
            let (u, g) = pot.potential(&state.position)?;
            diag.grad_evals += 1;
            state.u = u;
            state.grad = g;
        }
        let counter = if it < cfg.burn_in { &mut burn_acc } else { &mut acc };
        counter.0 += accepted as usize;
        counter.1 += 1;
        if it >= cfg.burn_in {
            diag.energy_errors.push(dh);
            samples.push(ChainRecord {
                iteration: it - cfg.burn_in,
                accepted,
                u: state.u,
                k,
                precisions: state.precisions,
                position: state.position.clone(),
            });
        }
    }
    let diagnostics = finish_diagnostics(&samples, acc, burn_acc, diag);
    Ok(Chain { samples, diagnostics })
}

/// HMC over a network posterior, optionally with Gibbs-sampled precisions.
///
/// Starts from `init` or from zeros. When `hyper` is given the prior must be
/// Gaussian and the precisions start from the configured prior and noise.
#[allow(clippy::too_many_arguments)]
pub fn hmc_sample(
    spec: &NetworkSpec,
    prior: &PriorSpec,
    lik: &LikelihoodSpec,
    inputs: &Tensor,
    targets: &Tensor,
    hyper: Option<&HyperPriorSpec>,
    cfg: &HmcConfig,
    init: Option<Vec<f64>>,
) -> Result<Chain> {
    let mut pot = BnnPotential::new(spec, *prior, *lik, inputs, targets)?;
    if let Some(h) = hyper {
        let tp = match *prior {
            PriorSpec::Gaussian { mean, std } if mean == 0.0 => 1.0 / (std * std),
            _ => return Err(Error::invalid("precision sampling needs a zero-mean Gaussian prior")),
        };
        let tn = match *lik {
            LikelihoodSpec::Gaussian { noise_std } => 1.0 / (noise_std * noise_std),
            LikelihoodSpec::Categorical => return Err(Error::invalid("precision sampling needs a Gaussian likelihood")),
        };
        pot = pot.with_precisions(*h, tp, tn)?;
    }
    let init = init.unwrap_or_else(|| vec![0.0; spec.num_params()]);
    hmc_run(&mut pot, init, cfg)
}

/// Gaussian random-walk Metropolis over the same potential.
pub fn random_walk_mh<P: Potential + ?Sized>(
    pot: &mut P,
    init: Vec<f64>,
    proposal_std: f64,
    n_samples: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Chain> {
    if !(proposal_std > 0.0) {
        return Err(Error::invalid(format!("proposal std {proposal_std} must be positive")));
    }
    if init.len() != pot.dim() || n_samples == 0 {
        return Err(Error::invalid("initial position must match the target dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diag = empty_diagnostics();
    let mut x = init;
    let mut u = pot.energy(&x)?;
    diag.density_evals = 1;
    let (mut acc, mut burn_acc) = ((0, 0), (0, 0));
    let mut samples = Vec::with_capacity(n_samples);
    let mut prop = x.clone();
    for it in 0..burn_in + n_samples {
        for (p, xi) in prop.iter_mut().zip(&x) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p = xi + proposal_std * z;
        }
        diag.density_evals += 1;
        let (accepted, du) = match pot.energy(&prop) {
            Ok(u1) if u1.is_finite() => {
                let log_r: f64 = rng.random::<f64>().ln();
                (log_r < u - u1, u1 - u)
            }
            Ok(_) | Err(Error::NonFinitePotential { .. }) => (false, f64::INFINITY),
            Err(e) => return Err(e),
        };
        if accepted {
            x.copy_from_slice(&prop);
            u += du;
        }
        let counter = if it < burn_in { &mut burn_acc } else { &mut acc };
        counter.0 += accepted as usize;
        counter.1 += 1;
        if it >= burn_in {
            diag.energy_errors.push(du);
            samples.push(ChainRecord {
                iteration: it - burn_in,
                accepted,
                u,
                k: 0.0,
                precisions: None,
                position: x.clone(),
            });
        }
    }
    let diagnostics = finish_diagnostics(&samples, acc, burn_acc, diag);
    Ok(Chain { samples, diagnostics })
}

/// Short pilot runs that halve or grow a scale until the acceptance rate of
/// `run(scale)` lands in `[lo, hi]`, or the round budget is spent.
fn pilot_scale(mut scale: f64, lo: f64, hi: f64, rounds: usize, mut run: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let (mut below, mut above) = (0.0_f64, f64::INFINITY);
    for _ in 0..rounds {
        let acc = run(scale)?;
        if acc < lo {
            above = scale;
        } else if acc > hi {
            below = scale;
        } else {
            return Ok(scale);
        }
        scale = if above.is_finite() && below > 0.0 {
            (below * above).sqrt()
        } else if above.is_finite() {
            scale * 0.5
        } else {
            scale * 2.0
        };
    }
    Ok(scale)
}

/// Picks an HMC step size for fixed `n_leapfrog` whose acceptance rate over
/// `pilot_iters` iterations lies in `target`. Not used inside [`hmc_run`].
pub fn pilot_step_size<P: Potential + ?Sized>(
    pot: &mut P,
    init: &[f64],
    n_leapfrog: usize,
    target: (f64, f64),
    pilot_iters: usize,
    seed: u64,
) -> Result<f64> {
    pilot_scale(0.1, target.0, target.1, 30, |eps| {
        let cfg = HmcConfig {
            step_size: eps,
            n_leapfrog,
            mass: None,
            n_samples: pilot_iters,
            burn_in: 0,
            seed,
        };
        Ok(hmc_run(pot, init.to_vec(), &cfg)?.diagnostics.acceptance_rate)
    })
}

/// Picks a random-walk proposal scale whose acceptance rate lies in `target`.
pub fn pilot_proposal_std<P: Potential + ?Sized>(pot: &mut P, init: &[f64], target: (f64, f64), pilot_iters: usize, seed: u64) -> Result<f64> {
    pilot_scale(0.1, target.0, target.1, 30, |s| {
        Ok(random_walk_mh(pot, init.to_vec(), s, pilot_iters, 0, seed)?.diagnostics.acceptance_rate)
    })
}

/// Sample autocorrelation at `lag` (biased autocovariance, divided by `n`).
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    if lag >= n {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    if var == 0.0 {
        return 1.0;
    }
    let cov: f64 = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum();
    cov / var
}

/// ESS with Geyer's initial-positive-sequence truncation:
/// `n / (−1 + 2 Σₖ Γₖ)` with `Γₖ = ρ₂ₖ + ρ₂ₖ₊₁` summed while positive.
///
/// Antithetic chains can push the denominator towards zero, so it is floored
/// at `1 / log₁₀ n`, capping the ESS at `n·log₁₀ n`.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let acov = lagged_products(&centred);
    let var = acov[0];
    if var == 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let gamma = (acov[2 * k] + acov[2 * k + 1]) / var;
        if gamma <= 0.0 {
            break;
        }
        sum += gamma;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / (n as f64).log10());
    n as f64 / tau
}

/// `Σᵢ xᵢ xᵢ₊ₖ` for every lag `k < n`, via a zero-padded FFT.
fn lagged_products(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = (2 * n).next_power_of_two();
    let mut re = vec![0.0; m];
    let mut im = vec![0.0; m];
    re[..n].copy_from_slice(x);
    fft(&mut re, &mut im, false);
    for (r, i) in re.iter_mut().zip(im.iter_mut()) {
        *r = *r * *r + *i * *i;
        *i = 0.0;
    }
    fft(&mut re, &mut im, true);
    re.truncate(n);
    re
}

/// In-place iterative radix-2 FFT; the inverse includes the `1/m` factor.
fn fft(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let m = re.len();
    let mut j = 0;
    for i in 1..m {
        let mut bit = m >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= m {
        let ang = sign * 2.0 * core::f64::consts::PI / len as f64;
        for start in (0..m).step_by(len) {
            for k in 0..len / 2 {
                let (ws, wc) = (ang * k as f64).sin_cos();
                let (a, b) = (start + k, start + k + len / 2);
                let tr = re[b] * wc - im[b] * ws;
                let ti = re[b] * ws + im[b] * wc;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
    if inverse {
        let s = 1.0 / m as f64;
        re.iter_mut().for_each(|v| *v *= s);
        im.iter_mut().for_each(|v| *v *= s);
    }
}
