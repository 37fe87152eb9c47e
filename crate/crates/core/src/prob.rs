//! Priors, likelihoods, the un-normalised log posterior, and divergence measures.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nets::{self, NetworkSpec, ParamVars, ParameterSet, Task};
use crate::tensor::Tensor;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `ln N(x; μ, σ²)`.
pub fn normal_log_density(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * LN_2PI - std.ln() - 0.5 * z * z
}

/// `ln Σ exp(xᵢ)` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Prior applied independently to every weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorSpec {
    Gaussian { mean: f64, std: f64 },
    /// Zero-mean two-component mixture `π·N(0, σ_slab²) + (1−π)·N(0, σ_spike²)`.
    SpikeSlab { pi: f64, slab_std: f64, spike_std: f64 },
}

impl Default for PriorSpec {
    /// Default experiment prior; these constants are a configuration choice.
    fn default() -> Self {
        PriorSpec::SpikeSlab {
            pi: 0.5,
            slab_std: 1.0,
            spike_std: 0.0625,
        }
    }
}

impl PriorSpec {
    pub fn standard_normal() -> Self {
        PriorSpec::Gaussian { mean: 0.0, std: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PriorSpec::Gaussian { mean, std } => {
                if !(std > 0.0) || !mean.is_finite() || !std.is_finite() {
                    return Err(Error::invalid(format!("gaussian prior needs finite mean and std > 0, got ({mean}, {std})")));
                }
            }
            PriorSpec::SpikeSlab { pi, slab_std, spike_std } => {
                if !(0.0..=1.0).contains(&pi) {
                    return Err(Error::invalid(format!("spike-slab weight {pi} outside [0, 1]")));
                }
                if !(spike_std > 0.0) || !(slab_std.is_finite()) || !(spike_std < slab_std) {
                    return Err(Error::invalid(format!(
                        "spike-slab needs 0 < spike std < slab std, got ({spike_std}, {slab_std})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Log density of a single weight.
    pub fn log_density(&self, w: f64) -> f64 {
        match *self {
            PriorSpec::Gaussian { mean, std } => normal_log_density(w, mean, std),
            PriorSpec::SpikeSlab { pi, slab_std, spike_std } => {
                if pi == 1.0 {
                    normal_log_density(w, 0.0, slab_std)
                } else if pi == 0.0 {
                    normal_log_density(w, 0.0, spike_std)
                } else {
                    log_sum_exp(&[
                        pi.ln() + normal_log_density(w, 0.0, slab_std),
                        (1.0 - pi).ln() + normal_log_density(w, 0.0, spike_std),
                    ])
                }
            }
        }
    }
}

/// `Σ ln p(w)` over every weight.
pub fn log_prior(prior: &PriorSpec, params: &ParameterSet) -> f64 {
    params.values().map(|&w| prior.log_density(w)).sum()
}

fn gaussian_log_prior_tape(tape: &mut Tape, w: Var, mean: f64, std: f64, log_weight: f64) -> Result<Var> {
    // elementwise ln(weight) + ln N(w; mean, std²)
    let d = if mean == 0.0 { w } else { tape.add_scalar(w, -mean)? };
    let sq = tape.square(d)?;
    let s = tape.scale(sq, -0.5 / (std * std))?;
    tape.add_scalar(s, log_weight - 0.5 * LN_2PI - std.ln())
}

/// Records `Σ ln p(w)` over the given weight tensors and returns the scalar node.
pub fn log_prior_tape(tape: &mut Tape, prior: &PriorSpec, weights: &[Var]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &w in weights {
        let elementwise = match *prior {
            PriorSpec::Gaussian { mean, std } => gaussian_log_prior_tape(tape, w, mean, std, 0.0)?,
            PriorSpec::SpikeSlab { pi, slab_std, .. } if pi == 1.0 => gaussian_log_prior_tape(tape, w, 0.0, slab_std, 0.0)?,
            PriorSpec::SpikeSlab { pi, spike_std, .. } if pi == 0.0 => gaussian_log_prior_tape(tape, w, 0.0, spike_std, 0.0)?,
            PriorSpec::SpikeSlab { pi, slab_std, spike_std } => {
                let a = gaussian_log_prior_tape(tape, w, 0.0, slab_std, pi.ln())?;
                let b = gaussian_log_prior_tape(tape, w, 0.0, spike_std, (1.0 - pi).ln())?;
                // log-sum-exp with the elementwise max held constant
                let m = tape.value(a).zip_map(tape.value(b), f64::max)?;
                let neg_m = tape.constant(m.map(|v| -v));
                let m = tape.constant(m);
                let ea = tape.add(a, neg_m)?;
                let ea = tape.exp(ea)?;
                let eb = tape.add(b, neg_m)?;
                let eb = tape.exp(eb)?;
                let s = tape.add(ea, eb)?;
                let l = tape.log(s)?;
                tape.add(l, m)?
            }
        };
        let s = tape.sum(elementwise)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(tape.constant(Tensor::scalar(0.0))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LikelihoodSpec {
    /// i.i.d. Gaussian noise with a shared standard deviation.
    Gaussian { noise_std: f64 },
    /// Softmax outputs with integer class targets.
    Categorical,
}

impl LikelihoodSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LikelihoodSpec::Gaussian { noise_std } if !(noise_std > 0.0) || !noise_std.is_finite() => {
                Err(Error::invalid(format!("noise std must be positive, got {noise_std}")))
            }
            _ => Ok(()),
        }
    }

    pub fn check_task(&self, task: Task) -> Result<()> {
        match (self, task) {
            (LikelihoodSpec::Gaussian { .. }, Task::Regression) | (LikelihoodSpec::Categorical, Task::Classification) => Ok(()),
            _ => Err(Error::invalid(format!("likelihood {self:?} is incompatible with a {task} network"))),
        }
    }
}

fn class_index(y: f64, k: usize) -> Result<usize> {
    if y >= 0.0 && y.fract() == 0.0 && (y as usize) < k {
        Ok(y as usize)
    } else {
        Err(Error::invalid(format!("class target {y} is not an index below {k}")))
    }
}

/// `Σᵢ ln p(yᵢ | f(xᵢ))`.
///
/// For [`LikelihoodSpec::Categorical`], `net_out` holds class probabilities
/// `[n, k]` and `targets` holds class indices.
pub fn log_likelihood(lik: &LikelihoodSpec, net_out: &Tensor, targets: &Tensor) -> Result<f64> {
    lik.validate()?;
    match *lik {
        LikelihoodSpec::Gaussian { noise_std } => {
            if net_out.len() != targets.len() {
                return Err(Error::InvalidShape(format!(
                    "{} outputs for {} targets",
                    net_out.len(),
                    targets.len()
                )));
            }
            let n = net_out.len() as f64;
            let sse: f64 = net_out.data().iter().zip(targets.data()).map(|(f, y)| (y - f) * (y - f)).sum();
            Ok(-0.5 * n * (LN_2PI + 2.0 * noise_std.ln()) - sse / (2.0 * noise_std * noise_std))
        }
        LikelihoodSpec::Categorical => {
            let n = net_out.rows();
            if targets.len() != n {
                return Err(Error::InvalidShape(format!("{n} output rows for {} targets", targets.len())));
            }
            let k = net_out.row_len();
            let mut total = 0.0;
            for (i, &y) in targets.data().iter().enumerate() {
                total += net_out.row(i)[class_index(y, k)?].ln();
            }
            Ok(total)
        }
    }
}

/// Records the log likelihood of a batch. Classification networks must pass
/// logits (see [`nets::forward_tape`]).
pub fn log_likelihood_tape(tape: &mut Tape, lik: &LikelihoodSpec, out: Var, targets: &Tensor) -> Result<Var> {
    lik.validate()?;
    let shape = tape.value(out).shape().to_vec();
    match *lik {
        LikelihoodSpec::Gaussian { noise_std } => {
            let n = tape.value(out).len();
            if n != targets.len() {
                return Err(Error::InvalidShape(format!("{n} outputs for {} targets", targets.len())));
            }
            let y = tape.constant(targets.reshape(&shape)?);
            let r = tape.sub(y, out)?;
            let sq = tape.square(r)?;
            let s = tape.sum(sq)?;
            let s = tape.scale(s, -0.5 / (noise_std * noise_std))?;
            tape.add_scalar(s, -0.5 * n as f64 * (LN_2PI + 2.0 * noise_std.ln()))
        }
        LikelihoodSpec::Categorical => {
            if shape.len() != 2 || shape[0] != targets.len() {
                return Err(Error::InvalidShape(format!("logits {shape:?} for {} targets", targets.len())));
            }
            let k = shape[1];
            let mut onehot = Tensor::zeros(&shape);
            for (i, &y) in targets.data().iter().enumerate() {
                onehot.data_mut()[i * k + class_index(y, k)?] = 1.0;
            }
            let ls = nets::log_softmax(tape, out)?;
            let picked = tape.mul_const(ls, onehot)?;
            tape.sum(picked)
        }
    }
}

/// Log-likelihood and log-prior nodes for one parameter binding.
#[derive(Debug, Clone, Copy)]
pub struct LogJointNodes {
    pub log_likelihood: Var,
    pub log_prior: Var,
    pub output: Var,
}

/// Records `ln p(D | ω)` and `ln p(ω)` for parameters already bound on `tape`.
pub fn log_joint_tape(
    tape: &mut Tape,
    prior: &PriorSpec,
    lik: &LikelihoodSpec,
    spec: &NetworkSpec,
    vars: &ParamVars,
    inputs: &Tensor,
    targets: &Tensor,
) -> Result<LogJointNodes> {
    let x = tape.constant(inputs.clone());
    let output = nets::forward_tape(tape, spec, vars, x, None)?;
    let log_likelihood = log_likelihood_tape(tape, lik, output, targets)?;
    let weights: Vec<Var> = vars.iter().flat_map(|(_, w, b)| core::iter::once(w).chain(b)).collect();
    let log_prior = log_prior_tape(tape, prior, &weights)?;
    Ok(LogJointNodes {
        log_likelihood,
        log_prior,
        output,
    })
}

/// `ln p(ω) + ln p(D | ω)`; the evidence is never computed.
pub fn log_posterior_unnorm(
    prior: &PriorSpec,
    lik: &LikelihoodSpec,
    spec: &NetworkSpec,
    params: &ParameterSet,
    inputs: &Tensor,
    targets: &Tensor,
) -> Result<f64> {
    prior.validate()?;
    lik.check_task(spec.task())?;
    let out = nets::mlp_forward(spec, params, inputs)?;
    Ok(log_prior(prior, params) + log_likelihood(lik, &out, targets)?)
}

/// `KL(q ‖ p)` between diagonal Gaussians.
pub fn kl_diag_gaussians(q_mean: &[f64], q_std: &[f64], p_mean: &[f64], p_std: &[f64]) -> Result<f64> {
    let d = q_mean.len();
    if q_std.len() != d || p_mean.len() != d || p_std.len() != d {
        return Err(Error::InvalidShape("diagonal Gaussian parameter lengths differ".into()));
    }
    let mut kl = 0.0;
    for i in 0..d {
        let (sq, sp) = (q_std[i], p_std[i]);
        if !(sq > 0.0) || !(sp > 0.0) {
            return Err(Error::invalid(format!("non-positive std at dimension {i}")));
        }
        let dm = q_mean[i] - p_mean[i];
        kl += (sp / sq).ln() + (sq * sq + dm * dm) / (2.0 * sp * sp) - 0.5;
    }
    Ok(kl)
}

/// Two densities tabulated on a shared 1-d grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPair {
    grid: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
}

pub const MIN_GRID_NODES: usize = 100;

impl DensityPair {
    pub fn new(grid: Vec<f64>, p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != grid.len() || q.len() != grid.len() {
            return Err(Error::InvalidShape("densities and grid differ in length".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid must be strictly increasing"));
        }
        Ok(Self { grid, p, q })
    }

    pub fn from_log_densities(grid: Vec<f64>, log_p: impl Fn(f64) -> f64, log_q: impl Fn(f64) -> f64) -> Result<Self> {
        let p = grid.iter().map(|&x| log_p(x).exp()).collect();
        let q = grid.iter().map(|&x| log_q(x).exp()).collect();
        Self::new(grid, p, q)
    }

    pub fn from_gaussians(grid: Vec<f64>, p: (f64, f64), q: (f64, f64)) -> Result<Self> {
        Self::from_log_densities(grid, |x| normal_log_density(x, p.0, p.1), |x| normal_log_density(x, q.0, q.1))
    }

    pub fn swapped(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            p: self.q.clone(),
            q: self.p.clone(),
        }
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    fn check(&self) -> Result<()> {
        if self.grid.len() < MIN_GRID_NODES {
            return Err(Error::invalid(format!(
                "grid has {} nodes, at least {MIN_GRID_NODES} required",
                self.grid.len()
            )));
        }
        if let Some(i) = self.p.iter().chain(&self.q).position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("negative or non-finite density at entry {i}")));
        }
        Ok(())
    }
}

/// `n` equally spaced nodes covering `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// Trapezoid rule over a tabulated function.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// `D_α[p‖q] = (1 − ∫ p^α q^{1−α}) / (α(1−α))`.
///
/// As α → 1 this tends to `KL(p‖q)`; as α → 0 it tends to `KL(q‖p)`.
pub fn alpha_divergence(pair: &DensityPair, alpha: f64) -> Result<f64> {
    if alpha == 0.0 || alpha == 1.0 || !alpha.is_finite() {
        return Err(Error::invalid(format!(
            "alpha = {alpha} is a KL limit; use kl_diag_gaussians or an offset alpha"
        )));
    }
    pair.check()?;
    let integrand: Vec<f64> = pair
        .p
        .iter()
        .zip(&pair.q)
        .map(|(&p, &q)| if p == 0.0 || q == 0.0 { 0.0 } else { p.powf(alpha) * q.powf(1.0 - alpha) })
        .collect();
    let overlap = trapezoid(&pair.grid, &integrand);
    Ok((1.0 - overlap) / (alpha * (1.0 - alpha)))
}

/// Hellinger distance `D_H` with `D_H² = ∫ (√p − √q)²`; lies in `[0, √2]`.
pub fn hellinger_distance(pair: &DensityPair) -> Result<f64> {
    pair.check()?;
    let integrand: Vec<f64> = pair
        .p
        .iter()
        .zip(&pair.q)
        .map(|(&p, &q)| {
            let d = p.sqrt() - q.sqrt();
            d * d
        })
        .collect();
    Ok(trapezoid(&pair.grid, &integrand).max(0.0).sqrt())
}
