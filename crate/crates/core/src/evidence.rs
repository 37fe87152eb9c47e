//! Laplace approximation of the model evidence, its Occam factor, posterior
//! probabilities over models, and the assumed-density-filtering update.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nets::{NetworkSpec, ParamVars, ParameterSet};
use crate::optim::{Optimizer, OptimizerKind};
use crate::prob::{self, LikelihoodSpec, PriorSpec, LN_2PI};
use crate::tensor::Tensor;

/// A model whose log likelihood and log prior can be evaluated with the
/// gradient of their sum.
pub trait LaplaceModel {
    fn dim(&self) -> usize;

    /// `(ln p(D | ω), ln p(ω), ∇ω[ln p(D | ω) + ln p(ω)])`.
    fn log_terms(&mut self, w: &[f64]) -> Result<(f64, f64, Vec<f64>)>;
}

/// Network posterior as a [`LaplaceModel`].
#[derive(Debug, Clone)]
pub struct BnnModel<'a> {
    pub spec: &'a NetworkSpec,
    pub prior: PriorSpec,
    pub lik: LikelihoodSpec,
    pub inputs: &'a Tensor,
    pub targets: &'a Tensor,
}

impl LaplaceModel for BnnModel<'_> {
    fn dim(&self) -> usize {
        self.spec.num_params()
    }

    fn log_terms(&mut self, w: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
        let params = ParameterSet::from_flat(self.spec, w)?;
        let mut tape = Tape::new();
        let vars = ParamVars::bind(&mut tape, &params, "", true)?;
        let nodes = prob::log_joint_tape(&mut tape, &self.prior, &self.lik, self.spec, &vars, self.inputs, self.targets)?;
        let total = tape.add(nodes.log_likelihood, nodes.log_prior)?;
        let grads = tape.backward(total)?;
        Ok((
            tape.value(nodes.log_likelihood).data()[0],
            tape.value(nodes.log_prior).data()[0],
            vars.flat_grad(&tape, &grads),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapOptions {
    pub init: Option<Vec<f64>>,
    /// Std of a random start when `init` is `None` (0 starts at the origin).
    pub init_std: f64,
    pub seed: u64,
    pub adam_steps: usize,
    pub learning_rate: f64,
    pub newton_steps: usize,
    pub grad_tol: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            init: None,
            init_std: 0.0,
            seed: 0,
            adam_steps: 2000,
            learning_rate: 1e-2,
            newton_steps: 50,
            grad_tol: 1e-6,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Hessian of `−ln p(ω | D)` by central differences of the gradient, step
/// `1e-4·(1 + |ωⱼ|)`, symmetrised.
pub fn fd_hessian<M: LaplaceModel + ?Sized>(model: &mut M, w: &[f64]) -> Result<DMatrix<f64>> {
    let k = w.len();
    let mut a = DMatrix::zeros(k, k);
    let mut x = w.to_vec();
    for j in 0..k {
        let h = 1e-4 * (1.0 + w[j].abs());
        x[j] = w[j] + h;
        let gp = model.log_terms(&x)?.2;
        x[j] = w[j] - h;
        let gm = model.log_terms(&x)?.2;
        x[j] = w[j];
        for i in 0..k {
            a[(i, j)] = -(gp[i] - gm[i]) / (2.0 * h);
        }
    }
    let at = a.transpose();
    Ok((a + at) * 0.5)
}

/// Adam on `−ln p(ω | D)` followed by damped Newton steps on the
/// finite-difference Hessian. Fails unless `‖∇‖ < grad_tol`.
pub fn find_map<M: LaplaceModel + ?Sized>(model: &mut M, opts: &MapOptions) -> Result<Vec<f64>> {
    let k = model.dim();
    let mut w = match &opts.init {
        Some(w) if w.len() == k => w.clone(),
        Some(w) => return Err(Error::InvalidShape(format!("initial point of length {} for {k} parameters", w.len()))),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            (0..k)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    opts.init_std * z
                })
                .collect()
        }
    };
    let mut opt = Optimizer::new(OptimizerKind::adam(), opts.learning_rate, k);
    let (_, _, mut g) = model.log_terms(&w)?;
    for _ in 0..opts.adam_steps {
        if norm(&g) < opts.grad_tol {
            break;
        }
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        opt.step(&mut w, &neg);
        g = model.log_terms(&w)?.2;
    }
    for _ in 0..opts.newton_steps {
        if norm(&g) < opts.grad_tol {
            break;
        }
        let (ll, lp, _) = model.log_terms(&w)?;
        let f0 = ll + lp;
        let a = fd_hessian(model, &w)?;
        let eig = SymmetricEigen::new(a);
        // Newton direction on the positive part of the spectrum
        let gv = nalgebra::DVector::from_column_slice(&g);
        let proj = eig.eigenvectors.transpose() * &gv;
        let mut step = nalgebra::DVector::zeros(k);
        for i in 0..k {
            let lam = eig.eigenvalues[i].abs().max(1e-8);
            step += eig.eigenvectors.column(i) * (proj[i] / lam);
        }
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = w.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let (ll, lp, gc) = model.log_terms(&cand)?;
            if (ll + lp).is_finite() && ll + lp >= f0 - 1e-12 * f0.abs().max(1.0) {
                w = cand;
                g = gc;
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                return Err(Error::NotConverged { grad_norm: norm(&g) });
            }
        }
    }
    let gn = norm(&g);
    if gn < opts.grad_tol {
        Ok(w)
    } else {
        Err(Error::NotConverged { grad_norm: gn })
    }
}

/// Laplace evidence decomposition at a mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceReport {
    pub omega_map: Vec<f64>,
    /// `ln p(D | ω_MAP)`, the best-fit likelihood.
    pub log_likelihood: f64,
    pub log_prior: f64,
    /// `ln p(ω_MAP) + (k/2) ln 2π − ½ ln det A`.
    pub log_occam: f64,
    pub log_evidence: f64,
    /// Row-major `k × k` Hessian of `−ln p(ω | D)` at the mode.
    pub hessian: Vec<f64>,
    pub log_det: f64,
    pub min_eigenvalue: f64,
    pub k: usize,
}

/// Laplace evidence at a given mode.
pub fn laplace_at<M: LaplaceModel + ?Sized>(model: &mut M, omega_map: Vec<f64>) -> Result<LaplaceReport> {
    let k = omega_map.len();
    let (log_likelihood, log_prior, _) = model.log_terms(&omega_map)?;
    let a = fd_hessian(model, &omega_map)?;
    let eig = SymmetricEigen::new(a.clone());
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_eigenvalue > 0.0) {
        return Err(Error::NotPositiveDefinite { eigenvalue: min_eigenvalue });
    }
    let log_det: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
    let log_occam = log_prior + 0.5 * k as f64 * LN_2PI - 0.5 * log_det;
    let hessian = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| a[(i, j)]).collect();
    Ok(LaplaceReport {
        omega_map,
        log_likelihood,
        log_prior,
        log_occam,
        log_evidence: log_likelihood + log_occam,
        hessian,
        log_det,
        min_eigenvalue,
        k,
    })
}

/// Finds the MAP and returns its Laplace evidence.
pub fn laplace_evidence<M: LaplaceModel + ?Sized>(model: &mut M, opts: &MapOptions) -> Result<LaplaceReport> {
    let w = find_map(model, opts)?;
    laplace_at(model, w)
}

/// `exp(ln evidence − ln best-fit likelihood)`.
pub fn occam_factor(report: &LaplaceReport) -> f64 {
    (report.log_evidence - report.log_likelihood).exp()
}

/// Normalised `p(Hᵢ | D) ∝ p(D | Hᵢ) p(Hᵢ)` computed in the log domain.
pub fn model_posterior(log_evidences: &[f64], priors: &[f64]) -> Result<Vec<f64>> {
    if log_evidences.len() != priors.len() || priors.is_empty() {
        return Err(Error::InvalidShape(format!(
            "{} evidences for {} priors",
            log_evidences.len(),
            priors.len()
        )));
    }
    let total: f64 = priors.iter().sum();
    if priors.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("model priors must be non-negative and sum to 1"));
    }
    let logs: Vec<f64> = log_evidences.iter().zip(priors).map(|(e, p)| e + p.ln()).collect();
    let z = prob::log_sum_exp(&logs);
    if !z.is_finite() {
        return Err(Error::NonFinite("model posterior normaliser".into()));
    }
    Ok(logs.iter().map(|l| (l - z).exp()).collect())
}

/// Running Gaussian approximation `N(mean, variance)` per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdfState {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub t: usize,
}

impl AdfState {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::InvalidShape("mean and variance lengths differ".into()));
        }
        if variance.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("ADF variances must be positive"));
        }
        Ok(Self { mean, variance, t: 0 })
    }
}

/// Moment-matching step from the derivatives of `ln Z` for the new datum,
/// taken with respect to the current mean and variance:
/// `μ' = μ + v ∂lnZ/∂μ`, `v' = v − v² [(∂lnZ/∂μ)² − 2 ∂lnZ/∂v]`.
pub fn adf_update(state: &AdfState, d_mean: &[f64], d_var: &[f64]) -> Result<AdfState> {
    let k = state.mean.len();
    if d_mean.len() != k || d_var.len() != k {
        return Err(Error::InvalidShape("gradient lengths differ from the state".into()));
    }
    let mut mean = state.mean.clone();
    let mut variance = state.variance.clone();
    for i in 0..k {
        let v = state.variance[i];
        mean[i] += v * d_mean[i];
        variance[i] = v - v * v * (d_mean[i] * d_mean[i] - 2.0 * d_var[i]);
        if !(variance[i] > 0.0) || !mean[i].is_finite() {
            return Err(Error::VarianceCollapse {
                index: i,
                mean: mean[i],
                variance: variance[i],
                state_mean: state.mean.clone(),
                state_variance: state.variance.clone(),
            });
        }
    }
    Ok(AdfState {
        mean,
        variance,
        t: state.t + 1,
    })
}

/// `ln Z` and its derivatives with respect to the mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct LogZGrad {
    pub log_z: f64,
    pub d_mean: Vec<f64>,
    pub d_var: Vec<f64>,
}

/// Scalar `Z = ∫ p(y | ω) N(ω; μ, v) dω` by trapezoid quadrature over
/// `μ ± 12√v`. Derivatives use the tilted moments
/// `∂lnZ/∂μ = E[(ω − μ)/v]` and `∂lnZ/∂v = E[((ω − μ)² − v) / (2v²)]`.
pub fn log_z_quadrature(mean: f64, var: f64, log_lik: impl Fn(f64) -> f64, n_nodes: usize) -> Result<LogZGrad> {
    if !(var > 0.0) || n_nodes < prob::MIN_GRID_NODES {
        return Err(Error::invalid("quadrature needs a positive variance and enough nodes"));
    }
    let sd = var.sqrt();
    let grid = prob::uniform_grid(mean - 12.0 * sd, mean + 12.0 * sd, n_nodes);
    let logs: Vec<f64> = grid.iter().map(|&w| log_lik(w) + prob::normal_log_density(w, mean, sd)).collect();
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::NonFinite("tilted density".into()));
    }
    let dens: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let z = prob::trapezoid(&grid, &dens);
    let e1: Vec<f64> = grid.iter().zip(&dens).map(|(w, d)| d * (w - mean)).collect();
    let e2: Vec<f64> = grid.iter().zip(&dens).map(|(w, d)| d * (w - mean) * (w - mean)).collect();
    let m1 = prob::trapezoid(&grid, &e1) / z;
    let m2 = prob::trapezoid(&grid, &e2) / z;
    Ok(LogZGrad {
        log_z: z.ln() + m,
        d_mean: vec![m1 / var],
        d_var: vec![(m2 - var) / (2.0 * var * var)],
    })
}

/// Multivariate version of [`log_z_quadrature`] by self-normalised Monte
/// Carlo over the current diagonal Gaussian.
pub fn log_z_monte_carlo<R: Rng + ?Sized>(
    state: &AdfState,
    mut log_lik: impl FnMut(&[f64]) -> Result<f64>,
    n: usize,
    rng: &mut R,
) -> Result<LogZGrad> {
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let k = state.mean.len();
    let mut draws = Vec::with_capacity(n);
    let mut logs = Vec::with_capacity(n);
    for _ in 0..n {
        let w: Vec<f64> = (0..k)
            .map(|i| {
                let z: f64 = StandardNormal.sample(rng);
                state.mean[i] + state.variance[i].sqrt() * z
            })
            .collect();
        logs.push(log_lik(&w)?);
        draws.push(w);
    }
    let lse = prob::log_sum_exp(&logs);
    let weights: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
    let mut d_mean = vec![0.0; k];
    let mut d_var = vec![0.0; k];
    for (w, p) in draws.iter().zip(&weights) {
        for i in 0..k {
            let (m, v) = (state.mean[i], state.variance[i]);
            let d = w[i] - m;
            d_mean[i] += p * d / v;
            d_var[i] += p * (d * d - v) / (2.0 * v * v);
        }
    }
    Ok(LogZGrad {
        log_z: lse - (n as f64).ln(),
        d_mean,
        d_var,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_posterior_cases() {
        assert_eq!(model_posterior(&[-3.0], &[1.0]).unwrap(), vec![1.0]);
        let p = model_posterior(&[1.0; 4], &[0.25; 4]).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let p = model_posterior(&[2.0, 0.0], &[0.5, 0.5]).unwrap();
        let e2 = 2.0f64.exp();
        assert!((p[0] - e2 / (1.0 + e2)).abs() < 1e-15);
        assert!(model_posterior(&[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn adf_conjugate_step() {
        let s = AdfState::new(vec![0.0], vec![1.0]).unwrap();
        let g = log_z_quadrature(0.0, 1.0, |w| prob::normal_log_density(1.0, w, 1.0), 4001).unwrap();
        let n = adf_update(&s, &g.d_mean, &g.d_var).unwrap();
        assert!((n.mean[0] - 0.5).abs() < 1e-6 && (n.variance[0] - 0.5).abs() < 1e-6, "{n:?}");
        assert_eq!(adf_update(&s, &[0.0], &[0.0]).unwrap().mean, s.mean);
    }

    #[test]
    fn adf_collapse_is_reported() {
        let s = AdfState::new(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(adf_update(&s, &[2.0], &[0.0]), Err(Error::VarianceCollapse { index: 0, .. })));
    }
}
