use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Diagonal Gaussian `N(mean, diag(std²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || mean.is_empty() {
            return Err(Error::InvalidShape(format!("mean {} / std {}", mean.len(), std.len())));
        }
        if std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("standard deviations must be positive"));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Returns `(ω, ε)` with `ω = μ + σ ε`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let eps: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        let w = self.mean.iter().zip(&self.std).zip(&eps).map(|((m, s), e)| m + s * e).collect();
        (w, eps)
    }
}

/// Running mean and variance per coordinate.
#[derive(Debug, Clone)]
struct Moments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn variance(&self) -> Vec<f64> {
        let denom = (self.n.max(2) - 1) as f64;
        self.m2.iter().map(|s| s / denom).collect()
    }
}

/// Averaged gradient of `E_q[f]` with respect to each mean and std, with the
/// per-sample variance of the summands.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub d_mean: Vec<f64>,
    pub d_std: Vec<f64>,
    pub var_mean: Vec<f64>,
    pub var_std: Vec<f64>,
    pub n_samples: usize,
}

impl GradientEstimate {
    fn from_moments(mean: Moments, std: Moments) -> Self {
        Self {
            var_mean: mean.variance(),
            var_std: std.variance(),
            n_samples: mean.n,
            d_mean: mean.mean,
            d_std: std.mean,
        }
    }

    pub fn se_mean(&self) -> Vec<f64> {
        self.var_mean.iter().map(|v| (v / self.n_samples as f64).sqrt()).collect()
    }

    pub fn se_std(&self) -> Vec<f64> {
        self.var_std.iter().map(|v| (v / self.n_samples as f64).sqrt()).collect()
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::TooFewSamples { needed: 2, got: n })
    } else {
        Ok(())
    }
}

/// Score-function (log-derivative) estimator `(1/L) Σ f(ωᵢ) ∇θ ln q(ωᵢ)`.
pub fn score_function_grad<R: Rng + ?Sized>(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    q: &DiagGaussian,
    n: usize,
    rng: &mut R,
) -> Result<GradientEstimate> {
    check_n(n)?;
    let d = q.dim();
    let (mut gm, mut gs) = (Moments::new(d), Moments::new(d));
    let (mut a, mut b) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..n {
        let (w, eps) = q.sample(rng);
        let fv = f(&w)?;
        for i in 0..d {
            let s = q.std[i];
            // ∂ln q/∂μ = (ω−μ)/σ², ∂ln q/∂σ = ((ω−μ)² − σ²)/σ³
            a[i] = fv * eps[i] / s;
            b[i] = fv * (eps[i] * eps[i] - 1.0) / s;
        }
        gm.push(&a);
        gs.push(&b);
    }
    Ok(GradientEstimate::from_moments(gm, gs))
}

/// Pathwise estimator: `∇μ = E[∇f(ω)]`, `∇σ = E[∇f(ω) ⊙ ε]`.
///
/// `f` returns its value and gradient at `ω`.
pub fn pathwise_grad<R: Rng + ?Sized>(
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    q: &DiagGaussian,
    n: usize,
    rng: &mut R,
) -> Result<GradientEstimate> {
    check_n(n)?;
    let d = q.dim();
    let (mut gm, mut gs) = (Moments::new(d), Moments::new(d));
    let mut b = vec![0.0; d];
    for _ in 0..n {
        let (w, eps) = q.sample(rng);
        let (_, g) = f(&w)?;
        if g.len() != d {
            return Err(Error::InvalidShape(format!("gradient of length {} for dimension {d}", g.len())));
        }
        for i in 0..d {
            b[i] = g[i] * eps[i];
        }
        gm.push(&g);
        gs.push(&b);
    }
    Ok(GradientEstimate::from_moments(gm, gs))
}

/// One coordinate of an identity check: both sides, their standard errors
/// and the standardised discrepancy `|lhs − rhs| / √(se_l² + se_r²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityRow {
    pub coord: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    pub z: f64,
}

impl IdentityRow {
    fn new(coord: usize, lhs: f64, lhs_se: f64, rhs: f64, rhs_se: f64) -> Self {
        let diff = (lhs - rhs).abs();
        let se = (lhs_se * lhs_se + rhs_se * rhs_se).sqrt();
        let z = if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Self {
            coord,
            lhs,
            rhs,
            lhs_se,
            rhs_se,
            z,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    /// `∇μ E[f]` (score function) against `E[∇f]`.
    pub mean_identity: Vec<IdentityRow>,
    /// `∂E[f]/∂Σᵢᵢ` (score function) against `½ E[∂²f/∂ωᵢ²]`.
    pub cov_identity: Vec<IdentityRow>,
    pub max_z: f64,
}

/// Checks both Gaussian gradient identities by Monte Carlo.
///
/// Left-hand sides use the score-function estimator on one set of `n` draws;
/// right-hand sides use tape gradients on an independent set, with the
/// Hessian diagonal from central differences of the gradient.
pub fn gaussian_identity_check<R: Rng + ?Sized>(
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    q: &DiagGaussian,
    n: usize,
    rng: &mut R,
) -> Result<IdentityReport> {
    check_n(n)?;
    let d = q.dim();
    let (mut lm, mut lv) = (Moments::new(d), Moments::new(d));
    let (mut a, mut b) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..n {
        let (w, eps) = q.sample(rng);
        let (fv, _) = f(&w)?;
        for i in 0..d {
            let s = q.std[i];
            a[i] = fv * eps[i] / s;
            // ∂ln q/∂v with v = σ²
            b[i] = fv * (eps[i] * eps[i] - 1.0) / (2.0 * s * s);
        }
        lm.push(&a);
        lv.push(&b);
    }

    let (mut rm, mut rv) = (Moments::new(d), Moments::new(d));
    for _ in 0..n {
        let (mut w, _) = q.sample(rng);
        let (_, g) = f(&w)?;
        if g.len() != d {
            return Err(Error::InvalidShape(format!("gradient of length {} for dimension {d}", g.len())));
        }
        for i in 0..d {
            let x0 = w[i];
            let h = 1e-4 * (1.0 + x0.abs());
            w[i] = x0 + h;
            let gp = f(&w)?.1[i];
            w[i] = x0 - h;
            let gm = f(&w)?.1[i];
            w[i] = x0;
            b[i] = 0.5 * (gp - gm) / (2.0 * h);
        }
        rm.push(&g);
        rv.push(&b);
    }

    let se = |m: &Moments| -> Vec<f64> { m.variance().iter().map(|v| (v / m.n as f64).sqrt()).collect() };
    let (lms, lvs, rms, rvs) = (se(&lm), se(&lv), se(&rm), se(&rv));
    let mean_identity: Vec<IdentityRow> = (0..d).map(|i| IdentityRow::new(i, lm.mean[i], lms[i], rm.mean[i], rms[i])).collect();
    let cov_identity: Vec<IdentityRow> = (0..d).map(|i| IdentityRow::new(i, lv.mean[i], lvs[i], rv.mean[i], rvs[i])).collect();
    let max_z = mean_identity.iter().chain(&cov_identity).map(|r| r.z).fold(0.0, f64::max);
    Ok(IdentityReport {
        mean_identity,
        cov_identity,
        max_z,
    })
}
