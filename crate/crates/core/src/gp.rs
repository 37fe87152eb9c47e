//! Exact Gaussian-process regression and the output distribution induced by
//! wide single-hidden-layer network priors.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nets::{self, Activation};
use crate::summary::{CredibleBand, PredictiveSummary};
use crate::tensor::Tensor;

/// Largest diagonal jitter tried before a factorisation is declared failed.
pub const MAX_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Matern52,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub lengthscale: f64,
    pub variance: f64,
}

impl KernelSpec {
    pub fn matern52(lengthscale: f64, variance: f64) -> Self {
        Self {
            kind: KernelKind::Matern52,
            lengthscale,
            variance,
        }
    }

    pub fn rbf(lengthscale: f64, variance: f64) -> Self {
        Self {
            kind: KernelKind::Rbf,
            lengthscale,
            variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.variance > 0.0) || !self.lengthscale.is_finite() || !self.variance.is_finite() {
            return Err(Error::invalid("kernel lengthscale and variance must be positive"));
        }
        Ok(())
    }
}

/// `k(x, x′)` of the Euclidean distance `r`.
/// Matérn-5/2: `s² (1 + √5 r/ℓ + 5r²/(3ℓ²)) exp(−√5 r/ℓ)`; RBF: `s² exp(−r²/(2ℓ²))`.
pub fn kernel_eval(k: &KernelSpec, x: &[f64], x2: &[f64]) -> f64 {
    let r2: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    match k.kind {
        KernelKind::Matern52 => {
            let s = 5.0f64.sqrt() * r2.sqrt() / k.lengthscale;
            k.variance * (1.0 + s + s * s / 3.0) * (-s).exp()
        }
        KernelKind::Rbf => k.variance * (-0.5 * r2 / (k.lengthscale * k.lengthscale)).exp(),
    }
}

fn points(x: &Tensor) -> Result<(usize, usize)> {
    match x.ndim() {
        1 => Ok((x.len(), 1)),
        2 => Ok((x.rows(), x.row_len())),
        _ => Err(Error::InvalidShape(format!("GP inputs must be [n] or [n, d], got {:?}", x.shape()))),
    }
}

/// `K[i, j] = k(aᵢ, bⱼ)`.
pub fn kernel_matrix(k: &KernelSpec, a: &Tensor, b: &Tensor) -> Result<DMatrix<f64>> {
    let (na, da) = points(a)?;
    let (nb, db) = points(b)?;
    if da != db {
        return Err(Error::InvalidShape(format!("input dimensions {da} and {db} differ")));
    }
    Ok(DMatrix::from_fn(na, nb, |i, j| {
        kernel_eval(k, &a.data()[i * da..(i + 1) * da], &b.data()[j * db..(j + 1) * db])
    }))
}

/// Fitted exact GP with a cached Cholesky factor of `K + σ_n² I`.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelSpec,
    noise_var: f64,
    x: Tensor,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Factorises `K + σ_n² I`, adding jitter `1e-12, 1e-11, …, 1e-6` as needed.
pub fn gp_fit(kernel: KernelSpec, noise_var: f64, x: &Tensor, y: &Tensor) -> Result<GpModel> {
    kernel.validate()?;
    if !(noise_var >= 0.0) {
        return Err(Error::invalid(format!("noise variance {noise_var} must be non-negative")));
    }
    let (n, _) = points(x)?;
    if y.len() != n {
        return Err(Error::InvalidShape(format!("{n} inputs for {} targets", y.len())));
    }
    let k = kernel_matrix(&kernel, x, x)?;
    let mut jitter = 0.0;
    let chol = loop {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += noise_var + jitter;
        }
        if let Some(c) = Cholesky::new(a) {
            break c;
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
        if jitter > MAX_JITTER * 1.000001 {
            return Err(Error::Cholesky { jitter: MAX_JITTER });
        }
    };
    let alpha = chol.solve(&DVector::from_column_slice(y.data()));
    Ok(GpModel {
        kernel,
        noise_var,
        x: x.clone(),
        chol,
        alpha,
        jitter,
    })
}

impl GpModel {
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Posterior mean and variance of the latent function.
    pub fn predict_latent(&self, xs: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        let ks = kernel_matrix(&self.kernel, &self.x, xs)?;
        let mean = ks.transpose() * &self.alpha;
        let v = self.chol.l().solve_lower_triangular(&ks).ok_or(Error::Cholesky { jitter: self.jitter })?;
        let (m, _) = points(xs)?;
        let var = (0..m)
            .map(|j| {
                let prior = self.kernel.variance;
                (prior - v.column(j).norm_squared()).max(0.0)
            })
            .collect();
        Ok((mean.iter().copied().collect(), var))
    }

    /// Predictive summary for noisy observations with a Gaussian 95% band.
    pub fn predict(&self, xs: &Tensor) -> Result<PredictiveSummary> {
        let (mean, var) = self.predict_latent(xs)?;
        let m = mean.len();
        let var: Vec<f64> = var.into_iter().map(|v| v + self.noise_var).collect();
        let z = 1.959_963_984_540_054;
        let lower = mean.iter().zip(&var).map(|(m, v)| m - z * v.sqrt()).collect();
        let upper = mean.iter().zip(&var).map(|(m, v)| m + z * v.sqrt()).collect();
        Ok(PredictiveSummary {
            mean: Tensor::matrix(m, 1, mean)?,
            variance: Tensor::matrix(m, 1, var)?,
            interval: Some(CredibleBand {
                level: 0.95,
                lower: Tensor::matrix(m, 1, lower)?,
                upper: Tensor::matrix(m, 1, upper)?,
            }),
            n_samples: 0,
        })
    }
}

/// Prior over a 1-input, `H`-hidden-unit, 1-output network.
///
/// Input weights ~ N(0, input_std²), optional hidden biases ~ N(0, bias_std²),
/// output weights ~ N(0, output_std²/H).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnPriorConfig {
    pub hidden: usize,
    pub input_std: f64,
    pub bias_std: Option<f64>,
    pub output_std: f64,
    pub activation: Activation,
}

impl NnPriorConfig {
    pub fn new(hidden: usize) -> Self {
        Self {
            hidden,
            input_std: 5.0,
            bias_std: None,
            output_std: 5.0,
            activation: Activation::Tanh,
        }
    }
}

/// `(f(a), f(b))` for `n_draws` independent prior networks.
pub fn nn_prior_sample_outputs<R: Rng + ?Sized>(cfg: &NnPriorConfig, n_draws: usize, probes: (f64, f64), rng: &mut R) -> Result<Vec<[f64; 2]>> {
    if cfg.hidden == 0 || !(cfg.input_std > 0.0 && cfg.output_std > 0.0) {
        return Err(Error::invalid("prior network needs hidden units and positive scales"));
    }
    let win = Normal::new(0.0, cfg.input_std).map_err(|e| Error::invalid(format!("{e}")))?;
    let wout = Normal::new(0.0, cfg.output_std / (cfg.hidden as f64).sqrt()).map_err(|e| Error::invalid(format!("{e}")))?;
    let bias = match cfg.bias_std {
        Some(s) => Some(Normal::new(0.0, s).map_err(|e| Error::invalid(format!("{e}")))?),
        None => None,
    };
    let h = cfg.hidden;
    let mut pre = Tensor::zeros(&[2, h]);
    let mut out = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        for j in 0..h {
            let u = win.sample(rng);
            let b = bias.map_or(0.0, |d| d.sample(rng));
            pre.data_mut()[j] = u * probes.0 + b;
            pre.data_mut()[h + j] = u * probes.1 + b;
        }
        let act = nets::activation(cfg.activation, &pre)?;
        let mut f = [0.0; 2];
        for j in 0..h {
            let v = wout.sample(rng);
            f[0] += v * act.data()[j];
            f[1] += v * act.data()[h + j];
        }
        out.push(f);
    }
    Ok(out)
}

/// Minimum sample count for the normality statistics.
pub const MIN_NORMALITY_SAMPLES: usize = 1000;

/// Sample skewness and excess kurtosis (moment estimators).
pub fn univariate_moments(x: &[f64]) -> Result<(f64, f64)> {
    if x.len() < MIN_NORMALITY_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_NORMALITY_SAMPLES,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if !(m2 > 0.0) {
        return Err(Error::invalid("samples have zero variance"));
    }
    Ok((m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0))
}

/// Marginal skewness and excess kurtosis plus Mardia's bivariate kurtosis
/// minus its Gaussian value 8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalityStats {
    pub skewness: [f64; 2],
    pub excess_kurtosis: [f64; 2],
    pub mardia_excess: f64,
}

impl NormalityStats {
    pub fn max_abs_kurtosis(&self) -> f64 {
        self.excess_kurtosis[0].abs().max(self.excess_kurtosis[1].abs())
    }

    pub fn max_abs_skewness(&self) -> f64 {
        self.skewness[0].abs().max(self.skewness[1].abs())
    }
}

pub fn normality_statistic(samples: &[[f64; 2]]) -> Result<NormalityStats> {
    let a: Vec<f64> = samples.iter().map(|s| s[0]).collect();
    let b: Vec<f64> = samples.iter().map(|s| s[1]).collect();
    let (sa, ka) = univariate_moments(&a)?;
    let (sb, kb) = univariate_moments(&b)?;
    let n = samples.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut saa, mut sab, mut sbb) = (0.0, 0.0, 0.0);
    for s in samples {
        let (x, y) = (s[0] - ma, s[1] - mb);
        saa += x * x;
        sab += x * y;
        sbb += y * y;
    }
    let (saa, sab, sbb) = (saa / n, sab / n, sbb / n);
    let det = saa * sbb - sab * sab;
    if !(det > 1e-14 * saa * sbb) {
        return Err(Error::invalid("bivariate sample covariance is singular"));
    }
    let (ia, ib, ic) = (sbb / det, -sab / det, saa / det);
    let b2 = samples
        .iter()
        .map(|s| {
            let (x, y) = (s[0] - ma, s[1] - mb);
            let q = ia * x * x + 2.0 * ib * x * y + ic * y * y;
            q * q
        })
        .sum::<f64>()
        / n;
    Ok(NormalityStats {
        skewness: [sa, sb],
        excess_kurtosis: [ka, kb],
        mardia_excess: b2 - 8.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_basics() {
        let k = KernelSpec::matern52(0.7, 2.0);
        assert_eq!(kernel_eval(&k, &[0.3], &[0.3]), 2.0);
        assert_eq!(kernel_eval(&k, &[0.1], &[1.3]), kernel_eval(&k, &[1.3], &[0.1]));
        assert!(KernelSpec::rbf(0.0, 1.0).validate().is_err());
    }

    #[test]
    fn noiseless_gp_interpolates() {
        let x = Tensor::from_vec(vec![0.0, 0.5, 1.0, 2.0]);
        let y = Tensor::from_vec(vec![1.0, -1.0, 0.5, 2.0]);
        let m = gp_fit(KernelSpec::matern52(0.5, 1.0), 0.0, &x, &y).unwrap();
        let (mean, var) = m.predict_latent(&x).unwrap();
        for (a, b) in mean.iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let far = m.predict_latent(&Tensor::from_vec(vec![10.0])).unwrap().1[0];
        assert!(var.iter().all(|v| *v <= far));
    }

    #[test]
    fn duplicate_inputs_need_jitter() {
        let x = Tensor::from_vec(vec![0.0, 0.0, 1.0]);
        let y = Tensor::from_vec(vec![1.0, 1.0, 0.0]);
        let m = gp_fit(KernelSpec::rbf(1.0, 1.0), 0.0, &x, &y).unwrap();
        assert!(m.jitter() > 0.0 && m.jitter() <= MAX_JITTER);
    }

    #[test]
    fn moments_reject_degenerate() {
        assert!(univariate_moments(&[1.0; 2000]).is_err());
        assert!(univariate_moments(&[1.0; 10]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let (_, k) = univariate_moments(&u).unwrap();
        assert!((k + 1.2).abs() < 0.1);
    }
}
