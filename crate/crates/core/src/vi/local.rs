use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nets::{self, Activation, LayerSpec, NetworkSpec, ParamVars};
use crate::tensor::{self, Tensor};

fn check_layer(mu: &Tensor, sigma: &Tensor, x: &Tensor) -> Result<(usize, usize, usize)> {
    if mu.ndim() != 2 || mu.shape() != sigma.shape() {
        return Err(Error::InvalidShape(format!("μ {:?} / σ {:?}", mu.shape(), sigma.shape())));
    }
    if x.ndim() != 2 || x.shape()[1] != mu.shape()[0] {
        return Err(Error::InvalidShape(format!("input {:?} for weights {:?}", x.shape(), mu.shape())));
    }
    if sigma.data().iter().any(|s| *s < 0.0) {
        return Err(Error::invalid("negative σ"));
    }
    Ok((x.shape()[0], mu.shape()[0], mu.shape()[1]))
}

fn normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Samples `φ ~ N(γ, δ²)` with `γ = x μ` and `δ² = x² σ²`, independently per
/// example and unit.
pub fn local_reparam_forward<R: Rng + ?Sized>(mu: &Tensor, sigma: &Tensor, x: &Tensor, rng: &mut R) -> Result<Tensor> {
    let (n, k, m) = check_layer(mu, sigma, x)?;
    let gamma = tensor::matmul(x.data(), mu.data(), n, k, m);
    let x2: Vec<f64> = x.data().iter().map(|v| v * v).collect();
    let s2: Vec<f64> = sigma.data().iter().map(|v| v * v).collect();
    let delta2 = tensor::matmul(&x2, &s2, n, k, m);
    let eps = normals(n * m, rng);
    let phi = gamma
        .iter()
        .zip(&delta2)
        .zip(&eps)
        .map(|((g, d), e)| if *d == 0.0 { *g } else { g + d.sqrt() * e })
        .collect();
    Tensor::matrix(n, m, phi)
}

/// Draws one weight matrix `W ~ N(μ, σ²)` and returns `x W`.
pub fn sampled_weight_forward<R: Rng + ?Sized>(mu: &Tensor, sigma: &Tensor, x: &Tensor, rng: &mut R) -> Result<Tensor> {
    let (n, k, m) = check_layer(mu, sigma, x)?;
    let eps = normals(k * m, rng);
    let w: Vec<f64> = mu.data().iter().zip(sigma.data()).zip(&eps).map(|((u, s), e)| u + s * e).collect();
    Tensor::matrix(n, m, tensor::matmul(x.data(), &w, n, k, m))
}

/// Tape forward pass of a dense network with per-example pre-activation
/// sampling. `Dropout` layers contribute their expectation.
pub(super) fn local_reparam_forward_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    spec: &NetworkSpec,
    mu: &ParamVars,
    rho: &ParamVars,
    x: Var,
    rng: &mut R,
) -> Result<Var> {
    let batch = tape.value(x).rows();
    let n_layers = spec.layers().len();
    let mut h = x;
    for (i, layer) in spec.layers().iter().enumerate() {
        h = match layer {
            LayerSpec::Dense { fan_out, .. } => {
                let (mw, mb) = mu.get(i).ok_or_else(|| Error::invalid(format!("no μ bound for layer {i}")))?;
                let (rw, rb) = rho.get(i).ok_or_else(|| Error::invalid(format!("no ρ bound for layer {i}")))?;
                let mut gamma = tape.matmul(h, mw)?;
                let h2 = tape.square(h)?;
                let sw = tape.softplus(rw)?;
                let sw2 = tape.square(sw)?;
                let mut delta2 = tape.matmul(h2, sw2)?;
                if let (Some(mb), Some(rb)) = (mb, rb) {
                    gamma = tape.add_bias(gamma, mb, 1)?;
                    let sb = tape.softplus(rb)?;
                    let sb2 = tape.square(sb)?;
                    delta2 = tape.add_bias(delta2, sb2, 1)?;
                }
                // keeps the square root differentiable when a row of h is all zero
                let delta2 = tape.add_scalar(delta2, 1e-24)?;
                let delta = tape.sqrt(delta2)?;
                let eps = Tensor::matrix(batch, *fan_out, normals(batch * fan_out, rng))?;
                let noise = tape.mul_const(delta, eps)?;
                tape.add(gamma, noise)?
            }
            LayerSpec::Dropout { p } => tape.scale(h, 1.0 - p)?,
            LayerSpec::Flatten => {
                let n = tape.value(h).len() / batch;
                tape.reshape(h, &[batch, n])?
            }
            LayerSpec::Activation(Activation::Softmax) if i + 1 == n_layers => h,
            LayerSpec::Activation(a) => nets::apply_activation(tape, *a, h)?,
            LayerSpec::Conv2d { .. } => {
                return Err(Error::invalid("local reparameterisation supports dense layers only"));
            }
        };
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_sigma_is_deterministic() {
        let mu = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.5, -1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let phi = local_reparam_forward(&mu, &Tensor::zeros(&[2, 2]), &x, &mut rng).unwrap();
        assert_eq!(phi.data(), &[-2.5, -3.0]);
    }
}
