use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{run_epochs, StepStats, TraceRow, TrainConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nets::{self, LayerSpec, NetworkSpec, ParamVars, ParameterSet, Task};
use crate::optim::Optimizer;
use crate::prob::{self, LikelihoodSpec};
use crate::summary::{self, PredictiveSummary};
use crate::tensor::Tensor;

/// Keep-masks over the input units of each dense layer, `[n, fan_in]` of 0/1.
pub type DropoutMasks = BTreeMap<usize, Tensor>;

/// Mean weights `M`, per-dense-layer drop rates and the weight-decay λ.
///
/// A rate applies to the inputs of its dense layer. An explicit
/// `LayerSpec::Dropout { p }` directly before a dense layer overrides the
/// default rate for that layer. Rates lie in `[0, 1)`; `p = 0` is allowed as
/// the no-dropout limit.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutPosterior {
    pub weights: ParameterSet,
    rates: BTreeMap<usize, f64>,
    weight_decay: f64,
}

impl DropoutPosterior {
    pub fn new(spec: &NetworkSpec, weights: ParameterSet, p: f64, weight_decay: f64) -> Result<Self> {
        let mut rates = BTreeMap::new();
        let mut pending: Option<f64> = None;
        for (i, layer) in spec.layers().iter().enumerate() {
            match layer {
                LayerSpec::Dropout { p } => pending = Some(*p),
                LayerSpec::Dense { .. } => {
                    rates.insert(i, pending.take().unwrap_or(p));
                }
                _ => pending = None,
            }
        }
        Self::with_rates(weights, rates, weight_decay)
    }

    pub fn with_rates(weights: ParameterSet, rates: BTreeMap<usize, f64>, weight_decay: f64) -> Result<Self> {
        if let Some((i, p)) = rates.iter().find(|(_, p)| !(**p >= 0.0 && **p < 1.0)) {
            return Err(Error::invalid(format!("dropout rate {p} at layer {i} outside [0, 1)")));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::invalid(format!("weight decay {weight_decay} must be non-negative")));
        }
        Ok(Self {
            weights,
            rates,
            weight_decay,
        })
    }

    pub fn rate(&self, layer: usize) -> f64 {
        self.rates.get(&layer).copied().unwrap_or(0.0)
    }

    pub fn rates(&self) -> &BTreeMap<usize, f64> {
        &self.rates
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }
}

/// Draws `ρ_u ~ Bernoulli(1 − p)` for every input unit of every dense layer.
pub fn sample_masks<R: Rng + ?Sized>(spec: &NetworkSpec, dp: &DropoutPosterior, n: usize, rng: &mut R) -> DropoutMasks {
    let mut masks = BTreeMap::new();
    for (i, layer) in spec.layers().iter().enumerate() {
        if let LayerSpec::Dense { fan_in, .. } = layer {
            let p = dp.rate(i);
            let mut m = Tensor::ones(&[n, *fan_in]);
            if p > 0.0 {
                for v in m.data_mut() {
                    if rng.random::<f64>() < p {
                        *v = 0.0;
                    }
                }
            }
            masks.insert(i, m);
        }
    }
    masks
}

#[derive(Clone, Copy)]
enum Mode<'a> {
    Masked(&'a DropoutMasks),
    Expected,
}

fn forward_dropout_tape(tape: &mut Tape, spec: &NetworkSpec, vars: &ParamVars, dp: &DropoutPosterior, x: Var, mode: Mode<'_>) -> Result<Var> {
    let mut hook = |tape: &mut Tape, layer: usize, h: Var| -> Result<Var> {
        match mode {
            Mode::Masked(masks) => {
                let m = masks.get(&layer).ok_or_else(|| Error::invalid(format!("no dropout mask for layer {layer}")))?;
                if m.shape() != tape.value(h).shape() {
                    return Err(Error::InvalidShape(format!(
                        "mask {:?} for layer input {:?}",
                        m.shape(),
                        tape.value(h).shape()
                    )));
                }
                tape.mul_const(h, m.clone())
            }
            Mode::Expected => {
                let p = dp.rate(layer);
                if p == 0.0 {
                    Ok(h)
                } else {
                    tape.scale(h, 1.0 - p)
                }
            }
        }
    };
    nets::forward_tape(tape, spec, vars, x, Some(&mut hook))
}

fn finish_output(spec: &NetworkSpec, out: &Tensor) -> Result<Tensor> {
    match spec.task() {
        Task::Classification => nets::softmax(out),
        Task::Regression => Ok(out.clone()),
    }
}

/// Forward pass under the given masks.
pub fn dropout_forward_with_masks(spec: &NetworkSpec, dp: &DropoutPosterior, x: &Tensor, masks: &DropoutMasks) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, &dp.weights, "", false)?;
    let xv = tape.constant(x.clone());
    let out = forward_dropout_tape(&mut tape, spec, &vars, dp, xv, Mode::Masked(masks))?;
    finish_output(spec, tape.value(out))
}

/// Stochastic mode samples fresh per-example masks; deterministic mode
/// scales each dense layer's input by `1 − p`.
pub fn dropout_forward<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    dp: &DropoutPosterior,
    x: &Tensor,
    rng: &mut R,
    stochastic: bool,
) -> Result<Tensor> {
    if stochastic {
        let masks = sample_masks(spec, dp, x.rows(), rng);
        return dropout_forward_with_masks(spec, dp, x, &masks);
    }
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, &dp.weights, "", false)?;
    let xv = tape.constant(x.clone());
    let out = forward_dropout_tape(&mut tape, spec, &vars, dp, xv, Mode::Expected)?;
    finish_output(spec, tape.value(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutFit {
    pub posterior: DropoutPosterior,
    /// `elbo` holds the negated loss and `kl` the λ‖M‖² penalty.
    pub trace: Vec<TraceRow>,
    pub step_loss: Vec<f64>,
}

/// Minimises `(N/M)·NLL(batch; masked forward) + λ‖M‖²`.
#[allow(clippy::too_many_arguments)]
pub fn mc_dropout_train(
    spec: &NetworkSpec,
    lik: &LikelihoodSpec,
    inputs: &Tensor,
    targets: &Tensor,
    cfg: &TrainConfig,
    p: f64,
    weight_decay: f64,
) -> Result<DropoutFit> {
    lik.validate()?;
    lik.check_task(spec.task())?;
    let n_data = inputs.rows();
    if targets.rows() != n_data {
        return Err(Error::InvalidShape(format!("{n_data} inputs for {} targets", targets.rows())));
    }
    cfg.validate(n_data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = ParameterSet::random(spec, cfg.init_mu_std, &mut rng);
    let mut dp = DropoutPosterior::new(spec, init, p, weight_decay)?;
    let mut theta = dp.weights.to_flat();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, theta.len());
    let mut step_loss = Vec::new();
    let trace = run_epochs(n_data, cfg, &mut rng, &mut step_loss, |idx, rng| {
        let xb = inputs.select_rows(idx)?;
        let yb = targets.select_rows(idx)?;
        let masks = sample_masks(spec, &dp, idx.len(), rng);
        let mut tape = Tape::new();
        let vars = ParamVars::bind(&mut tape, &dp.weights, "", true)?;
        let xv = tape.constant(xb);
        let out = forward_dropout_tape(&mut tape, spec, &vars, &dp, xv, Mode::Masked(&masks))?;
        let ll = prob::log_likelihood_tape(&mut tape, lik, out, &yb)?;
        let nll = tape.scale(ll, -(n_data as f64) / idx.len() as f64)?;
        let mut penalty: Option<Var> = None;
        for (_, w, b) in vars.iter() {
            for v in core::iter::once(w).chain(b) {
                let sq = tape.square(v)?;
                let s = tape.sum(sq)?;
                penalty = Some(match penalty {
                    Some(acc) => tape.add(acc, s)?,
                    None => s,
                });
            }
        }
        let penalty = match penalty {
            Some(v) => tape.scale(v, weight_decay)?,
            None => tape.constant(Tensor::scalar(0.0)),
        };
        let loss = tape.add(nll, penalty)?;
        let value = tape.value(loss).data()[0];
        if value.is_finite() {
            let grads = tape.backward(loss)?;
            let g = vars.flat_grad(&tape, &grads);
            opt.step(&mut theta, &g);
            dp.weights = ParameterSet::from_flat(spec, &theta)?;
        }
        Ok(StepStats {
            objective: -value,
            nll: tape.value(nll).data()[0],
            kl: tape.value(penalty).data()[0],
        })
    })?;
    Ok(DropoutFit {
        posterior: dp,
        trace,
        step_loss: step_loss.into_iter().map(|v| -v).collect(),
    })
}

/// Predictive moments from `t` stochastic passes, each with fresh masks.
pub fn mc_dropout_predict<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    dp: &DropoutPosterior,
    x: &Tensor,
    t: usize,
    noise_std: Option<f64>,
    level: f64,
    rng: &mut R,
) -> Result<PredictiveSummary> {
    if t < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: t });
    }
    let samples = (0..t)
        .map(|_| dropout_forward(spec, dp, x, rng, true))
        .collect::<Result<Vec<_>>>()?;
    summary::predictive_moments(&samples, noise_std, level)
}
