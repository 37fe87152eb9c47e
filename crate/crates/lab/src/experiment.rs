//! Fitting, prediction and artifact emission for one configured run, and the
//! multi-method comparison built on it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bnnlab_core::data::{make_toy_dataset, Dataset, ToyKind};
use bnnlab_core::evidence::{BnnModel, LaplaceModel};
use bnnlab_core::gp::{gp_fit, GpModel};
use bnnlab_core::hmc::{self, BnnPotential, Chain};
use bnnlab_core::nets::{self, Activation, Conv2dSpec, LayerSpec, NetworkSpec, ParameterSet, Task};
use bnnlab_core::optim::{Optimizer, OptimizerKind};
use bnnlab_core::prob::PriorSpec;
use bnnlab_core::summary::{self, ClassificationReport, PredictiveSummary};
use bnnlab_core::tensor::Tensor;
use bnnlab_core::vi::{self, DropoutPosterior, TraceRow, VariationalPosterior};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Architecture, DataSource, ExperimentConfig, Method};
use crate::error::{LabError, Result};
use crate::io;
use crate::output::{self, ClassificationMetrics, RegressionMetrics};

/// Rows per forward pass when predicting on large inputs.
const PREDICT_CHUNK: usize = 500;

/// Examples shown in the lowest-confidence interval table.
pub const INTERVAL_TABLE_ROWS: usize = 20;

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Toy { kind, n } => {
            let d = make_toy_dataset(*kind, *n, cfg.seed)?;
            if cfg.train_fraction == bnnlab_core::data::DEFAULT_TRAIN_FRACTION {
                Ok(d)
            } else {
                Ok(d.split(cfg.train_fraction, cfg.seed)?)
            }
        }
        DataSource::Csv(p) => io::load_csv_regression(p, cfg.train_fraction, cfg.seed),
        DataSource::Mnist { dir, train, test } => io::load_mnist_dir(dir, *train, *test),
    }
}

/// conv 8@5×5 → relu → conv 16@5×5 → relu → flatten → dense 64 → relu → dense 10 → softmax.
pub fn lenet_small() -> Result<NetworkSpec> {
    let conv = |i, o| LayerSpec::Conv2d {
        conv: Conv2dSpec {
            in_channels: i,
            out_channels: o,
            kernel: (5, 5),
            stride: 1,
            padding: 0,
        },
        bias: true,
    };
    let layers = vec![
        conv(1, 8),
        LayerSpec::Activation(Activation::Relu),
        conv(8, 16),
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Flatten,
        LayerSpec::Dense {
            fan_in: 16 * 20 * 20,
            fan_out: 64,
            bias: true,
        },
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::Dense {
            fan_in: 64,
            fan_out: 10,
            bias: true,
        },
        LayerSpec::Activation(Activation::Softmax),
    ];
    Ok(NetworkSpec::new(layers, vec![1, 28, 28], Task::Classification)?)
}

pub fn network_spec(cfg: &ExperimentConfig, data: &Dataset) -> Result<NetworkSpec> {
    match &cfg.arch {
        Architecture::Mlp { hidden, activation, bias } => {
            Ok(NetworkSpec::mlp(data.inputs.row_len(), hidden, 1, *activation, Task::Regression, *bias)?)
        }
        Architecture::LenetSmall => lenet_small(),
    }
}

/// A trained model, in the form the predict step and the saved files use.
#[derive(Debug, Clone)]
pub enum Fitted {
    Bbb(VariationalPosterior),
    Dropout(DropoutPosterior),
    Map(ParameterSet),
    Hmc {
        positions: Vec<Vec<f64>>,
        /// Observation noise used in the predictive variance; with Gibbs
        /// precisions, `√E[1/τ_noise]` over the kept draws.
        noise_std: f64,
    },
    Gp(GpModel),
}

fn forward_chunked(spec: &NetworkSpec, w: &ParameterSet, x: &Tensor) -> Result<Tensor> {
    let n = x.rows();
    if n <= PREDICT_CHUNK {
        return Ok(nets::mlp_forward(spec, w, x)?);
    }
    let mut shape = vec![n, spec.output_dim()];
    let mut data = Vec::with_capacity(n * spec.output_dim());
    for start in (0..n).step_by(PREDICT_CHUNK) {
        let idx: Vec<usize> = (start..(start + PREDICT_CHUNK).min(n)).collect();
        data.extend(nets::mlp_forward(spec, w, &x.select_rows(&idx)?)?.into_data());
    }
    shape[1] = spec.output_dim();
    Ok(Tensor::new(shape, data)?)
}

fn dropout_chunked(spec: &NetworkSpec, dp: &DropoutPosterior, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = x.rows();
    let mut data = Vec::with_capacity(n * spec.output_dim());
    for start in (0..n).step_by(PREDICT_CHUNK) {
        let idx: Vec<usize> = (start..(start + PREDICT_CHUNK).min(n)).collect();
        data.extend(vi::dropout_forward(spec, dp, &x.select_rows(&idx)?, rng, true)?.into_data());
    }
    Ok(Tensor::matrix(n, spec.output_dim(), data)?)
}

impl Fitted {
    /// Predictive summary at `x` from `cfg.predict.samples` output draws.
    pub fn predict(&self, cfg: &ExperimentConfig, spec: &NetworkSpec, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<PredictiveSummary> {
        let regression = spec.task() == Task::Regression;
        let noise = regression.then_some(cfg.noise_std);
        let t = cfg.predict.samples;
        let level = cfg.predict.level;
        let samples: Vec<Tensor> = match self {
            Fitted::Gp(m) => return Ok(m.predict(x)?),
            Fitted::Bbb(vp) => (0..t).map(|_| forward_chunked(spec, &vi::sample_weights(vp, rng), x)).collect::<Result<_>>()?,
            Fitted::Dropout(dp) => (0..t).map(|_| dropout_chunked(spec, dp, x, rng)).collect::<Result<_>>()?,
            Fitted::Map(w) => {
                let f = forward_chunked(spec, w, x)?;
                vec![f.clone(), f]
            }
            Fitted::Hmc { positions, noise_std } => {
                let k = t.min(positions.len());
                if k < 2 {
                    return Err(LabError::Config("HMC prediction needs at least two kept samples".into()));
                }
                let picked = (0..k).map(|i| &positions[i * positions.len() / k]);
                let out = picked
                    .map(|p| forward_chunked(spec, &ParameterSet::from_flat(spec, p)?, x))
                    .collect::<Result<Vec<_>>>()?;
                return Ok(summary::predictive_moments(&out, Some(*noise_std), level)?);
            }
        };
        Ok(summary::predictive_moments(&samples, noise, level)?)
    }

    /// Writes the parameters needed to predict again without refitting.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("model.csv");
        match self {
            Fitted::Bbb(vp) => output::write_params(&path, &[("mu", &vp.mu.to_flat()), ("rho", &vp.rho.to_flat())]),
            Fitted::Dropout(dp) => output::write_params(&path, &[("w", &dp.weights.to_flat())]),
            Fitted::Map(w) => output::write_params(&path, &[("w", &w.to_flat())]),
            // The chain file already holds the draws; the GP is refit from data.
            Fitted::Hmc { .. } | Fitted::Gp(_) => Ok(()),
        }
    }

    /// Reloads what [`Fitted::save`] and the chain writer left in `dir`.
    pub fn load(cfg: &ExperimentConfig, spec: &NetworkSpec, data: &Dataset, dir: &Path) -> Result<Self> {
        let column = |name: &str| -> Result<Vec<f64>> {
            output::read_params(&dir.join("model.csv"))?
                .into_iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v)
                .ok_or_else(|| LabError::Data(format!("model.csv has no `{name}` column")))
        };
        Ok(match cfg.method {
            Method::Bbb => Fitted::Bbb(VariationalPosterior::new(
                ParameterSet::from_flat(spec, &column("mu")?)?,
                ParameterSet::from_flat(spec, &column("rho")?)?,
            )?),
            Method::McDropout => Fitted::Dropout(DropoutPosterior::new(
                spec,
                ParameterSet::from_flat(spec, &column("w")?)?,
                cfg.dropout.p,
                cfg.dropout.weight_decay,
            )?),
            Method::Map => Fitted::Map(ParameterSet::from_flat(spec, &column("w")?)?),
            Method::Hmc => {
                let (positions, precisions) = output::read_chain_positions(&dir.join("chain.csv"))?;
                Fitted::Hmc {
                    noise_std: hmc_noise_std(cfg, &precisions),
                    positions,
                }
            }
            Method::Gp => {
                let (x, y) = data.train_set()?;
                Fitted::Gp(fit_gp(cfg, &x, &y)?)
            }
        })
    }
}

fn hmc_noise_std(cfg: &ExperimentConfig, precisions: &[Option<(f64, f64)>]) -> f64 {
    let inv: Vec<f64> = precisions.iter().filter_map(|p| p.map(|(_, tn)| 1.0 / tn)).collect();
    if inv.is_empty() {
        cfg.noise_std
    } else {
        (inv.iter().sum::<f64>() / inv.len() as f64).sqrt()
    }
}

fn fit_gp(cfg: &ExperimentConfig, x: &Tensor, y: &Tensor) -> Result<GpModel> {
    let noise = cfg.gp.noise_var.unwrap_or(cfg.noise_std * cfg.noise_std);
    Ok(gp_fit(cfg.gp.kernel, noise, x, y)?)
}

/// Full-batch Adam ascent on `ln p(D | ω) + ln p(ω)` from a seeded start.
pub fn warm_start(cfg: &ExperimentConfig, spec: &NetworkSpec, x: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = ParameterSet::random(spec, cfg.train.init_mu_std, &mut rng).to_flat();
    let mut model = BnnModel {
        spec,
        prior: cfg.prior,
        lik: cfg.likelihood(),
        inputs: x,
        targets: y,
    };
    let mut opt = Optimizer::new(OptimizerKind::adam(), cfg.hmc.warm_lr, w.len());
    for _ in 0..cfg.hmc.warm_steps {
        let (_, _, g) = model.log_terms(&w)?;
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        opt.step(&mut w, &neg);
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Numerical("warm start diverged".into()));
    }
    Ok(w)
}

/// HMC diagnostics reported in the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct HmcInfo {
    pub step_size: f64,
    pub acceptance_rate: f64,
    pub min_ess: f64,
    pub mean_ess: f64,
    pub n_divergent: usize,
    pub warnings: Vec<String>,
}

struct Training {
    fitted: Fitted,
    trace: Vec<TraceRow>,
    chain: Option<Chain>,
    hmc: Option<HmcInfo>,
}

fn train(cfg: &ExperimentConfig, spec: &NetworkSpec, x: &Tensor, y: &Tensor) -> Result<Training> {
    let lik = cfg.likelihood();
    let plain = |fitted, trace| Training {
        fitted,
        trace,
        chain: None,
        hmc: None,
    };
    Ok(match cfg.method {
        Method::Bbb => {
            let fit = vi::bbb_train(spec, &cfg.prior, &lik, x, y, &cfg.train)?;
            plain(Fitted::Bbb(fit.posterior), fit.trace)
        }
        Method::McDropout => {
            let fit = vi::mc_dropout_train(spec, &lik, x, y, &cfg.train, cfg.dropout.p, cfg.dropout.weight_decay)?;
            plain(Fitted::Dropout(fit.posterior), fit.trace)
        }
        Method::Map => {
            let PriorSpec::Gaussian { std, .. } = cfg.prior else {
                return Err(LabError::Config("map needs a Gaussian prior".into()));
            };
            // Weight decay 1/(2σ₀²) makes the penalised loss the negative log posterior.
            let fit = vi::mc_dropout_train(spec, &lik, x, y, &cfg.train, 0.0, 0.5 / (std * std))?;
            plain(Fitted::Map(fit.posterior.weights), fit.trace)
        }
        Method::Gp => plain(Fitted::Gp(fit_gp(cfg, x, y)?), Vec::new()),
        Method::Hmc => {
            let mut init = warm_start(cfg, spec, x, y)?;
            let mut run_cfg = cfg.hmc_config(cfg.hmc.step_size);
            if cfg.hmc.tune {
                // The mode is more sharply curved than the typical set, so tune
                // there, burn in, and tune again where the burn-in ended.
                let mut pot = BnnPotential::new(spec, cfg.prior, lik, x, y)?;
                let h = &cfg.hmc;
                let first = hmc::pilot_step_size(&mut pot, &init, h.n_leapfrog, h.target_accept, h.pilot_iters, cfg.seed)?;
                if h.burn_in > 0 {
                    let burn = hmc::HmcConfig {
                        step_size: first,
                        n_samples: h.burn_in,
                        burn_in: 0,
                        ..run_cfg.clone()
                    };
                    let chain = hmc::hmc_run(&mut pot, init.clone(), &burn)?;
                    init = chain.samples.last().map_or(init, |s| s.position.clone());
                    run_cfg.burn_in = 0;
                }
                run_cfg.step_size = hmc::pilot_step_size(&mut pot, &init, h.n_leapfrog, h.target_accept, h.pilot_iters, cfg.seed + 1)?;
            }
            let step_size = run_cfg.step_size;
            let hyper = cfg.hmc.gibbs.then_some(&cfg.hmc.hyper);
            let chain = hmc::hmc_sample(spec, &cfg.prior, &lik, x, y, hyper, &run_cfg, Some(init))?;
            let precisions: Vec<_> = chain.samples.iter().map(|s| s.precisions).collect();
            let d = &chain.diagnostics;
            let info = HmcInfo {
                step_size,
                acceptance_rate: d.acceptance_rate,
                min_ess: d.min_ess(),
                mean_ess: d.mean_ess(),
                n_divergent: d.n_divergent,
                warnings: d.warnings.clone(),
            };
            Training {
                fitted: Fitted::Hmc {
                    positions: chain.positions(),
                    noise_std: hmc_noise_std(cfg, &precisions),
                },
                trace: Vec::new(),
                chain: Some(chain),
                hmc: Some(info),
            }
        }
    })
}

#[derive(Debug, Clone)]
pub struct RegressionRun {
    pub grid: Vec<f64>,
    pub grid_summary: Option<PredictiveSummary>,
    pub train_inputs: Tensor,
    pub train_summary: PredictiveSummary,
    pub train_metrics: RegressionMetrics,
    pub test_metrics: Option<RegressionMetrics>,
}

#[derive(Debug, Clone)]
pub struct ClassificationRun {
    pub report: ClassificationReport,
    pub metrics: ClassificationMetrics,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub method: Method,
    pub out_dir: PathBuf,
    pub regression: Option<RegressionRun>,
    pub classification: Option<ClassificationRun>,
    pub hmc: Option<HmcInfo>,
    pub seconds: f64,
}

impl RegressionRun {
    /// Mean predictive std over grid points strictly inside `(lo, hi)`.
    pub fn mean_std_in(&self, lo: f64, hi: f64) -> Option<f64> {
        let s = self.grid_summary.as_ref()?;
        let v: Vec<f64> = self
            .grid
            .iter()
            .zip(s.variance.data())
            .filter(|(x, _)| **x > lo && **x < hi)
            .map(|(_, v)| v.max(0.0).sqrt())
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean predictive std at the training inputs.
    pub fn mean_std_train(&self) -> f64 {
        let v = self.train_summary.variance.data();
        v.iter().map(|v| v.max(0.0).sqrt()).sum::<f64>() / v.len() as f64
    }
}

/// Evenly spaced band grid over the configured or padded data range.
pub fn band_grid(cfg: &ExperimentConfig, data: &Dataset) -> Option<Vec<f64>> {
    if data.task != Task::Regression || data.inputs.row_len() != 1 {
        return None;
    }
    let (lo, hi) = cfg.predict.grid.unwrap_or_else(|| {
        let xs = data.inputs.data();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.1 * (hi - lo).max(1e-9);
        (lo - pad, hi + pad)
    });
    let n = cfg.predict.grid_points;
    Some((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

fn predict_rng(cfg: &ExperimentConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15)
}

fn regression_outputs(cfg: &ExperimentConfig, spec: &NetworkSpec, data: &Dataset, fitted: &Fitted, dir: &Path) -> Result<RegressionRun> {
    let mut rng = predict_rng(cfg);
    let (x, y) = data.train_set()?;
    let train_summary = fitted.predict(cfg, spec, &x, &mut rng)?;
    let train_metrics = output::regression_metrics(&train_summary, y.data());
    let mut rows: Vec<(&str, &[f64], f64, f64, f64)> = Vec::new();
    let sd = train_summary.std();
    for i in 0..x.rows() {
        rows.push(("train", x.row(i), y.data()[i], train_summary.mean.data()[i], sd.data()[i]));
    }
    let test = data.test_set()?;
    let test_summary = match &test {
        Some((tx, _)) => Some(fitted.predict(cfg, spec, tx, &mut rng)?),
        None => None,
    };
    let test_metrics = match (&test, &test_summary) {
        (Some((tx, ty)), Some(s)) => {
            let tsd = s.std();
            for i in 0..tx.rows() {
                rows.push(("test", tx.row(i), ty.data()[i], s.mean.data()[i], tsd.data()[i]));
            }
            Some(output::regression_metrics(s, ty.data()))
        }
        _ => None,
    };
    output::write_predictions(&dir.join("predictions.csv"), &rows)?;
    let mut metric_rows = vec![("train", &train_metrics)];
    if let Some(m) = &test_metrics {
        metric_rows.push(("test", m));
    }
    output::write_regression_metrics(&dir.join("metrics.csv"), &metric_rows)?;

    let grid = band_grid(cfg, data).unwrap_or_default();
    let grid_summary = if grid.is_empty() {
        None
    } else {
        let gx = Tensor::matrix(grid.len(), 1, grid.clone())?;
        let s = fitted.predict(cfg, spec, &gx, &mut rng)?;
        output::write_bands(&dir.join("bands.csv"), &grid, &s)?;
        Some(s)
    };
    Ok(RegressionRun {
        grid,
        grid_summary,
        train_inputs: x,
        train_summary,
        train_metrics,
        test_metrics,
    })
}

fn classification_outputs(cfg: &ExperimentConfig, spec: &NetworkSpec, data: &Dataset, fitted: &Fitted, dir: &Path) -> Result<ClassificationRun> {
    let mut rng = predict_rng(cfg);
    let (x, y) = data
        .test_set()?
        .ok_or_else(|| LabError::Config("classification runs need a test split".into()))?;
    let s = fitted.predict(cfg, spec, &x, &mut rng)?;
    let targets: Vec<usize> = y.data().iter().map(|&v| v as usize).collect();
    let report = summary::classification_report(&s, &targets)?;
    let nll = report.rows.iter().map(|r| -r.mean[r.target].max(1e-300).ln()).sum::<f64>() / report.rows.len() as f64;
    let metrics = ClassificationMetrics {
        n: report.rows.len(),
        accuracy: report.accuracy,
        mean_nll: nll,
    };
    output::write_classification_metrics(&dir.join("metrics.csv"), &[("test", &metrics)])?;
    let worst = report.lowest_confidence(INTERVAL_TABLE_ROWS);
    output::write_interval_table(&dir.join("intervals.csv"), &worst, cfg.predict.level)?;
    fs::write(dir.join("intervals.txt"), output::format_interval_table(&worst)).map_err(|e| LabError::io(dir.join("intervals.txt"), e))?;
    Ok(ClassificationRun { report, metrics })
}

fn manifest_base(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    vec![
        ("method".into(), cfg.method.to_string()),
        ("seed".into(), cfg.seed.to_string()),
        ("bnnlab_version".into(), env!("CARGO_PKG_VERSION").into()),
        ("rustc_target_os".into(), std::env::consts::OS.into()),
    ]
}

fn run_inner(cfg: &ExperimentConfig, dir: &Path, entries: &mut Vec<(String, String)>) -> Result<RunOutcome> {
    let start = Instant::now();
    let data = load_dataset(cfg)?;
    entries.push(("dataset".into(), data.name.clone()));
    entries.push(("n_train".into(), data.train_indices().len().to_string()));
    entries.push(("n_test".into(), data.test_indices().len().to_string()));
    let spec = network_spec(cfg, &data)?;
    if cfg.method != Method::Gp {
        entries.push(("n_params".into(), spec.num_params().to_string()));
    }
    let (x, y) = data.train_set()?;
    let t = train(cfg, &spec, &x, &y)?;
    if !t.trace.is_empty() {
        output::write_trace(&dir.join("trace.csv"), &t.trace)?;
    }
    if let Some(c) = &t.chain {
        output::write_chain(&dir.join("chain.csv"), c)?;
    }
    if let Some(h) = &t.hmc {
        entries.push(("hmc_step_size".into(), h.step_size.to_string()));
        entries.push(("hmc_acceptance".into(), h.acceptance_rate.to_string()));
        entries.push(("hmc_min_ess".into(), h.min_ess.to_string()));
        entries.push(("hmc_mean_ess".into(), h.mean_ess.to_string()));
        entries.push(("hmc_divergent".into(), h.n_divergent.to_string()));
        for w in &h.warnings {
            entries.push(("warning".into(), w.clone()));
        }
    }
    t.fitted.save(dir)?;
    let (regression, classification) = match spec.task() {
        Task::Regression => (Some(regression_outputs(cfg, &spec, &data, &t.fitted, dir)?), None),
        Task::Classification => (None, Some(classification_outputs(cfg, &spec, &data, &t.fitted, dir)?)),
    };
    Ok(RunOutcome {
        method: cfg.method,
        out_dir: dir.to_path_buf(),
        regression,
        classification,
        hmc: t.hmc,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Trains, predicts and writes every artifact into `cfg.out_dir`. On failure
/// the manifest records the error and whatever was written stays in place.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
    let mut entries = manifest_base(cfg);
    let res = run_inner(cfg, &dir, &mut entries);
    match &res {
        Ok(o) => {
            entries.insert(0, ("status".into(), "ok".into()));
            entries.push(("elapsed_seconds".into(), format!("{:.3}", o.seconds)));
        }
        Err(e) => {
            entries.insert(0, ("status".into(), "error".into()));
            entries.push(("error_kind".into(), e.kind().into()));
            entries.push(("error".into(), e.to_string()));
        }
    }
    output::write_manifest(&dir.join("manifest.txt"), &entries, &cfg.to_text())?;
    res
}

/// Toy-set gap interval, when the data source has one.
pub fn gap_of(cfg: &ExperimentConfig) -> Option<(f64, f64)> {
    match cfg.data {
        DataSource::Toy { kind, .. } => Some(kind.gap()),
        _ => None,
    }
}

/// Runs each method into `out_dir/<method>` and writes `compare.csv`.
pub fn compare(cfg: &ExperimentConfig, methods: &[Method], parallel: bool) -> Result<Vec<RunOutcome>> {
    let base = cfg.out_dir.clone();
    fs::create_dir_all(&base).map_err(|e| LabError::io(&base, e))?;
    let cfgs: Vec<ExperimentConfig> = methods
        .iter()
        .map(|&m| {
            let mut c = cfg.clone().with_method(m)?;
            c.out_dir = base.join(m.to_string());
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let outcomes: Vec<Result<RunOutcome>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfgs.iter().map(|c| s.spawn(move || run_experiment(c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(LabError::Numerical("worker thread panicked".into()))))
                .collect()
        })
    } else {
        cfgs.iter().map(run_experiment).collect()
    };
    let outcomes: Vec<RunOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    write_comparison(&base.join("compare.csv"), &outcomes, gap_of(cfg))?;
    Ok(outcomes)
}

fn write_comparison(path: &Path, runs: &[RunOutcome], gap: Option<(f64, f64)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?;
    w.write_record(["method", "train_rmse", "test_rmse", "test_mean_nll", "test_coverage95", "mean_std_train", "mean_std_gap"])?;
    let f = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in runs {
        let Some(reg) = &r.regression else { continue };
        let t = reg.test_metrics.as_ref();
        w.write_record([
            r.method.to_string(),
            reg.train_metrics.rmse.to_string(),
            f(t.map(|m| m.rmse)),
            f(t.map(|m| m.mean_nll)),
            f(t.map(|m| m.coverage95)),
            reg.mean_std_train().to_string(),
            f(gap.and_then(|(lo, hi)| reg.mean_std_in(lo, hi))),
        ])?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Default experiment for a toy set: the caption architecture on that data.
pub fn toy_config(kind: ToyKind, method: Method, seed: u64, out_dir: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig {
        data: DataSource::Toy { kind, n: 200 },
        out_dir: out_dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
    .with_seed(seed);
    cfg.method = method;
    if method == Method::Map {
        cfg.prior = PriorSpec::standard_normal();
    }
    cfg.validate()?;
    Ok(cfg)
}
