//! Experiment configuration: `key = value` text grouped under `[section]`
//! headers. Every key has a default, unknown keys are rejected, and the
//! resolved configuration can be written back out for the run manifest.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bnnlab_core::data::ToyKind;
use bnnlab_core::gp::{KernelKind, KernelSpec};
use bnnlab_core::hmc::{HmcConfig, HyperPriorSpec};
use bnnlab_core::nets::{Activation, Task};
use bnnlab_core::optim::OptimizerKind;
use bnnlab_core::prob::{LikelihoodSpec, PriorSpec};
use bnnlab_core::summary::min_samples_for_level;
use bnnlab_core::vi::{ElboOptions, KlEstimate, TrainConfig, WeightSampling};
use ini::Ini;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Bbb,
    McDropout,
    Hmc,
    Gp,
    Map,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Bbb, Method::McDropout, Method::Hmc, Method::Gp, Method::Map];
}

impl FromStr for Method {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "bbb" => Method::Bbb,
            "mc_dropout" => Method::McDropout,
            "hmc" => Method::Hmc,
            "gp" => Method::Gp,
            "map" => Method::Map,
            other => return Err(LabError::Config(format!("unknown method `{other}`"))),
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Bbb => "bbb",
            Method::McDropout => "mc_dropout",
            Method::Hmc => "hmc",
            Method::Gp => "gp",
            Method::Map => "map",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Toy { kind: ToyKind, n: usize },
    /// Numeric CSV whose last column is the target.
    Csv(PathBuf),
    /// Directory with the four standard IDX files (optionally gzipped).
    Mnist { dir: PathBuf, train: usize, test: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Mlp { hidden: Vec<usize>, activation: Activation, bias: bool },
    /// conv 8@5×5 → relu → conv 16@5×5 → relu → flatten → dense 64 → relu → dense 10.
    LenetSmall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutSettings {
    pub p: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmcSettings {
    pub step_size: f64,
    pub n_leapfrog: usize,
    pub n_samples: usize,
    pub burn_in: usize,
    /// Full-batch Adam steps on the log posterior before sampling.
    pub warm_steps: usize,
    pub warm_lr: f64,
    /// Pick the step size by pilot runs from the warm start.
    pub tune: bool,
    pub pilot_iters: usize,
    pub target_accept: (f64, f64),
    /// Gibbs-sample the prior and noise precisions.
    pub gibbs: bool,
    pub hyper: HyperPriorSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpSettings {
    pub kernel: KernelSpec,
    /// Defaults to the likelihood noise variance.
    pub noise_var: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictSettings {
    pub samples: usize,
    pub level: f64,
    pub grid_points: usize,
    /// Band grid; defaults to the data range padded by 10% each side.
    pub grid: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub train_fraction: f64,
    pub arch: Architecture,
    pub prior: PriorSpec,
    pub noise_std: f64,
    pub method: Method,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    pub dropout: DropoutSettings,
    pub hmc: HmcSettings,
    pub gp: GpSettings,
    pub predict: PredictSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Toy {
                kind: ToyKind::SinusoidGap,
                n: 200,
            },
            train_fraction: 0.9,
            arch: Architecture::Mlp {
                hidden: vec![50, 50],
                activation: Activation::Relu,
                bias: true,
            },
            prior: PriorSpec::standard_normal(),
            noise_std: 0.1,
            method: Method::Bbb,
            seed: 0,
            out_dir: PathBuf::from("out"),
            train: TrainConfig {
                learning_rate: 1e-3,
                mc_samples: 1,
                batch_size: 20,
                epochs: 1000,
                seed: 0,
                optimizer: OptimizerKind::adam(),
                init_mu_std: 0.1,
                init_sigma: 1e-3,
                elbo: ElboOptions::default(),
            },
            dropout: DropoutSettings { p: 0.1, weight_decay: 1e-4 },
            hmc: HmcSettings {
                step_size: 1e-3,
                n_leapfrog: 50,
                n_samples: 500,
                burn_in: 100,
                warm_steps: 2000,
                warm_lr: 1e-2,
                tune: true,
                pilot_iters: 50,
                target_accept: (0.6, 0.9),
                gibbs: false,
                hyper: HyperPriorSpec::default(),
            },
            gp: GpSettings {
                kernel: KernelSpec::matern52(0.2, 1.0),
                noise_var: None,
            },
            predict: PredictSettings {
                samples: 200,
                level: 0.95,
                grid_points: 200,
                grid: None,
            },
        }
    }
}

/// Tracks which keys of a section were read so leftovers can be reported.
struct Section<'a> {
    name: &'static str,
    props: Option<&'a ini::Properties>,
    used: BTreeSet<String>,
}

impl<'a> Section<'a> {
    fn new(ini: &'a Ini, name: &'static str) -> Self {
        Self {
            name,
            props: ini.section(Some(name)),
            used: BTreeSet::new(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        self.used.insert(key.to_string());
        self.props.and_then(|p| p.get(key)).map(str::trim)
    }

    fn parse<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| LabError::Config(format!("[{}] {key} = {v}: {e}", self.name))),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(p) = self.props {
            for (k, _) in p.iter() {
                if !self.used.contains(k) {
                    return Err(LabError::Config(format!("unknown key `{k}` in [{}]", self.name)));
                }
            }
        }
        Ok(())
    }
}

const SECTIONS: [&str; 10] = ["data", "model", "prior", "likelihood", "method", "train", "dropout", "hmc", "gp", "predict"];

fn parse_list(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| LabError::Config(format!("bad size list `{s}`"))))
        .collect()
}

fn parse_pair(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) if a < b => Ok((a, b)),
            _ => Err(LabError::Config(format!("bad interval `{s}`"))),
        },
        _ => Err(LabError::Config(format!("expected `lo, hi`, got `{s}`"))),
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        for (name, props) in ini.iter() {
            match name {
                Some(n) if SECTIONS.contains(&n) => {}
                None if props.is_empty() => {}
                Some(n) => return Err(LabError::Config(format!("unknown section [{n}]"))),
                None => return Err(LabError::Config("keys must sit under a [section] header".into())),
            }
        }
        let d = Self::default();

        let mut s = Section::new(&ini, "data");
        let source = s.raw("source").unwrap_or("toy:sinusoid_gap").to_string();
        let n: usize = s.parse("n", 200)?;
        let mnist_train: usize = s.parse("mnist_train", 10_000)?;
        let mnist_test: usize = s.parse("mnist_test", 10_000)?;
        let data = match source.split_once(':') {
            Some(("toy", name)) => DataSource::Toy { kind: name.parse()?, n },
            Some(("csv", p)) => DataSource::Csv(resolve(base, p)),
            Some(("mnist", p)) => DataSource::Mnist {
                dir: resolve(base, p),
                train: mnist_train,
                test: mnist_test,
            },
            _ => return Err(LabError::Config(format!("data source `{source}` is not toy:NAME, csv:PATH or mnist:DIR"))),
        };
        let train_fraction = s.parse("train_fraction", d.train_fraction)?;
        s.finish()?;

        let mut s = Section::new(&ini, "model");
        let arch = match s.raw("arch").unwrap_or("mlp") {
            "mlp" => {
                let hidden = match s.raw("hidden") {
                    Some(h) => parse_list(h)?,
                    None => vec![50, 50],
                };
                Architecture::Mlp {
                    hidden,
                    activation: s.parse("activation", Activation::Relu)?,
                    bias: s.parse("bias", true)?,
                }
            }
            "lenet_small" => Architecture::LenetSmall,
            other => return Err(LabError::Config(format!("unknown architecture `{other}`"))),
        };
        s.finish()?;

        let mut s = Section::new(&ini, "prior");
        let prior = match s.raw("kind").unwrap_or("gaussian") {
            "gaussian" => PriorSpec::Gaussian {
                mean: s.parse("mean", 0.0)?,
                std: s.parse("std", 1.0)?,
            },
            "spike_slab" => {
                let PriorSpec::SpikeSlab { pi, slab_std, spike_std } = PriorSpec::default() else {
                    unreachable!("default prior is a spike-and-slab")
                };
                PriorSpec::SpikeSlab {
                    pi: s.parse("pi", pi)?,
                    slab_std: s.parse("slab_std", slab_std)?,
                    spike_std: s.parse("spike_std", spike_std)?,
                }
            }
            other => return Err(LabError::Config(format!("unknown prior `{other}`"))),
        };
        prior.validate()?;
        s.finish()?;

        let mut s = Section::new(&ini, "likelihood");
        let noise_std = s.parse("noise_std", d.noise_std)?;
        s.finish()?;

        let mut s = Section::new(&ini, "method");
        let method = s.parse("name", d.method)?;
        let seed = s.parse("seed", d.seed)?;
        // Output goes where the command runs, unlike input paths.
        let out_dir = s.raw("out").map_or_else(|| d.out_dir.clone(), PathBuf::from);
        s.finish()?;

        let mut s = Section::new(&ini, "train");
        let optimizer = match s.raw("optimizer").unwrap_or("adam") {
            "adam" => OptimizerKind::adam(),
            "sgd" => OptimizerKind::Sgd,
            other => return Err(LabError::Config(format!("unknown optimizer `{other}`"))),
        };
        let kl = match s.raw("kl").unwrap_or("monte_carlo") {
            "monte_carlo" => KlEstimate::MonteCarlo,
            "closed_form" => KlEstimate::ClosedForm,
            other => return Err(LabError::Config(format!("unknown KL estimate `{other}`"))),
        };
        let sampling = match s.raw("sampling").unwrap_or("weights") {
            "weights" => WeightSampling::Weights,
            "local_reparam" => WeightSampling::LocalReparam,
            other => return Err(LabError::Config(format!("unknown weight sampling `{other}`"))),
        };
        let train = TrainConfig {
            learning_rate: s.parse("learning_rate", d.train.learning_rate)?,
            mc_samples: s.parse("mc_samples", d.train.mc_samples)?,
            batch_size: s.parse("batch_size", d.train.batch_size)?,
            epochs: s.parse("epochs", d.train.epochs)?,
            seed,
            optimizer,
            init_mu_std: s.parse("init_mu_std", d.train.init_mu_std)?,
            init_sigma: s.parse("init_sigma", d.train.init_sigma)?,
            elbo: ElboOptions { sampling, kl },
        };
        s.finish()?;

        let mut s = Section::new(&ini, "dropout");
        let dropout = DropoutSettings {
            p: s.parse("p", d.dropout.p)?,
            weight_decay: s.parse("weight_decay", d.dropout.weight_decay)?,
        };
        s.finish()?;

        let mut s = Section::new(&ini, "hmc");
        let target_accept = match s.raw("target_accept") {
            Some(v) => parse_pair(v)?,
            None => d.hmc.target_accept,
        };
        let hyper = HyperPriorSpec {
            prior_shape: s.parse("prior_shape", d.hmc.hyper.prior_shape)?,
            prior_rate: s.parse("prior_rate", d.hmc.hyper.prior_rate)?,
            noise_shape: s.parse("noise_shape", d.hmc.hyper.noise_shape)?,
            noise_rate: s.parse("noise_rate", d.hmc.hyper.noise_rate)?,
        };
        let hmc = HmcSettings {
            step_size: s.parse("step_size", d.hmc.step_size)?,
            n_leapfrog: s.parse("n_leapfrog", d.hmc.n_leapfrog)?,
            n_samples: s.parse("n_samples", d.hmc.n_samples)?,
            burn_in: s.parse("burn_in", d.hmc.burn_in)?,
            warm_steps: s.parse("warm_steps", d.hmc.warm_steps)?,
            warm_lr: s.parse("warm_lr", d.hmc.warm_lr)?,
            tune: s.parse("tune", d.hmc.tune)?,
            pilot_iters: s.parse("pilot_iters", d.hmc.pilot_iters)?,
            target_accept,
            gibbs: s.parse("gibbs", d.hmc.gibbs)?,
            hyper,
        };
        s.finish()?;

        let mut s = Section::new(&ini, "gp");
        let kind = match s.raw("kernel").unwrap_or("matern52") {
            "matern52" => KernelKind::Matern52,
            "rbf" => KernelKind::Rbf,
            other => return Err(LabError::Config(format!("unknown kernel `{other}`"))),
        };
        let kernel = KernelSpec {
            kind,
            lengthscale: s.parse("lengthscale", d.gp.kernel.lengthscale)?,
            variance: s.parse("variance", d.gp.kernel.variance)?,
        };
        let noise_var = match s.raw("noise_var") {
            Some(v) => Some(v.parse().map_err(|_| LabError::Config(format!("[gp] noise_var = {v}")))?),
            None => None,
        };
        let gp = GpSettings { kernel, noise_var };
        s.finish()?;

        let mut s = Section::new(&ini, "predict");
        let grid = match s.raw("grid") {
            Some(v) => Some(parse_pair(v)?),
            None => None,
        };
        let predict = PredictSettings {
            samples: s.parse("samples", d.predict.samples)?,
            level: s.parse("level", d.predict.level)?,
            grid_points: s.parse("grid_points", d.predict.grid_points)?,
            grid,
        };
        s.finish()?;

        let cfg = Self {
            data,
            train_fraction,
            arch,
            prior,
            noise_std,
            method,
            seed,
            out_dir,
            train,
            dropout,
            hmc,
            gp,
            predict,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn task(&self) -> Task {
        match self.data {
            DataSource::Mnist { .. } => Task::Classification,
            _ => Task::Regression,
        }
    }

    pub fn likelihood(&self) -> LikelihoodSpec {
        match self.task() {
            Task::Regression => LikelihoodSpec::Gaussian { noise_std: self.noise_std },
            Task::Classification => LikelihoodSpec::Categorical,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LabError::Config(m.to_string()));
        if !(self.noise_std > 0.0) {
            return bad("noise_std must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad("train_fraction must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout.p) || self.dropout.weight_decay < 0.0 {
            return bad("dropout rate must lie in [0, 1) and weight decay be non-negative");
        }
        if self.predict.samples < 2 || !(self.predict.level > 0.0 && self.predict.level < 1.0) || self.predict.grid_points < 2 {
            return bad("predict needs ≥ 2 samples, a level in (0, 1) and ≥ 2 grid points");
        }
        if self.train.mc_samples == 0 || self.train.batch_size == 0 || !(self.train.learning_rate > 0.0) {
            return bad("train needs positive MC samples, batch size and learning rate");
        }
        match &self.data {
            DataSource::Csv(p) if !p.is_file() => return Err(LabError::Config(format!("data file {} does not exist", p.display()))),
            DataSource::Mnist { dir, .. } if !dir.is_dir() => return Err(LabError::Config(format!("MNIST directory {} does not exist", dir.display()))),
            _ => {}
        }
        self.gp.kernel.validate()?;
        self.hmc.hyper.validate()?;
        let classification = self.task() == Task::Classification;
        match (&self.arch, classification) {
            (Architecture::LenetSmall, false) => return bad("lenet_small needs an MNIST data source"),
            (Architecture::Mlp { .. }, true) => return bad("MNIST runs use arch = lenet_small"),
            _ => {}
        }
        let needed = min_samples_for_level(self.predict.level);
        if classification && self.predict.samples < needed {
            return Err(LabError::Config(format!("interval tables at level {} need ≥ {needed} predictive samples", self.predict.level)));
        }
        if classification && matches!(self.method, Method::Gp | Method::Hmc) {
            return bad("gp and hmc are regression-only here");
        }
        if self.method == Method::Map && !matches!(self.prior, PriorSpec::Gaussian { mean, .. } if mean == 0.0) {
            return bad("map uses weight decay and needs a zero-mean Gaussian prior");
        }
        if self.hmc.gibbs && !matches!(self.prior, PriorSpec::Gaussian { mean, .. } if mean == 0.0) {
            return bad("Gibbs precision sampling needs a zero-mean Gaussian prior");
        }
        Ok(())
    }

    pub fn hmc_config(&self, step_size: f64) -> HmcConfig {
        HmcConfig {
            step_size,
            n_leapfrog: self.hmc.n_leapfrog,
            mass: None,
            n_samples: self.hmc.n_samples,
            burn_in: self.hmc.burn_in,
            seed: self.seed,
        }
    }

    pub fn with_method(mut self, method: Method) -> Result<Self> {
        self.method = method;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    /// The resolved configuration in the same format [`Self::parse`] reads.
    pub fn to_text(&self) -> String {
        let mut ini = Ini::new();
        let source = match &self.data {
            DataSource::Toy { kind, .. } => format!("toy:{kind}"),
            DataSource::Csv(p) => format!("csv:{}", p.display()),
            DataSource::Mnist { dir, .. } => format!("mnist:{}", dir.display()),
        };
        let mut sec = ini.with_section(Some("data"));
        sec.set("source", source).set("train_fraction", self.train_fraction.to_string());
        match &self.data {
            DataSource::Toy { n, .. } => {
                sec.set("n", n.to_string());
            }
            DataSource::Mnist { train, test, .. } => {
                sec.set("mnist_train", train.to_string()).set("mnist_test", test.to_string());
            }
            DataSource::Csv(_) => {}
        }
        match &self.arch {
            Architecture::Mlp { hidden, activation, bias } => {
                let h: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
                ini.with_section(Some("model"))
                    .set("arch", "mlp")
                    .set("hidden", h.join(","))
                    .set("activation", activation.to_string())
                    .set("bias", bias.to_string());
            }
            Architecture::LenetSmall => {
                ini.with_section(Some("model")).set("arch", "lenet_small");
            }
        }
        match self.prior {
            PriorSpec::Gaussian { mean, std } => {
                ini.with_section(Some("prior"))
                    .set("kind", "gaussian")
                    .set("mean", mean.to_string())
                    .set("std", std.to_string());
            }
            PriorSpec::SpikeSlab { pi, slab_std, spike_std } => {
                ini.with_section(Some("prior"))
                    .set("kind", "spike_slab")
                    .set("pi", pi.to_string())
                    .set("slab_std", slab_std.to_string())
                    .set("spike_std", spike_std.to_string());
            }
        }
        ini.with_section(Some("likelihood")).set("noise_std", self.noise_std.to_string());
        ini.with_section(Some("method"))
            .set("name", self.method.to_string())
            .set("seed", self.seed.to_string())
            .set("out", self.out_dir.display().to_string());
        let t = &self.train;
        ini.with_section(Some("train"))
            .set("learning_rate", t.learning_rate.to_string())
            .set("mc_samples", t.mc_samples.to_string())
            .set("batch_size", t.batch_size.to_string())
            .set("epochs", t.epochs.to_string())
            .set(
                "optimizer",
                match t.optimizer {
                    OptimizerKind::Sgd => "sgd",
                    OptimizerKind::Adam { .. } => "adam",
                },
            )
            .set(
                "kl",
                match t.elbo.kl {
                    KlEstimate::MonteCarlo => "monte_carlo",
                    KlEstimate::ClosedForm => "closed_form",
                },
            )
            .set(
                "sampling",
                match t.elbo.sampling {
                    WeightSampling::Weights => "weights",
                    WeightSampling::LocalReparam => "local_reparam",
                },
            )
            .set("init_mu_std", t.init_mu_std.to_string())
            .set("init_sigma", t.init_sigma.to_string());
        ini.with_section(Some("dropout"))
            .set("p", self.dropout.p.to_string())
            .set("weight_decay", self.dropout.weight_decay.to_string());
        let h = &self.hmc;
        ini.with_section(Some("hmc"))
            .set("step_size", h.step_size.to_string())
            .set("n_leapfrog", h.n_leapfrog.to_string())
            .set("n_samples", h.n_samples.to_string())
            .set("burn_in", h.burn_in.to_string())
            .set("warm_steps", h.warm_steps.to_string())
            .set("warm_lr", h.warm_lr.to_string())
            .set("tune", h.tune.to_string())
            .set("pilot_iters", h.pilot_iters.to_string())
            .set("target_accept", format!("{},{}", h.target_accept.0, h.target_accept.1))
            .set("gibbs", h.gibbs.to_string())
            .set("prior_shape", h.hyper.prior_shape.to_string())
            .set("prior_rate", h.hyper.prior_rate.to_string())
            .set("noise_shape", h.hyper.noise_shape.to_string())
            .set("noise_rate", h.hyper.noise_rate.to_string());
        let mut sec = ini.with_section(Some("gp"));
        sec.set(
            "kernel",
            match self.gp.kernel.kind {
                KernelKind::Matern52 => "matern52",
                KernelKind::Rbf => "rbf",
            },
        )
        .set("lengthscale", self.gp.kernel.lengthscale.to_string())
        .set("variance", self.gp.kernel.variance.to_string());
        if let Some(v) = self.gp.noise_var {
            sec.set("noise_var", v.to_string());
        }
        let p = &self.predict;
        let mut sec = ini.with_section(Some("predict"));
        sec.set("samples", p.samples.to_string())
            .set("level", p.level.to_string())
            .set("grid_points", p.grid_points.to_string());
        if let Some((lo, hi)) = p.grid {
            sec.set("grid", format!("{lo},{hi}"));
        }
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("config text is UTF-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = ExperimentConfig::parse("", Path::new(".")).unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn resolved_text_roundtrips() {
        let text = "[data]\nsource = toy:curve\nn = 80\n[model]\nhidden = 10\nactivation = tanh\n[prior]\nkind = gaussian\nstd = 2\n[method]\nname = hmc\nseed = 7\n[gp]\nkernel = rbf\nnoise_var = 0.5\n[predict]\ngrid = -4, 4\n";
        let c = ExperimentConfig::parse(text, Path::new("/tmp")).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.predict.grid, Some((-4.0, 4.0)));
        let again = ExperimentConfig::parse(&c.to_text(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn typos_and_bad_combinations_are_config_errors() {
        for text in [
            "[train]\nepoch = 3\n",
            "[trian]\nepochs = 3\n",
            "[method]\nname = laplace\n",
            "[data]\nsource = mnist:/x\n[model]\narch = mlp\n",
            "[method]\nname = map\n[prior]\nkind = spike_slab\n",
            "[likelihood]\nnoise_std = 0\n",
            "seed = 1\n",
        ] {
            let e = ExperimentConfig::parse(text, Path::new(".")).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}: {e}");
        }
    }

    #[test]
    fn classification_needs_enough_draws_for_intervals() {
        let tmp = std::env::temp_dir();
        let text = |n: usize| format!("[data]\nsource = mnist:{}\n[model]\narch = lenet_small\n[predict]\nsamples = {n}\n", tmp.display());
        assert!(ExperimentConfig::parse(&text(49), Path::new(".")).is_err());
        assert!(ExperimentConfig::parse(&text(50), Path::new(".")).is_ok());
    }
}
