use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bnnlab::config::{ExperimentConfig, Method};
use bnnlab::error::{LabError, Result};
use bnnlab::experiment::{self, Fitted};
use bnnlab::io;
use bnnlab_core::data::{make_toy_dataset, polynomial_features, ToyKind};
use bnnlab_core::evidence::{self, BnnModel, MapOptions};
use bnnlab_core::gp::{self, NnPriorConfig};
use bnnlab_core::nets::{Activation, NetworkSpec, Task};
use bnnlab_core::prob::{LikelihoodSpec, PriorSpec};
use bnnlab_core::tensor::Tensor;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "bnnlab", version, about = "Bayesian neural network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the method named in the config.
    #[arg(long)]
    method: Option<Method>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one method and write bands, metrics, trace and manifest.
    Train(Common),
    /// Predict with a model saved by `train`.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Run directory holding model.csv or chain.csv (default: config out).
        #[arg(long)]
        model: Option<PathBuf>,
        /// CSV of input columns only; defaults to the test split.
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
    /// Run several methods on the same data and tabulate them.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "bbb,mc_dropout,gp,hmc")]
        methods: Vec<Method>,
        #[arg(long)]
        parallel: bool,
    },
    /// Laplace evidence for polynomial degrees or for the configured network.
    Evidence {
        #[command(flatten)]
        common: Common,
        /// Largest polynomial degree; 0 evaluates the configured network instead.
        #[arg(long, default_value_t = 6)]
        max_degree: usize,
        /// Coefficient prior std for the polynomial models.
        #[arg(long, default_value_t = 10.0)]
        prior_std: f64,
    },
    /// Draw outputs of random one-hidden-layer tanh networks at two inputs.
    SamplePrior {
        #[arg(long, value_delimiter = ',', default_value = "1,3,10,100")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        #[arg(long, value_delimiter = ',', default_value = "-0.2,0.4")]
        probes: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "prior")]
        out: PathBuf,
    },
    /// Write a toy regression set as CSV.
    GenData {
        #[arg(long, default_value = "sinusoid_gap")]
        dataset: ToyKind,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "data.csv")]
        out: PathBuf,
    },
}

fn resolve(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = c.method {
        cfg = cfg.with_method(m)?;
    }
    if let Some(s) = c.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

fn train(c: &Common) -> Result<()> {
    let cfg = resolve(c)?;
    let run = experiment::run_experiment(&cfg)?;
    if let Some(r) = &run.regression {
        print!("{}: train rmse {:.4}", cfg.method, r.train_metrics.rmse);
        if let Some(t) = &r.test_metrics {
            print!(", test rmse {:.4}, nll {:.4}, coverage95 {:.3}", t.rmse, t.mean_nll, t.coverage95);
        }
        println!();
    }
    if let Some(c) = &run.classification {
        println!("{}: test accuracy {:.4} on {}", cfg.method, c.metrics.accuracy, c.metrics.n);
    }
    if let Some(h) = &run.hmc {
        println!("hmc: step {:.3e}, acceptance {:.3}, min ESS {:.1}", h.step_size, h.acceptance_rate, h.min_ess);
        for w in &h.warnings {
            eprintln!("warning: {w}");
        }
    }
    println!("artifacts in {}", run.out_dir.display());
    Ok(())
}

fn read_inputs(path: &Path, d: usize) -> Result<Tensor> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut xs = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match row {
            Ok(v) if v.len() == d => xs.extend(v),
            Ok(v) => return Err(LabError::Data(format!("{}: line {}: {} columns, expected {d}", path.display(), i + 1, v.len()))),
            Err(_) if i == 0 => {}
            Err(e) => return Err(LabError::Data(format!("{}: line {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(Tensor::matrix(xs.len() / d, d, xs)?)
}

fn predict(c: &Common, model: Option<&Path>, inputs: Option<&Path>) -> Result<()> {
    let cfg = resolve(c)?;
    let model_dir = model.map_or_else(|| cfg.out_dir.clone(), Path::to_path_buf);
    let data = experiment::load_dataset(&cfg)?;
    let spec = experiment::network_spec(&cfg, &data)?;
    let fitted = Fitted::load(&cfg, &spec, &data, &model_dir)?;
    let x = match inputs {
        Some(p) => read_inputs(p, data.inputs.row_len())?,
        None => match data.test_set()? {
            Some((x, _)) => x,
            None => data.train_set()?.0,
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5151);
    let s = fitted.predict(&cfg, &spec, &x, &mut rng)?;
    let out = c.out.clone().unwrap_or_else(|| model_dir.clone());
    mkdir(&out)?;
    let path = out.join("predictive.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let d = x.row_len();
    let k = s.mean.row_len();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    for o in 0..k {
        for f in ["mean", "std", "lo", "hi"] {
            header.push(if k == 1 { f.to_string() } else { format!("{f}{o}") });
        }
    }
    w.write_record(&header)?;
    for i in 0..x.rows() {
        let mut rec: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        for o in 0..k {
            let m = s.mean.data()[i * k + o];
            let sd = s.variance.data()[i * k + o].max(0.0).sqrt();
            let (lo, hi) = match &s.interval {
                Some(b) => (b.lower.data()[i * k + o], b.upper.data()[i * k + o]),
                None => (m - 1.96 * sd, m + 1.96 * sd),
            };
            rec.extend([m, sd, lo, hi].map(|v| v.to_string()));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| LabError::io(&path, e))?;
    println!("{} predictions in {}", x.rows(), path.display());
    Ok(())
}

fn compare(c: &Common, methods: &[Method], parallel: bool) -> Result<()> {
    let cfg = resolve(c)?;
    let runs = experiment::compare(&cfg, methods, parallel)?;
    let gap = experiment::gap_of(&cfg);
    for r in &runs {
        if let Some(reg) = &r.regression {
            print!("{:>10}: mean σ (train) {:.4}", r.method.to_string(), reg.mean_std_train());
            if let Some(g) = gap.and_then(|(lo, hi)| reg.mean_std_in(lo, hi)) {
                print!(", mean σ (gap) {g:.4}");
            }
            println!();
        }
    }
    println!("table in {}", cfg.out_dir.join("compare.csv").display());
    Ok(())
}

fn evidence_cmd(c: &Common, max_degree: usize, prior_std: f64) -> Result<()> {
    let cfg = resolve(c)?;
    if cfg.task() != Task::Regression {
        return Err(LabError::Config("evidence runs need a regression dataset".into()));
    }
    let data = experiment::load_dataset(&cfg)?;
    let (x, y) = data.train_set()?;
    mkdir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("evidence.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["model", "k", "log_likelihood", "log_occam", "log_evidence", "occam_factor", "posterior"])?;
    let lik = LikelihoodSpec::Gaussian { noise_std: cfg.noise_std };
    let mut reports = Vec::new();
    if max_degree == 0 {
        let spec = experiment::network_spec(&cfg, &data)?;
        let init = experiment::warm_start(&cfg, &spec, &x, &y)?;
        let mut m = BnnModel { spec: &spec, prior: cfg.prior, lik, inputs: &x, targets: &y };
        let opts = MapOptions { init: Some(init), seed: cfg.seed, ..MapOptions::default() };
        reports.push(("network".to_string(), evidence::laplace_evidence(&mut m, &opts)?));
    } else {
        let prior = PriorSpec::Gaussian { mean: 0.0, std: prior_std };
        for degree in 1..=max_degree {
            let f = polynomial_features(&x, degree)?;
            let spec = NetworkSpec::mlp(degree, &[], 1, Activation::Identity, Task::Regression, true)?;
            let mut m = BnnModel { spec: &spec, prior, lik, inputs: &f, targets: &y };
            reports.push((format!("degree{degree}"), evidence::laplace_evidence(&mut m, &MapOptions::default())?));
        }
    }
    let logs: Vec<f64> = reports.iter().map(|r| r.1.log_evidence).collect();
    let post = evidence::model_posterior(&logs, &vec![1.0 / logs.len() as f64; logs.len()])?;
    for ((name, r), p) in reports.iter().zip(&post) {
        println!("{name:>8}: ln evidence {:.3}, ln Occam {:.3}, posterior {p:.4}", r.log_evidence, r.log_occam);
        w.write_record([
            name.clone(),
            r.k.to_string(),
            r.log_likelihood.to_string(),
            r.log_occam.to_string(),
            r.log_evidence.to_string(),
            evidence::occam_factor(r).to_string(),
            p.to_string(),
        ])?;
    }
    w.flush().map_err(|e| LabError::io(&path, e))
}

fn sample_prior(hidden: &[usize], draws: usize, probes: &[f64], seed: u64, out: &Path) -> Result<()> {
    let &[a, b] = probes else {
        return Err(LabError::Config("--probes takes exactly two inputs".into()));
    };
    mkdir(out)?;
    let stats_path = out.join("prior_stats.csv");
    let mut stats = csv::Writer::from_path(&stats_path)?;
    stats.write_record(["hidden", "draws", "skew_a", "skew_b", "kurtosis_a", "kurtosis_b", "mardia_excess"])?;
    for &h in hidden {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(h as u64));
        let s = gp::nn_prior_sample_outputs(&NnPriorConfig::new(h), draws, (a, b), &mut rng)?;
        let p = out.join(format!("prior_h{h}.csv"));
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["f_a", "f_b"])?;
        for f in &s {
            w.write_record([f[0].to_string(), f[1].to_string()])?;
        }
        w.flush().map_err(|e| LabError::io(&p, e))?;
        let n = gp::normality_statistic(&s)?;
        println!("H={h:>4}: excess kurtosis {:.3} / {:.3}", n.excess_kurtosis[0], n.excess_kurtosis[1]);
        stats.write_record(
            [h as f64, draws as f64, n.skewness[0], n.skewness[1], n.excess_kurtosis[0], n.excess_kurtosis[1], n.mardia_excess]
                .map(|v| v.to_string()),
        )?;
    }
    stats.flush().map_err(|e| LabError::io(&stats_path, e))
}

fn gen_data(kind: ToyKind, n: usize, seed: u64, out: &Path) -> Result<()> {
    let d = make_toy_dataset(kind, n, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    io::write_csv_regression(out, &d)?;
    println!("{n} points of {kind} in {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => train(&c),
        Command::Predict { common, model, inputs } => predict(&common, model.as_deref(), inputs.as_deref()),
        Command::Compare { common, methods, parallel } => compare(&common, &methods, parallel),
        Command::Evidence { common, max_degree, prior_std } => evidence_cmd(&common, max_degree, prior_std),
        Command::SamplePrior { hidden, draws, probes, seed, out } => sample_prior(&hidden, draws, &probes, seed, &out),
        Command::GenData { dataset, n, seed, out } => gen_data(dataset, n, seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

