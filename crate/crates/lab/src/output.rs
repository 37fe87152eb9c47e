//! Plot-ready CSV outputs and the run manifest. Numbers are written with
//! Rust's shortest round-trip formatting, so every file parses back exactly.

use std::fs;
use std::path::Path;

use bnnlab_core::hmc::Chain;
use bnnlab_core::prob::LN_2PI;
use bnnlab_core::summary::{ClassRow, PredictiveSummary};
use bnnlab_core::vi::TraceRow;

use crate::error::{LabError, Result};

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| LabError::Data(format!("{}: {e}", path.display())))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| LabError::io(path, e))
}

fn num(v: f64) -> String {
    v.to_string()
}

/// `x, mean, std, lo1, hi1, lo2, hi2` for a 1-D input grid.
pub fn write_bands(path: &Path, xs: &[f64], s: &PredictiveSummary) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["x", "mean", "std", "lo1", "hi1", "lo2", "hi2"])?;
    let one = s.gaussian_band(1.0);
    let two = s.gaussian_band(2.0);
    let d = s.mean.row_len();
    for (i, &x) in xs.iter().enumerate() {
        let sd = s.variance.data()[i * d].max(0.0).sqrt();
        w.write_record([x, s.mean.data()[i * d], sd, one[i].0, one[i].1, two[i].0, two[i].1].map(num))?;
    }
    finish(w, path)
}

/// Rows of the band file as `[x, mean, std, lo1, hi1, lo2, hi2]`.
pub fn read_bands(path: &Path) -> Result<Vec<[f64; 7]>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let mut row = [0.0; 7];
            for (slot, f) in row.iter_mut().zip(rec.iter()) {
                *slot = f.parse().map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?;
            }
            Ok(row)
        })
        .collect()
}

/// Per-point regression predictions: `split, x0…, y, mean, std`.
pub fn write_predictions(path: &Path, rows: &[(&str, &[f64], f64, f64, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    let d = rows.first().map_or(1, |r| r.1.len());
    let mut header = vec!["split".to_string()];
    header.extend((0..d).map(|j| format!("x{j}")));
    header.extend(["y", "mean", "std"].map(String::from));
    w.write_record(&header)?;
    for (split, x, y, m, s) in rows {
        let mut rec = vec![split.to_string()];
        rec.extend(x.iter().map(|v| num(*v)));
        rec.extend([*y, *m, *s].map(num));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

/// Regression metrics of a predictive summary against targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionMetrics {
    pub n: usize,
    pub rmse: f64,
    /// Mean Gaussian negative log predictive density.
    pub mean_nll: f64,
    /// Fraction of targets inside `mean ± 1.96·std`.
    pub coverage95: f64,
}

pub fn regression_metrics(s: &PredictiveSummary, y: &[f64]) -> RegressionMetrics {
    let n = y.len();
    let (mut se, mut nll, mut hit) = (0.0, 0.0, 0usize);
    for (i, &t) in y.iter().enumerate() {
        let m = s.mean.data()[i];
        let v = s.variance.data()[i].max(1e-300);
        let r = t - m;
        se += r * r;
        nll += 0.5 * (LN_2PI + v.ln()) + r * r / (2.0 * v);
        if r.abs() <= 1.959_963_984_540_054 * v.sqrt() {
            hit += 1;
        }
    }
    let nf = n.max(1) as f64;
    RegressionMetrics {
        n,
        rmse: (se / nf).sqrt(),
        mean_nll: nll / nf,
        coverage95: hit as f64 / nf,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationMetrics {
    pub n: usize,
    pub accuracy: f64,
    /// Mean `−ln p̄(target)` under the predictive mean.
    pub mean_nll: f64,
}

pub fn write_regression_metrics(path: &Path, rows: &[(&str, &RegressionMetrics)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["split", "n", "rmse", "mean_nll", "coverage95"])?;
    for (split, m) in rows {
        w.write_record([split.to_string(), m.n.to_string(), num(m.rmse), num(m.mean_nll), num(m.coverage95)])?;
    }
    finish(w, path)
}

pub fn write_classification_metrics(path: &Path, rows: &[(&str, &ClassificationMetrics)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["split", "n", "accuracy", "mean_nll"])?;
    for (split, m) in rows {
        w.write_record([split.to_string(), m.n.to_string(), num(m.accuracy), num(m.mean_nll)])?;
    }
    finish(w, path)
}

/// One row per (example, class): the per-class predictive mean and interval.
pub fn write_interval_table(path: &Path, rows: &[&ClassRow], level: f64) -> Result<()> {
    let mut w = writer(path)?;
    let pct = format!("{}", (level * 100.0).round());
    w.write_record([
        "index".to_string(),
        "target".into(),
        "predicted".into(),
        "confidence".into(),
        "class".into(),
        "mean".into(),
        format!("lo{pct}"),
        format!("hi{pct}"),
    ])?;
    for r in rows {
        for c in 0..r.mean.len() {
            w.write_record([
                r.index.to_string(),
                r.target.to_string(),
                r.predicted.to_string(),
                num(r.confidence),
                c.to_string(),
                num(r.mean[c]),
                num(r.lower[c]),
                num(r.upper[c]),
            ])?;
        }
    }
    finish(w, path)
}

/// Fixed-width text rendering of the same table for terminals.
pub fn format_interval_table(rows: &[&ClassRow]) -> String {
    let mut out = String::from("  idx  true pred  conf   per-class mean [95% interval]\n");
    for r in rows {
        out.push_str(&format!("{:5} {:5} {:4}  {:.3}", r.index, r.target, r.predicted, r.confidence));
        for c in 0..r.mean.len() {
            out.push_str(&format!("  {c}:{:.2}[{:.2},{:.2}]", r.mean[c], r.lower[c], r.upper[c]));
        }
        out.push('\n');
    }
    out
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["epoch", "objective", "nll", "kl"])?;
    for t in trace {
        w.write_record([t.epoch.to_string(), num(t.elbo), num(t.nll), num(t.kl)])?;
    }
    finish(w, path)
}

/// `iteration, accepted, u, k, tau_prior, tau_noise, w0, w1, …`.
pub fn write_chain(path: &Path, chain: &Chain) -> Result<()> {
    let mut w = writer(path)?;
    let dim = chain.samples.first().map_or(0, |s| s.position.len());
    let mut header: Vec<String> = ["iteration", "accepted", "u", "k", "tau_prior", "tau_noise"].map(String::from).to_vec();
    header.extend((0..dim).map(|j| format!("w{j}")));
    w.write_record(&header)?;
    for s in &chain.samples {
        let (tp, tn) = s.precisions.map_or((String::new(), String::new()), |(a, b)| (num(a), num(b)));
        let mut rec = vec![s.iteration.to_string(), (s.accepted as u8).to_string(), num(s.u), num(s.k), tp, tn];
        rec.extend(s.position.iter().map(|v| num(*v)));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

/// Positions and optional precisions from a chain file.
pub fn read_chain_positions(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<Option<(f64, f64)>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?;
    let parse = |s: &str| s.parse::<f64>().map_err(|e| LabError::Data(format!("{}: {e}", path.display())));
    let (mut pos, mut prec) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let p = match (rec.get(4), rec.get(5)) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => Some((parse(a)?, parse(b)?)),
            _ => None,
        };
        prec.push(p);
        pos.push(rec.iter().skip(6).map(parse).collect::<Result<Vec<f64>>>()?);
    }
    Ok((pos, prec))
}

/// Named parameter columns, e.g. `mu, rho` or `w`, one row per parameter.
pub fn write_params(path: &Path, columns: &[(&str, &[f64])]) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["index"];
    header.extend(columns.iter().map(|c| c.0));
    w.write_record(&header)?;
    let n = columns.first().map_or(0, |c| c.1.len());
    for i in 0..n {
        let mut rec = vec![i.to_string()];
        rec.extend(columns.iter().map(|c| num(c.1[i])));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

pub fn read_params(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?;
    let names: Vec<String> = r.headers()?.iter().skip(1).map(String::from).collect();
    let mut cols = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec?;
        for (c, f) in cols.iter_mut().zip(rec.iter().skip(1)) {
            c.push(f.parse::<f64>().map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?);
        }
    }
    Ok(names.into_iter().zip(cols).collect())
}

/// `key = value` lines. Values are single-line.
pub fn write_manifest(path: &Path, entries: &[(String, String)], config_text: &str) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(&format!("{k} = {}\n", v.replace('\n', " ")));
    }
    out.push_str("\n# resolved config\n");
    out.push_str(config_text);
    fs::write(path, out).map_err(|e| LabError::io(path, e))
}
