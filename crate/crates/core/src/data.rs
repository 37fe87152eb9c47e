//! Datasets with seeded train/test splits and the toy regression generators.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nets::Task;
use crate::tensor::Tensor;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub inputs: Tensor,
    pub targets: Tensor,
    pub task: Task,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl Dataset {
    /// All rows start in the training split.
    pub fn new(name: impl Into<String>, inputs: Tensor, targets: Tensor, task: Task) -> Result<Self> {
        let n = inputs.rows();
        if targets.rows() != n {
            return Err(Error::InvalidShape(format!("{n} inputs for {} targets", targets.rows())));
        }
        Ok(Self {
            name: name.into(),
            inputs,
            targets,
            task,
            train: (0..n).collect(),
            test: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Seeded shuffle, then the first `⌊frac·n⌉` rows train and the rest test.
    pub fn split(mut self, train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(Error::invalid(format!("train fraction {train_fraction} outside (0, 1]")));
        }
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let k = ((train_fraction * n as f64).round() as usize).clamp(1, n);
        self.test = idx.split_off(k);
        self.train = idx;
        Ok(self)
    }

    /// Explicit split; the two index sets must be disjoint and cover all rows.
    pub fn with_split(mut self, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let n = self.len();
        let mut seen = alloc::vec![false; n];
        for &i in train.iter().chain(&test) {
            if i >= n || seen[i] {
                return Err(Error::invalid(format!("split index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) || train.is_empty() {
            return Err(Error::invalid("split must cover every row and keep a training row"));
        }
        self.train = train;
        self.test = test;
        Ok(self)
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn test_indices(&self) -> &[usize] {
        &self.test
    }

    pub fn train_set(&self) -> Result<(Tensor, Tensor)> {
        Ok((self.inputs.select_rows(&self.train)?, self.targets.select_rows(&self.train)?))
    }

    /// `None` when the test split is empty.
    pub fn test_set(&self) -> Result<Option<(Tensor, Tensor)>> {
        if self.test.is_empty() {
            return Ok(None);
        }
        Ok(Some((self.inputs.select_rows(&self.test)?, self.targets.select_rows(&self.test)?)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    SinusoidGap,
    Curve,
    ClusterGap,
}

impl ToyKind {
    pub const ALL: [ToyKind; 3] = [ToyKind::SinusoidGap, ToyKind::Curve, ToyKind::ClusterGap];

    /// Input intervals that receive training data.
    pub fn support(&self) -> [(f64, f64); 2] {
        match self {
            ToyKind::SinusoidGap => [(0.0, 0.6), (0.8, 1.4)],
            ToyKind::Curve => [(-3.0, -0.5), (0.5, 3.0)],
            ToyKind::ClusterGap => [(-2.0, -1.0), (1.0, 2.0)],
        }
    }

    /// Open interval deliberately left without training inputs.
    pub fn gap(&self) -> (f64, f64) {
        let s = self.support();
        (s[0].1, s[1].0)
    }

    pub fn noise_std(&self) -> f64 {
        match self {
            ToyKind::SinusoidGap => 0.02,
            ToyKind::Curve => 0.1,
            ToyKind::ClusterGap => 0.1,
        }
    }

    /// Noise-free part of the generator; for `SinusoidGap` the input noise
    /// enters the sines, so this is the `ε = 0` curve.
    pub fn mean_function(&self, x: f64) -> f64 {
        use core::f64::consts::PI;
        match self {
            ToyKind::SinusoidGap => x + 0.3 * (2.0 * PI * x).sin() + 0.3 * (4.0 * PI * x).sin(),
            ToyKind::Curve => (3.0 * x).sin() * (-0.5 * x * x).exp(),
            ToyKind::ClusterGap => 0.5 * x,
        }
    }

    /// One draw of `y` given `x`.
    pub fn sample_target<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        use core::f64::consts::PI;
        let eps = Normal::new(0.0, self.noise_std()).expect("positive noise").sample(rng);
        match self {
            ToyKind::SinusoidGap => x + 0.3 * (2.0 * PI * (x + eps)).sin() + 0.3 * (4.0 * PI * (x + eps)).sin() + eps,
            _ => self.mean_function(x) + eps,
        }
    }
}

impl FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid_gap" => Ok(ToyKind::SinusoidGap),
            "curve" => Ok(ToyKind::Curve),
            "cluster_gap" => Ok(ToyKind::ClusterGap),
            _ => Err(Error::Unknown {
                kind: "toy dataset",
                name: s.to_string(),
            }),
        }
    }
}

impl fmt::Display for ToyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToyKind::SinusoidGap => "sinusoid_gap",
            ToyKind::Curve => "curve",
            ToyKind::ClusterGap => "cluster_gap",
        })
    }
}

/// `n` points with `x` uniform over the two support intervals (weighted by
/// length) and `y` from the generator, split 90/10 with the same seed.
pub fn make_toy_dataset(kind: ToyKind, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid("toy datasets need at least two points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [(a0, a1), (b0, b1)] = kind.support();
    let (la, lb) = (a1 - a0, b1 - b0);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * (la + lb);
        let x = if u < la { a0 + u } else { b0 + (u - la) };
        ys.push(kind.sample_target(x, &mut rng));
        xs.push(x);
    }
    Dataset::new(kind.to_string(), Tensor::matrix(n, 1, xs)?, Tensor::matrix(n, 1, ys)?, Task::Regression)?
        .split(DEFAULT_TRAIN_FRACTION, seed)
}

/// Parses a toy dataset name and generates it.
pub fn make_toy_datasets(name: &str, n: usize, seed: u64) -> Result<Dataset> {
    make_toy_dataset(name.parse()?, n, seed)
}

/// Columns `x, x², …, x^degree` of a single-column input; a linear model
/// with bias on these is a polynomial of that degree.
pub fn polynomial_features(x: &Tensor, degree: usize) -> Result<Tensor> {
    if degree == 0 || x.row_len() != 1 {
        return Err(Error::invalid("polynomial features need a single input column and degree ≥ 1"));
    }
    let n = x.rows();
    let mut out = Vec::with_capacity(n * degree);
    for &v in x.data() {
        let mut p = 1.0;
        for _ in 0..degree {
            p *= v;
            out.push(p);
        }
    }
    Tensor::matrix(n, degree, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_gap_free() {
        let a = make_toy_dataset(ToyKind::SinusoidGap, 200, 3).unwrap();
        let b = make_toy_dataset(ToyKind::SinusoidGap, 200, 3).unwrap();
        assert_eq!(a, b);
        let (lo, hi) = ToyKind::SinusoidGap.gap();
        assert!(a.inputs.data().iter().all(|&x| !(x > lo && x < hi)));
        assert_eq!(a.train_indices().len(), 180);
        assert!(make_toy_datasets("spiral", 10, 0).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let d = make_toy_dataset(ToyKind::Curve, 37, 1).unwrap();
        let mut all: Vec<usize> = d.train_indices().iter().chain(d.test_indices()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        assert!(d.clone().with_split(alloc::vec![0, 1], alloc::vec![1]).is_err());
    }

    #[test]
    fn polynomial_columns() {
        let x = Tensor::matrix(2, 1, alloc::vec![2.0, -1.0]).unwrap();
        let f = polynomial_features(&x, 3).unwrap();
        assert_eq!(f.data(), &[2.0, 4.0, 8.0, -1.0, 1.0, -1.0]);
        assert!(polynomial_features(&x, 0).is_err());
    }
}
