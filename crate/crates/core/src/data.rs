//! Datasets: synthetic regression tasks, Gaussian blobs, IDX (MNIST) files
//! and seeded train/validation/test splits.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::nn::Target;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(Vec<Vec<f64>>),
    Class { labels: Vec<usize>, classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Targets,
}

impl Dataset {
    pub fn regression(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!("{} inputs but {} targets", x.len(), y.len())));
        }
        Ok(Dataset { x, y: Targets::Real(y) })
    }

    pub fn classification(x: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if x.len() != labels.len() {
            return Err(Error::invalid(format!("{} inputs but {} labels", x.len(), labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {l} out of range for {classes} classes")));
        }
        Ok(Dataset {
            x,
            y: Targets::Class { labels, classes },
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.y, Targets::Class { .. })
    }

    pub fn input_dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Target width for regression, class count for classification.
    pub fn output_dim(&self) -> usize {
        match &self.y {
            Targets::Real(y) => y.first().map_or(0, Vec::len),
            Targets::Class { classes, .. } => *classes,
        }
    }

    pub fn target(&self, t: usize) -> Target<'_> {
        match &self.y {
            Targets::Real(y) => Target::Real(&y[t]),
            Targets::Class { labels, .. } => Target::Class(labels[t]),
        }
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.y {
            Targets::Class { labels, .. } => Some(labels),
            Targets::Real(_) => None,
        }
    }

    pub fn real_targets(&self) -> Option<&[Vec<f64>]> {
        match &self.y {
            Targets::Real(y) => Some(y),
            Targets::Class { .. } => None,
        }
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let x = idx.iter().map(|&i| self.x[i].clone()).collect();
        let y = match &self.y {
            Targets::Real(y) => Targets::Real(idx.iter().map(|&i| y[i].clone()).collect()),
            Targets::Class { labels, classes } => Targets::Class {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        };
        Dataset { x, y }
    }

    /// The first `n` rows (or all of them).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegressionKind {
    Identity,
    Affine,
    Polynomial4,
    Formula,
}

impl RegressionKind {
    pub const ALL: [RegressionKind; 4] = [
        RegressionKind::Identity,
        RegressionKind::Affine,
        RegressionKind::Polynomial4,
        RegressionKind::Formula,
    ];

    pub fn eval(self, x: f64) -> f64 {
        match self {
            RegressionKind::Identity => x,
            RegressionKind::Affine => 3.0 * x + 2.0,
            RegressionKind::Polynomial4 => 0.1 * x.powi(4) - x * x + 2.0 * x,
            RegressionKind::Formula => x.sin() + (0.1 * x).exp(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegressionKind::Identity => "identity",
            RegressionKind::Affine => "affine",
            RegressionKind::Polynomial4 => "poly4",
            RegressionKind::Formula => "formula",
        }
    }
}

impl fmt::Display for RegressionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegressionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegressionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown regression task '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionTask {
    pub kind: RegressionKind,
    pub domain: (f64, f64),
    pub noise_sigma: f64,
}

impl RegressionTask {
    pub fn new(kind: RegressionKind) -> Self {
        RegressionTask {
            kind,
            domain: (-5.0, 5.0),
            noise_sigma: 0.0,
        }
    }
}

/// `n` points with `x ~ U(domain)` and `y = f(x) + N(0, σ²)`.
pub fn gen_regression(task: &RegressionTask, n: usize, seed: u64) -> Result<Dataset> {
    let (lo, hi) = task.domain;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::invalid("regression domain must be a non-degenerate finite interval"));
    }
    if !(task.noise_sigma >= 0.0 && task.noise_sigma.is_finite()) {
        return Err(Error::invalid("noise sigma must be finite and non-negative"));
    }
    if n == 0 {
        return Err(Error::invalid("need at least one datapoint"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ux = Uniform::new(lo, hi).map_err(|e| Error::invalid(e.to_string()))?;
    let noise = Normal::new(0.0, task.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xv = ux.sample(&mut rng);
        let mut yv = task.kind.eval(xv);
        if task.noise_sigma > 0.0 {
            yv += noise.sample(&mut rng);
        }
        x.push(vec![xv]);
        y.push(vec![yv]);
    }
    Dataset::regression(x, y)
}

/// Isotropic unit-variance Gaussian clusters whose centres are pairwise at
/// least `separation` apart. Points are interleaved by class.
pub fn gen_blobs(classes: usize, n_per_class: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::invalid("blobs need at least two classes"));
    }
    if d == 0 || !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid("blobs need d >= 1 and a finite separation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = blob_centers(classes, d, separation, &mut rng);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = Vec::with_capacity(classes * n_per_class);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for _ in 0..n_per_class {
        for (c, center) in centers.iter().enumerate() {
            x.push(center.iter().map(|m| m + unit.sample(&mut rng)).collect());
            labels.push(c);
        }
    }
    Dataset::classification(x, labels, classes)
}

fn blob_centers(classes: usize, d: usize, separation: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut half_width = separation.max(1.0) * (classes as f64).powf(1.0 / d as f64);
    loop {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
        for _ in 0..1000 {
            let cand: Vec<f64> = (0..d).map(|_| rng.random_range(-half_width..=half_width)).collect();
            let ok = centers.iter().all(|c| {
                c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= separation
            });
            if ok {
                centers.push(cand);
                if centers.len() == classes {
                    return centers;
                }
            }
        }
        half_width *= 2.0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for Split {
    fn default() -> Self {
        Split {
            train: 0.7,
            val: 0.15,
            test: 0.15,
            seed: 0,
        }
    }
}

impl Split {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("split fractions must be positive"));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split fractions must sum to 1"));
        }
        Ok(())
    }
}

/// Seeded shuffle followed by contiguous train/validation/test slices.
pub fn split(ds: &Dataset, s: &Split) -> Result<(Dataset, Dataset, Dataset)> {
    s.validate()?;
    let t = ds.len();
    let n_train = (t as f64 * s.train).round() as usize;
    let n_val = (t as f64 * s.val).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= t {
        return Err(Error::invalid(format!("{t} datapoints are too few for a three-way split")));
    }
    let mut perm: Vec<usize> = (0..t).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(s.seed));
    Ok((
        ds.subset(&perm[..n_train]),
        ds.subset(&perm[n_train..n_train + n_val]),
        ds.subset(&perm[n_train + n_val..]),
    ))
}

/// A parsed IDX file. Only unsigned-byte payloads are supported.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dtype: u8,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

pub const IDX_U8: u8 = 0x08;

/// Parses `00 00 dtype ndims`, `ndims` big-endian u32 sizes, then the payload.
pub fn load_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::Format("IDX header shorter than 4 bytes".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format(format!(
            "bad IDX magic {:02x} {:02x}, expected 00 00",
            bytes[0], bytes[1]
        )));
    }
    let dtype = bytes[2];
    if dtype != IDX_U8 {
        return Err(Error::Format(format!("unsupported IDX dtype 0x{dtype:02x}")));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::Format(format!("IDX header declares {ndims} dims but is truncated")));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("IDX dims overflow".into()))?;
    let body = &bytes[header..];
    if body.len() != count {
        return Err(Error::Format(format!(
            "IDX payload has {} bytes, dims {:?} require {count}",
            body.len(),
            dims
        )));
    }
    Ok(IdxTensor {
        dtype,
        dims,
        payload: body.to_vec(),
    })
}

impl IdxTensor {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0, 0, self.dtype, self.dims.len() as u8];
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    /// Leading dimension (item count).
    pub fn items(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    /// Each item flattened and scaled to `[0, 1]`.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let width = if self.dims.len() > 1 {
            self.dims[1..].iter().product()
        } else {
            1
        };
        if width == 0 {
            return vec![Vec::new(); self.items()];
        }
        self.payload
            .chunks_exact(width)
            .map(|c| c.iter().map(|&b| f64::from(b) / 255.0).collect())
            .collect()
    }
}

fn read_idx_file(path: &Path) -> Result<IdxTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    load_idx(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistPart {
    Train,
    Test,
}

impl MnistPart {
    pub fn file_names(self) -> (&'static str, &'static str) {
        match self {
            MnistPart::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            MnistPart::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

/// Loads an MNIST image/label pair from `dir`, pixels scaled to `[0, 1]`.
pub fn load_mnist(dir: &Path, part: MnistPart) -> Result<Dataset> {
    let (img_name, lbl_name) = part.file_names();
    let (img_path, lbl_path) = (dir.join(img_name), dir.join(lbl_name));
    for p in [&img_path, &lbl_path] {
        if !p.is_file() {
            return Err(Error::io(
                p.display().to_string(),
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    format!("expected IDX files {} and {}", img_path.display(), lbl_path.display()),
                ),
            ));
        }
    }
    let images = read_idx_file(&img_path)?;
    let labels = read_idx_file(&lbl_path)?;
    if labels.dims.len() != 1 || images.items() != labels.items() {
        return Err(Error::Format(format!(
            "image dims {:?} and label dims {:?} disagree",
            images.dims, labels.dims
        )));
    }
    let labels: Vec<usize> = labels.payload.iter().map(|&b| b as usize).collect();
    Dataset::classification(images.to_rows(), labels, 10)
}
