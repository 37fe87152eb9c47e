//! Dataset files: numeric regression CSV and the MNIST IDX format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use bnnlab_core::data::Dataset;
use bnnlab_core::nets::Task;
use bnnlab_core::tensor::Tensor;
use flate2::read::GzDecoder;

use crate::error::{LabError, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads a numeric CSV whose last column is the target. A first row that
/// does not parse as numbers is taken as a header. Rows start unsplit.
pub fn read_csv_regression(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(file);
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| LabError::Data(format!("{}: line {line}: {e}", path.display())))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(r) => r,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(LabError::Data(format!("{}: line {line}: {e}", path.display()))),
        };
        if row.len() < 2 {
            return Err(LabError::Data(format!("{}: line {line}: need at least two columns", path.display())));
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(LabError::Data(format!("{}: line {line}: {} columns, expected {w}", path.display(), row.len())));
            }
            _ => {}
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Data(format!("{}: line {line}: non-finite value", path.display())));
        }
        values.extend(row);
        rows += 1;
    }
    let w = width.ok_or_else(|| LabError::Data(format!("{}: no data rows", path.display())))?;
    let mut xs = Vec::with_capacity(rows * (w - 1));
    let mut ys = Vec::with_capacity(rows);
    for r in values.chunks_exact(w) {
        xs.extend_from_slice(&r[..w - 1]);
        ys.push(r[w - 1]);
    }
    let name = path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned());
    Ok(Dataset::new(name, Tensor::matrix(rows, w - 1, xs)?, Tensor::matrix(rows, 1, ys)?, Task::Regression)?)
}

/// [`read_csv_regression`] followed by the seeded split.
pub fn load_csv_regression(path: &Path, train_fraction: f64, seed: u64) -> Result<Dataset> {
    Ok(read_csv_regression(path)?.split(train_fraction, seed)?)
}

/// Writes inputs and target with an `x0,…,y` header.
pub fn write_csv_regression(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?;
    let d = data.inputs.row_len();
    let mut header: Vec<String> = if d == 1 { vec!["x".into()] } else { (0..d).map(|j| format!("x{j}")).collect() };
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.inputs.row(i).iter().map(|v| v.to_string()).collect();
        row.push(data.targets.row(i)[0].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

fn open_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    let mut bytes = Vec::new();
    let res = if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(BufReader::new(file)).read_to_end(&mut bytes)
    } else {
        BufReader::new(file).read_to_end(&mut bytes)
    };
    res.map_err(|e| LabError::io(path, e))?;
    Ok(bytes)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| LabError::Data(format!("{}: truncated header", path.display())))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(LabError::Data(format!(
            "{}: wrong IDX magic: expected {expected:#010x}, found {found:#010x}",
            path.display()
        )));
    }
    Ok(())
}

/// Images as `[n, 1, rows, cols]` in `[0, 1]`, reading at most `limit` items.
pub fn read_idx_images(path: &Path, limit: Option<usize>) -> Result<Tensor> {
    let bytes = open_maybe_gz(path)?;
    check_magic(&bytes, IDX_IMAGES_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let take = limit.map_or(n, |l| l.min(n));
    let len = take * rows * cols;
    let pixels = bytes
        .get(16..16 + len)
        .ok_or_else(|| LabError::Data(format!("{}: truncated: {} of {len} pixel bytes", path.display(), bytes.len().saturating_sub(16))))?;
    if limit.is_none() && bytes.len() != 16 + len {
        return Err(LabError::Data(format!("{}: {} trailing bytes", path.display(), bytes.len() - 16 - len)));
    }
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Ok(Tensor::new(vec![take, 1, rows, cols], data)?)
}

/// Labels `0..=9`, reading at most `limit` items.
pub fn read_idx_labels(path: &Path, limit: Option<usize>) -> Result<Vec<u8>> {
    let bytes = open_maybe_gz(path)?;
    check_magic(&bytes, IDX_LABELS_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let take = limit.map_or(n, |l| l.min(n));
    let labels = bytes
        .get(8..8 + take)
        .ok_or_else(|| LabError::Data(format!("{}: truncated: {} of {take} labels", path.display(), bytes.len().saturating_sub(8))))?;
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(LabError::Data(format!("{}: label {bad} outside 0–9", path.display())));
    }
    Ok(labels.to_vec())
}

/// An image/label file pair as a classification dataset (all rows train).
pub fn load_mnist_idx(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset> {
    let x = read_idx_images(images, limit)?;
    let y = read_idx_labels(labels, limit)?;
    if x.rows() != y.len() {
        return Err(LabError::Data(format!("{} images but {} labels", x.rows(), y.len())));
    }
    let n = y.len();
    let targets = Tensor::matrix(n, 1, y.iter().map(|&l| l as f64).collect())?;
    Ok(Dataset::new("mnist", x, targets, Task::Classification)?)
}

/// Finds `stem` or `stem.gz` in `dir`.
fn idx_file(dir: &Path, stem: &str) -> Result<std::path::PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(LabError::Data(format!("{}: missing {stem}[.gz]", dir.display())))
}

/// The first `n_train` training images and the first `n_test` test images,
/// as one dataset whose split marks the test rows.
pub fn load_mnist_dir(dir: &Path, n_train: usize, n_test: usize) -> Result<Dataset> {
    let train = load_mnist_idx(&idx_file(dir, "train-images-idx3-ubyte")?, &idx_file(dir, "train-labels-idx1-ubyte")?, Some(n_train))?;
    let test = load_mnist_idx(&idx_file(dir, "t10k-images-idx3-ubyte")?, &idx_file(dir, "t10k-labels-idx1-ubyte")?, Some(n_test))?;
    let (a, b) = (train.len(), test.len());
    let mut shape = train.inputs.shape().to_vec();
    shape[0] = a + b;
    let inputs = Tensor::new(shape, [train.inputs.data(), test.inputs.data()].concat())?;
    let targets = Tensor::matrix(a + b, 1, [train.targets.data(), test.targets.data()].concat())?;
    Ok(Dataset::new("mnist", inputs, targets, Task::Classification)?.with_split((0..a).collect(), (a..a + b).collect())?)
}

/// Writes an IDX image file from `[n, rows, cols]` bytes.
pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if rows == 0 || cols == 0 || pixels.len() % (rows * cols) != 0 {
        return Err(LabError::Data("pixel count is not a multiple of the image size".into()));
    }
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    write_bytes(path, &out)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    write_bytes(path, &out)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let f = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| LabError::io(path, e))
}
