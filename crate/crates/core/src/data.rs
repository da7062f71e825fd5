//! Datasets: synthetic generation and feature-file ingestion.
//!
//! Text format: an optional header `# n=<N> d=<D>` followed by one sample
//! per line, `<label>,<v1>,...,<vD>`. Floats are written in shortest
//! round-trip form, so save/load is bit-exact. The binary format starts
//! with [`FEATURE_MAGIC`] and stores everything little-endian.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{l2_normalize, Matrix};

pub const FEATURE_MAGIC: &[u8; 8] = b"DMFEAT\0\0";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Feature rows with class labels. Class ids are dense, assigned in order
/// of first appearance, and map to names through `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    class_names: Vec<String>,
    split: Split,
    by_class: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(features: Matrix, row_names: &[String], split: Split) -> Result<Self> {
        if features.rows() != row_names.len() {
            return Err(Error::LengthMismatch {
                left: features.rows(),
                right: row_names.len(),
            });
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("features"));
        }
        let mut ids: HashMap<&str, usize> = HashMap::new();
        let mut class_names = Vec::new();
        let mut by_class: Vec<Vec<usize>> = Vec::new();
        let mut labels = Vec::with_capacity(row_names.len());
        for (i, name) in row_names.iter().enumerate() {
            let id = *ids.entry(name.as_str()).or_insert_with(|| {
                class_names.push(name.clone());
                by_class.push(Vec::new());
                class_names.len() - 1
            });
            by_class[id].push(i);
            labels.push(id);
        }
        Ok(Self {
            features,
            labels,
            class_names,
            split,
            by_class,
        })
    }

    /// Builds a dataset whose class names are the decimal ids.
    pub fn from_ids(features: Matrix, ids: Vec<usize>, split: Split) -> Result<Self> {
        let names: Vec<String> = ids.iter().map(usize::to_string).collect();
        Self::new(features, &names, split)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Row indices of every class, indexed by class id.
    pub fn rows_by_class(&self) -> &[Vec<usize>] {
        &self.by_class
    }

    /// Same labels and names with different feature rows (e.g. embeddings).
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.rows() != self.len() {
            return Err(Error::LengthMismatch {
                left: features.rows(),
                right: self.len(),
            });
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }
}

/// Errors if the two datasets share any class name.
pub fn check_disjoint(train: &Dataset, test: &Dataset) -> Result<()> {
    for name in test.class_names() {
        if train.class_names().contains(name) {
            return Err(Error::OverlappingSplits(name.clone()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 40,
            samples_per_class: 30,
            input_dim: 32,
            sigma: 0.25,
            seed: 7,
        }
    }
}

/// Draws one unit direction per class and scatters samples around it with
/// isotropic Gaussian noise. The first half of the classes is the training
/// split, the rest the test split.
pub fn synthesize(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    if cfg.num_classes < 2 || cfg.samples_per_class == 0 || cfg.input_dim == 0 {
        return Err(Error::Config(format!("invalid synthetic config {cfg:?}")));
    }
    let noise = Normal::new(0.0, cfg.sigma)
        .map_err(|_| Error::Config(format!("sigma {} must be >= 0", cfg.sigma)))?;
    let unit = Normal::new(0.0, 1.0).expect("valid");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n_train = cfg.num_classes / 2;
    let mut parts: [(Vec<f64>, Vec<String>); 2] = Default::default();
    for c in 0..cfg.num_classes {
        let direction = loop {
            let raw: Vec<f64> = (0..cfg.input_dim).map(|_| unit.sample(&mut rng)).collect();
            if let Ok(d) = l2_normalize(&raw) {
                break d;
            }
        };
        let part = &mut parts[usize::from(c >= n_train)];
        for _ in 0..cfg.samples_per_class {
            part.0.extend(direction.iter().map(|v| v + noise.sample(&mut rng)));
            part.1.push(c.to_string());
        }
    }
    let [(train_x, train_y), (test_x, test_y)] = parts;
    let train = Dataset::new(
        Matrix::from_vec(train_y.len(), cfg.input_dim, train_x)?,
        &train_y,
        Split::Train,
    )?;
    let test = Dataset::new(
        Matrix::from_vec(test_y.len(), cfg.input_dim, test_x)?,
        &test_y,
        Split::Test,
    )?;
    Ok((train, test))
}

pub fn save_features(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# n={} d={}", dataset.len(), dataset.dim())?;
    for (row, &label) in dataset.features.iter_rows().zip(&dataset.labels) {
        write!(w, "{}", dataset.class_names[label])?;
        for v in row {
            write!(w, ",{v:?}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_features_binary(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + dataset.features.as_slice().len() * 8);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(dataset.dim() as u64).to_le_bytes());
    buf.extend_from_slice(&(dataset.num_classes() as u64).to_le_bytes());
    for name in &dataset.class_names {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
    }
    for &l in &dataset.labels {
        buf.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for v in dataset.features.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Loads either format, detected by the leading magic bytes.
pub fn load_features(path: &Path, split: Split) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(FEATURE_MAGIC) {
        return parse_binary(&bytes, split);
    }
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("not UTF-8: {e}"),
    })?;
    parse_text(&text, split)
}

/// Loads a train/test pair and checks that they share no class.
pub fn load_split_pair(train: &Path, test: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_features(train, Split::Train)?;
    let test = load_features(test, Split::Test)?;
    if train.dim() != test.dim() {
        return Err(Error::DimMismatch {
            expected: train.dim(),
            found: test.dim(),
        });
    }
    check_disjoint(&train, &test)?;
    Ok((train, test))
}

fn parse_header(line: &str, lineno: usize) -> Result<(usize, usize)> {
    let mut n = None;
    let mut d = None;
    for tok in line.trim_start_matches('#').split_whitespace() {
        let (key, value) = tok.split_once('=').ok_or_else(|| Error::Parse {
            line: lineno,
            msg: format!("malformed header token {tok:?}"),
        })?;
        let value: usize = value.parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("header value {value:?} is not a count"),
        })?;
        match key {
            "n" => n = Some(value),
            "d" => d = Some(value),
            _ => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("unknown header key {key:?}"),
                })
            }
        }
    }
    match (n, d) {
        (Some(n), Some(d)) => Ok((n, d)),
        _ => Err(Error::Parse {
            line: lineno,
            msg: "header must give n and d".into(),
        }),
    }
}

fn parse_text(text: &str, split: Split) -> Result<Dataset> {
    let mut header = None;
    let mut dim = None;
    let mut values = Vec::new();
    let mut names = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            if line.contains('=') && header.is_none() && names.is_empty() {
                header = Some(parse_header(line, lineno)?);
            }
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label = fields.next().unwrap_or_default();
        if label.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                msg: "missing label".into(),
            });
        }
        let start = values.len();
        for f in fields {
            // also accept U+2212 MINUS SIGN
            let v: f64 = f.replace('\u{2212}', "-").parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("invalid number {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-finite value {f:?}"),
                });
            }
            values.push(v);
        }
        let found = values.len() - start;
        let expected = *dim.get_or_insert(header.map_or(found, |(_, d)| d));
        if found != expected || found == 0 {
            return Err(Error::DimInconsistent {
                line: lineno,
                expected,
                found,
            });
        }
        names.push(label.to_string());
    }

    if names.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "no samples".into(),
        });
    }
    if let Some((n, _)) = header {
        if n != names.len() {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header declares {n} rows, found {}", names.len()),
            });
        }
    }
    let dim = dim.expect("at least one row");
    Dataset::new(Matrix::from_vec(names.len(), dim, values)?, &names, split)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("truncated at byte offset {}", self.pos),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Parse {
            line: 0,
            msg: "count overflows usize".into(),
        })
    }
}

fn parse_binary(bytes: &[u8], split: Split) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: FEATURE_MAGIC.len() };
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let n = r.usize()?;
    let d = r.usize()?;
    let classes = r.usize()?;
    let mut class_names = Vec::with_capacity(classes.min(1 << 20));
    for _ in 0..classes {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Parse {
            line: 0,
            msg: "class name is not UTF-8".into(),
        })?;
        class_names.push(name.to_string());
    }
    let mut names = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let id = r.u32()? as usize;
        let name = class_names.get(id).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("label id {id} out of range"),
        })?;
        names.push(name.clone());
    }
    let payload = r.take(n.checked_mul(d).and_then(|v| v.checked_mul(8)).ok_or_else(|| {
        Error::Parse {
            line: 0,
            msg: "payload size overflows".into(),
        }
    })?)?;
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            line: 0,
            msg: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Dataset::new(Matrix::from_vec(n, d, values)?, &names, split)
}
