//! Dataset loading, normalization, subsampling and persistence.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::ModelContainer;
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Instances in `[0, 1]^d` with class labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    instances: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    /// Builds a dataset; `num_classes` is inferred as `max(label) + 1`.
    pub fn new(instances: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::with_classes(instances, labels, num_classes)
    }

    pub fn with_classes(instances: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if instances.nrows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} instances but {} labels",
                instances.nrows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Consistency(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if let Some(v) = instances.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Consistency(format!("instance value {v} outside [0, 1]")));
        }
        Ok(Self {
            instances,
            labels,
            num_classes,
        })
    }

    pub fn instances(&self) -> &Array2<f64> {
        &self.instances
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.instances.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            instances: self.instances.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Deterministic head/tail split: the first `n` rows and the rest.
    ///
    /// `split_first(50_000)` on the 60,000-image MNIST training file gives the
    /// conventional 50,000 train / 10,000 validation partition.
    pub fn split_first(&self, n: usize) -> Result<(Self, Self)> {
        if n > self.len() {
            return Err(Error::Argument(format!("cannot split {} rows at {n}", self.len())));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        Ok((self.select(&head), self.select(&tail)))
    }

    pub fn to_container(&self) -> Result<ModelContainer> {
        let mut c = ModelContainer::new();
        c.push("instances", self.instances.clone())?;
        let labels = Array1::from_iter(self.labels.iter().map(|&l| l as f64));
        c.push_vector("labels", &labels)?;
        c.push_scalar("num_classes", self.num_classes as f64)?;
        Ok(c)
    }

    pub fn from_container(c: &ModelContainer) -> Result<Self> {
        let instances = c.require("instances")?.clone();
        let labels = c
            .vector("labels")?
            .iter()
            .map(|&v| as_index(v, "label"))
            .collect::<Result<Vec<_>>>()?;
        let num_classes = as_index(c.scalar("num_classes")?, "num_classes")?;
        Self::with_classes(instances, labels, num_classes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&ModelContainer::load(path)?)
    }
}

pub(crate) fn as_index(v: f64, what: &str) -> Result<usize> {
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < 9.007_199_254_740_992e15 {
        Ok(v as usize)
    } else {
        Err(Error::Format(format!("{what} {v} is not a non-negative integer")))
    }
}

/// Reads a file, transparently inflating gzip content.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct IdxHeader {
    dims: Vec<usize>,
    payload_offset: usize,
}

fn parse_idx_header(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<IdxHeader> {
    let truncated = || {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "truncated IDX header"),
        )
    };
    if bytes.len() < 4 {
        return Err(truncated());
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    if magic != expected_magic {
        return Err(Error::Format(format!(
            "{}: magic {magic:#010x}, expected {expected_magic:#010x}",
            path.display()
        )));
    }
    let ndims = (magic & 0xff) as usize;
    let payload_offset = 4 + 4 * ndims;
    if bytes.len() < payload_offset {
        return Err(truncated());
    }
    let dims = (0..ndims)
        .map(|k| u32::from_be_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().expect("4 bytes")) as usize)
        .collect();
    Ok(IdxHeader { dims, payload_offset })
}

/// Loads an IDX image/label pair (MNIST layout). Gzipped files are accepted.
pub fn load_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let image_path = image_path.as_ref();
    let label_path = label_path.as_ref();
    let images = read_maybe_gz(image_path)?;
    let labels = read_maybe_gz(label_path)?;

    let ih = parse_idx_header(&images, IDX_IMAGES_MAGIC, image_path)?;
    let lh = parse_idx_header(&labels, IDX_LABELS_MAGIC, label_path)?;
    let n = ih.dims[0];
    if lh.dims[0] != n {
        return Err(Error::Consistency(format!(
            "{} holds {n} images but {} holds {} labels",
            image_path.display(),
            label_path.display(),
            lh.dims[0]
        )));
    }
    let d = ih.dims[1] * ih.dims[2];
    let pixels = &images[ih.payload_offset..];
    let label_bytes = &labels[lh.payload_offset..];
    if pixels.len() < n * d {
        return Err(Error::io(
            image_path,
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("payload has {} bytes, header promises {}", pixels.len(), n * d),
            ),
        ));
    }
    if label_bytes.len() < n {
        return Err(Error::io(
            label_path,
            std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                format!("payload has {} bytes, header promises {n}", label_bytes.len()),
            ),
        ));
    }
    let instances = Array2::from_shape_fn((n, d), |(i, j)| f64::from(pixels[i * d + j]) / 255.0);
    let labels = label_bytes[..n].iter().map(|&b| b as usize).collect();
    LabeledDataset::new(instances, labels)
}

/// Writes an IDX pair (uncompressed); pixel values are rounded to bytes.
pub fn write_idx(
    ds: &LabeledDataset,
    rows: usize,
    cols: usize,
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != ds.dim() {
        return Err(Error::Argument(format!(
            "{rows}x{cols} images do not match dimension {}",
            ds.dim()
        )));
    }
    if ds.num_classes() > 256 {
        return Err(Error::Argument("IDX labels hold at most 256 classes".into()));
    }
    let n = ds.len() as u32;
    let mut img = Vec::with_capacity(16 + ds.len() * ds.dim());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [n, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(ds.instances().iter().map(|&v| (v * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&n.to_be_bytes());
    lab.extend(ds.labels().iter().map(|&l| l as u8));
    let (ip, lp) = (image_path.as_ref(), label_path.as_ref());
    fs::write(ip, img).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lab).map_err(|e| Error::io(lp, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    Last,
    None,
}

/// Parses a whitespace-separated matrix, one instance per line.
///
/// Values already inside `[0, 1]` are kept as is; otherwise the whole matrix is
/// min-max rescaled. With [`LabelColumn::None`] every label is 0.
pub fn load_text_matrix(path: impl AsRef<Path>, label_column: LabelColumn) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_text_matrix(&text, label_column)
}

pub fn parse_text_matrix(text: &str, label_column: LabelColumn) -> Result<LabeledDataset> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        match width {
            None => width = Some(tokens.len()),
            Some(w) if w != tokens.len() => {
                return Err(Error::Format(format!(
                    "line {line_no} has {} columns, expected {w}",
                    tokens.len()
                )))
            }
            _ => {}
        }
        let mut row = tokens
            .iter()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("`{t}` is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("non-finite value {bad}"),
            });
        }
        if label_column == LabelColumn::Last {
            let raw = row
                .pop()
                .ok_or_else(|| Error::Format(format!("line {line_no} is empty")))?;
            let label = as_index(raw, "label").map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("label {raw} is not a non-negative integer"),
            })?;
            labels.push(label);
        } else {
            labels.push(0);
        }
        values.extend(row);
    }
    let n = labels.len();
    let d = values.len().checked_div(n).unwrap_or(0);
    let mut instances = Array2::from_shape_vec((n, d), values).expect("row widths checked while parsing");
    rescale_to_unit(&mut instances);
    LabeledDataset::new(instances, labels)
}

/// Global min-max rescale, applied only when some value lies outside `[0, 1]`.
fn rescale_to_unit(m: &mut Array2<f64>) {
    let (lo, hi) = m.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if m.is_empty() || (lo >= 0.0 && hi <= 1.0) {
        return;
    }
    let span = hi - lo;
    if span == 0.0 {
        m.fill(0.0);
    } else {
        m.mapv_inplace(|v| ((v - lo) / span).clamp(0.0, 1.0));
    }
}

/// Draws `n` rows without replacement, stratified by label.
///
/// Each class receives `floor(n * count_c / N)` rows; the remaining rows go to
/// the classes with the largest fractional remainders (ties to lower class id).
/// The output is shuffled and fully determined by `seed`.
pub fn subsample(ds: &LabeledDataset, n: usize, seed: u64) -> Result<LabeledDataset> {
    let total = ds.len();
    if n > total {
        return Err(Error::Argument(format!("cannot draw {n} rows from {total}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }

    let mut quotas: Vec<(usize, usize, u128)> = by_class
        .iter()
        .map(|(&c, rows)| {
            let exact = n as u128 * rows.len() as u128;
            let floor = (exact / total as u128) as usize;
            (c, floor, exact % total as u128)
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.cmp(&quotas[a].2).then(quotas[a].0.cmp(&quotas[b].0)));
    for &k in order.iter().take(n - assigned) {
        quotas[k].1 += 1;
    }

    let mut picked = Vec::with_capacity(n);
    for (c, quota, _) in quotas {
        let mut rows = by_class[&c].clone();
        rows.shuffle(&mut rng);
        picked.extend_from_slice(&rows[..quota]);
    }
    picked.shuffle(&mut rng);
    Ok(ds.select(&picked))
}
