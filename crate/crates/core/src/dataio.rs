//! Dataset ingestion: MNIST IDX files, precomputed feature files,
//! normalization and one-class-per-batch streams.
//!
//! Feature file layout (little-endian):
//!
//! ```text
//! "OVAFEAT1"  8 bytes
//! version     u16 = 1
//! count       u64
//! dim         u32
//! count x { label i32, dim x f32 }
//! ```

use std::collections::{BTreeSet, HashSet};
use std::path::Path;
use std::str::FromStr;

use crate::codec::{self, ByteReader};
use crate::error::{Error, Result};
use crate::numkit::{Rng, Vector};
use crate::ClassId;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const FEATURE_MAGIC: &[u8; 8] = b"OVAFEAT1";
pub const FEATURE_VERSION: u16 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetMeta {
    /// `(rows, cols)` when the vectors came from IDX images.
    pub image_shape: Option<(u32, u32)>,
    /// A zero coordinate was appended to make the dimension even.
    pub padded: bool,
}

/// Parallel arrays of vectors and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVectors {
    dim: usize,
    vectors: Vec<Vector>,
    labels: Vec<ClassId>,
    pub meta: DatasetMeta,
}

impl LabeledVectors {
    pub fn new(dim: usize, vectors: Vec<Vector>, labels: Vec<ClassId>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::dim("LabeledVectors::new", vectors.len(), labels.len()));
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
            return Err(Error::dim("LabeledVectors::new", dim, v.len()));
        }
        Ok(Self {
            dim,
            vectors,
            labels,
            meta: DatasetMeta::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn vectors(&self) -> &[Vector] {
        &self.vectors
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vector, ClassId)> {
        self.vectors.iter().zip(self.labels.iter().copied())
    }

    /// Distinct labels, ascending.
    pub fn classes(&self) -> Vec<ClassId> {
        self.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    fn select(&self, mut keep: impl FnMut(usize, ClassId) -> bool) -> Self {
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for (i, (v, y)) in self.iter().enumerate() {
            if keep(i, y) {
                vectors.push(v.clone());
                labels.push(y);
            }
        }
        Self {
            dim: self.dim,
            vectors,
            labels,
            meta: self.meta.clone(),
        }
    }

    /// Samples whose label is in `classes`, in dataset order.
    pub fn filter_classes(&self, classes: &[ClassId]) -> Self {
        let wanted: HashSet<ClassId> = classes.iter().copied().collect();
        self.select(|_, y| wanted.contains(&y))
    }

    /// Keeps at most the first `max` samples of every class.
    pub fn take_per_class(&self, max: usize) -> Self {
        let mut seen = std::collections::HashMap::new();
        self.select(|_, y| {
            let n = seen.entry(y).or_insert(0usize);
            *n += 1;
            *n <= max
        })
    }
}

fn parse_idx_images(bytes: &[u8], context: &str) -> Result<(Vec<Vector>, (u32, u32))> {
    let mut r = ByteReader::new(bytes, context);
    let magic = r.u32_be("magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(r.error(0, format!("bad IDX image magic {magic:#010x}")));
    }
    let count = r.u32_be("image count")? as usize;
    let rows = r.u32_be("row count")?;
    let cols = r.u32_be("column count")?;
    let dim = rows as usize * cols as usize;
    if dim == 0 {
        return Err(r.error(8, "zero-sized images"));
    }
    let mut vectors = Vec::with_capacity(count);
    for i in 0..count {
        let px = r.take(dim, &format!("image {i}"))?;
        vectors.push(px.iter().map(|&b| f64::from(b)).collect::<Vec<_>>().into());
    }
    r.finish()?;
    Ok((vectors, (rows, cols)))
}

fn parse_idx_labels(bytes: &[u8], context: &str) -> Result<Vec<ClassId>> {
    let mut r = ByteReader::new(bytes, context);
    let magic = r.u32_be("magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(r.error(0, format!("bad IDX label magic {magic:#010x}")));
    }
    let count = r.u32_be("label count")? as usize;
    let labels = r.take(count, "labels")?;
    r.finish()?;
    Ok(labels.iter().map(|&b| ClassId::from(b)).collect())
}

/// Reads an IDX image/label pair. Pixels stay in `0..=255`.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabeledVectors> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let image_ctx = images.display().to_string();
    let label_ctx = labels.display().to_string();
    let (vectors, shape) = parse_idx_images(&codec::read_file(images)?, &image_ctx)?;
    let labels = parse_idx_labels(&codec::read_file(labels)?, &label_ctx)?;
    if vectors.len() != labels.len() {
        return Err(Error::format(
            format!("{image_ctx} / {label_ctx}"),
            4,
            format!("{} images but {} labels", vectors.len(), labels.len()),
        ));
    }
    let dim = shape.0 as usize * shape.1 as usize;
    let mut ds = LabeledVectors::new(dim, vectors, labels)?;
    ds.meta.image_shape = Some(shape);
    Ok(ds)
}

/// Encodes a dataset back into IDX image and label bytes. Every value must
/// be an integer in `0..=255`, and labels must fit a byte.
pub fn encode_mnist_idx(ds: &LabeledVectors) -> Result<(Vec<u8>, Vec<u8>)> {
    let (rows, cols) = ds
        .meta
        .image_shape
        .ok_or_else(|| Error::Config("dataset has no image shape".into()))?;
    if ds.meta.padded || rows as usize * cols as usize != ds.dim {
        return Err(Error::Config("dataset dimension no longer matches its image shape".into()));
    }
    let count = u32::try_from(ds.len()).map_err(|_| Error::Config("too many samples for IDX".into()))?;
    let mut images = Vec::with_capacity(16 + ds.len() * ds.dim);
    for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    for v in &ds.vectors {
        for &x in v.iter() {
            if x.fract() != 0.0 || !(0.0..=255.0).contains(&x) {
                return Err(Error::Config(format!("pixel value {x} is not a byte")));
            }
            images.push(x as u8);
        }
    }
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&count.to_be_bytes());
    for &y in &ds.labels {
        labels.push(u8::try_from(y).map_err(|_| Error::Config(format!("label {y} does not fit a byte")))?);
    }
    Ok((images, labels))
}

pub fn write_mnist_idx(
    ds: &LabeledVectors,
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<()> {
    let (img, lab) = encode_mnist_idx(ds)?;
    codec::write_file(images.as_ref(), &img)?;
    codec::write_file(labels.as_ref(), &lab)
}

pub fn decode_features(bytes: &[u8], context: &str) -> Result<LabeledVectors> {
    let mut r = ByteReader::new(bytes, context);
    let magic = r.take(8, "magic")?;
    if magic != FEATURE_MAGIC {
        return Err(r.error(0, "bad feature-file magic"));
    }
    let version = r.u16_le("version")?;
    if version != FEATURE_VERSION {
        return Err(r.error(8, format!("unsupported feature-file version {version}")));
    }
    let count = r.u64_le("record count")?;
    let dim = r.u32_le("dimension")? as usize;
    if dim == 0 {
        return Err(r.error(18, "zero feature dimension"));
    }
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for i in 0..count {
        let at = r.pos();
        let label = r.i32_le(&format!("label of record {i}"))?;
        let label = ClassId::try_from(label).map_err(|_| r.error(at, format!("negative label {label}")))?;
        vectors.push(r.f32s_le(dim, &format!("features of record {i}"))?.into());
        labels.push(label);
    }
    r.finish()?;
    LabeledVectors::new(dim, vectors, labels)
}

pub fn encode_features(ds: &LabeledVectors) -> Result<Vec<u8>> {
    let dim = u32::try_from(ds.dim).map_err(|_| Error::Config("dimension too large".into()))?;
    let mut out = Vec::with_capacity(22 + ds.len() * (4 + 4 * ds.dim));
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for (v, y) in ds.iter() {
        let label = i32::try_from(y).map_err(|_| Error::Config(format!("label {y} exceeds i32")))?;
        out.extend_from_slice(&label.to_le_bytes());
        codec::put_f32s(&mut out, v);
    }
    Ok(out)
}

/// Reads an `OVAFEAT1` file of precomputed feature vectors.
pub fn load_feature_file(path: impl AsRef<Path>) -> Result<LabeledVectors> {
    let path = path.as_ref();
    decode_features(&codec::read_file(path)?, &path.display().to_string())
}

pub fn write_feature_file(ds: &LabeledVectors, path: impl AsRef<Path>) -> Result<()> {
    codec::write_file(path.as_ref(), &encode_features(ds)?)
}

/// Class-agnostic elementwise input scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    None,
    /// Divide by 255.
    Scale255,
    /// `(x - shift) / scale`
    Affine { shift: f64, scale: f64 },
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if let Normalization::Affine { shift, scale } = *self {
            if scale == 0.0 || !scale.is_finite() || !shift.is_finite() {
                return Err(Error::Config(format!(
                    "affine normalization needs a finite non-zero scale, got shift {shift}, scale {scale}"
                )));
            }
        }
        Ok(())
    }

    pub fn apply_in_place(&self, v: &mut [f64]) {
        match *self {
            Normalization::None => {}
            Normalization::Scale255 => v.iter_mut().for_each(|x| *x /= 255.0),
            Normalization::Affine { shift, scale } => {
                v.iter_mut().for_each(|x| *x = (*x - shift) / scale)
            }
        }
    }
}

impl FromStr for Normalization {
    type Err = Error;

    /// `none`, `scale_255`, or `affine:SHIFT,SCALE`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let scheme = match s.to_ascii_lowercase().as_str() {
            "none" => Normalization::None,
            "scale_255" | "scale255" | "scale-255" => Normalization::Scale255,
            other => {
                let args = other
                    .strip_prefix("affine:")
                    .or_else(|| other.strip_prefix("affine="))
                    .ok_or_else(|| Error::Config(format!("unknown normalization '{s}'")))?;
                let (shift, scale) = args
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("affine needs SHIFT,SCALE, got '{args}'")))?;
                let num = |t: &str| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad number '{t}' in '{s}'")))
                };
                Normalization::Affine {
                    shift: num(shift)?,
                    scale: num(scale)?,
                }
            }
        };
        scheme.validate()?;
        Ok(scheme)
    }
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Normalization::None => f.write_str("none"),
            Normalization::Scale255 => f.write_str("scale_255"),
            Normalization::Affine { shift, scale } => write!(f, "affine:{shift},{scale}"),
        }
    }
}

pub fn normalize(mut ds: LabeledVectors, scheme: Normalization) -> Result<LabeledVectors> {
    scheme.validate()?;
    for v in &mut ds.vectors {
        scheme.apply_in_place(v);
    }
    Ok(ds)
}

/// Adds `U[0, 1)` noise to every coordinate (before scaling byte data).
pub fn dequantize(mut ds: LabeledVectors, rng: &mut Rng) -> LabeledVectors {
    for v in &mut ds.vectors {
        v.iter_mut().for_each(|x| *x += rng.next_f64());
    }
    ds
}

/// Appends a constant zero coordinate when the dimension is odd.
pub fn pad_to_even(mut ds: LabeledVectors) -> LabeledVectors {
    if ds.dim.is_multiple_of(2) {
        return ds;
    }
    for v in &mut ds.vectors {
        let mut inner = std::mem::take(v).into_inner();
        inner.push(0.0);
        *v = inner.into();
    }
    ds.dim += 1;
    ds.meta.padded = true;
    ds
}

/// One batch per class, in presentation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStream {
    pub batches: Vec<(ClassId, LabeledVectors)>,
}

impl ClassStream {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn class_order(&self) -> Vec<ClassId> {
        self.batches.iter().map(|(c, _)| *c).collect()
    }
}

pub fn make_class_stream(ds: &LabeledVectors, class_order: &[ClassId]) -> Result<ClassStream> {
    let present: HashSet<ClassId> = ds.labels.iter().copied().collect();
    let mut seen = HashSet::new();
    for &c in class_order {
        if !seen.insert(c) {
            return Err(Error::Config(format!("class {c} appears twice in the class order")));
        }
        if !present.contains(&c) {
            return Err(Error::Config(format!("class {c} has no samples in the dataset")));
        }
    }
    let batches = class_order
        .iter()
        .map(|&c| (c, ds.select(|_, y| y == c)))
        .collect();
    Ok(ClassStream { batches })
}
