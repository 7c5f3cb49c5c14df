//! Datasets: IDX ingestion, synthetic generators, CSV exchange and splitting.
//!
//! A dataset carries its role in its type. `Dataset<InD>` may hold class
//! labels; `Dataset<Ood>` never does, and has no label accessor at all.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Marker for in-distribution data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InD;

/// Marker for out-of-distribution data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ood;

pub trait Role: fmt::Debug + Clone + Copy + Send + Sync + 'static {
    const NAME: &'static str;
}

impl Role for InD {
    const NAME: &'static str = "ind";
}

impl Role for Ood {
    const NAME: &'static str = "ood";
}

/// Affine map applied to raw values at load time: `x = raw * scale + shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub shift: f64,
}

impl Normalization {
    pub const IDENTITY: Self = Self { scale: 1.0, shift: 0.0 };
    pub const PIXEL: Self = Self {
        scale: 1.0 / 255.0,
        shift: 0.0,
    };
}

impl Default for Normalization {
    fn default() -> Self {
        Self::IDENTITY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<R> {
    features: Vec<f64>,
    dim: usize,
    labels: Option<Vec<usize>>,
    provenance: String,
    normalization: Normalization,
    role: PhantomData<R>,
}

impl<R: Role> Dataset<R> {
    pub(crate) fn build(
        features: Vec<f64>,
        dim: usize,
        labels: Option<Vec<usize>>,
        provenance: String,
        normalization: Normalization,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("feature dimension must be >= 1".into()));
        }
        if !features.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "{} feature values do not divide into rows of {dim}",
                features.len()
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite feature at row {}, column {}",
                i / dim,
                i % dim
            )));
        }
        if let Some(l) = &labels {
            if l.len() != features.len() / dim {
                return Err(Error::Dimension(format!(
                    "{} labels for {} rows",
                    l.len(),
                    features.len() / dim
                )));
            }
        }
        Ok(Self {
            features,
            dim,
            labels,
            provenance,
            normalization,
            role: PhantomData,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    /// Row-major `N × d` feature matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    fn subset(&self, idx: &[usize], tag: &str) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            dim: self.dim,
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            provenance: format!("{} [{tag}]", self.provenance),
            normalization: self.normalization,
            role: PhantomData,
        }
    }

    /// Writes one row per sample: `x0..x{d-1}` and, for labeled data, `label`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("x{j}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header).map_err(csv_error)?;
        let mut record = Vec::with_capacity(header.len());
        for (i, row) in self.rows().enumerate() {
            record.clear();
            record.extend(row.iter().map(|v| v.to_string()));
            if let Some(l) = &self.labels {
                record.push(l[i].to_string());
            }
            w.write_record(&record).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Dataset<InD> {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        labels: Option<Vec<usize>>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        Self::build(features, dim, labels, provenance.into(), Normalization::IDENTITY)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    /// `max label + 1`, or `None` for unlabeled data.
    pub fn classes(&self) -> Option<usize> {
        self.labels.as_ref().and_then(|l| l.iter().max().map(|m| m + 1))
    }

    /// Reinterprets the samples as OOD data, discarding any labels.
    pub fn into_ood(self) -> Dataset<Ood> {
        Dataset {
            features: self.features,
            dim: self.dim,
            labels: None,
            provenance: self.provenance,
            normalization: self.normalization,
            role: PhantomData,
        }
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let (features, dim, labels) = read_csv_rows(path.as_ref())?;
        Self::build(
            features,
            dim,
            labels,
            path.as_ref().display().to_string(),
            Normalization::IDENTITY,
        )
    }
}

impl Dataset<Ood> {
    pub fn new(features: Vec<f64>, dim: usize, provenance: impl Into<String>) -> Result<Self> {
        Self::build(features, dim, None, provenance.into(), Normalization::IDENTITY)
    }

    /// Reads a CSV file; a `label` column, if present, is dropped.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let (features, dim, _) = read_csv_rows(path.as_ref())?;
        Self::build(
            features,
            dim,
            None,
            path.as_ref().display().to_string(),
            Normalization::IDENTITY,
        )
    }
}

fn csv_error(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format(offset, format!("csv: {other:?}")),
    }
}

type CsvRows = (Vec<f64>, usize, Option<Vec<usize>>);

fn read_csv_rows(path: &Path) -> Result<CsvRows> {
    let mut r = csv::Reader::from_reader(File::open(path)?);
    let header = r.headers().map_err(csv_error)?.clone();
    let label_col = header.iter().position(|h| h == "label");
    if label_col.is_some_and(|c| c + 1 != header.len()) {
        return Err(Error::format(0, "the label column must be last"));
    }
    let dim = header.len() - usize::from(label_col.is_some());
    if dim == 0 {
        return Err(Error::format(0, "no feature columns"));
    }
    let mut features = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let offset = rec.position().map_or(0, |p| p.byte());
        for j in 0..dim {
            let v: f64 = rec[j]
                .trim()
                .parse()
                .map_err(|_| Error::format(offset, format!("bad number '{}'", &rec[j])))?;
            features.push(v);
        }
        if let Some(l) = labels.as_mut() {
            let s = rec[dim].trim();
            l.push(
                s.parse()
                    .map_err(|_| Error::format(offset, format!("bad label '{s}'")))?,
            );
        }
    }
    Ok((features, dim, labels))
}

/// A raw unsigned-byte IDX tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn magic(&self) -> u32 {
        0x0800 | self.dims.len() as u32
    }
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(0, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn read_be_u32(cur: &mut Cursor<&[u8]>, what: &str) -> Result<u32> {
    let offset = cur.position();
    cur.read_u32::<BigEndian>()
        .map_err(|_| Error::format(offset, format!("truncated while reading {what}")))
}

/// Parses an unsigned-byte IDX tensor with the expected magic number. Byte
/// offsets in errors refer to the decompressed stream.
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<IdxTensor> {
    let mut cur = Cursor::new(bytes);
    let magic = read_be_u32(&mut cur, "magic")?;
    if magic != expected_magic {
        return Err(Error::format(
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        let n = read_be_u32(&mut cur, &format!("dimension {d}"))?;
        dims.push(n as usize);
    }
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(4, "tensor size overflows"))?;
    let start = cur.position() as usize;
    let available = bytes.len() - start;
    if available < len {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: {available} of {len} bytes"),
        ));
    }
    if available > len {
        return Err(Error::format(
            (start + len) as u64,
            format!("{} trailing bytes", available - len),
        ));
    }
    Ok(IdxTensor {
        dims,
        data: bytes[start..].to_vec(),
    })
}

pub fn read_idx(path: impl AsRef<Path>, expected_magic: u32) -> Result<IdxTensor> {
    parse_idx(&read_maybe_gzip(path.as_ref())?, expected_magic)
}

/// Writes an uncompressed IDX file.
pub fn write_idx(path: impl AsRef<Path>, tensor: &IdxTensor) -> Result<()> {
    let expected: usize = tensor.dims.iter().product();
    if expected != tensor.data.len() || tensor.dims.len() > 255 {
        return Err(Error::Dimension(format!(
            "IDX dims {:?} do not match {} bytes",
            tensor.dims,
            tensor.data.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<BigEndian>(tensor.magic())?;
    for &d in &tensor.dims {
        let d = u32::try_from(d).map_err(|_| Error::Dimension(format!("IDX dimension {d} too large")))?;
        w.write_u32::<BigEndian>(d)?;
    }
    w.write_all(&tensor.data)?;
    w.flush()?;
    Ok(())
}

/// Loads an image/label IDX pair (optionally gzip-compressed) with pixels
/// scaled to `[0, 1]`.
pub fn load_idx_pair(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset<InD>> {
    let img = read_idx(images.as_ref(), IDX_IMAGES_MAGIC)?;
    let lab = read_idx(labels.as_ref(), IDX_LABELS_MAGIC)?;
    let n = img.dims[0];
    if lab.dims[0] != n {
        return Err(Error::format(
            4,
            format!("label count {} does not match image count {n}", lab.dims[0]),
        ));
    }
    let dim = img.dims[1] * img.dims[2];
    let norm = Normalization::PIXEL;
    let features = img
        .data
        .iter()
        .map(|&p| p as f64 * norm.scale + norm.shift)
        .collect();
    let labels = lab.data.iter().map(|&l| l as usize).collect();
    Dataset::<InD>::build(
        features,
        dim,
        Some(labels),
        images.as_ref().display().to_string(),
        norm,
    )
}

/// Per-feature standardization `(x - mean) / std`, fitted on InD data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviations; constant features get 1.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &Dataset<InD>) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Input("cannot standardize an empty dataset".into()));
        }
        let n = ds.len() as f64;
        let d = ds.dim();
        let mut mean = vec![0.0; d];
        for row in ds.rows() {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in ds.rows() {
            var.iter_mut()
                .zip(row.iter().zip(&mean))
                .for_each(|(v, (x, m))| *v += (x - m) * (x - m));
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply<R: Role>(&self, ds: &Dataset<R>) -> Result<Dataset<R>> {
        if ds.dim() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "standardizer fitted on {} features, data has {}",
                self.mean.len(),
                ds.dim()
            )));
        }
        let mut out = ds.clone();
        for row in out.features.chunks_exact_mut(ds.dim) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(out)
    }
}

/// Where a dataset comes from: a CSV file, or `idx:IMAGES,LABELS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Csv(PathBuf),
    Idx { images: PathBuf, labels: PathBuf },
}

impl std::str::FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("idx:") {
            Some(rest) => {
                let (images, labels) = rest
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("expected idx:IMAGES,LABELS, got '{s}'")))?;
                Ok(Self::Idx {
                    images: images.into(),
                    labels: labels.into(),
                })
            }
            None if s.is_empty() => Err(Error::Config("empty data source".into())),
            None => Ok(Self::Csv(s.into())),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Csv(p) => write!(f, "{}", p.display()),
            Self::Idx { images, labels } => {
                write!(f, "idx:{},{}", images.display(), labels.display())
            }
        }
    }
}

impl DataSource {
    pub fn load_ind(&self) -> Result<Dataset<InD>> {
        match self {
            Self::Csv(p) => Dataset::<InD>::read_csv(p),
            Self::Idx { images, labels } => load_idx_pair(images, labels),
        }
    }

    pub fn load_ood(&self) -> Result<Dataset<Ood>> {
        match self {
            Self::Csv(p) => Dataset::<Ood>::read_csv(p),
            Self::Idx { images, labels } => Ok(load_idx_pair(images, labels)?.into_ood()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    GaussianBlobs,
    Ring,
    ShiftedBlob,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" | "gaussianblobs" => Ok(Self::GaussianBlobs),
            "ring" => Ok(Self::Ring),
            "shifted" | "shiftedblob" => Ok(Self::ShiftedBlob),
            other => Err(Error::Config(format!("unknown synthetic kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub k: usize,
    /// Samples per class for blobs; total samples for the OOD kinds.
    pub n_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn blobs(k: usize, n_per_class: usize, dim: usize, seed: u64) -> Self {
        Self {
            kind: SyntheticKind::GaussianBlobs,
            k,
            n_per_class,
            dim,
            separation: 4.0,
            noise: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_per_class == 0 || self.dim == 0 {
            return Err(Error::Config(format!(
                "k, n and dim must be >= 1 (k={}, n={}, dim={})",
                self.k, self.n_per_class, self.dim
            )));
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return Err(Error::Config(format!(
                "separation must be > 0, got {}",
                self.separation
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(format!("noise must be >= 0, got {}", self.noise)));
        }
        if self.dim == 1 && self.k > 2 {
            return Err(Error::Config(format!(
                "{} classes cannot be given distinct directions in one dimension",
                self.k
            )));
        }
        Ok(())
    }
}

/// Unit direction of class `j`: evenly spaced angles in the plane of the
/// first two coordinates (`±1` in one dimension).
pub fn class_direction(j: usize, k: usize, dim: usize) -> Vec<f64> {
    let mut u = vec![0.0; dim];
    if dim == 1 {
        u[0] = if j == 0 { 1.0 } else { -1.0 };
    } else {
        let angle = std::f64::consts::TAU * j as f64 / k as f64;
        u[0] = angle.cos();
        u[1] = angle.sin();
    }
    u
}

/// Class centers of the blob layout, `separation · direction`.
pub fn blob_centers(k: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|j| class_direction(j, k, dim).into_iter().map(|x| x * separation).collect())
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws labeled blobs, class-major.
pub fn synth_blobs(spec: &SyntheticSpec) -> Result<Dataset<InD>> {
    spec.validate()?;
    if spec.kind != SyntheticKind::GaussianBlobs {
        return Err(Error::Config(format!("{:?} data is OOD; use synth_ood", spec.kind)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers = blob_centers(spec.k, spec.dim, spec.separation);
    let mut features = Vec::with_capacity(spec.k * spec.n_per_class * spec.dim);
    let mut labels = Vec::with_capacity(spec.k * spec.n_per_class);
    for (class, c) in centers.iter().enumerate() {
        for _ in 0..spec.n_per_class {
            features.extend(c.iter().map(|&m| m + spec.noise * gaussian(&mut rng)));
            labels.push(class);
        }
    }
    Dataset::<InD>::build(
        features,
        spec.dim,
        Some(labels),
        format!("{spec:?}"),
        Normalization::IDENTITY,
    )
}

/// Draws unlabeled OOD points.
///
/// - Ring: radius `separation + noise·z` in a uniformly random direction,
///   around the centroid of the blob layout (the origin for `k >= 2`, or the
///   first class direction for `k == 1`).
/// - ShiftedBlob: one Gaussian at `3·separation` along the bisector of the
///   first two class directions.
pub fn synth_ood(spec: &SyntheticSpec) -> Result<Dataset<Ood>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let mut features = Vec::with_capacity(spec.n_per_class * d);
    match spec.kind {
        SyntheticKind::GaussianBlobs => {
            return Err(Error::Config("blobs are InD data; use synth_blobs".into()));
        }
        SyntheticKind::Ring => {
            let centroid = if spec.k == 1 {
                class_direction(0, 1, d)
            } else {
                vec![0.0; d]
            };
            for _ in 0..spec.n_per_class {
                let mut dir: Vec<f64> = (0..d).map(|_| gaussian(&mut rng)).collect();
                let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    dir = class_direction(0, 1, d);
                } else {
                    dir.iter_mut().for_each(|x| *x /= norm);
                }
                let r = spec.separation + spec.noise * gaussian(&mut rng);
                features.extend(dir.iter().zip(&centroid).map(|(u, c)| c + r * u));
            }
        }
        SyntheticKind::ShiftedBlob => {
            let mut axis = vec![0.0; d];
            if d == 1 {
                axis[0] = 1.0;
            } else {
                let angle = std::f64::consts::PI / spec.k as f64;
                axis[0] = angle.cos();
                axis[1] = angle.sin();
            }
            for _ in 0..spec.n_per_class {
                features.extend(
                    axis.iter()
                        .map(|&a| 3.0 * spec.separation * a + spec.noise * gaussian(&mut rng)),
                );
            }
        }
    }
    Dataset::<Ood>::build(features, d, None, format!("{spec:?}"), Normalization::IDENTITY)
}

/// Largest-remainder allocation of `n` items over `fractions`.
fn allocate(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = (e + 1e-9).floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Splits into `(train, calibration, test)`.
///
/// Labeled data is stratified: every class is split on its own, and each
/// part must receive at least one sample of every class. Within each part,
/// samples keep their original order.
pub fn split<R: Role>(
    ds: &Dataset<R>,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Dataset<R>, Dataset<R>, Dataset<R>)> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Config(format!("split fractions must be > 0, got {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {total}, not 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match &ds.labels {
        Some(labels) => {
            let k = labels.iter().max().map_or(0, |m| m + 1);
            let mut g = vec![Vec::new(); k];
            for (i, &l) in labels.iter().enumerate() {
                g[l].push(i);
            }
            g.retain(|v| !v.is_empty());
            g
        }
        None => vec![(0..ds.len()).collect()],
    };
    let mut parts: [Vec<usize>; 3] = Default::default();
    for mut group in groups {
        let counts = allocate(group.len(), &fractions);
        if counts.contains(&0) {
            let what = match &ds.labels {
                Some(l) => format!("class {}", l[group[0]]),
                None => "the dataset".to_string(),
            };
            return Err(Error::Config(format!(
                "cannot split {what} ({} samples) into parts {counts:?}",
                group.len()
            )));
        }
        group.shuffle(&mut rng);
        let mut start = 0;
        for (part, c) in parts.iter_mut().zip(counts) {
            part.extend_from_slice(&group[start..start + c]);
            start += c;
        }
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok((
        ds.subset(&parts[0], "train"),
        ds.subset(&parts[1], "calibration"),
        ds.subset(&parts[2], "test"),
    ))
}

/// Splits off a fraction of the samples, e.g. a calibration set, returning
/// `(rest, held_out)`. Stratified like [`split`].
pub fn hold_out<R: Role>(ds: &Dataset<R>, fraction: f64, seed: u64) -> Result<(Dataset<R>, Dataset<R>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("hold-out fraction must be in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match &ds.labels {
        Some(labels) => {
            let k = labels.iter().max().map_or(0, |m| m + 1);
            let mut g = vec![Vec::new(); k];
            for (i, &l) in labels.iter().enumerate() {
                g[l].push(i);
            }
            g.retain(|v| !v.is_empty());
            g
        }
        None => vec![(0..ds.len()).collect()],
    };
    let mut rest = Vec::new();
    let mut held = Vec::new();
    for mut group in groups {
        if group.len() < 2 {
            return Err(Error::Config(format!(
                "cannot hold out from a group of {} sample(s)",
                group.len()
            )));
        }
        let h = ((group.len() as f64 * fraction).round() as usize).clamp(1, group.len() - 1);
        group.shuffle(&mut rng);
        held.extend_from_slice(&group[..h]);
        rest.extend_from_slice(&group[h..]);
    }
    rest.sort_unstable();
    held.sort_unstable();
    Ok((ds.subset(&rest, "rest"), ds.subset(&held, "held-out")))
}
