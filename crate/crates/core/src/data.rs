//! IDX ingestion, downscaling, binary filtering and stratified subsampling.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::substream;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Overrides the directory searched by [`data_dir`].
pub const DATA_DIR_ENV: &str = "QSTEER_DATA_DIR";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX data: header promises {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("expected a {expected}×{expected} image, got {got} pixels")]
    Shape { expected: usize, got: usize },
    #[error("class {0} does not occur in the set")]
    MissingClass(u8),
    #[error("binary filter needs two distinct classes, got {0} twice")]
    SameClass(u8),
    #[error("cannot take {requested} samples from a set of {available}")]
    TooMany { requested: usize, available: usize },
    #[error("no file for {0} in {1}")]
    NotFound(String, PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    Mnist,
    FashionMnist,
    Kmnist,
}

impl Dataset {
    pub const ALL: [Dataset; 3] = [Dataset::Mnist, Dataset::FashionMnist, Dataset::Kmnist];

    pub fn dir_name(&self) -> &'static str {
        match self {
            Dataset::Mnist => "mnist",
            Dataset::FashionMnist => "fashion-mnist",
            Dataset::Kmnist => "kmnist",
        }
    }
}

impl std::fmt::Display for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_prefix(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Where a set came from and what has been done to it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: Option<Dataset>,
    pub split: Option<Split>,
    pub source: Option<String>,
    pub classes: Option<[u8; 2]>,
    pub subsample: Option<usize>,
    pub seed: Option<u64>,
    pub downscale: Option<String>,
}

/// Square grayscale images, row-major, pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    side: usize,
    images: Vec<Vec<f64>>,
    labels: Vec<u8>,
    provenance: Provenance,
}

impl ImageSet {
    pub fn new(side: usize, images: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self, DataError> {
        if images.len() != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        if let Some(bad) = images.iter().find(|im| im.len() != side * side) {
            return Err(DataError::Shape {
                expected: side,
                got: bad.len(),
            });
        }
        Ok(Self {
            side,
            images,
            labels,
            provenance: Provenance::default(),
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &[Vec<f64>] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i]
    }

    /// Number of samples per label, ascending by label.
    pub fn class_counts(&self) -> BTreeMap<u8, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    /// The samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ImageSet {
        ImageSet {
            side: self.side,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// First `n` samples (or all if fewer).
    pub fn head(&self, n: usize) -> ImageSet {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    /// Every image downscaled from 28×28 to 16×16.
    pub fn downscaled_16(&self) -> Result<ImageSet, DataError> {
        let images = self
            .images
            .iter()
            .map(|im| downscale_16(im))
            .collect::<Result<Vec<_>, _>>()?;
        let mut provenance = self.provenance.clone();
        provenance.downscale = Some("area-average 28x28 -> 16x16".into());
        Ok(ImageSet {
            side: 16,
            images,
            labels: self.labels.clone(),
            provenance,
        })
    }

    /// SHA-256 over side, labels and the little-endian bits of every pixel.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.side as u64).to_le_bytes());
        h.update(&self.labels);
        for im in &self.images {
            for p in im {
                h.update(p.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn write_provenance(&self, path: &Path) -> Result<(), DataError> {
        let sidecar = serde_json::json!({
            "provenance": self.provenance,
            "len": self.len(),
            "side": self.side,
            "class_counts": self.class_counts(),
            "checksum": self.checksum(),
        });
        let text = serde_json::to_string_pretty(&sidecar).expect("provenance serializes");
        fs::write(path, text).map_err(io_err(path))
    }
}

/// Reads a file, transparently gunzipping it when it starts with the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let raw = fs::read(path).map_err(io_err(path))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io_err(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DataError::Truncated {
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX image file body into `(rows, cols, raw pixels per image)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<u8>>), DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let expected = 16 + n * size;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let images = bytes[16..expected].chunks(size).map(<[u8]>::to_vec).collect();
    Ok((rows, cols, images))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Reads an IDX label file (raw or gzip).
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    parse_idx_labels(&read_maybe_gz(path)?)
}

/// Loads an image/label IDX pair. Either file may be gzip-compressed.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ImageSet, DataError> {
    let (rows, cols, raw) = parse_idx_images(&read_maybe_gz(images_path)?)?;
    let labels = read_idx_labels(labels_path)?;
    if raw.len() != labels.len() {
        return Err(DataError::CountMismatch {
            images: raw.len(),
            labels: labels.len(),
        });
    }
    if rows != cols {
        return Err(DataError::Shape {
            expected: rows,
            got: rows * cols,
        });
    }
    let images = raw
        .into_iter()
        .map(|im| im.into_iter().map(|p| f64::from(p) / 255.0).collect())
        .collect();
    Ok(ImageSet::new(rows, images, labels)?.with_provenance(Provenance {
        source: Some(images_path.display().to_string()),
        ..Provenance::default()
    }))
}

pub fn encode_idx_images(side: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * side * side);
    for word in [IMAGES_MAGIC, images.len() as u32, side as u32, side as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    for im in images {
        out.extend_from_slice(im);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Writes `bytes` to `path`, gzip-compressed when the name ends in `.gz`.
pub fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    if path.extension().is_some_and(|e| e == "gz") {
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut enc = GzEncoder::new(file, Compression::best());
        enc.write_all(bytes).map_err(io_err(path))?;
        enc.finish().map_err(io_err(path))?;
        Ok(())
    } else {
        fs::write(path, bytes).map_err(io_err(path))
    }
}

/// Area-weighted resampling of a square image from `from` to `to` pixels
/// per side. Each output pixel is the mean over its `from/to`-wide source
/// footprint, counting partially covered source pixels by overlap.
pub fn downscale(image: &[f64], from: usize, to: usize) -> Result<Vec<f64>, DataError> {
    if image.len() != from * from {
        return Err(DataError::Shape {
            expected: from,
            got: image.len(),
        });
    }
    let w = area_weights(from, to);
    let mut tmp = vec![0.0; to * from];
    for (r, wr) in w.iter().enumerate() {
        for &(s, a) in wr {
            for c in 0..from {
                tmp[r * from + c] += a * image[s * from + c];
            }
        }
    }
    let mut out = vec![0.0; to * to];
    for r in 0..to {
        for (c, wc) in w.iter().enumerate() {
            out[r * to + c] = wc.iter().map(|&(s, a)| a * tmp[r * from + s]).sum::<f64>();
        }
    }
    for p in &mut out {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Sparse 1-D weights: for each output index the covered source indices
/// with overlap fractions normalized to sum to 1.
fn area_weights(from: usize, to: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = from as f64 / to as f64;
    (0..to)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            (lo.floor() as usize..(hi.ceil() as usize).min(from))
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap / scale))
                })
                .collect()
        })
        .collect()
}

pub fn downscale_16(image: &[f64]) -> Result<Vec<f64>, DataError> {
    downscale(image, 28, 16)
}

/// Keeps classes `a` and `b`, relabelled `a → 0`, `b → 1`, in source order.
pub fn filter_binary(set: &ImageSet, a: u8, b: u8) -> Result<ImageSet, DataError> {
    if a == b {
        return Err(DataError::SameClass(a));
    }
    let counts = set.class_counts();
    for c in [a, b] {
        if !counts.contains_key(&c) {
            return Err(DataError::MissingClass(c));
        }
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (im, &l) in set.images.iter().zip(&set.labels) {
        if l == a || l == b {
            images.push(im.clone());
            labels.push(u8::from(l == b));
        }
    }
    let mut provenance = set.provenance.clone();
    provenance.classes = Some(match provenance.classes {
        // already binary: the new labels refer to the old binary ones
        Some(prev) => [prev[a as usize], prev[b as usize]],
        None => [a, b],
    });
    Ok(ImageSet {
        side: set.side,
        images,
        labels,
        provenance,
    })
}

/// Seeded class-stratified draw of `n` indices, returned in source order.
/// Classes get `n / k` each with the remainder going to the lowest labels;
/// a class that is too small gives its shortfall to the others.
pub fn stratified_indices(labels: &[u8], n: usize, seed: u64) -> Result<Vec<usize>, DataError> {
    if n > labels.len() {
        return Err(DataError::TooMany {
            requested: n,
            available: labels.len(),
        });
    }
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
    let quota = allocate(&sizes, n);
    let mut rng = substream(seed, "subsample");
    let mut chosen = Vec::with_capacity(n);
    for (members, q) in by_class.into_values().zip(quota) {
        let mut members = members;
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..q]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

fn allocate(sizes: &[usize], n: usize) -> Vec<usize> {
    let mut quota = vec![0; sizes.len()];
    let mut left = n;
    loop {
        let open: Vec<usize> = (0..sizes.len()).filter(|&i| quota[i] < sizes[i]).collect();
        if left == 0 || open.is_empty() {
            return quota;
        }
        let (share, extra) = (left / open.len(), left % open.len());
        for (rank, &i) in open.iter().enumerate() {
            let want = share + usize::from(rank < extra);
            let take = want.min(sizes[i] - quota[i]);
            quota[i] += take;
            left -= take;
        }
    }
}

/// A stratified seeded subsample of `n` samples.
pub fn subsample(set: &ImageSet, n: usize, seed: u64) -> Result<ImageSet, DataError> {
    Ok(subsample_split(set, n, seed)?.0)
}

/// The subsample and its complement; together they are the original set.
pub fn subsample_split(set: &ImageSet, n: usize, seed: u64) -> Result<(ImageSet, ImageSet), DataError> {
    let chosen = stratified_indices(&set.labels, n, seed)?;
    let mut mask = vec![false; set.len()];
    for &i in &chosen {
        mask[i] = true;
    }
    let rest: Vec<usize> = (0..set.len()).filter(|&i| !mask[i]).collect();
    let mut picked = set.select(&chosen);
    picked.provenance.subsample = Some(n);
    picked.provenance.seed = Some(seed);
    let mut other = set.select(&rest);
    other.provenance.subsample = Some(set.len() - n);
    other.provenance.seed = Some(seed);
    Ok((picked, other))
}

/// `$QSTEER_DATA_DIR` if set, else `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// The small IDX subsets shipped with the crate.
pub fn bundled_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// First existing file among `<stem>` and `<stem>.gz` in `dir`.
pub fn find_file(dir: &Path, stem: &str) -> Result<PathBuf, DataError> {
    [stem.to_string(), format!("{stem}.gz")]
        .iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
        .ok_or_else(|| DataError::NotFound(stem.to_string(), dir.to_path_buf()))
}

/// Loads `<root>/<dataset>/<prefix>-{images-idx3,labels-idx1}-ubyte[.gz]`.
pub fn load_split(root: &Path, dataset: Dataset, split: Split) -> Result<ImageSet, DataError> {
    let dir = root.join(dataset.dir_name());
    let prefix = split.file_prefix();
    let images = find_file(&dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let labels = find_file(&dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let mut set = load_idx(&images, &labels)?;
    set.provenance.dataset = Some(dataset);
    set.provenance.split = Some(split);
    Ok(set)
}
