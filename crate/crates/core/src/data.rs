//! Datasets, loaders and the imbalance-injection protocols.
//!
//! All random selection goes through [`rng_from_seed`] (ChaCha8, seeded from a
//! `u64`) and a Fisher-Yates shuffle, so a given seed selects the same rows
//! on every platform.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// The PRNG used for every seeded operation in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes `parts` into `base` (splitmix64 finaliser per step), giving
/// independent-looking streams for each (run, stage, epoch) tuple.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts
        .iter()
        .fold(mix(base), |acc, &p| mix(acc ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15))))
}

/// Feature rows with integer class labels.
///
/// `ids` carries the identity of each row in the dataset it was first
/// loaded or generated as; subsets keep the ids of their source, which is
/// what disjointness checks compare.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    ids: Vec<usize>,
    num_classes: usize,
    class_counts: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let ids = (0..labels.len()).collect();
        Self::with_ids(features, labels, ids, num_classes)
    }

    pub fn with_ids(
        features: Matrix,
        labels: Vec<usize>,
        ids: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rows() != labels.len() || ids.len() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} feature rows, {} labels, {} ids",
                features.rows(),
                labels.len(),
                ids.len()
            )));
        }
        let mut class_counts = vec![0usize; num_classes];
        for &l in &labels {
            if l >= num_classes {
                return Err(Error::Consistency(format!(
                    "label {l} out of range for {num_classes} classes"
                )));
            }
            class_counts[l] += 1;
        }
        Ok(Self { features, labels, ids, num_classes, class_counts })
    }

    /// Declares `num_classes` classes, e.g. for a split loaded from a file
    /// in which the highest classes happen to be absent.
    pub fn with_num_classes(self, num_classes: usize) -> Result<Self> {
        Self::with_ids(self.features, self.labels, self.ids, num_classes)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            features: Matrix::zeros(0, dim),
            labels: Vec::new(),
            ids: Vec::new(),
            num_classes: 0,
            class_counts: Vec::new(),
        }
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
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// True when every class has the same, nonzero count.
    pub fn is_balanced(&self) -> bool {
        match self.class_counts.first() {
            Some(&first) => first > 0 && self.class_counts.iter().all(|&c| c == first),
            None => false,
        }
    }

    /// Row indices grouped by class, each group in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// Rows `idx` (in the given order), keeping ids and class count.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let labels: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        let ids = idx.iter().map(|&i| self.ids[i]).collect();
        Self::with_ids(self.features.select_rows(idx), labels, ids, self.num_classes)
            .expect("subset of a valid dataset is valid")
    }

    /// Keeps only the listed classes and relabels them `0..classes.len()` in
    /// the order given.
    pub fn select_classes(&self, classes: &[usize]) -> Result<Self> {
        let mut remap = BTreeMap::new();
        for (new, &old) in classes.iter().enumerate() {
            if old >= self.num_classes {
                return Err(Error::Config(format!(
                    "class {old} not present (dataset has {} classes)",
                    self.num_classes
                )));
            }
            if remap.insert(old, new).is_some() {
                return Err(Error::Config(format!("class {old} listed twice")));
            }
        }
        let idx: Vec<usize> =
            (0..self.len()).filter(|&i| remap.contains_key(&self.labels[i])).collect();
        let labels = idx.iter().map(|&i| remap[&self.labels[i]]).collect();
        let ids = idx.iter().map(|&i| self.ids[i]).collect();
        Self::with_ids(self.features.select_rows(&idx), labels, ids, classes.len())
    }

    /// Writes the dataset as headerless `label,f1,...,fD` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.len() * (self.dim() * 8 + 4));
        for i in 0..self.len() {
            out.push_str(&self.labels[i].to_string());
            for v in self.features.row(i) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Ratio of the largest to the smallest class count.
pub fn imbalance_ratio(counts: &[usize]) -> f64 {
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    if min == 0 {
        f64::INFINITY
    } else {
        max as f64 / min as f64
    }
}

// ---------------------------------------------------------------------------
// IDX

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated IDX header at byte {offset}")))
}

/// Parses an IDX image tensor; returns `(count, rows*cols, pixel bytes)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let rows = read_u32_be(bytes, 8)? as usize;
    let cols = read_u32_be(bytes, 12)? as usize;
    let dim = rows * cols;
    let body = &bytes[16..];
    if body.len() != n * dim {
        return Err(Error::Format(format!(
            "IDX image body has {} bytes, header declares {n}x{rows}x{cols}",
            body.len()
        )));
    }
    Ok((n, dim, body))
}

/// Parses an IDX label vector.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32_be(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n = read_u32_be(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!(
            "IDX label body has {} bytes, header declares {n}",
            body.len()
        )));
    }
    Ok(body)
}

/// Builds a dataset from an IDX image/label byte pair. Pixels are scaled to
/// `[0, 1]`; the class count is `max label + 1`.
pub fn dataset_from_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let (n, dim, pixels) = parse_idx_images(images)?;
    let label_bytes = parse_idx_labels(labels)?;
    if label_bytes.len() != n {
        return Err(Error::Consistency(format!(
            "label file declares {} items but image file declares {n}",
            label_bytes.len()
        )));
    }
    let features = Matrix::from_vec(n, dim, pixels.iter().map(|&b| f64::from(b) / 255.0).collect());
    let labels: Vec<usize> = label_bytes.iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(features, labels, num_classes)
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    dataset_from_idx(&images, &labels)
}

/// Serializes a dataset back to IDX bytes. Features must lie in `[0, 1]`;
/// `rows * cols` must equal the feature width.
pub fn to_idx_bytes(ds: &LabeledDataset, rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    assert_eq!(rows * cols, ds.dim());
    let mut images = Vec::with_capacity(16 + ds.len() * ds.dim());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for v in [ds.len(), rows, cols] {
        images.extend_from_slice(&(v as u32).to_be_bytes());
    }
    images.extend(ds.features().as_slice().iter().map(|&x| (x * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    labels.extend(ds.labels().iter().map(|&l| l as u8));
    (images, labels)
}

// ---------------------------------------------------------------------------
// CSV

/// Parses headerless `label,f1,...,fD` text. The class count is `max label + 1`.
pub fn parse_csv(text: &str) -> Result<LabeledDataset> {
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(Error::Format(format!(
                    "line {}: {} fields, expected {w}",
                    lineno + 1,
                    fields.len()
                )))
            }
            Some(_) => {}
        }
        let label: usize = fields[0].parse().map_err(|_| {
            Error::Format(format!("line {}: label {:?} is not a class index", lineno + 1, fields[0]))
        })?;
        labels.push(label);
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad feature {f:?}", lineno + 1)))?;
            data.push(v);
        }
    }
    let dim = width.map_or(0, |w| w - 1);
    if labels.is_empty() {
        return Ok(LabeledDataset::empty(dim));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(Matrix::from_vec(labels.len(), dim, data), labels, num_classes)
}

pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

// ---------------------------------------------------------------------------
// Imbalance protocols

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImbalanceProfile {
    /// Two classes drawn from a fixed pool; the head gets `head_ratio` of it.
    TwoClassHeadRatio { head_ratio: f64, total: usize },
    /// `n_c = n_max * mu^((c-1)/(N-1))` for 1-indexed class `c`.
    Exponential { mu: f64, n_max: usize },
}

impl ImbalanceProfile {
    pub fn mnist(head_ratio: f64) -> Self {
        ImbalanceProfile::TwoClassHeadRatio { head_ratio, total: 5000 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ImbalanceProfile::TwoClassHeadRatio { head_ratio, total } => {
                if !(head_ratio > 0.0 && head_ratio < 1.0) || total == 0 {
                    return Err(Error::Config(format!(
                        "head ratio must lie in (0, 1) with a nonzero pool, got {head_ratio} of {total}"
                    )));
                }
            }
            ImbalanceProfile::Exponential { mu, n_max } => {
                if !(mu > 0.0 && mu <= 1.0) || n_max == 0 {
                    return Err(Error::Config(format!(
                        "exponential profile needs mu in (0, 1] and n_max >= 1, got mu={mu}, n_max={n_max}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// `(head, tail)` counts of the two-class protocol.
pub fn two_class_counts(head_ratio: f64, total: usize) -> (usize, usize) {
    let head = round_half_up(head_ratio * total as f64).min(total);
    (head, total - head)
}

/// Per-class targets of the exponential profile, rounded half up and
/// floored at one sample. A single class gets `n_max`.
pub fn exponential_counts(n_max: usize, mu: f64, num_classes: usize) -> Vec<usize> {
    if num_classes == 1 {
        return vec![n_max];
    }
    let denom = (num_classes - 1) as f64;
    (0..num_classes)
        .map(|c| round_half_up(n_max as f64 * mu.powf(c as f64 / denom)).max(1))
        .collect()
}

/// Takes `counts[c]` rows of every class, chosen by a seeded shuffle within
/// each class. Output rows are in source order.
fn take_per_class(
    source: &LabeledDataset,
    counts: &[usize],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = rng_from_seed(seed);
    let mut taken = Vec::new();
    let mut rest = Vec::new();
    for (c, mut idx) in source.indices_by_class().into_iter().enumerate() {
        let want = counts.get(c).copied().unwrap_or(0);
        if idx.len() < want {
            return Err(Error::Capacity(format!(
                "class {c} has {} samples, {want} required",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        taken.extend_from_slice(&idx[..want]);
        rest.extend_from_slice(&idx[want..]);
    }
    taken.sort_unstable();
    rest.sort_unstable();
    Ok((taken, rest))
}

/// Head/tail training subset of the two-class protocol, relabelled
/// `0 = head`, `1 = tail`.
pub fn make_two_class_imbalance(
    source: &LabeledDataset,
    profile: &ImbalanceProfile,
    head_class: usize,
    tail_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let ImbalanceProfile::TwoClassHeadRatio { head_ratio, total } = *profile else {
        return Err(Error::Config("two-class protocol needs a head-ratio profile".into()));
    };
    profile.validate()?;
    if head_class == tail_class {
        return Err(Error::Config("head and tail class must differ".into()));
    }
    let pair = source.select_classes(&[head_class, tail_class])?;
    let (head, tail) = two_class_counts(head_ratio, total);
    let (idx, _) = take_per_class(&pair, &[head, tail], seed)?;
    Ok(pair.subset(&idx))
}

/// Exponential long-tail subset; class `c` keeps its original index.
pub fn make_exponential_longtail(
    source: &LabeledDataset,
    profile: &ImbalanceProfile,
    seed: u64,
) -> Result<LabeledDataset> {
    let ImbalanceProfile::Exponential { mu, n_max } = *profile else {
        return Err(Error::Config("long-tail protocol needs an exponential profile".into()));
    };
    profile.validate()?;
    if source.num_classes() == 0 {
        return Err(Error::Config("source dataset has no classes".into()));
    }
    let counts = exponential_counts(n_max, mu, source.num_classes());
    let (idx, _) = take_per_class(source, &counts, seed)?;
    Ok(source.subset(&idx))
}

/// Holds out exactly `per_class` rows of every class.
pub fn split_balanced(
    source: &LabeledDataset,
    per_class: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let counts = vec![per_class; source.num_classes()];
    let (held, rest) = take_per_class(source, &counts, seed)?;
    Ok((source.subset(&held), source.subset(&rest)))
}

/// Center of class `c` for the synthetic blobs: scaled basis vectors when
/// there are at least as many dimensions as classes (all pairwise distances
/// equal `separation`), otherwise points spaced `separation` apart on the
/// first axis.
pub fn blob_center(c: usize, num_classes: usize, dims: usize, separation: f64) -> Vec<f64> {
    let mut center = vec![0.0; dims];
    if num_classes <= dims {
        center[c] = separation / std::f64::consts::SQRT_2;
    } else {
        center[0] = c as f64 * separation;
    }
    center
}

/// Isotropic unit-variance Gaussian classes, class-major row order.
pub fn make_gaussian_blobs(
    num_classes: usize,
    dims: usize,
    per_class_counts: &[usize],
    class_separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 || dims == 0 || per_class_counts.len() != num_classes {
        return Err(Error::Config(format!(
            "blobs need >= 2 classes, >= 1 dimension and one count per class \
             (got {num_classes} classes, {dims} dims, {} counts)",
            per_class_counts.len()
        )));
    }
    if per_class_counts.contains(&0) || !(class_separation >= 0.0) {
        return Err(Error::Config("blob counts must be >= 1 and separation >= 0".into()));
    }
    let mut rng = rng_from_seed(seed);
    let total: usize = per_class_counts.iter().sum();
    let mut data = Vec::with_capacity(total * dims);
    let mut labels = Vec::with_capacity(total);
    for (c, &count) in per_class_counts.iter().enumerate() {
        let center = blob_center(c, num_classes, dims, class_separation);
        for _ in 0..count {
            for &m in &center {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + z);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(Matrix::from_vec(total, dims, data), labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn idx_pair(labels: &[u8], declared_images: u32) -> (Vec<u8>, Vec<u8>) {
        let mut images = Vec::new();
        images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        images.extend_from_slice(&declared_images.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        for i in 0..declared_images {
            images.extend_from_slice(&[0, 255, (i * 10) as u8, 128]);
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lab.extend_from_slice(labels);
        (images, lab)
    }

    #[test]
    fn idx_counts_and_scaling() {
        let (img, lab) = idx_pair(&[4, 9, 4, 9], 4);
        let ds = dataset_from_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.num_classes(), 10);
        assert_eq!(ds.class_counts()[4], 2);
        assert_eq!(ds.class_counts()[9], 2);
        assert_eq!(ds.class_counts().iter().sum::<usize>(), 4);
        assert_eq!(ds.features().get(0, 1), 1.0);
        assert_eq!(ds.features().get(0, 0), 0.0);
    }

    #[test]
    fn idx_length_mismatch() {
        let (img, lab) = idx_pair(&[0; 10], 9);
        assert!(matches!(dataset_from_idx(&img, &lab), Err(Error::Consistency(_))));
    }

    #[test]
    fn idx_bad_magic() {
        let (mut img, lab) = idx_pair(&[1, 2], 2);
        img[3] = 0x01;
        assert!(matches!(dataset_from_idx(&img, &lab), Err(Error::Format(_))));
        let (img, mut lab) = idx_pair(&[1, 2], 2);
        lab[3] = 0x03;
        assert!(matches!(dataset_from_idx(&img, &lab), Err(Error::Format(_))));
        assert!(matches!(dataset_from_idx(&[0, 0], &lab), Err(Error::Format(_))));
    }

    #[test]
    fn idx_round_trip() {
        let (img, lab) = idx_pair(&[3, 1, 2], 3);
        let ds = dataset_from_idx(&img, &lab).unwrap();
        let (img2, lab2) = to_idx_bytes(&ds, 2, 2);
        assert_eq!(img, img2);
        assert_eq!(lab, lab2);
    }

    #[test]
    fn csv_basic() {
        let ds = parse_csv("0,1.0,2.0\n1,3.0,4.0").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.features().row(1), &[3.0, 4.0]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(parse_csv("0,1,2\n1,2\n"), Err(Error::Format(_))));
        assert!(matches!(parse_csv("0.5,1,2\n"), Err(Error::Format(_))));
        assert!(matches!(parse_csv("a,1,2\n"), Err(Error::Format(_))));
        assert!(matches!(parse_csv("0,x\n"), Err(Error::Format(_))));
    }

    #[test]
    fn csv_empty() {
        let ds = parse_csv("").unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.num_classes(), 0);
    }

    #[test]
    fn csv_file_round_trip_is_exact() {
        let ds = make_gaussian_blobs(3, 4, &[5, 6, 7], 2.5, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.write_csv(&path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.features(), ds.features());
        assert_eq!(back.labels(), ds.labels());
    }

    fn pool(counts: &[usize]) -> LabeledDataset {
        make_gaussian_blobs(counts.len(), 2, counts, 1.0, 0).unwrap()
    }

    #[test]
    fn two_class_counts_match_protocol() {
        assert_eq!(two_class_counts(0.99, 5000), (4950, 50));
        assert_eq!(two_class_counts(0.995, 5000), (4975, 25));
        assert_eq!(two_class_counts(0.5, 5000), (2500, 2500));
    }

    #[test]
    fn two_class_subset_remaps_labels() {
        let src = pool(&[10, 6000, 10, 6000]);
        let ds =
            make_two_class_imbalance(&src, &ImbalanceProfile::mnist(0.99), 1, 3, 7).unwrap();
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.class_counts(), &[4950, 50]);
        assert!((imbalance_ratio(ds.class_counts()) - 99.0).abs() < 1e-12);
        let again =
            make_two_class_imbalance(&src, &ImbalanceProfile::mnist(0.99), 1, 3, 7).unwrap();
        assert_eq!(ds, again);
        let other =
            make_two_class_imbalance(&src, &ImbalanceProfile::mnist(0.99), 1, 3, 8).unwrap();
        assert_ne!(ds.ids(), other.ids());
    }

    #[test]
    fn two_class_capacity_error() {
        let src = pool(&[4000, 6000]);
        let r = make_two_class_imbalance(&src, &ImbalanceProfile::mnist(0.99), 0, 1, 0);
        assert!(matches!(r, Err(Error::Capacity(_))));
    }

    #[test]
    fn exponential_endpoints() {
        let counts = exponential_counts(450, 0.01, 100);
        assert_eq!(counts[0], 450);
        assert_eq!(counts[99], 5);
        assert!((imbalance_ratio(&counts) - 90.0).abs() < 1e-12);
        assert_eq!(exponential_counts(450, 1.0, 10), vec![450; 10]);
        assert_eq!(exponential_counts(450, 0.5, 1), vec![450]);
        // floor of one sample
        assert_eq!(*exponential_counts(10, 1e-6, 5).last().unwrap(), 1);
    }

    #[test]
    fn exponential_counts_match_spreadsheet_oracle() {
        // Row-by-row evaluation, written independently of exponential_counts:
        // class index k from 1..=N, exponent (k-1)/(N-1), round .5 upward.
        let (n_max, mu, n) = (450usize, 0.01f64, 100usize);
        for k in 1..=n {
            let exact = (n_max as f64) * (mu.ln() * (k - 1) as f64 / (n - 1) as f64).exp();
            let frac = exact - exact.trunc();
            let rounded = if frac >= 0.5 { exact.trunc() + 1.0 } else { exact.trunc() };
            let expected = (rounded as usize).max(1);
            assert_eq!(exponential_counts(n_max, mu, n)[k - 1], expected, "class {k}");
        }
    }

    #[test]
    fn exponential_subset_counts() {
        let src = pool(&[500; 10]);
        let p = ImbalanceProfile::Exponential { mu: 0.1, n_max: 450 };
        let ds = make_exponential_longtail(&src, &p, 3).unwrap();
        assert_eq!(ds.class_counts(), exponential_counts(450, 0.1, 10).as_slice());
        let small = pool(&[500, 500, 3]);
        assert!(matches!(
            make_exponential_longtail(&small, &p, 3),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn split_balanced_disjoint_cover() {
        let src = pool(&[500; 4]);
        let (held, rest) = split_balanced(&src, 50, 11).unwrap();
        assert_eq!(held.class_counts(), &[50; 4]);
        assert_eq!(rest.class_counts(), &[450; 4]);
        let a: HashSet<_> = held.ids().iter().collect();
        let b: HashSet<_> = rest.ids().iter().collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.len() + b.len(), src.len());

        let (none, all) = split_balanced(&src, 0, 11).unwrap();
        assert!(none.is_empty());
        assert_eq!(all, src);

        assert!(matches!(split_balanced(&src, 501, 0), Err(Error::Capacity(_))));
    }

    #[test]
    fn mnist_style_split_sequence() {
        let src = pool(&[4000, 4000]);
        let (test, rest) = split_balanced(&src, 800, 1).unwrap();
        let (val, rest) = split_balanced(&rest, 500, 2).unwrap();
        let train = make_two_class_imbalance(&rest, &ImbalanceProfile::mnist(0.5), 0, 1, 3)
            .unwrap();
        let ids = |d: &LabeledDataset| d.ids().iter().copied().collect::<HashSet<_>>();
        assert!(ids(&train).is_disjoint(&ids(&val)));
        assert!(ids(&train).is_disjoint(&ids(&test)));
        assert!(ids(&val).is_disjoint(&ids(&test)));
        assert_eq!(val.class_counts(), &[500, 500]);
        assert_eq!(test.class_counts(), &[800, 800]);
    }

    #[test]
    fn blobs_deterministic_and_separated() {
        let a = make_gaussian_blobs(2, 3, &[4950, 50], 4.0, 5).unwrap();
        let b = make_gaussian_blobs(2, 3, &[4950, 50], 4.0, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), &[4950, 50]);
        for (n, d) in [(3, 5), (6, 2)] {
            for i in 0..n {
                for j in (i + 1)..n {
                    let ci = blob_center(i, n, d, 3.0);
                    let cj = blob_center(j, n, d, 3.0);
                    let dist: f64 =
                        ci.iter().zip(&cj).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    assert!(dist >= 3.0 - 1e-12);
                }
            }
        }
        assert!(make_gaussian_blobs(1, 2, &[3], 1.0, 0).is_err());
        assert!(make_gaussian_blobs(2, 2, &[3, 0], 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn exponential_counts_non_increasing(n_max in 1usize..2000, mu in 0.001f64..1.0, n in 2usize..60) {
            let c = exponential_counts(n_max, mu, n);
            prop_assert_eq!(c[0], n_max);
            prop_assert!(c.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(c.iter().all(|&x| x >= 1));
        }

        #[test]
        fn two_class_counts_sum_to_pool(x in 0.01f64..0.99, total in 1usize..20000) {
            let (h, t) = two_class_counts(x, total);
            prop_assert_eq!(h + t, total);
        }
    }
}
