use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cdb_core::data::{
    derive_seed, exponential_counts, imbalance_ratio, load_csv, load_idx, make_exponential_longtail,
    make_gaussian_blobs, make_two_class_imbalance, split_balanced, two_class_counts,
};
use cdb_core::{Error, ImbalanceProfile, LabeledDataset};
use serde::{Deserialize, Serialize};

use super::{sha256_hex, to_json, write_file, DATA_DIR};
use crate::settings::{Protocol, Settings, Source};
use crate::UsageError;

pub const DATA_MANIFEST_VERSION: u32 = 1;
const DATA_MANIFEST: &str = "data.json";
const SPLITS: [&str; 3] = ["train", "val", "test"];

/// `data/data.json`: how the splits were made and their checksums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub schema_version: u32,
    pub source: String,
    pub protocol: String,
    pub profile: ImbalanceProfile,
    pub seed: u64,
    pub num_classes: usize,
    pub dims: usize,
    /// Per-class counts of each split.
    pub counts: BTreeMap<String, Vec<usize>>,
    pub train_imbalance_ratio: f64,
    /// SHA-256 of each CSV file.
    pub sha256: BTreeMap<String, String>,
    /// Hash of the `data.*` settings that produced the files.
    pub data_hash: String,
    pub toolkit_version: String,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
    pub manifest: DataManifest,
}

fn required<'a>(key: &str, path: &'a Option<PathBuf>) -> Result<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| UsageError(format!("data.source needs {key} to be set")))?;
    if !p.exists() {
        return Err(Error::Format(format!("{key}: path not found: {}", p.display())).into());
    }
    Ok(p)
}

fn load_source(s: &Settings) -> Result<LabeledDataset> {
    let d = &s.data;
    match d.source {
        Source::Blobs => {
            let extra = d.val_per_class + d.test_per_class;
            let counts: Vec<usize> = match d.protocol {
                Protocol::Exponential => {
                    exponential_counts(d.n_max, d.mu, d.classes).into_iter().map(|n| n + extra).collect()
                }
                Protocol::TwoClass => {
                    let (head, tail) = two_class_counts(d.head_ratio, d.total);
                    (0..d.classes)
                        .map(|c| extra.max(1) + if c == d.head_class { head } else if c == d.tail_class { tail } else { 0 })
                        .collect()
                }
            };
            Ok(make_gaussian_blobs(d.classes, d.dims, &counts, d.separation, d.seed)?)
        }
        Source::Idx => {
            let images = required("data.images", &d.images)?;
            let labels = required("data.labels", &d.labels)?;
            load_idx(images, labels).with_context(|| format!("loading {} / {}", images.display(), labels.display()))
        }
        Source::Csv => {
            let path = required("data.csv", &d.csv)?;
            load_csv(path).with_context(|| format!("loading {}", path.display()))
        }
    }
}

/// Test split first, then validation, then the imbalanced training subset
/// from what remains; each step has its own derived seed.
fn make_splits(s: &Settings) -> Result<[LabeledDataset; 3]> {
    let d = &s.data;
    let mut source = load_source(s)?;
    if d.protocol == Protocol::TwoClass {
        source = source.select_classes(&[d.head_class, d.tail_class])?;
    }
    let (test, rest) = split_balanced(&source, d.test_per_class, derive_seed(d.seed, &[1]))
        .context("carving the balanced test split")?;
    let (val, rest) = split_balanced(&rest, d.val_per_class, derive_seed(d.seed, &[2]))
        .context("carving the balanced validation split")?;
    let seed = derive_seed(d.seed, &[3]);
    let train = match d.protocol {
        Protocol::TwoClass => make_two_class_imbalance(&rest, &d.profile(), 0, 1, seed),
        Protocol::Exponential => make_exponential_longtail(&rest, &d.profile(), seed),
    }
    .context("drawing the imbalanced training split")?;
    Ok([train, val, test])
}

/// Writes `data/{train,val,test}.csv` and `data/data.json`. Same settings,
/// same bytes.
pub fn prepare(s: &Settings) -> Result<DataManifest> {
    let splits = make_splits(s)?;
    let dir = s.experiment_dir().join(DATA_DIR);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut counts = BTreeMap::new();
    let mut sha256 = BTreeMap::new();
    for (name, ds) in SPLITS.iter().zip(&splits) {
        let path = dir.join(format!("{name}.csv"));
        ds.write_csv(&path)?;
        let bytes = fs::read(&path).with_context(|| format!("reading back {}", path.display()))?;
        sha256.insert(format!("{name}.csv"), sha256_hex(&bytes));
        counts.insert(name.to_string(), ds.class_counts().to_vec());
    }
    let manifest = DataManifest {
        schema_version: DATA_MANIFEST_VERSION,
        source: s.data.source.to_string(),
        protocol: s.data.protocol.to_string(),
        profile: s.data.profile(),
        seed: s.data.seed,
        num_classes: splits[0].num_classes(),
        dims: splits[0].dim(),
        train_imbalance_ratio: imbalance_ratio(splits[0].class_counts()),
        counts,
        sha256,
        data_hash: s.data_hash(),
        toolkit_version: cdb_core::TOOLKIT_VERSION.to_string(),
    };
    write_file(&dir.join(DATA_MANIFEST), to_json(&manifest))?;
    Ok(manifest)
}

/// Reads the prepared splits back, checking checksums and that they were
/// made from the current `data.*` settings.
pub fn load_prepared(s: &Settings) -> Result<Prepared> {
    let dir = s.experiment_dir().join(DATA_DIR);
    let path = dir.join(DATA_MANIFEST);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("{}: {e}; run `cdb prepare` first", path.display())))?;
    let manifest: DataManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if manifest.data_hash != s.data_hash() {
        return Err(Error::Consistency(format!(
            "{} was prepared with different data.* settings; rerun `cdb prepare`",
            dir.display()
        ))
        .into());
    }
    let mut sets = Vec::with_capacity(3);
    for name in SPLITS {
        let file = format!("{name}.csv");
        let path = dir.join(&file);
        let bytes = fs::read(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if manifest.sha256.get(&file) != Some(&sha256_hex(&bytes)) {
            return Err(Error::Consistency(format!("{} does not match its checksum in data.json", path.display())).into());
        }
        let ds = load_csv(&path)?.with_num_classes(manifest.num_classes)?;
        sets.push(ds);
    }
    let [train, validation, test]: [LabeledDataset; 3] = sets.try_into().expect("three splits");
    Ok(Prepared { train, validation, test, manifest })
}
