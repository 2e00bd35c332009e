//! `path,label` CSV manifests, stratified splits and the average pixel count.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::pnm;
use crate::data::{mean_pixels, ImageSample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    /// Relative to the manifest's root directory.
    pub path: PathBuf,
    pub label: usize,
    pub tag: Option<SplitTag>,
    /// `(width, height)` when known.
    pub dims: Option<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    path: String,
    label: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Self {
        Self {
            root: root.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads a manifest; image paths resolve against the file's directory.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label"] {
            return Err(Error::format("manifest", path, "header must be `path,label`"));
        }
        let entries = reader
            .deserialize::<Row>()
            .map(|row| {
                let row = row?;
                Ok(ManifestEntry {
                    path: row.path.into(),
                    label: row.label,
                    tag: None,
                    dims: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        for e in &self.entries {
            writer.serialize(Row {
                path: e.path.to_string_lossy().into_owned(),
                label: e.label,
            })?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Fills in missing dimensions from the image headers.
    pub fn read_dims(&mut self) -> Result<()> {
        for i in 0..self.entries.len() {
            if self.entries[i].dims.is_none() {
                let hdr = pnm::read_header(self.resolve(&self.entries[i]))?;
                self.entries[i].dims = Some((hdr.width, hdr.height));
            }
        }
        Ok(())
    }

    pub fn tagged(&self, tag: SplitTag) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.tag == Some(tag))
    }

    /// Loads the images of one split (or all entries when `tag` is `None`)
    /// at their original size.
    pub fn load<T: Scalar>(&self, tag: Option<SplitTag>) -> Result<Vec<ImageSample<T>>> {
        self.entries
            .iter()
            .filter(|e| tag.is_none() || e.tag == tag)
            .map(|e| {
                let pixels = pnm::load_ppm(self.resolve(e))?;
                Ok(ImageSample::new(pixels, e.label, e.path.to_string_lossy()))
            })
            .collect()
    }
}

/// Tags entries Train/Val/Test in the order of `fractions` (one to three
/// values summing to 1). Each class is shuffled and spread evenly across the
/// cut points, so every split holds each class within ±1 of its share.
pub fn split(manifest: &DatasetManifest, fractions: &[f64], seed: u64) -> Result<DatasetManifest> {
    if fractions.is_empty() || fractions.len() > SplitTag::ALL.len() {
        return Err(Error::InvalidArgument(format!(
            "expected 1 to 3 split fractions, got {}",
            fractions.len()
        )));
    }
    if fractions.iter().any(|f| f.is_nan() || *f <= 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let n = manifest.len();

    // Largest-remainder allocation of split sizes.
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &i in order.iter().cycle().take(n - sizes.iter().sum::<usize>()) {
        sizes[i] += 1;
    }
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidArgument(format!(
            "split {:?} would be empty ({n} entries)",
            SplitTag::ALL[i]
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = manifest.entries.iter().map(|e| e.label).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut ranked: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
    for &label in &labels {
        let mut members: Vec<usize> = (0..n).filter(|&i| manifest.entries[i].label == label).collect();
        members.shuffle(&mut rng);
        let count = members.len() as f64;
        for (k, idx) in members.into_iter().enumerate() {
            ranked.push(((k as f64 + 0.5) / count, label, idx));
        }
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut out = manifest.clone();
    let mut cursor = ranked.iter();
    for (tag, &size) in SplitTag::ALL.iter().zip(&sizes) {
        for &(_, _, idx) in cursor.by_ref().take(size) {
            out.entries[idx].tag = Some(*tag);
        }
    }
    Ok(out)
}

/// Splits in-memory samples exactly as [`split`] would split a manifest of
/// them. Returns the train, validation and test parts in sample order.
pub fn split_samples<T: Scalar>(
    samples: Vec<ImageSample<T>>,
    fractions: &[f64],
    seed: u64,
) -> Result<[Vec<ImageSample<T>>; 3]> {
    let manifest = DatasetManifest::new(
        "",
        samples
            .iter()
            .map(|s| ManifestEntry {
                path: s.source_id.clone().into(),
                label: s.label,
                tag: None,
                dims: Some(s.dims()),
            })
            .collect(),
    );
    let tagged = split(&manifest, fractions, seed)?;
    let mut parts: [Vec<ImageSample<T>>; 3] = Default::default();
    for (entry, sample) in tagged.entries.iter().zip(samples) {
        let k = SplitTag::ALL
            .iter()
            .position(|t| entry.tag == Some(*t))
            .expect("every entry tagged");
        parts[k].push(sample);
    }
    Ok(parts)
}

/// Mean `w·h` over the training entries. Dimensions must be known.
pub fn compute_avg_pixels(manifest: &DatasetManifest) -> Result<f64> {
    let dims = manifest
        .tagged(SplitTag::Train)
        .map(|e| {
            e.dims
                .ok_or_else(|| Error::InvalidArgument(format!("{}: dimensions unknown", e.path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    mean_pixels(dims).ok_or_else(|| Error::InvalidArgument("training split is empty".into()))
}
