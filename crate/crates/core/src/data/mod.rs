//! Dataset ingestion, splitting, preprocessing and augmentation.

mod dataset;
mod image;
mod split;
pub mod synthetic;
mod transform;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use dataset::{sample_seed, InMemoryDataset};
pub use image::{decode_image, read_image, write_image, write_png, write_pnm};
pub use split::{largest_remainder, split, SplitRatios};
pub use transform::{
    apply_factors, augment, luma, normalize, preprocess, resize_bilinear, AugmentFactors, AugmentSpec, Normalization,
    Preprocess,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal,
    Pneumonia,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Normal, Label::Pneumonia];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "NORMAL",
            Label::Pneumonia => "PNEUMONIA",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NORMAL" => Ok(Label::Normal),
            "PNEUMONIA" => Ok(Label::Pneumonia),
            _ => Err(Error::Dataset(format!(
                "unknown label `{s}` (expected NORMAL or PNEUMONIA)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Manifest(format!(
                "unknown split `{s}` (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub label: Label,
    /// `None` until [`split`] assigns one.
    pub split: Option<Split>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
    /// Seed of the split that produced the assignment, if any.
    pub seed: Option<u64>,
    /// Files rejected during ingestion.
    pub skipped: usize,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == Some(split))
    }

    pub fn count(&self, split: Split) -> usize {
        self.rows_in(split).count()
    }

    pub fn label_count(&self, split: Option<Split>, label: Label) -> usize {
        self.rows
            .iter()
            .filter(|r| r.label == label && (split.is_none() || r.split == split))
            .count()
    }

    /// Writes `path,label,split` CSV with LF line endings.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let wrap = |e: csv::Error| Error::Manifest(format!("{}: {e}", path.display()));
        w.write_record(["path", "label", "split"]).map_err(wrap)?;
        for row in &self.rows {
            let p = row
                .path
                .to_str()
                .ok_or_else(|| Error::Manifest(format!("path {} is not UTF-8", row.path.display())))?;
            w.write_record([p, row.label.as_str(), row.split.map_or("", Split::as_str)])
                .map_err(wrap)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        crate::persistence::write_atomic(path, &bytes)
    }

    /// Reads a manifest. Relative image paths resolve against the manifest's
    /// directory.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let wrap = |e: csv::Error| Error::Manifest(format!("{}: {e}", path.display()));
        let mut r = csv::ReaderBuilder::new().from_path(path).map_err(wrap)?;
        let headers = r.headers().map_err(wrap)?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "label", "split"] {
            return Err(Error::Manifest(format!(
                "{}: header must be `path,label,split`",
                path.display()
            )));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        let mut rows = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(wrap)?;
            let line = i + 2;
            let p = PathBuf::from(&rec[0]);
            let p = if p.is_relative() { base.join(p) } else { p };
            if !seen.insert(p.clone()) {
                return Err(Error::Manifest(format!("line {line}: duplicate path {}", p.display())));
            }
            let label = rec[1]
                .parse()
                .map_err(|e: Error| Error::Manifest(format!("line {line}: {e}")))?;
            let split = match &rec[2] {
                "" => None,
                s => Some(
                    s.parse()
                        .map_err(|e: Error| Error::Manifest(format!("line {line}: {e}")))?,
                ),
            };
            rows.push(ManifestRow { path: p, label, split });
        }
        Ok(DatasetManifest {
            rows,
            seed: None,
            skipped: 0,
        })
    }
}

/// Scans `root/<LABEL>/*` and keeps every file that decodes. Rows are sorted
/// by path; undecodable files are counted in `skipped`.
pub fn load_dataset(root: &Path) -> Result<DatasetManifest> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let label: Label = name.parse().map_err(|_| {
            Error::Dataset(format!(
                "unknown label directory `{name}` in {} (expected NORMAL and PNEUMONIA)",
                root.display()
            ))
        })?;
        for f in fs::read_dir(&path).map_err(|e| Error::io(&path, e))? {
            let f = f.map_err(|e| Error::io(&path, e))?.path();
            if f.is_file() {
                files.push((f, label));
            }
        }
    }
    files.sort();
    let ok = crate::par::map_indices(files.len(), |i| is_decodable(&files[i].0));
    let skipped = ok.iter().filter(|&&b| !b).count();
    if skipped > 0 {
        log::warn!("skipped {skipped} unreadable image(s) under {}", root.display());
    }
    let rows: Vec<ManifestRow> = files
        .into_iter()
        .zip(ok)
        .filter(|(_, ok)| *ok)
        .map(|((path, label), _)| ManifestRow {
            path,
            label,
            split: None,
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::Dataset(format!("no readable images under {}", root.display())));
    }
    Ok(DatasetManifest {
        rows,
        seed: None,
        skipped,
    })
}

fn is_decodable(path: &Path) -> bool {
    match read_image(path) {
        Ok(_) => true,
        Err(e) => {
            log::debug!("{e}");
            false
        }
    }
}
