use std::path::PathBuf;

use super::transform::{augment, normalize, AugmentSpec, Normalization, Preprocess};
use super::{read_image, DatasetManifest, Label, Split};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Augmentation seed of one sample in one epoch. Depends only on its
/// arguments, never on loading order or worker count.
pub fn sample_seed(seed: u64, index: usize, epoch: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ index as u64) ^ epoch as u64)
}

/// Prepared images (target size, values in [0, 1]) with class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct InMemoryDataset {
    images: Vec<Tensor>,
    labels: Vec<usize>,
    paths: Vec<Option<PathBuf>>,
}

impl InMemoryDataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(first) = images.first() {
            if first.rank() != 3 {
                return Err(Error::Dataset(format!("images must be C×H×W, got {:?}", first.shape())));
            }
            if let Some(bad) = images.iter().position(|t| t.shape() != first.shape()) {
                return Err(Error::Dataset(format!(
                    "image {bad} has shape {:?}, expected {:?}",
                    images[bad].shape(),
                    first.shape()
                )));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= Label::ALL.len()) {
            return Err(Error::Dataset(format!("label index {l} out of range")));
        }
        let paths = vec![None; images.len()];
        Ok(InMemoryDataset { images, labels, paths })
    }

    pub fn from_samples(samples: Vec<(Tensor, Label)>) -> Result<Self> {
        let (images, labels) = samples.into_iter().map(|(t, l)| (t, l.index())).unzip();
        Self::new(images, labels)
    }

    /// Loads and prepares every row of `split`, in manifest order.
    pub fn from_manifest(manifest: &DatasetManifest, split: Split, pre: &Preprocess) -> Result<Self> {
        let rows: Vec<_> = manifest.rows_in(split).collect();
        let loaded = par::map_indices(rows.len(), |i| read_image(&rows[i].path).and_then(|t| pre.prepare(&t)));
        let images = loaded.into_iter().collect::<Result<Vec<_>>>()?;
        let labels = rows.iter().map(|r| r.label.index()).collect();
        let mut ds = Self::new(images, labels)?;
        ds.paths = rows.iter().map(|r| Some(r.path.clone())).collect();
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Tensor {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn path(&self, i: usize) -> Option<&PathBuf> {
        self.paths[i].as_ref()
    }

    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.images.first().map(|t| t.shape())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        InMemoryDataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            paths: indices.iter().map(|&i| self.paths[i].clone()).collect(),
        }
    }

    /// A copy with one fixed augmentation per sample (offline mode).
    pub fn augmented_once(&self, spec: &AugmentSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let images = par::map_indices(self.len(), |i| augment(&self.images[i], spec, sample_seed(seed, i, 0)))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(InMemoryDataset {
            images,
            labels: self.labels.clone(),
            paths: self.paths.clone(),
        })
    }

    /// Stacks the selected samples into an N×C×H×W batch, augmenting each
    /// (when requested) before normalizing.
    pub fn batch(
        &self,
        indices: &[usize],
        norm: &Normalization,
        augmentation: Option<(&AugmentSpec, u64, usize)>,
    ) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Dataset("empty batch".into()));
        }
        let items = par::map_indices(indices.len(), |k| {
            let i = indices[k];
            let img = match augmentation {
                Some((spec, seed, epoch)) => augment(&self.images[i], spec, sample_seed(seed, i, epoch))?,
                None => self.images[i].clone(),
            };
            normalize(&img, norm)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::stack(&items)?, labels))
    }
}
