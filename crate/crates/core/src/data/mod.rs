//! Datasets, the Market1501 directory loader, the synthetic toy generator and
//! identity-balanced P×K batch sampling.

use std::collections::BTreeMap;
use std::path::PathBuf;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod market;
mod sampler;
mod toy;

pub use market::{
    load_market_format, parse_market_filename, write_market_format, MarketDataset, MarketName,
    GALLERY_DIR, QUERY_DIR, TRAIN_DIR,
};
pub use sampler::{sample_pk_batch, Batch, PkSampler};
pub use toy::{generate_toy_dataset, ToyConfig, ToyDataset, ToyManifest};

/// Smallest accepted image side, in pixels.
pub const MIN_IMAGE_SIDE: u32 = 8;

/// One pedestrian crop with its identity label and camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub pixels: RgbImage,
    /// Identity label. Contiguous in `[0, M)` for training splits; shared
    /// between the query and gallery splits of an evaluation set.
    pub identity: usize,
    /// Zero-based camera id.
    pub camera: usize,
    pub path: Option<PathBuf>,
    /// Gallery entries that never count as a correct match (junk / distractor
    /// crops of the Market convention).
    pub distractor: bool,
}

impl ImageSample {
    pub fn new(pixels: RgbImage, identity: usize, camera: usize) -> Self {
        Self {
            pixels,
            identity,
            camera,
            path: None,
            distractor: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<ImageSample>,
    num_identities: usize,
    split: Split,
}

impl Dataset {
    /// Builds a dataset and checks the per-sample invariants.
    ///
    /// For a train split the labels must be exactly `0..M`. Query and gallery
    /// splits share a label space with their sibling split, so only the count
    /// of distinct labels is recorded for them.
    pub fn new(samples: Vec<ImageSample>, split: Split) -> Result<Self> {
        for s in &samples {
            let (w, h) = s.pixels.dimensions();
            if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
                return Err(Error::Precondition(format!(
                    "image {}x{} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}{}",
                    h,
                    w,
                    s.path
                        .as_ref()
                        .map(|p| format!(" ({})", p.display()))
                        .unwrap_or_default()
                )));
            }
        }
        let counts = identity_counts(&samples);
        let num_identities = counts.len();
        if split == Split::Train {
            if let Some((&label, _)) = counts.iter().find(|(&id, _)| id >= num_identities) {
                return Err(Error::Precondition(format!(
                    "train label {label} is outside the contiguous range [0, {num_identities})"
                )));
            }
        }
        Ok(Self {
            samples,
            num_identities,
            split,
        })
    }

    pub fn samples(&self) -> &[ImageSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_identities(&self) -> usize {
        self.num_identities
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Sample count per identity label, ordered by label.
    pub fn identity_counts(&self) -> BTreeMap<usize, usize> {
        identity_counts(&self.samples)
    }

    /// Checks that every identity has a positive partner for triplet mining
    /// and that at least two identities exist.
    pub fn check_triplet_ready(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(Error::Precondition(format!(
                "triplet training needs at least 2 identities, dataset has {}",
                self.num_identities
            )));
        }
        if let Some((id, n)) = self.identity_counts().into_iter().find(|&(_, n)| n < 2) {
            return Err(Error::Precondition(format!(
                "identity {id} has {n} sample(s); triplet training needs at least 2"
            )));
        }
        Ok(())
    }
}

fn identity_counts(samples: &[ImageSample]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for s in samples {
        *counts.entry(s.identity).or_insert(0) += 1;
    }
    counts
}
