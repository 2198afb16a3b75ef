//! Market1501 directory convention.
//!
//! ```text
//! root/
//!   bounding_box_train/  0002_c1s1_000451_03.jpg ...
//!   query/
//!   bounding_box_test/
//! ```
//!
//! File names start with `<pid>_c<cam>`; pid `-1` and `0000` are junk crops.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, ImageSample, Split};
use crate::error::{Error, Result};

pub const TRAIN_DIR: &str = "bounding_box_train";
pub const QUERY_DIR: &str = "query";
pub const GALLERY_DIR: &str = "bounding_box_test";

const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

/// Identity token and zero-based camera parsed from a file name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MarketName {
    pub pid: i64,
    pub camera: usize,
}

impl MarketName {
    pub fn is_junk(&self) -> bool {
        self.pid <= 0
    }
}

pub fn parse_market_filename(path: &Path) -> Result<MarketName> {
    let bad = |reason: &str| Error::FileName {
        file: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| bad("not valid UTF-8"))?;
    let (pid_token, rest) = stem
        .split_once('_')
        .ok_or_else(|| bad("expected `<pid>_c<cam>...`"))?;
    let pid: i64 = pid_token
        .parse()
        .map_err(|_| bad("identity token is not an integer"))?;
    let cam_digits: String = rest
        .strip_prefix('c')
        .ok_or_else(|| bad("missing `c<cam>` after the identity"))?
        .chars()
        .take_while(char::is_ascii_digit)
        .collect();
    let cam: usize = cam_digits
        .parse()
        .map_err(|_| bad("camera token is not an integer"))?;
    if cam == 0 {
        return Err(bad("camera numbers start at 1"));
    }
    Ok(MarketName {
        pid,
        camera: cam - 1,
    })
}

/// The three splits of a Market-style dataset.
#[derive(Clone, Debug)]
pub struct MarketDataset {
    pub train: Dataset,
    pub query: Dataset,
    pub gallery: Dataset,
}

pub fn load_market_format(root: &Path) -> Result<MarketDataset> {
    let train_files = list_split(root, TRAIN_DIR)?;
    let query_files = list_split(root, QUERY_DIR)?;
    let gallery_files = list_split(root, GALLERY_DIR)?;

    // Train labels: contiguous over the sorted distinct pids.
    let train_labels = relabel(train_files.iter().map(|(_, n)| n));
    let mut train = Vec::with_capacity(train_files.len());
    for (path, name) in train_files {
        if name.is_junk() {
            continue;
        }
        train.push(read_sample(path, train_labels[&name.pid], name.camera, false)?);
    }

    // Query and gallery share one label space; junk is dropped from the query
    // and kept as never-relevant distractors in the gallery.
    let eval_labels = relabel(query_files.iter().chain(&gallery_files).map(|(_, n)| n));
    let junk_label = eval_labels.len();
    let mut query = Vec::with_capacity(query_files.len());
    for (path, name) in query_files {
        if name.is_junk() {
            continue;
        }
        query.push(read_sample(path, eval_labels[&name.pid], name.camera, false)?);
    }
    let mut gallery = Vec::with_capacity(gallery_files.len());
    for (path, name) in gallery_files {
        let (label, distractor) = match eval_labels.get(&name.pid) {
            Some(&l) if !name.is_junk() => (l, false),
            _ => (junk_label, true),
        };
        gallery.push(read_sample(path, label, name.camera, distractor)?);
    }

    Ok(MarketDataset {
        train: Dataset::new(train, Split::Train)?,
        query: Dataset::new(query, Split::Query)?,
        gallery: Dataset::new(gallery, Split::Gallery)?,
    })
}

fn relabel<'a>(names: impl Iterator<Item = &'a MarketName>) -> BTreeMap<i64, usize> {
    let mut pids: Vec<i64> = names.filter(|n| !n.is_junk()).map(|n| n.pid).collect();
    pids.sort_unstable();
    pids.dedup();
    pids.into_iter().enumerate().map(|(i, p)| (p, i)).collect()
}

fn list_split(root: &Path, dir: &str) -> Result<Vec<(PathBuf, MarketName)>> {
    let path = root.join(dir);
    if !path.is_dir() {
        return Err(Error::config(
            path.display().to_string(),
            format!("missing `{dir}/` directory"),
        ));
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(&path).map_err(|e| Error::io(&path, e))? {
        let entry = entry.map_err(|e| Error::io(&path, e))?;
        let file = entry.path();
        let is_image = file
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            .unwrap_or(false);
        if file.is_file() && is_image {
            files.push(file);
        }
    }
    files.sort();
    files
        .into_iter()
        .map(|f| parse_market_filename(&f).map(|n| (f, n)))
        .collect()
}

fn read_sample(path: PathBuf, identity: usize, camera: usize, distractor: bool) -> Result<ImageSample> {
    let pixels = image::open(&path)
        .map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?
        .to_rgb8();
    Ok(ImageSample {
        pixels,
        identity,
        camera,
        path: Some(path),
        distractor,
    })
}

/// Writes the three splits as PNG files under the Market directory layout.
///
/// Identity label `i` is written as pid `i + 1` (pid 0 is reserved for junk)
/// and distractors as pid `0000`. Returns the number of files written.
pub fn write_market_format(root: &Path, train: &Dataset, query: &Dataset, gallery: &Dataset) -> Result<usize> {
    let mut written = 0;
    for (dir, ds) in [(TRAIN_DIR, train), (QUERY_DIR, query), (GALLERY_DIR, gallery)] {
        let path = root.join(dir);
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        for (idx, s) in ds.samples().iter().enumerate() {
            let pid = if s.distractor { 0 } else { s.identity + 1 };
            let file = path.join(format!("{pid:04}_c{}s1_{idx:06}_00.png", s.camera + 1));
            s.pixels.save(&file).map_err(|source| Error::Image {
                path: file.clone(),
                source,
            })?;
            written += 1;
        }
    }
    Ok(written)
}
