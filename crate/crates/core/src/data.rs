//! Paired dataset discovery, decoding and `[-1, 1]` normalization.
//!
//! Every layout shares one canonical tree:
//!
//! ```text
//! <root>/train/source/<name>.png    <root>/train/visible/<name>.png
//! <root>/test/source/<name>.png     <root>/test/visible/<name>.png
//! ```
//!
//! A source image pairs with the visible image at the same relative path.
//! The identity of a pair is its first subdirectory when names are nested
//! (`source/subject07/001.png`), otherwise the file-name prefix before the
//! first `_` (`subject07_001.png`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use image::imageops::FilterType;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::config::DatasetLayout;
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Rank-4 `(batch, channel, height, width)` image tensor with values in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ImageBatch(Tensor);

impl ImageBatch {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(Error::Shape(format!("image batch must be rank 4, got {:?}", tensor.dims())));
        }
        Ok(ImageBatch(tensor))
    }

    /// Normalizes 8-bit RGB images (all the same size) into one batch.
    pub fn from_images(images: &[RgbImage], device: &Device) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("cannot build an empty image batch".into()))?;
        let (w, h) = first.dimensions();
        let (w, h) = (w as usize, h as usize);
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in images {
            if img.dimensions() != first.dimensions() {
                return Err(Error::Shape(format!(
                    "mixed image sizes {:?} and {:?}",
                    first.dimensions(),
                    img.dimensions()
                )));
            }
            for c in 0..3 {
                data.extend(img.pixels().map(|p| normalize_u8(p.0[c])));
            }
        }
        ImageBatch::new(Tensor::from_vec(data, (images.len(), 3, h, w), device)?)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn to_dtype(&self, dtype: DType) -> Result<Self> {
        Ok(ImageBatch(self.0.to_dtype(dtype)?))
    }

    /// Concatenates batches along the batch dimension.
    pub fn stack(batches: &[ImageBatch]) -> Result<Self> {
        let tensors: Vec<&Tensor> = batches.iter().map(|b| &b.0).collect();
        ImageBatch::new(Tensor::cat(&tensors, 0)?)
    }
}

/// `v / 127.5 - 1`, so 0 maps to -1 and 255 to 1 exactly.
pub fn normalize_u8(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

/// Inverse of [`normalize_u8`] with clamping and round-half-away-from-zero.
pub fn denormalize_value(x: f32) -> u8 {
    ((x.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Converts a batch back to 8-bit RGB images, one per batch entry.
pub fn denormalize(batch: &ImageBatch) -> Result<Vec<RgbImage>> {
    let t = batch.tensor().to_dtype(DType::F32)?;
    let (b, c, h, w) = t.dims4()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let data: Vec<f32> = t.flatten_all()?.to_vec1()?;
    let plane = h * w;
    Ok((0..b)
        .map(|i| {
            let base = i * 3 * plane;
            RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let at = y as usize * w + x as usize;
                image::Rgb([0, 1, 2].map(|ch| denormalize_value(data[base + ch * plane + at])))
            })
        })
        .collect())
}

/// Translation direction: source to visible (`G_V`) or visible to source (`G_T`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    T2V,
    V2T,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::T2V => "t2v",
            Direction::V2T => "v2t",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t2v" => Ok(Direction::T2V),
            "v2t" => Ok(Direction::V2T),
            other => Err(Error::Lookup {
                kind: "direction",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedSample {
    #[serde(rename = "source")]
    pub source_path: PathBuf,
    #[serde(rename = "visible")]
    pub visible_path: PathBuf,
    pub identity: String,
    pub split: Split,
}

impl PairedSample {
    /// Relative name shared by both files, used as the pair id in reports.
    pub fn name(&self) -> String {
        self.source_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub layout: DatasetLayout,
    pub train: Vec<PairedSample>,
    pub test: Vec<PairedSample>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    layout: DatasetLayout,
    pairs: Vec<PairedSample>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> &[PairedSample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ManifestFile {
            layout: self.layout,
            pairs: self.train.iter().chain(&self.test).cloned().collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ManifestFile = serde_json::from_str(text)?;
        let (train, test) = file.pairs.into_iter().partition(|p| p.split == Split::Train);
        Ok(DatasetManifest {
            layout: file.layout,
            train,
            test,
        })
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Image files under `dir`, keyed by path relative to `dir`.
fn list_images(dir: &Path) -> Result<BTreeMap<PathBuf, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing dataset directory"),
        ));
    }
    let mut out = BTreeMap::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file() && is_image(entry.path()) {
            let rel = entry
                .path()
                .strip_prefix(dir)
                .expect("walkdir yields children of its root")
                .to_path_buf();
            out.insert(rel, entry.path().to_path_buf());
        }
    }
    Ok(out)
}

fn identity_of(rel: &Path) -> String {
    let mut parts = rel.components();
    let first = parts.next().map(|c| c.as_os_str().to_string_lossy().into_owned());
    if parts.next().is_some() {
        return first.unwrap_or_default();
    }
    let stem = rel
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match stem.split_once('_') {
        Some((prefix, _)) if !prefix.is_empty() => prefix.to_string(),
        _ => stem,
    }
}

fn scan_split(root: &Path, split: Split) -> Result<Vec<PairedSample>> {
    let base = root.join(split.dir_name());
    let sources = list_images(&base.join("source"))?;
    let visibles = list_images(&base.join("visible"))?;
    if let Some((_, orphan)) = sources.iter().find(|(rel, _)| !visibles.contains_key(*rel)) {
        return Err(Error::Pairing {
            orphan: orphan.clone(),
            missing: "visible",
        });
    }
    if let Some((_, orphan)) = visibles.iter().find(|(rel, _)| !sources.contains_key(*rel)) {
        return Err(Error::Pairing {
            orphan: orphan.clone(),
            missing: "source",
        });
    }
    if sources.is_empty() {
        return Err(Error::EmptyDataset(format!("no image pairs under {}", base.display())));
    }
    Ok(sources
        .into_iter()
        .map(|(rel, source_path)| PairedSample {
            visible_path: visibles[&rel].clone(),
            identity: identity_of(&rel),
            source_path,
            split,
        })
        .collect())
}

/// Discovers and pairs both splits under `root`.
///
/// The result is sorted by relative path. For the `whu_iip` layout the train
/// and test identities must be disjoint.
pub fn scan_paired_dataset(root: &Path, layout: DatasetLayout) -> Result<DatasetManifest> {
    let train = scan_split(root, Split::Train)?;
    let test = scan_split(root, Split::Test)?;
    if layout == DatasetLayout::WhuIip {
        let train_ids: BTreeSet<&str> = train.iter().map(|s| s.identity.as_str()).collect();
        if let Some(shared) = test.iter().find(|s| train_ids.contains(s.identity.as_str())) {
            return Err(Error::validation(
                "dataset.layout",
                format!(
                    "identity `{}` appears in both splits; whu_iip requires subject-exclusive splits",
                    shared.identity
                ),
            ));
        }
    }
    Ok(DatasetManifest { layout, train, test })
}

/// Decodes an image as 8-bit RGB (grayscale replicated) resized to `size x size`.
pub fn load_image(path: &Path, size: u32) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = img.to_rgb8();
    if rgb.dimensions() == (size, size) {
        return Ok(rgb);
    }
    Ok(image::imageops::resize(&rgb, size, size, FilterType::Triangle))
}

/// Loads `(source, visible)` as two `(1, 3, size, size)` batches in `[-1, 1]`.
pub fn load_pair(sample: &PairedSample, image_size: usize) -> Result<(ImageBatch, ImageBatch)> {
    let size = image_size as u32;
    let device = Device::Cpu;
    let source = load_image(&sample.source_path, size)?;
    let visible = load_image(&sample.visible_path, size)?;
    Ok((
        ImageBatch::from_images(&[source], &device)?,
        ImageBatch::from_images(&[visible], &device)?,
    ))
}
