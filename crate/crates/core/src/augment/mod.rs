//! The "divide" stage: shared random augmentation, random erasing, random
//! scaling onto a mean-filled baseboard, and expansion of one image into
//! aligned per-branch copies.

use image::{Rgb, RgbImage};
use ndarray::{Array3, ArrayViewMut3};
use rand::{Rng as _, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

mod resize;

pub use resize::resize_bilinear;

/// ImageNet per-channel means, unit scale.
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
/// ImageNet per-channel standard deviations, unit scale.
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Zoom values below this are pasted at the baseboard centre.
pub const CENTER_PASTE_BELOW: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchTransform {
    Identity,
    Erase,
    Scale,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    /// Independent uniform intensity per pixel and channel.
    Noise,
    /// The baseboard channel means.
    Mean,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EraseParams {
    /// Erased area as a fraction of the image area, `[lo, hi]`.
    pub area_fraction: [f64; 2],
    /// Rectangle height / width, `[lo, hi]`.
    pub aspect_ratio: [f64; 2],
    pub fill: FillMode,
    pub max_attempts: usize,
}

impl Default for EraseParams {
    fn default() -> Self {
        Self {
            area_fraction: [0.02, 0.4],
            aspect_ratio: [0.3, 3.33],
            fill: FillMode::Noise,
            max_attempts: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleParams {
    pub zoom_min: f64,
    pub zoom_max: f64,
    /// Baseboard colour in unit-scale RGB.
    pub baseboard_fill: [f64; 3],
}

impl Default for ScaleParams {
    fn default() -> Self {
        Self {
            zoom_min: 0.8,
            zoom_max: 1.1,
            baseboard_fill: IMAGENET_MEAN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub height: u32,
    pub width: u32,
    pub flip_probability: f64,
    pub crop_padding: u32,
    pub erase: EraseParams,
    pub scale: ScaleParams,
    /// One transform per branch; the first entry feeds the master branch.
    pub branch_plan: Vec<BranchTransform>,
    /// Run the shared augmentation once for all branches (homologous input)
    /// instead of once per branch.
    pub homologous: bool,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            height: 384,
            width: 128,
            flip_probability: 0.5,
            crop_padding: 10,
            erase: EraseParams::default(),
            scale: ScaleParams::default(),
            branch_plan: vec![BranchTransform::Identity, BranchTransform::Erase, BranchTransform::Scale],
            homologous: true,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

impl AugmentConfig {
    pub fn num_branches(&self) -> usize {
        self.branch_plan.len()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, msg: &str| Err(Error::config(format!("augment.{key}"), msg));
        if self.height < crate::data::MIN_IMAGE_SIDE || self.width < crate::data::MIN_IMAGE_SIDE {
            return err("height", "target size must be at least 8x8");
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return err("flip_probability", "must lie in [0, 1]");
        }
        let [a0, a1] = self.erase.area_fraction;
        if !(a0 > 0.0 && a0 <= a1 && a1 < 1.0) {
            return err("erase.area_fraction", "must satisfy 0 < lo <= hi < 1");
        }
        let [r0, r1] = self.erase.aspect_ratio;
        if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
            return err("erase.aspect_ratio", "must satisfy 0 < lo <= hi");
        }
        if !(self.scale.zoom_min > 0.0 && self.scale.zoom_min <= self.scale.zoom_max && self.scale.zoom_max.is_finite()) {
            return err("scale.zoom_min", "must satisfy 0 < zoom_min <= zoom_max");
        }
        if self.scale.baseboard_fill.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return err("scale.baseboard_fill", "channels must lie in [0, 1]");
        }
        if self.branch_plan.is_empty() {
            return err("branch_plan", "needs at least one branch");
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return err("std", "must be positive");
        }
        Ok(())
    }

    fn baseboard_rgb(&self) -> Rgb<u8> {
        Rgb(self.scale.baseboard_fill.map(|c| (c * 255.0 + 0.5).floor() as u8))
    }
}

/// Axis-aligned pixel rectangle, `top/left` inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: u32,
    pub left: u32,
    pub height: u32,
    pub width: u32,
}

impl Rect {
    pub fn contains(&self, y: u32, x: u32) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

pub fn flip_horizontal(image: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(image)
}

/// Resize to the target size, random horizontal flip, then an edge-replicated
/// pad by `crop_padding` and a crop back to the target size at a uniform offset.
pub fn base_augment(image: &RgbImage, config: &AugmentConfig, rng: &mut Rng) -> RgbImage {
    let resized = resize_bilinear(image, config.height, config.width);
    let flipped = if config.flip_probability > 0.0 && rng.gen_bool(config.flip_probability) {
        flip_horizontal(&resized)
    } else {
        resized
    };
    let pad = config.crop_padding;
    if pad == 0 {
        return flipped;
    }
    let dy = rng.gen_range(0..=2 * pad);
    let dx = rng.gen_range(0..=2 * pad);
    crop_padded(&flipped, pad, dy, dx)
}

/// Crops the edge-replicated `pad`-padded image at offset `(dy, dx)` in the
/// padded frame.
pub fn crop_padded(image: &RgbImage, pad: u32, dy: u32, dx: u32) -> RgbImage {
    let (w, h) = image.dimensions();
    let clamp = |v: i64, n: u32| v.clamp(0, n as i64 - 1) as u32;
    RgbImage::from_fn(w, h, |x, y| {
        let sy = clamp(y as i64 + dy as i64 - pad as i64, h);
        let sx = clamp(x as i64 + dx as i64 - pad as i64, w);
        *image.get_pixel(sx, sy)
    })
}

/// Overwrites one random rectangle. Returns the image and the rectangle, or
/// the unchanged image and `None` when no sampled rectangle fits.
pub fn random_erase_region(image: &RgbImage, config: &AugmentConfig, rng: &mut Rng) -> (RgbImage, Option<Rect>) {
    let (w, h) = image.dimensions();
    let p = &config.erase;
    let area = (h * w) as f64;
    for _ in 0..p.max_attempts {
        let target = uniform(rng, p.area_fraction[0], p.area_fraction[1]) * area;
        let aspect = uniform(rng, p.aspect_ratio[0], p.aspect_ratio[1]);
        let eh = (target * aspect).sqrt().round() as u32;
        let ew = (target / aspect).sqrt().round() as u32;
        if eh == 0 || ew == 0 || eh > h || ew > w {
            continue;
        }
        let rect = Rect {
            top: rng.gen_range(0..=h - eh),
            left: rng.gen_range(0..=w - ew),
            height: eh,
            width: ew,
        };
        let mut out = image.clone();
        let mean = config.baseboard_rgb();
        for y in rect.top..rect.top + eh {
            for x in rect.left..rect.left + ew {
                let px = match p.fill {
                    FillMode::Noise => Rgb([rng.gen(), rng.gen(), rng.gen()]),
                    FillMode::Mean => mean,
                    FillMode::Zero => Rgb([0, 0, 0]),
                };
                out.put_pixel(x, y, px);
            }
        }
        return (out, Some(rect));
    }
    (image.clone(), None)
}

pub fn random_erase(image: &RgbImage, config: &AugmentConfig, rng: &mut Rng) -> RgbImage {
    random_erase_region(image, config, rng).0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZoomRegime {
    /// Scaled image pasted at the baseboard centre.
    Center,
    /// Scaled image pasted at a uniform fully-inside offset.
    Anywhere,
    /// Scaled image centred and cropped to the baseboard.
    Crop,
}

impl ZoomRegime {
    pub fn for_zoom(z: f64) -> Self {
        if z < CENTER_PASTE_BELOW {
            ZoomRegime::Center
        } else if z <= 1.0 {
            ZoomRegime::Anywhere
        } else {
            ZoomRegime::Crop
        }
    }
}

/// Where the scaled image landed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScalePlacement {
    pub regime: ZoomRegime,
    pub scaled_height: u32,
    pub scaled_width: u32,
    /// Signed position of the scaled image's top-left corner on the
    /// baseboard; negative in the crop regime, where `(-top, -left)` is the
    /// crop origin inside the scaled image.
    pub top: i64,
    pub left: i64,
}

/// Scaled side length: round-half-up of `z * side`.
pub fn scaled_side(side: u32, z: f64) -> u32 {
    ((side as f64 * z) + 0.5).floor().max(1.0) as u32
}

/// Random scaling with the zoom drawn from `[zoom_min, zoom_max]`.
pub fn random_scale(image: &RgbImage, config: &AugmentConfig, rng: &mut Rng) -> RgbImage {
    let z = if config.scale.zoom_min < config.scale.zoom_max {
        rng.gen_range(config.scale.zoom_min..=config.scale.zoom_max)
    } else {
        config.scale.zoom_min
    };
    random_scale_with_zoom(image, z, config, rng).0
}

/// Random scaling with a fixed zoom `z`; `rng` is only consulted in the
/// "anywhere" regime.
pub fn random_scale_with_zoom(image: &RgbImage, z: f64, config: &AugmentConfig, rng: &mut Rng) -> (RgbImage, ScalePlacement) {
    let (w, h) = image.dimensions();
    let (sh, sw) = (scaled_side(h, z), scaled_side(w, z));
    let scaled = resize_bilinear(image, sh, sw);
    let regime = ZoomRegime::for_zoom(z);
    // Paste offset floor((board - inner) / 2); crop origin floor((inner - board) / 2).
    let centered = |board: u32, inner: u32| {
        if inner <= board {
            ((board - inner) / 2) as i64
        } else {
            -(((inner - board) / 2) as i64)
        }
    };
    let (top, left) = match regime {
        ZoomRegime::Anywhere if sh <= h && sw <= w => {
            (rng.gen_range(0..=h - sh) as i64, rng.gen_range(0..=w - sw) as i64)
        }
        _ => (centered(h, sh), centered(w, sw)),
    };
    let fill = config.baseboard_rgb();
    let out = RgbImage::from_fn(w, h, |x, y| {
        let sy = y as i64 - top;
        let sx = x as i64 - left;
        if sy >= 0 && sx >= 0 && sy < sh as i64 && sx < sw as i64 {
            *scaled.get_pixel(sx as u32, sy as u32)
        } else {
            fill
        }
    });
    (
        out,
        ScalePlacement {
            regime,
            scaled_height: sh,
            scaled_width: sw,
            top,
            left,
        },
    )
}

/// Aligned per-branch copies of one source image.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchInputs {
    pub images: Vec<RgbImage>,
    /// Post-augmentation image shared by all branches (the first branch's
    /// augmented image in heterologous mode).
    pub source: RgbImage,
}

fn apply_branch(t: BranchTransform, source: &RgbImage, config: &AugmentConfig, rng: &mut Rng) -> RgbImage {
    match t {
        BranchTransform::Identity => source.clone(),
        BranchTransform::Erase => random_erase(source, config, rng),
        BranchTransform::Scale => random_scale(source, config, rng),
    }
}

/// Expands one image into `branch_plan.len()` copies.
///
/// Two seeds are drawn from `rng` up front: one drives the shared
/// augmentation and one spawns an independent stream per branch, so the
/// branch transforms never perturb the shared draws.
pub fn homologous_expand(image: &RgbImage, config: &AugmentConfig, rng: &mut Rng) -> BranchInputs {
    let base_seed = rng.next_u64();
    let branch_seed = rng.next_u64();
    let branch_rng = |k: usize| rng::stream(branch_seed, k as u64);
    if config.homologous {
        let source = base_augment(image, config, &mut rng::seeded(base_seed));
        let images = config
            .branch_plan
            .iter()
            .enumerate()
            .map(|(k, &t)| apply_branch(t, &source, config, &mut branch_rng(k)))
            .collect();
        BranchInputs { images, source }
    } else {
        let bases: Vec<RgbImage> = (0..config.branch_plan.len())
            .map(|k| base_augment(image, config, &mut rng::stream(base_seed, k as u64)))
            .collect();
        let images = config
            .branch_plan
            .iter()
            .zip(&bases)
            .enumerate()
            .map(|(k, (&t, b))| apply_branch(t, b, config, &mut branch_rng(k)))
            .collect();
        BranchInputs {
            images,
            source: bases[0].clone(),
        }
    }
}

/// Per-channel `(v / 255 - mean) / std`, channel-first `3 × H × W`.
pub fn normalize_image(image: &RgbImage, config: &AugmentConfig) -> Array3<f32> {
    let (w, h) = image.dimensions();
    let mut out = Array3::zeros((3, h as usize, w as usize));
    normalize_into(image, config, out.view_mut());
    out
}

/// [`normalize_image`] writing into a preallocated `3 × H × W` view.
pub fn normalize_into(image: &RgbImage, config: &AugmentConfig, mut out: ArrayViewMut3<f32>) {
    // 256-entry lookup per channel; computed in f64 so a pixel equal to
    // mean * 255 maps to exactly zero.
    let lut: [[f32; 256]; 3] = std::array::from_fn(|c| {
        std::array::from_fn(|v| ((v as f64 / 255.0 - config.mean[c]) / config.std[c]) as f32)
    });
    for (x, y, px) in image.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = lut[c][px.0[c] as usize];
        }
    }
}

/// Deterministic test-time transform: resize only.
pub fn inference_transform(image: &RgbImage, config: &AugmentConfig) -> RgbImage {
    resize_bilinear(image, config.height, config.width)
}
