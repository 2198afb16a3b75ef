//! Synthetic pedestrians: block figures whose colours and layout encode the
//! identity, rendered under camera-dependent tint with position jitter,
//! optional occluders and optional scale jitter.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{write_market_format, Dataset, ImageSample, Split};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

const APPEARANCE_STREAM: u64 = 1;
const CAMERA_STREAM: u64 = 2;
const INSTANCE_STREAM: u64 = 3;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub num_identities: usize,
    pub images_per_identity: usize,
    pub height: u32,
    pub width: u32,
    pub num_cameras: usize,
    /// Probability that an instance carries an occluding rectangle.
    pub occluder_probability: f64,
    /// Person scale is drawn from `1 ± scale_jitter`.
    pub scale_jitter: f64,
    /// Maximum figure shift in pixels along each axis.
    pub position_jitter: u32,
    /// Per-pixel uniform noise amplitude in intensity units.
    pub noise_amplitude: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            num_identities: 40,
            images_per_identity: 20,
            height: 64,
            width: 32,
            num_cameras: 4,
            occluder_probability: 0.35,
            scale_jitter: 0.15,
            position_jitter: 3,
            noise_amplitude: 8.0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("toy.{key}"), msg))
            }
        };
        check(self.num_identities >= 4, "num_identities", "must be at least 4")?;
        check(self.num_cameras >= 2, "num_cameras", "must be at least 2")?;
        check(
            self.height >= super::MIN_IMAGE_SIDE && self.width >= super::MIN_IMAGE_SIDE,
            "height",
            "images must be at least 8x8",
        )?;
        check(
            (0.0..=1.0).contains(&self.occluder_probability),
            "occluder_probability",
            "must lie in [0, 1]",
        )?;
        check(
            (0.0..0.5).contains(&self.scale_jitter),
            "scale_jitter",
            "must lie in [0, 0.5)",
        )?;
        check(
            self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite(),
            "noise_amplitude",
            "must be finite and non-negative",
        )?;
        let (_, _, train) = split_counts(self.images_per_identity);
        check(
            self.images_per_identity >= 4,
            "images_per_identity",
            "must be at least 4",
        )?;
        check(
            train >= 2,
            "images_per_identity",
            "leaves fewer than 2 training images per identity",
        )
    }
}

/// Per-identity (query, gallery, train) counts: 10% / 30% / remainder.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let round = |x: f64| (x + 0.5).floor() as usize;
    let query = round(n as f64 * 0.1).max(1);
    let gallery = round(n as f64 * 0.3).max(1);
    (query, gallery, n.saturating_sub(query + gallery))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyManifest {
    pub format_version: u32,
    pub seed: u64,
    pub config: ToyConfig,
    pub num_train: usize,
    pub num_query: usize,
    pub num_gallery: usize,
}

#[derive(Clone, Debug)]
pub struct ToyDataset {
    pub config: ToyConfig,
    pub seed: u64,
    pub train: Dataset,
    pub query: Dataset,
    pub gallery: Dataset,
}

impl ToyDataset {
    pub fn manifest(&self) -> ToyManifest {
        ToyManifest {
            format_version: MANIFEST_VERSION,
            seed: self.seed,
            config: self.config.clone(),
            num_train: self.train.len(),
            num_query: self.query.len(),
            num_gallery: self.gallery.len(),
        }
    }

    /// Writes the Market-style directory plus `manifest.json`.
    pub fn write_to(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        write_market_format(root, &self.train, &self.query, &self.gallery)?;
        let path = root.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn generate_toy_dataset(config: &ToyConfig, seed: u64) -> Result<ToyDataset> {
    config.validate()?;
    let cameras: Vec<Camera> = (0..config.num_cameras)
        .map(|c| Camera::sample(&mut rng::stream(rng::mix(&[seed, c as u64]), CAMERA_STREAM)))
        .collect();
    let (n_query, n_gallery, _) = split_counts(config.images_per_identity);
    let (mut train, mut query, mut gallery) = (Vec::new(), Vec::new(), Vec::new());
    for id in 0..config.num_identities {
        let look = Appearance::sample(&mut rng::stream(rng::mix(&[seed, id as u64]), APPEARANCE_STREAM));
        for j in 0..config.images_per_identity {
            let camera = (id + j) % config.num_cameras;
            let mut irng = rng::stream(rng::mix(&[seed, id as u64, j as u64]), INSTANCE_STREAM);
            let params = InstanceParams::sample(config, &mut irng);
            let pixels = render(config, &look, &cameras[camera], &params, &mut irng);
            let sample = ImageSample::new(pixels, id, camera);
            if j < n_query {
                query.push(sample);
            } else if j < n_query + n_gallery {
                gallery.push(sample);
            } else {
                train.push(sample);
            }
        }
    }
    Ok(ToyDataset {
        config: config.clone(),
        seed,
        train: Dataset::new(train, Split::Train)?,
        query: Dataset::new(query, Split::Query)?,
        gallery: Dataset::new(gallery, Split::Gallery)?,
    })
}

type Color = [f32; 3];

fn color(rng: &mut Rng, lo: f32, hi: f32) -> Color {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

#[derive(Clone, Copy, Debug)]
enum Pattern {
    Solid,
    Stripes,
    Halves,
    Band,
}

#[derive(Clone, Debug)]
struct Appearance {
    skin: Color,
    hair: Color,
    upper: Color,
    accent: Color,
    lower: Color,
    shoes: Color,
    pattern: Pattern,
    bag: Option<(bool, Color)>,
    body_width: f32,
    leg_ratio: f32,
}

impl Appearance {
    fn sample(rng: &mut Rng) -> Self {
        let r = rng.gen_range(150.0..240.0);
        let g = r * rng.gen_range(0.6..0.85);
        let b = g * rng.gen_range(0.6..0.9);
        let pattern = match rng.gen_range(0..4) {
            0 => Pattern::Solid,
            1 => Pattern::Stripes,
            2 => Pattern::Halves,
            _ => Pattern::Band,
        };
        Self {
            skin: [r, g, b],
            hair: color(rng, 0.0, 120.0),
            upper: color(rng, 0.0, 255.0),
            accent: color(rng, 0.0, 255.0),
            lower: color(rng, 0.0, 255.0),
            shoes: color(rng, 0.0, 90.0),
            pattern,
            bag: rng.gen_bool(0.4).then(|| (rng.gen_bool(0.5), color(rng, 0.0, 255.0))),
            body_width: rng.gen_range(0.75..1.0),
            leg_ratio: rng.gen_range(0.38..0.48),
        }
    }
}

#[derive(Clone, Debug)]
struct Camera {
    tint: Color,
    background: Color,
    gradient: f32,
}

impl Camera {
    fn sample(rng: &mut Rng) -> Self {
        Self {
            tint: [
                rng.gen_range(0.75..1.25),
                rng.gen_range(0.75..1.25),
                rng.gen_range(0.75..1.25),
            ],
            background: color(rng, 60.0, 200.0),
            gradient: rng.gen_range(-40.0..40.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Occluder {
    top: f32,
    height: f32,
    left: f32,
    width: f32,
    color: Color,
}

#[derive(Clone, Debug, PartialEq)]
struct InstanceParams {
    dx: f32,
    dy: f32,
    scale: f32,
    occluder: Option<Occluder>,
}

impl InstanceParams {
    fn sample(config: &ToyConfig, rng: &mut Rng) -> Self {
        let j = config.position_jitter as i32;
        let dx = rng.gen_range(-j..=j) as f32;
        let dy = rng.gen_range(-j..=j) as f32;
        let scale = if config.scale_jitter > 0.0 {
            let s = config.scale_jitter as f32;
            1.0 + rng.gen_range(-s..s)
        } else {
            1.0
        };
        let occluder = (config.occluder_probability > 0.0 && rng.gen_bool(config.occluder_probability))
            .then(|| Occluder {
                top: rng.gen_range(0.25..0.75),
                height: rng.gen_range(0.15..0.35),
                left: rng.gen_range(-0.2..0.3),
                width: rng.gen_range(0.5..1.0),
                color: color(rng, 0.0, 255.0),
            });
        Self {
            dx,
            dy,
            scale,
            occluder,
        }
    }
}

/// Float RGB canvas with half-open rectangle fills at pixel centres.
struct Canvas {
    w: usize,
    h: usize,
    px: Vec<Color>,
}

impl Canvas {
    fn fill(&mut self, x0: f32, y0: f32, x1: f32, y1: f32, c: Color) {
        for y in 0..self.h {
            let cy = y as f32 + 0.5;
            if cy < y0 || cy >= y1 {
                continue;
            }
            for x in 0..self.w {
                let cx = x as f32 + 0.5;
                if cx >= x0 && cx < x1 {
                    self.px[y * self.w + x] = c;
                }
            }
        }
    }
}

fn render(config: &ToyConfig, look: &Appearance, cam: &Camera, p: &InstanceParams, rng: &mut Rng) -> RgbImage {
    let (w, h) = (config.width as usize, config.height as usize);
    let (wf, hf) = (w as f32, h as f32);
    let mut canvas = Canvas {
        w,
        h,
        px: vec![[0.0; 3]; w * h],
    };
    for y in 0..h {
        let shade = cam.gradient * (y as f32 / hf - 0.5);
        for x in 0..w {
            canvas.px[y * w + x] = cam.background.map(|c| c + shade);
        }
    }

    let fh = 0.88 * hf * p.scale;
    let fw = 0.46 * wf * p.scale * look.body_width;
    let cx = wf / 2.0 + p.dx;
    let top = (hf - fh) / 2.0 + p.dy;
    let y_at = |t: f32| top + t * fh;
    let x_at = |t: f32| cx + t * fw;

    // head + hair
    canvas.fill(x_at(-0.22), y_at(0.0), x_at(0.22), y_at(0.16), look.skin);
    canvas.fill(x_at(-0.22), y_at(0.0), x_at(0.22), y_at(0.05), look.hair);
    // torso
    let torso = (0.16, 1.0 - look.leg_ratio - 0.05);
    canvas.fill(x_at(-0.5), y_at(torso.0), x_at(0.5), y_at(torso.1), look.upper);
    match look.pattern {
        Pattern::Solid => {}
        Pattern::Stripes => {
            let n = 4;
            let step = (torso.1 - torso.0) / (2 * n) as f32;
            for k in 0..n {
                let t0 = torso.0 + (2 * k + 1) as f32 * step;
                canvas.fill(x_at(-0.5), y_at(t0), x_at(0.5), y_at(t0 + step), look.accent);
            }
        }
        Pattern::Halves => canvas.fill(x_at(0.0), y_at(torso.0), x_at(0.5), y_at(torso.1), look.accent),
        Pattern::Band => {
            let mid = (torso.0 + torso.1) / 2.0;
            canvas.fill(x_at(-0.5), y_at(mid - 0.04), x_at(0.5), y_at(mid + 0.04), look.accent)
        }
    }
    // legs + shoes
    let legs = (torso.1, 0.95);
    canvas.fill(x_at(-0.45), y_at(legs.0), x_at(-0.04), y_at(legs.1), look.lower);
    canvas.fill(x_at(0.04), y_at(legs.0), x_at(0.45), y_at(legs.1), look.lower);
    canvas.fill(x_at(-0.45), y_at(0.95), x_at(-0.04), y_at(1.0), look.shoes);
    canvas.fill(x_at(0.04), y_at(0.95), x_at(0.45), y_at(1.0), look.shoes);
    if let Some((right, c)) = look.bag {
        let (a, b) = if right { (0.5, 0.75) } else { (-0.75, -0.5) };
        canvas.fill(x_at(a), y_at(0.3), x_at(b), y_at(0.55), c);
    }
    if let Some(o) = &p.occluder {
        canvas.fill(
            o.left * wf,
            o.top * hf,
            (o.left + o.width) * wf,
            (o.top + o.height) * hf,
            o.color,
        );
    }

    let amp = config.noise_amplitude as f32;
    let mut out = RgbImage::new(config.width, config.height);
    for (i, px) in canvas.px.iter().enumerate() {
        let mut rgb = [0u8; 3];
        for c in 0..3 {
            let noise = if amp > 0.0 { rng.gen_range(-amp..=amp) } else { 0.0 };
            rgb[c] = (px[c] * cam.tint[c] + noise).round().clamp(0.0, 255.0) as u8;
        }
        out.put_pixel((i % w) as u32, (i / w) as u32, Rgb(rgb));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyConfig {
        ToyConfig {
            num_identities: 6,
            images_per_identity: 10,
            height: 32,
            width: 16,
            ..ToyConfig::default()
        }
    }

    #[test]
    fn split_rule() {
        assert_eq!(split_counts(20), (2, 6, 12));
        assert_eq!(split_counts(10), (1, 3, 6));
        assert_eq!(split_counts(4), (1, 1, 2));
        assert_eq!(split_counts(3), (1, 1, 1));
    }

    #[test]
    fn too_few_images_is_rejected() {
        let cfg = ToyConfig {
            images_per_identity: 3,
            ..small()
        };
        assert!(generate_toy_dataset(&cfg, 0).is_err());
    }

    #[test]
    fn seeds_change_pixels() {
        let a = generate_toy_dataset(&small(), 1).unwrap();
        let b = generate_toy_dataset(&small(), 2).unwrap();
        assert_ne!(a.train.samples()[0].pixels, b.train.samples()[0].pixels);
    }

    #[test]
    fn every_query_has_a_cross_camera_gallery_match() {
        let ds = generate_toy_dataset(&ToyConfig::default(), 1).unwrap();
        for q in ds.query.samples() {
            assert!(ds
                .gallery
                .samples()
                .iter()
                .any(|g| g.identity == q.identity && g.camera != q.camera));
        }
    }

    #[test]
    fn disabled_nuisances_leave_only_tint_and_shift() {
        let cfg = ToyConfig {
            occluder_probability: 0.0,
            scale_jitter: 0.0,
            ..small()
        };
        for j in 0..20u64 {
            let p = InstanceParams::sample(&cfg, &mut rng::stream(j, INSTANCE_STREAM));
            assert_eq!(p.scale, 1.0);
            assert!(p.occluder.is_none());
        }
        // Same camera, no noise: two instances are translates of one another.
        let cfg = ToyConfig {
            noise_amplitude: 0.0,
            position_jitter: 0,
            ..cfg
        };
        let ds = generate_toy_dataset(&cfg, 9).unwrap();
        let same_cam: Vec<&ImageSample> = ds
            .train
            .samples()
            .iter()
            .filter(|s| s.identity == 0 && s.camera == ds.train.samples()[0].camera)
            .collect();
        assert!(same_cam.len() >= 2);
        assert_eq!(same_cam[0].pixels, same_cam[1].pixels);
    }
}
