//! Synthetic ground textures, camera rendering and grayscale image I/O.
//!
//! Image frame convention: the pixel at column `c`, row `r` of a `w x h`
//! image sits at frame coordinates `(c - (w-1)/2, r - (h-1)/2)`, so the frame
//! origin is the image center and an image pose is the camera position.
//! World rasters use plain pixel coordinates, which double as map frame.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose2D;

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "image buffer of {} bytes does not fit {width}x{height}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, value: u8) {
        self.pixels[row * self.width + col] = value;
    }

    /// Frame coordinates of a (possibly fractional) pixel position.
    pub fn pixel_to_frame(&self, col: f64, row: f64) -> (f64, f64) {
        (
            col - (self.width as f64 - 1.0) / 2.0,
            row - (self.height as f64 - 1.0) / 2.0,
        )
    }

    pub fn frame_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x + (self.width as f64 - 1.0) / 2.0,
            y + (self.height as f64 - 1.0) / 2.0,
        )
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| p as f32).collect()
    }

    /// Camera footprint corners in the parent frame of `pose`.
    pub fn footprint(width: usize, height: usize, pose: &Pose2D) -> [(f64, f64); 4] {
        let hx = (width as f64 - 1.0) / 2.0;
        let hy = (height as f64 - 1.0) / 2.0;
        [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)].map(|(x, y)| pose.transform_point(x, y))
    }
}

pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .expect("buffer length checked at construction");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: other.to_string(),
            },
        })
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let luma = decoded.to_luma8();
    let (w, h) = luma.dimensions();
    GrayImage::new(w as usize, h as usize, luma.into_raw())
}

/// Texture family of a synthetic world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureKind {
    /// Fine isotropic grain, asphalt-like.
    Speckle,
    /// Streaks along one axis, wood-like.
    Crack,
    /// Piecewise-constant tiles with edges and junctions.
    Blob,
}

/// Serializable description of a world; the raster is regenerated from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub kind: TextureKind,
    /// Structure density in `(0, 1]`; meaning depends on `kind`.
    pub density: f64,
    /// Intensity spread around mid-gray.
    pub contrast: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            width: 2048,
            height: 2048,
            kind: TextureKind::Speckle,
            density: 0.5,
            contrast: 1.0,
        }
    }
}

impl WorldSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("world spec serializes")
    }
}

/// Immutable procedurally generated ground texture.
#[derive(Debug, Clone)]
pub struct TextureWorld {
    spec: WorldSpec,
    raster: Vec<f32>,
}

impl TextureWorld {
    pub fn generate(spec: WorldSpec) -> Result<Self> {
        if spec.width < 8 || spec.height < 8 {
            return Err(Error::InvalidParameter("world must be at least 8x8".into()));
        }
        if !(spec.density > 0.0 && spec.density <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "density {} outside (0, 1]",
                spec.density
            )));
        }
        if !(spec.contrast > 0.0) {
            return Err(Error::InvalidParameter("contrast must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (w, h) = (spec.width, spec.height);
        let mut field = match spec.kind {
            TextureKind::Speckle => speckle_field(w, h, spec.density, &mut rng),
            TextureKind::Crack => crack_field(w, h, spec.density, &mut rng),
            TextureKind::Blob => blob_field(w, h, spec.density, &mut rng),
        };
        standardize(&mut field);
        let scale = 40.0 * spec.contrast as f32;
        for v in &mut field {
            *v = (128.0 + scale * *v).clamp(0.0, 255.0);
        }
        Ok(Self { spec, raster: field })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    /// Bilinear intensity at world coordinates; `None` outside the raster.
    pub fn sample(&self, x: f64, y: f64) -> Option<f32> {
        let (w, h) = (self.spec.width, self.spec.height);
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return None;
        }
        let x0 = (x.floor() as usize).min(w - 2);
        let y0 = (y.floor() as usize).min(h - 2);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let i = y0 * w + x0;
        let r = &self.raster;
        let top = r[i] + (r[i + 1] - r[i]) * fx;
        let bottom = r[i + w] + (r[i + w + 1] - r[i + w]) * fx;
        Some(top + (bottom - top) * fy)
    }

    /// Whether a `width x height` view at `pose` lies inside the world.
    pub fn contains_view(&self, pose: &Pose2D, width: usize, height: usize) -> bool {
        let (mw, mh) = ((self.spec.width - 1) as f64, (self.spec.height - 1) as f64);
        GrayImage::footprint(width, height, pose)
            .iter()
            .all(|&(x, y)| x >= 0.0 && y >= 0.0 && x <= mw && y <= mh)
    }

    /// Samples the camera view at `pose`, adding Gaussian pixel noise.
    pub fn render_view(
        &self,
        pose: &Pose2D,
        width: usize,
        height: usize,
        noise_sigma: f64,
        noise_seed: u64,
    ) -> Result<GrayImage> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("view size must be positive".into()));
        }
        if !self.contains_view(pose, width, height) {
            return Err(Error::OutOfWorld);
        }
        let noise = if noise_sigma > 0.0 {
            Some(Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?)
        } else {
            None
        };
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let (s, c) = pose.theta.sin_cos();
        let hx = (width as f64 - 1.0) / 2.0;
        let hy = (height as f64 - 1.0) / 2.0;
        let (mw, mh) = ((self.spec.width - 1) as f64, (self.spec.height - 1) as f64);
        let mut pixels = Vec::with_capacity(width * height);
        for row in 0..height {
            let fy = row as f64 - hy;
            for col in 0..width {
                let fx = col as f64 - hx;
                // Corners are inside, so interior points are too; the clamp
                // only absorbs rounding at the border.
                let wx = (pose.x + c * fx - s * fy).clamp(0.0, mw);
                let wy = (pose.y + s * fx + c * fy).clamp(0.0, mh);
                let mut v = self.sample(wx, wy).unwrap_or(0.0) as f64;
                if let Some(n) = &noise {
                    v += n.sample(&mut rng);
                }
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        GrayImage::new(width, height, pixels)
    }
}

fn standardize(field: &mut [f32]) {
    let n = field.len() as f64;
    let mean = field.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = field.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    for v in field {
        *v = ((*v as f64 - mean) / sd) as f32;
    }
}

fn white_noise(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    (0..w * h).map(|_| normal.sample(rng)).collect()
}

fn speckle_field(w: usize, h: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    // Sparse impulses blurred into grains; density sets the impulse rate.
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let mut grains: Vec<f32> = (0..w * h)
        .map(|_| {
            if rng.random::<f64>() < density {
                normal.sample(rng)
            } else {
                0.0
            }
        })
        .collect();
    gaussian_blur(&mut grains, w, h, 1.6, 1.6);
    let mut coarse = white_noise(w, h, rng);
    gaussian_blur(&mut coarse, w, h, 5.0, 5.0);
    standardize(&mut grains);
    standardize(&mut coarse);
    grains
        .iter()
        .zip(&coarse)
        .map(|(g, c)| g + 0.35 * c)
        .collect()
}

fn crack_field(w: usize, h: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut streaks = white_noise(w, h, rng);
    gaussian_blur(&mut streaks, w, h, 14.0, 1.4);
    let mut grain = white_noise(w, h, rng);
    gaussian_blur(&mut grain, w, h, 1.6, 1.6);
    standardize(&mut streaks);
    standardize(&mut grain);
    let g = density as f32 * 0.6;
    streaks.iter().zip(&grain).map(|(s, n)| s + g * n).collect()
}

fn blob_field(w: usize, h: usize, density: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    // Voronoi tiles with random gray levels.
    let tile = 36.0;
    let gx = (w as f64 / tile).ceil() as usize + 1;
    let gy = (h as f64 / tile).ceil() as usize + 1;
    let sites: Vec<(f64, f64, f32)> = (0..gx * gy)
        .map(|i| {
            let (cx, cy) = ((i % gx) as f64, (i / gx) as f64);
            (
                (cx + rng.random::<f64>()) * tile,
                (cy + rng.random::<f64>()) * tile,
                rng.random_range(-1.0f32..1.0),
            )
        })
        .collect();
    let mut field = vec![0.0f32; w * h];
    for y in 0..h {
        let cy = (y as f64 / tile) as isize;
        for x in 0..w {
            let cx = (x as f64 / tile) as isize;
            let mut best = (f64::INFINITY, 0.0f32);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (sx, sy) = (cx + dx, cy + dy);
                    if sx < 0 || sy < 0 || sx as usize >= gx || sy as usize >= gy {
                        continue;
                    }
                    let site = sites[sy as usize * gx + sx as usize];
                    let d = (site.0 - x as f64).powi(2) + (site.1 - y as f64).powi(2);
                    if d < best.0 {
                        best = (d, site.2);
                    }
                }
            }
            field[y * w + x] = best.1;
        }
    }
    gaussian_blur(&mut field, w, h, 1.2, 1.2);
    let mut grain = white_noise(w, h, rng);
    gaussian_blur(&mut grain, w, h, 1.5, 1.5);
    standardize(&mut field);
    standardize(&mut grain);
    let g = density as f32 * 0.5;
    field.iter().zip(&grain).map(|(f, n)| f + g * n).collect()
}

pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32)
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamped borders.
pub(crate) fn gaussian_blur(buf: &mut [f32], w: usize, h: usize, sigma_x: f64, sigma_y: f64) {
    let mut tmp = vec![0.0f32; w * h];
    if sigma_x > 0.0 {
        let k = gaussian_kernel(sigma_x);
        let r = (k.len() / 2) as isize;
        for y in 0..h {
            let row = &buf[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += kv * row[xx];
                }
                tmp[y * w + x] = acc;
            }
        }
    } else {
        tmp.copy_from_slice(buf);
    }
    if sigma_y > 0.0 {
        let k = gaussian_kernel(sigma_y);
        let r = (k.len() / 2) as isize;
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[yy * w + x];
                }
                buf[y * w + x] = acc;
            }
        }
    } else {
        buf.copy_from_slice(&tmp);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_world(kind: TextureKind) -> TextureWorld {
        TextureWorld::generate(WorldSpec {
            seed: 3,
            width: 400,
            height: 300,
            kind,
            density: 0.5,
            contrast: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn worlds_are_deterministic() {
        for kind in [TextureKind::Speckle, TextureKind::Crack, TextureKind::Blob] {
            let a = small_world(kind);
            let b = small_world(kind);
            assert_eq!(a.raster, b.raster);
        }
    }

    #[test]
    fn render_is_deterministic() {
        let w = small_world(TextureKind::Speckle);
        let p = Pose2D::new(200.0, 150.0, 0.3);
        let a = w.render_view(&p, 64, 48, 0.0, 1).unwrap();
        let b = w.render_view(&p, 64, 48, 0.0, 1).unwrap();
        assert_eq!(a, b);
        let n1 = w.render_view(&p, 64, 48, 4.0, 9).unwrap();
        let n2 = w.render_view(&p, 64, 48, 4.0, 9).unwrap();
        assert_eq!(n1, n2);
        assert_ne!(n1, a);
    }

    #[test]
    fn out_of_world_is_rejected() {
        let w = small_world(TextureKind::Blob);
        let err = w.render_view(&Pose2D::new(10.0, 10.0, 0.0), 64, 48, 0.0, 0);
        assert!(matches!(err, Err(Error::OutOfWorld)));
    }

    #[test]
    fn shifted_views_share_identical_overlap() {
        let w = small_world(TextureKind::Speckle);
        let a = w.render_view(&Pose2D::new(150.5, 120.5, 0.0), 80, 60, 0.0, 0).unwrap();
        let b = w.render_view(&Pose2D::new(160.5, 120.5, 0.0), 80, 60, 0.0, 0).unwrap();
        for row in 0..60 {
            for col in 0..70 {
                assert_eq!(a.get(col + 10, row), b.get(col, row));
            }
        }
    }

    #[test]
    fn non_overlapping_views_share_nothing() {
        let w = small_world(TextureKind::Speckle);
        let p = Pose2D::new(100.5, 150.5, 0.0);
        let q = Pose2D::new(100.5 + 80.0, 150.5, 0.0);
        let fa = GrayImage::footprint(80, 60, &p);
        let fb = GrayImage::footprint(80, 60, &q);
        assert!(fa[1].0 < fb[0].0);
        assert!(w.render_view(&q, 80, 60, 0.0, 0).is_ok());
    }

    #[test]
    fn quarter_turn_render_is_exact_rotation() {
        // Integer-aligned sampling on both views: no interpolation involved.
        let w = small_world(TextureKind::Crack);
        let upright = w.render_view(&Pose2D::new(200.5, 150.5, 0.0), 60, 40, 0.0, 0).unwrap();
        let turned = w
            .render_view(&Pose2D::from_degrees(200.5, 150.5, 90.0), 40, 60, 0.0, 0)
            .unwrap();
        // Frame point (x, y) in the turned view lands at world (-y, x) + t,
        // i.e. upright frame point (-y, x).
        for row in 0..60 {
            for col in 0..40 {
                let (x, y) = turned.pixel_to_frame(col as f64, row as f64);
                let (uc, ur) = upright.frame_to_pixel(-y, x);
                assert_eq!(turned.get(col, row), upright.get(uc as usize, ur as usize));
            }
        }
    }

    #[test]
    fn arbitrary_rotation_matches_pretransformed_world() {
        // Oracle: resample the world under the pose into a new raster, then
        // read the identity-pose view from it pixel by pixel.
        let w = small_world(TextureKind::Speckle);
        let pose = Pose2D::new(210.0, 140.0, 0.61);
        let view = w.render_view(&pose, 50, 40, 0.0, 0).unwrap();
        for row in 0..40 {
            for col in 0..50 {
                let fx = col as f64 - 24.5;
                let fy = row as f64 - 19.5;
                let (wx, wy) = (
                    pose.x + pose.theta.cos() * fx - pose.theta.sin() * fy,
                    pose.y + pose.theta.sin() * fx + pose.theta.cos() * fy,
                );
                let expected = w.sample(wx, wy).unwrap();
                assert!((view.get(col, row) as f32 - expected).abs() <= 2.0);
            }
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let w = small_world(TextureKind::Blob);
        let img = w.render_view(&Pose2D::new(200.0, 150.0, 1.0), 33, 17, 3.0, 5).unwrap();
        let path = dir.path().join("a.png");
        save_image(&img, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);

        let tiny = GrayImage::filled(1, 1, 77);
        let p1 = dir.path().join("tiny.png");
        save_image(&tiny, &p1).unwrap();
        assert_eq!(load_image(&p1).unwrap(), tiny);
    }

    #[test]
    fn truncated_file_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::filled(20, 20, 9);
        let path = dir.path().join("t.png");
        save_image(&img, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_image(&path), Err(Error::UnsupportedFormat { .. })));
        assert!(matches!(
            load_image(dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn world_spec_toml_round_trip() {
        let spec = WorldSpec::default();
        assert_eq!(WorldSpec::from_toml(&spec.to_toml()).unwrap(), spec);
    }
}
