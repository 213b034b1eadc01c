//! Multi-scale difference-of-Gaussians detector with gradient orientation.

use std::f64::consts::PI;

use crate::config::DetectorParams;
use crate::imaging::{gaussian_blur, GrayImage};

use super::Keypoint;

const BASE_SIGMA: f64 = 1.6;
const SCALE_STEP: f64 = std::f64::consts::SQRT_2;
const ORIENTATION_BINS: usize = 36;

pub(crate) struct ScaleSpace {
    pub sigmas: Vec<f64>,
    pub layers: Vec<Vec<f32>>,
}

impl ScaleSpace {
    fn build(img: &GrayImage, num_scales: usize) -> Self {
        let (w, h) = (img.width(), img.height());
        let base = img.to_f32();
        let sigmas: Vec<f64> = (0..=num_scales)
            .map(|i| BASE_SIGMA * SCALE_STEP.powi(i as i32))
            .collect();
        let layers = sigmas
            .iter()
            .map(|&s| {
                let mut l = base.clone();
                gaussian_blur(&mut l, w, h, s, s);
                l
            })
            .collect();
        Self {
            sigmas,
            layers,
        }
    }

    fn dog(&self, i: usize) -> Vec<f32> {
        self.layers[i + 1]
            .iter()
            .zip(&self.layers[i])
            .map(|(a, b)| a - b)
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    response: f32,
    scale: usize,
    col: usize,
    row: usize,
    sub_col: f64,
    sub_row: f64,
}

/// Detects at most `max_count` keypoints, strongest response first.
///
/// Keypoints are in the image frame (origin at the image center) and keep a
/// margin of `patch_size / 2 + 2` pixels to the border. Output is
/// deterministic; equal responses are ordered by scale, row, column.
pub fn detect_keypoints(img: &GrayImage, params: &DetectorParams, max_count: usize) -> Vec<Keypoint> {
    let (w, h) = (img.width(), img.height());
    let margin = (params.patch_size / 2 + 2).max(3);
    if max_count == 0 || w <= 2 * margin || h <= 2 * margin || params.num_scales == 0 {
        return Vec::new();
    }
    let space = ScaleSpace::build(img, params.num_scales);
    let dogs: Vec<Vec<f32>> = (0..params.num_scales).map(|i| space.dog(i)).collect();
    let threshold = params.response_threshold as f32;
    let r = params.edge_rejection.max(1.0);
    let edge_limit = ((r + 1.0) * (r + 1.0) / r) as f32;

    let mut candidates = Vec::new();
    for (s, d) in dogs.iter().enumerate() {
        let below = s.checked_sub(1).map(|i| &dogs[i]);
        let above = dogs.get(s + 1);
        for row in margin..h - margin {
            for col in margin..w - margin {
                let i = row * w + col;
                let v = d[i];
                if v.abs() < threshold {
                    continue;
                }
                if !is_extremum(d, i, w, v, true)
                    || below.is_some_and(|b| !is_extremum(b, i, w, v, false))
                    || above.is_some_and(|a| !is_extremum(a, i, w, v, false))
                {
                    continue;
                }
                let dxx = d[i + 1] + d[i - 1] - 2.0 * v;
                let dyy = d[i + w] + d[i - w] - 2.0 * v;
                let dxy = (d[i + w + 1] - d[i + w - 1] - d[i - w + 1] + d[i - w - 1]) / 4.0;
                let tr = dxx + dyy;
                let det = dxx * dyy - dxy * dxy;
                if det <= 0.0 || tr * tr >= edge_limit * det {
                    continue;
                }
                let ox = parabola_offset(d[i - 1], v, d[i + 1]);
                let oy = parabola_offset(d[i - w], v, d[i + w]);
                candidates.push(Candidate {
                    response: v.abs(),
                    scale: s,
                    col,
                    row,
                    sub_col: col as f64 + ox,
                    sub_row: row as f64 + oy,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.scale.cmp(&b.scale))
            .then(a.row.cmp(&b.row))
            .then(a.col.cmp(&b.col))
    });
    candidates.truncate(max_count);

    let radius = (params.patch_size as f64 / 2.0).max(2.0);
    let window = OrientationWindow::new(radius);
    let mut gradients: Vec<Option<Gradients>> = (0..params.num_scales).map(|_| None).collect();
    candidates
        .iter()
        .map(|c| {
            let grad = gradients[c.scale].get_or_insert_with(|| Gradients::new(&space.layers[c.scale], w, h));
            let orientation = window.dominant_orientation(grad, w, h, c.col, c.row);
            let (x, y) = img.pixel_to_frame(c.sub_col, c.sub_row);
            Keypoint {
                x,
                y,
                orientation,
                size: 2.0 * space.sigmas[c.scale + 1],
                response: c.response,
            }
        })
        .collect()
}

/// Strict extremum over the 3x3 neighborhood; the center itself is compared
/// only on adjacent layers.
fn is_extremum(d: &[f32], i: usize, w: usize, v: f32, same_layer: bool) -> bool {
    let offsets = [
        i - w - 1,
        i - w,
        i - w + 1,
        i - 1,
        i + 1,
        i + w - 1,
        i + w,
        i + w + 1,
    ];
    let beats = |n: f32| if v > 0.0 { v > n } else { v < n };
    offsets.iter().all(|&j| beats(d[j])) && (same_layer || beats(d[i]))
}

fn parabola_offset(left: f32, center: f32, right: f32) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom.abs() < 1e-12 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5) as f64
}

/// Central-difference gradient magnitude and histogram position per pixel;
/// border pixels are zero.
struct Gradients {
    mag: Vec<f64>,
    pos: Vec<f64>,
}

impl Gradients {
    fn new(layer: &[f32], w: usize, h: usize) -> Self {
        let mut mag = vec![0.0; w * h];
        let mut pos = vec![0.0; w * h];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let i = y * w + x;
                let gx = (layer[i + 1] - layer[i - 1]) as f64;
                let gy = (layer[i + w] - layer[i - w]) as f64;
                mag[i] = gx.hypot(gy);
                let angle = gy.atan2(gx).rem_euclid(2.0 * PI);
                pos[i] = angle / (2.0 * PI) * ORIENTATION_BINS as f64;
            }
        }
        Self { mag, pos }
    }
}

/// Disc offsets with their Gaussian weights.
struct OrientationWindow {
    taps: Vec<(isize, isize, f64)>,
}

impl OrientationWindow {
    fn new(radius: f64) -> Self {
        let r = radius.ceil() as isize;
        let sigma = radius / 2.0;
        let mut taps = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = (dx * dx + dy * dy) as f64;
                if d2 <= radius * radius {
                    taps.push((dx, dy, (-d2 / (2.0 * sigma * sigma)).exp()));
                }
            }
        }
        Self { taps }
    }

    /// Peak of a magnitude-weighted gradient orientation histogram over the
    /// disc, refined by parabolic interpolation.
    fn dominant_orientation(&self, grad: &Gradients, w: usize, h: usize, col: usize, row: usize) -> f64 {
        let mut hist = [0.0f64; ORIENTATION_BINS];
        for &(dx, dy, weight) in &self.taps {
            let x = col as isize + dx;
            let y = row as isize + dy;
            if x < 1 || y < 1 || x >= w as isize - 1 || y >= h as isize - 1 {
                continue;
            }
            let i = y as usize * w + x as usize;
            let mag = grad.mag[i];
            if mag == 0.0 {
                continue;
            }
            let pos = grad.pos[i];
            let b0 = pos.floor() as usize % ORIENTATION_BINS;
            let frac = pos - pos.floor();
            hist[b0] += weight * mag * (1.0 - frac);
            hist[(b0 + 1) % ORIENTATION_BINS] += weight * mag * frac;
        }
        for _ in 0..2 {
            let prev = hist;
            for b in 0..ORIENTATION_BINS {
                let l = prev[(b + ORIENTATION_BINS - 1) % ORIENTATION_BINS];
                let r = prev[(b + 1) % ORIENTATION_BINS];
                hist[b] = 0.25 * l + 0.5 * prev[b] + 0.25 * r;
            }
        }
        let (peak, _) = hist
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (b, &v)| if v > best.1 { (b, v) } else { best });
        let l = hist[(peak + ORIENTATION_BINS - 1) % ORIENTATION_BINS];
        let c = hist[peak];
        let r = hist[(peak + 1) % ORIENTATION_BINS];
        let denom = l - 2.0 * c + r;
        let offset = if denom.abs() > 1e-12 { 0.5 * (l - r) / denom } else { 0.0 };
        let bin_width = 2.0 * PI / ORIENTATION_BINS as f64;
        crate::geometry::normalize_angle((peak as f64 + offset) * bin_width)
    }
}
