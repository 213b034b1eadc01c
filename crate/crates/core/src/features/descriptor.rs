//! Oriented patch descriptors.
//!
//! The binary descriptor compares smoothed intensities at pairs of points in
//! a disc around the keypoint, rotated by the keypoint orientation. Pairs come
//! from a pool of `comparison_count` candidates drawn with a fixed global seed
//! and are ordered greedily for length and spatial spread, so the first `k`
//! bits are a well-defined prefix of the first `k + 1`. The real descriptor is
//! a 4x4x8 gradient orientation histogram.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::DescriptorParams;
use crate::imaging::{gaussian_blur, GrayImage};

use super::{BitDescriptor, Descriptor, Feature, Keypoint};

const PATTERN_SEED: u64 = 0x6c61_7463_685f_7631;
const SMOOTHING_SIGMA: f64 = 1.4;

pub const REAL_DESCRIPTOR_DIM: usize = 128;
const REAL_GRID: usize = 4;
const REAL_SAMPLES_PER_CELL: usize = 4;
const REAL_SAMPLE_SPACING: f64 = 1.5;
const REAL_ORIENTATION_BINS: usize = 8;

type Point = (f64, f64);

/// Ordered comparison pairs of a binary descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonPattern {
    pairs: Vec<(Point, Point)>,
    radius: f64,
}

impl ComparisonPattern {
    pub fn new(params: &DescriptorParams) -> Self {
        let radius = params.sampling_radius;
        let mut rng = ChaCha8Rng::seed_from_u64(PATTERN_SEED);
        let draw = |rng: &mut ChaCha8Rng| -> Point {
            let r = radius * rng.random::<f64>().sqrt();
            let a = rng.random::<f64>() * 2.0 * PI;
            (r * a.cos(), r * a.sin())
        };
        let pool: Vec<(Point, Point)> = (0..params.comparison_count.max(params.kept_bits))
            .map(|_| (draw(&mut rng), draw(&mut rng)))
            .collect();

        let dist = |p: Point, q: Point| (p.0 - q.0).hypot(p.1 - q.1);
        let mut used = vec![false; pool.len()];
        let mut chosen: Vec<(Point, Point)> = Vec::with_capacity(params.kept_bits);
        for _ in 0..params.kept_bits {
            let mut best: Option<(usize, f64)> = None;
            for (i, &(a, b)) in pool.iter().enumerate() {
                if used[i] {
                    continue;
                }
                let spread = chosen
                    .iter()
                    .flat_map(|&(c, d)| [c, d])
                    .map(|e| dist(a, e).min(dist(b, e)))
                    .fold(f64::INFINITY, f64::min);
                let score = dist(a, b).min(spread);
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((i, score));
                }
            }
            let (i, _) = best.expect("pool holds at least kept_bits pairs");
            used[i] = true;
            chosen.push(pool[i]);
        }
        Self {
            pairs: chosen,
            radius,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Point, Point)] {
        &self.pairs
    }
}

struct Smoothed {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Smoothed {
    fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut data = img.to_f32();
        gaussian_blur(&mut data, w, h, SMOOTHING_SIGMA, SMOOTHING_SIGMA);
        Self { w, h, data }
    }

    fn fits(&self, col: f64, row: f64, margin: f64) -> bool {
        col - margin >= 0.0
            && row - margin >= 0.0
            && col + margin <= (self.w - 1) as f64
            && row + margin <= (self.h - 1) as f64
    }

    fn sample(&self, x: f64, y: f64) -> f32 {
        let x0 = (x.floor().max(0.0) as usize).min(self.w - 2);
        let y0 = (y.floor().max(0.0) as usize).min(self.h - 2);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let i = y0 * self.w + x0;
        let d = &self.data;
        let top = d[i] + (d[i + 1] - d[i]) * fx;
        let bottom = d[i + self.w] + (d[i + self.w + 1] - d[i + self.w]) * fx;
        top + (bottom - top) * fy
    }
}

/// Binary descriptors for image-frame keypoints. Keypoints whose sampling
/// disc leaves the image are dropped; the drop count is returned.
pub fn describe_binary(
    img: &GrayImage,
    keypoints: &[Keypoint],
    params: &DescriptorParams,
) -> (Vec<Feature>, usize) {
    let pattern = ComparisonPattern::new(params);
    describe_binary_with(img, keypoints, &pattern)
}

pub(crate) fn describe_binary_with(
    img: &GrayImage,
    keypoints: &[Keypoint],
    pattern: &ComparisonPattern,
) -> (Vec<Feature>, usize) {
    if img.width() < 2 || img.height() < 2 {
        return (Vec::new(), keypoints.len());
    }
    let smooth = Smoothed::new(img);
    let margin = pattern.radius + 1.0;
    let mut out = Vec::with_capacity(keypoints.len());
    let mut dropped = 0;
    for kp in keypoints {
        let (col, row) = img.frame_to_pixel(kp.x, kp.y);
        if !smooth.fits(col, row, margin) {
            dropped += 1;
            continue;
        }
        let (s, c) = kp.orientation.sin_cos();
        let at = |p: Point| smooth.sample(col + c * p.0 - s * p.1, row + s * p.0 + c * p.1);
        let mut bits = 0u32;
        for (i, &(a, b)) in pattern.pairs.iter().enumerate() {
            if at(a) < at(b) {
                bits |= 1 << i;
            }
        }
        out.push(Feature {
            keypoint: *kp,
            descriptor: Descriptor::Binary(BitDescriptor {
                bits,
                len: pattern.len() as u8,
            }),
        });
    }
    (out, dropped)
}

/// 128-d gradient orientation histogram descriptors for image-frame keypoints.
pub fn describe_real(img: &GrayImage, keypoints: &[Keypoint]) -> (Vec<Feature>, usize) {
    if img.width() < 2 || img.height() < 2 {
        return (Vec::new(), keypoints.len());
    }
    let smooth = Smoothed::new(img);
    let half_extent = REAL_GRID as f64 * REAL_SAMPLES_PER_CELL as f64 * REAL_SAMPLE_SPACING / 2.0;
    let margin = half_extent * std::f64::consts::SQRT_2 + 2.0;
    let window_sigma = half_extent;
    let mut out = Vec::with_capacity(keypoints.len());
    let mut dropped = 0;
    let side = REAL_GRID * REAL_SAMPLES_PER_CELL;
    let coord = |i: usize| (i as f64 + 0.5) * REAL_SAMPLE_SPACING - half_extent;
    let weights: Vec<f64> = (0..side * side)
        .map(|k| {
            let (u, v) = (coord(k % side), coord(k / side));
            (-(u * u + v * v) / (2.0 * window_sigma * window_sigma)).exp()
        })
        .collect();
    for kp in keypoints {
        let (col, row) = img.frame_to_pixel(kp.x, kp.y);
        if !smooth.fits(col, row, margin) {
            dropped += 1;
            continue;
        }
        let (s, c) = kp.orientation.sin_cos();
        let mut desc = vec![0.0f32; REAL_DESCRIPTOR_DIM];
        for j in 0..side {
            for i in 0..side {
                let (u, v) = (coord(i), coord(j));
                let px = col + c * u - s * v;
                let py = row + s * u + c * v;
                // Gradient along the keypoint's own axes.
                let gu = smooth.sample(px + c, py + s) - smooth.sample(px - c, py - s);
                let gv = smooth.sample(px - s, py + c) - smooth.sample(px + s, py - c);
                let mag = (gu as f64).hypot(gv as f64);
                if mag == 0.0 {
                    continue;
                }
                let weight = weights[j * side + i];
                let angle = (gv as f64).atan2(gu as f64).rem_euclid(2.0 * PI);
                let pos = angle / (2.0 * PI) * REAL_ORIENTATION_BINS as f64;
                let b0 = pos.floor() as usize % REAL_ORIENTATION_BINS;
                let frac = pos - pos.floor();
                let cell = (j / REAL_SAMPLES_PER_CELL) * REAL_GRID + i / REAL_SAMPLES_PER_CELL;
                let base = cell * REAL_ORIENTATION_BINS;
                desc[base + b0] += (weight * mag * (1.0 - frac)) as f32;
                desc[base + (b0 + 1) % REAL_ORIENTATION_BINS] += (weight * mag * frac) as f32;
            }
        }
        normalize_clipped(&mut desc);
        out.push(Feature {
            keypoint: *kp,
            descriptor: Descriptor::Real(desc),
        });
    }
    (out, dropped)
}

fn normalize_clipped(desc: &mut [f32]) {
    let norm = |d: &[f32]| d.iter().map(|v| v * v).sum::<f32>().sqrt();
    let n = norm(desc);
    if n == 0.0 {
        return;
    }
    desc.iter_mut().for_each(|v| *v = (*v / n).min(0.2));
    let n = norm(desc);
    desc.iter_mut().for_each(|v| *v /= n);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(kept: usize) -> DescriptorParams {
        DescriptorParams {
            sampling_radius: 10.0,
            comparison_count: 40,
            kept_bits: kept,
        }
    }

    #[test]
    fn pattern_prefix_is_stable() {
        let long = ComparisonPattern::new(&params(20));
        let short = ComparisonPattern::new(&params(12));
        assert_eq!(&long.pairs()[..12], short.pairs());
        for &(a, b) in long.pairs() {
            assert!(a.0.hypot(a.1) <= 10.0 + 1e-9 && b.0.hypot(b.1) <= 10.0 + 1e-9);
        }
    }
}
