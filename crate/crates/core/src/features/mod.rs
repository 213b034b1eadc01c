//! Keypoints, descriptors and the two matching strategies.

mod descriptor;
mod detector;
mod matching;
mod pca;

use serde::{Deserialize, Serialize};

use crate::config::{DescriptorParams, DetectorParams, MatchingVariant, ParameterConfig};
use crate::geometry::{normalize_angle, Pose2D};
use crate::imaging::GrayImage;

pub use descriptor::{describe_binary, describe_real, ComparisonPattern, REAL_DESCRIPTOR_DIM};
pub use detector::detect_keypoints;
pub use matching::{match_identity, match_nearest, IdentityIndex, Match, NnIndex};
pub use pca::{fit_projection, project, Projection};

/// Oriented image-patch locator. Query keypoints live in the image frame,
/// reference keypoints in the map frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Radians in `(-pi, pi]`.
    pub orientation: f64,
    pub size: f64,
    pub response: f32,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, orientation: f64, size: f64) -> Self {
        Self {
            x,
            y,
            orientation: normalize_angle(orientation),
            size,
            response: 0.0,
        }
    }

    pub fn pose(&self) -> Pose2D {
        Pose2D::new(self.x, self.y, self.orientation)
    }

    /// Re-expresses the keypoint in the parent frame of `frame`.
    pub fn transformed(&self, frame: &Pose2D) -> Keypoint {
        let p = frame.compose(&self.pose());
        Keypoint {
            x: p.x,
            y: p.y,
            orientation: p.theta,
            ..*self
        }
    }
}

/// Truncated binary descriptor; bit `i` is stored at bit position `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitDescriptor {
    pub bits: u32,
    pub len: u8,
}

impl BitDescriptor {
    pub fn bit(&self, i: usize) -> bool {
        (self.bits >> i) & 1 == 1
    }

    /// Keeps only the first `len` bits.
    pub fn truncated(&self, len: usize) -> BitDescriptor {
        let len = len.min(self.len as usize);
        let mask = if len == 32 { u32::MAX } else { (1u32 << len) - 1 };
        BitDescriptor {
            bits: self.bits & mask,
            len: len as u8,
        }
    }

    pub fn hamming(&self, other: &BitDescriptor) -> u32 {
        (self.bits ^ other.bits).count_ones()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Descriptor {
    Real(Vec<f32>),
    Binary(BitDescriptor),
}

impl Descriptor {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Descriptor::Real(_) => "real",
            Descriptor::Binary(_) => "binary",
        }
    }

    pub fn as_real(&self) -> Option<&[f32]> {
        match self {
            Descriptor::Real(v) => Some(v),
            Descriptor::Binary(_) => None,
        }
    }

    pub fn as_binary(&self) -> Option<BitDescriptor> {
        match self {
            Descriptor::Binary(b) => Some(*b),
            Descriptor::Real(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor,
}

/// Uniformly random subset of size `min(n_r, len)`, kept in original order.
///
/// Subsets drawn with one seed are nested: the subset for a smaller `n_r` is
/// contained in the subset for a larger one.
pub fn subsample_features<T: Clone>(features: &[T], n_r: usize, seed: u64) -> Vec<T> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if n_r >= features.len() {
        return features.to_vec();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.shuffle(&mut rng);
    let mut keep = order[..n_r].to_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| features[i].clone()).collect()
}

/// Which descriptor family an extraction produces.
#[derive(Debug, Clone, PartialEq)]
pub enum DescriptorKind {
    Binary(DescriptorParams),
    Real,
}

impl DescriptorKind {
    pub fn for_config(config: &ParameterConfig) -> Self {
        match config.matching {
            MatchingVariant::Identity => DescriptorKind::Binary(config.descriptor_params()),
            MatchingVariant::Nearest { .. } => DescriptorKind::Real,
        }
    }
}

/// Detects and describes every keypoint of `img`, strongest first.
///
/// Keypoints whose descriptor support leaves the image are skipped, so the
/// result is ordered like the detector output minus those.
pub fn extract_features(img: &GrayImage, detector: &DetectorParams, kind: &DescriptorKind) -> Vec<Feature> {
    let keypoints = detect_keypoints(img, detector, usize::MAX);
    match kind {
        DescriptorKind::Binary(p) => describe_binary(img, &keypoints, p).0,
        DescriptorKind::Real => describe_real(img, &keypoints).0,
    }
}
