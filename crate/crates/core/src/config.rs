//! Parameter configurations shared by mapping, localization and tuning.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Knobs of the multi-scale blob/corner keypoint detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    /// Minimum absolute difference-of-Gaussians response (intensity units).
    pub response_threshold: f64,
    /// Number of difference-of-Gaussians layers.
    pub num_scales: usize,
    /// Principal-curvature ratio above which edge-like responses are dropped.
    pub edge_rejection: f64,
    /// Diameter of the orientation window; also sets the border margin.
    pub patch_size: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            response_threshold: 1.0,
            num_scales: 2,
            edge_rejection: 10.0,
            patch_size: 24,
        }
    }
}

/// Knobs of the binary pairwise-comparison descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorParams {
    /// Radius of the disc the comparison points are drawn from.
    pub sampling_radius: f64,
    /// Size of the candidate comparison pool the kept bits are chosen from.
    pub comparison_count: usize,
    /// Leading bits kept per descriptor.
    pub kept_bits: usize,
}

impl DescriptorParams {
    pub fn validate(&self) -> Result<()> {
        if !(8..=24).contains(&self.kept_bits) {
            return Err(Error::InvalidParameter(format!(
                "kept_bits {} outside [8, 24]",
                self.kept_bits
            )));
        }
        if self.kept_bits > self.comparison_count {
            return Err(Error::InvalidParameter(format!(
                "kept_bits {} exceeds comparison_count {}",
                self.kept_bits, self.comparison_count
            )));
        }
        if !(self.sampling_radius >= 2.0) {
            return Err(Error::InvalidParameter("sampling_radius must be >= 2".into()));
        }
        Ok(())
    }
}

/// The two descriptor knobs that are tuned alongside `kept_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorKnobs {
    pub sampling_radius: f64,
    pub comparison_count: usize,
}

impl Default for DescriptorKnobs {
    fn default() -> Self {
        Self {
            sampling_radius: 12.0,
            comparison_count: 48,
        }
    }
}

/// Feature matching strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MatchingVariant {
    /// Real-valued descriptors reduced by PCA, exact nearest neighbor, random
    /// reference subsampling.
    Nearest { projection_dim: usize },
    /// Truncated binary descriptors matched on bit identity, strongest
    /// `n_r` keypoints per reference image.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_tolerance: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 1000,
            inlier_tolerance: 5.0,
        }
    }
}

/// A complete localizer parametrization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterConfig {
    /// Cap on query features, `|F_q|`.
    pub query_feature_cap: usize,
    /// Reference features kept per image, `n_r`.
    pub reference_feature_cap: usize,
    /// Voting cell edge length in pixels.
    pub cell_size: f64,
    pub kept_bits: usize,
    pub detector: DetectorParams,
    pub descriptor: DescriptorKnobs,
    pub matching: MatchingVariant,
    #[serde(default)]
    pub ransac: RansacParams,
    /// Seeds reference subsampling and RANSAC.
    #[serde(default)]
    pub seed: u64,
}

impl Default for ParameterConfig {
    /// Identity matching with 850 features, 75 px cells and 15 bits.
    fn default() -> Self {
        Self::identity_default()
    }
}

impl ParameterConfig {
    pub fn identity_default() -> Self {
        Self {
            query_feature_cap: 850,
            reference_feature_cap: 850,
            cell_size: 75.0,
            kept_bits: 15,
            detector: DetectorParams::default(),
            descriptor: DescriptorKnobs::default(),
            matching: MatchingVariant::Identity,
            ransac: RansacParams::default(),
            seed: 0,
        }
    }

    /// Nearest-neighbor matching on 16-d projected descriptors, 50 kept
    /// reference features, 50 px cells; all query detections are used.
    pub fn nearest_default() -> Self {
        Self {
            query_feature_cap: 100_000,
            reference_feature_cap: 50,
            cell_size: 50.0,
            matching: MatchingVariant::Nearest { projection_dim: 16 },
            ..Self::identity_default()
        }
    }

    pub fn descriptor_params(&self) -> DescriptorParams {
        DescriptorParams {
            sampling_radius: self.descriptor.sampling_radius,
            comparison_count: self.descriptor.comparison_count,
            kept_bits: self.kept_bits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) {
            return Err(Error::InvalidParameter("cell_size must be positive".into()));
        }
        if self.detector.num_scales == 0 || self.detector.patch_size < 4 {
            return Err(Error::InvalidParameter(
                "detector needs num_scales >= 1 and patch_size >= 4".into(),
            ));
        }
        if let MatchingVariant::Identity = self.matching {
            self.descriptor_params().validate()?;
        }
        if let MatchingVariant::Nearest { projection_dim } = self.matching {
            if projection_dim == 0 {
                return Err(Error::InvalidParameter("projection_dim must be positive".into()));
            }
        }
        if self.ransac.iterations == 0 || !(self.ransac.inlier_tolerance > 0.0) {
            return Err(Error::InvalidParameter("invalid RANSAC parameters".into()));
        }
        Ok(())
    }

    /// Fingerprint of the fields that determine reference map content.
    ///
    /// Query-side fields (`query_feature_cap`, `cell_size`, RANSAC) are left
    /// out so one map serves every query-side setting.
    pub fn map_fingerprint(&self) -> u64 {
        #[derive(Serialize)]
        struct MapFields<'a> {
            reference_feature_cap: usize,
            kept_bits: usize,
            detector: &'a DetectorParams,
            descriptor: &'a DescriptorKnobs,
            matching: &'a MatchingVariant,
            seed: u64,
        }
        let fields = MapFields {
            reference_feature_cap: self.reference_feature_cap,
            kept_bits: self.kept_bits,
            detector: &self.detector,
            descriptor: &self.descriptor,
            matching: &self.matching,
            seed: self.seed,
        };
        let json = serde_json::to_vec(&fields).expect("config serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for cfg in [ParameterConfig::identity_default(), ParameterConfig::nearest_default()] {
            let text = cfg.to_toml();
            assert_eq!(ParameterConfig::from_toml(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn fingerprint_ignores_query_side_fields() {
        let a = ParameterConfig::identity_default();
        let mut b = a.clone();
        b.query_feature_cap = 10;
        b.cell_size = 20.0;
        assert_eq!(a.map_fingerprint(), b.map_fingerprint());
        b.reference_feature_cap = 100;
        assert_ne!(a.map_fingerprint(), b.map_fingerprint());
    }

    #[test]
    fn kept_bits_validation() {
        let mut cfg = ParameterConfig::identity_default();
        cfg.kept_bits = 30;
        assert!(cfg.validate().is_err());
        cfg.kept_bits = 20;
        cfg.descriptor.comparison_count = 16;
        assert!(cfg.validate().is_err());
    }
}
