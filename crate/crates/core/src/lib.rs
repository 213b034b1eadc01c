//! Ground-texture global localization with an analytic success-rate model.

pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod error;
pub mod features;
pub mod geometry;
pub mod imaging;
pub mod localization;
pub mod mapping;
pub mod optimizer;
pub mod prediction;
pub mod sweep;
pub mod voting;

pub use config::{DescriptorKnobs, DescriptorParams, DetectorParams, MatchingVariant, ParameterConfig, RansacParams};
pub use error::{Error, Result};
pub use geometry::{convex_intersection_area, is_success, pose_error, Pose2D, PoseError, SuccessThresholds};
pub use imaging::{GrayImage, TextureKind, TextureWorld, WorldSpec};
pub use localization::{localize, LocalizationResult, MatchLabel, Prior};
pub use mapping::{build_map, load_map, save_map, ReferenceMap};
pub use voting::{VoteHistogram, VotingPeak};
