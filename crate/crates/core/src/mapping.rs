//! Reference map construction, lookup and persistence.
//!
//! # Map file layout
//!
//! All integers and floats are little endian.
//!
//! ```text
//! header
//!   magic        8 bytes  "GLOCMAP\0"
//!   version      u32      currently 1
//!   fingerprint  u64      ParameterConfig::map_fingerprint of the build config
//!   n_r          u32      reference features kept per image
//!   seed         u64
//!   kind         u8       0 = binary descriptors, 1 = real descriptors
//! projection (kind 1 only)
//!   source_dim   u32
//!   target_dim   u32
//!   mean         f64 * source_dim
//!   basis        f64 * target_dim * source_dim   (row major)
//!   variances    f64 * target_dim
//! poses
//!   image_count  u32
//!   per image:   id u32, x f64, y f64, theta f64, width u32, height u32
//! features
//!   per image:   feature_count u32, then per feature
//!                x f64, y f64, orientation f64, size f64, response f32,
//!                kind 0: bits u32, len u8
//!                kind 1: dim u32, f32 * dim
//! ```

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{MatchingVariant, ParameterConfig};
use crate::error::{Error, Result};
use crate::features::{
    extract_features, fit_projection, project, subsample_features, BitDescriptor, Descriptor, DescriptorKind, Feature,
    IdentityIndex, Keypoint, NnIndex, Projection,
};
use crate::geometry::Pose2D;
use crate::imaging::GrayImage;

pub const MAP_MAGIC: &[u8; 8] = b"GLOCMAP\0";
pub const MAP_VERSION: u32 = 1;

/// One reference image of the map; keypoints are in the map frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapImage {
    pub id: usize,
    pub pose: Pose2D,
    pub width: usize,
    pub height: usize,
    pub features: Vec<Feature>,
}

/// Serializable content of a reference map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapData {
    pub config_fingerprint: u64,
    pub reference_feature_cap: usize,
    pub seed: u64,
    /// Present for maps with real descriptors; query descriptors are
    /// projected with it before matching.
    pub projection: Option<Projection>,
    pub images: Vec<MapImage>,
}

#[derive(Debug, Clone)]
enum MapIndex {
    Identity(Vec<IdentityIndex>),
    Nearest(Option<NnIndex>),
}

/// Immutable reference map with its matching index.
#[derive(Debug, Clone)]
pub struct ReferenceMap {
    data: MapData,
    /// Global id of the first feature of each image.
    offsets: Vec<usize>,
    index: MapIndex,
}

impl PartialEq for ReferenceMap {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

/// Full image-frame extraction of one reference image, before `n_r`
/// selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedImage {
    pub id: usize,
    pub pose: Pose2D,
    pub width: usize,
    pub height: usize,
    pub features: Vec<Feature>,
}

impl ExtractedImage {
    pub fn extract(id: usize, img: &GrayImage, pose: Pose2D, config: &ParameterConfig) -> Self {
        Self {
            id,
            pose,
            width: img.width(),
            height: img.height(),
            features: extract_features(img, &config.detector, &DescriptorKind::for_config(config)),
        }
    }
}

fn image_seed(seed: u64, id: usize) -> u64 {
    seed ^ (id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Extracts all reference images in parallel.
pub fn extract_references(images: &[(GrayImage, Pose2D)], config: &ParameterConfig) -> Vec<ExtractedImage> {
    images
        .par_iter()
        .enumerate()
        .map(|(id, (img, pose))| ExtractedImage::extract(id, img, *pose, config))
        .collect()
}

/// Detects, selects `n_r` features per image, describes and moves keypoints
/// into the map frame.
pub fn build_map(images: &[(GrayImage, Pose2D)], config: &ParameterConfig) -> Result<ReferenceMap> {
    if images.is_empty() {
        return Err(Error::EmptyInput("no reference images".into()));
    }
    config.validate()?;
    assemble_map(&extract_references(images, config), config)
}

/// Builds a map from cached extractions. Identity maps keep the `n_r`
/// strongest features per image, nearest maps a seeded random subset; in
/// both cases smaller `n_r` gives a subset of the features for larger `n_r`.
pub fn assemble_map(extracted: &[ExtractedImage], config: &ParameterConfig) -> Result<ReferenceMap> {
    let n_r = config.reference_feature_cap;
    let selected: Vec<Vec<Feature>> = extracted
        .iter()
        .map(|e| match config.matching {
            MatchingVariant::Identity => e.features.iter().take(n_r).cloned().collect(),
            MatchingVariant::Nearest { .. } => subsample_features(&e.features, n_r, image_seed(config.seed, e.id)),
        })
        .collect();
    for f in selected.iter().flatten() {
        let ok = match (&config.matching, &f.descriptor) {
            (MatchingVariant::Identity, Descriptor::Binary(b)) => b.len as usize == config.kept_bits,
            (MatchingVariant::Nearest { .. }, Descriptor::Real(_)) => true,
            _ => false,
        };
        if !ok {
            return Err(Error::ConfigMismatch(
                "extracted features do not fit the matching variant".into(),
            ));
        }
    }
    let projection = match config.matching {
        MatchingVariant::Identity => None,
        MatchingVariant::Nearest { projection_dim } => {
            let descs: Vec<Vec<f32>> = selected
                .iter()
                .flatten()
                .map(|f| f.descriptor.as_real().unwrap().to_vec())
                .collect();
            if descs.is_empty() {
                None
            } else {
                Some(fit_projection(&descs, projection_dim)?)
            }
        }
    };
    let images = extracted
        .iter()
        .zip(selected)
        .map(|(e, feats)| MapImage {
            id: e.id,
            pose: e.pose,
            width: e.width,
            height: e.height,
            features: feats
                .into_iter()
                .map(|f| Feature {
                    keypoint: f.keypoint.transformed(&e.pose),
                    descriptor: match (&projection, f.descriptor) {
                        (Some(p), Descriptor::Real(v)) => Descriptor::Real(project(p, &v)),
                        (_, d) => d,
                    },
                })
                .collect(),
        })
        .collect();
    ReferenceMap::from_data(MapData {
        config_fingerprint: config.map_fingerprint(),
        reference_feature_cap: n_r,
        seed: config.seed,
        projection,
        images,
    })
}

impl ReferenceMap {
    pub fn from_data(data: MapData) -> Result<Self> {
        let mut offsets = Vec::with_capacity(data.images.len());
        let mut total = 0;
        for img in &data.images {
            offsets.push(total);
            total += img.features.len();
        }
        let index = if data.projection.is_some()
            || data
                .images
                .iter()
                .flat_map(|i| &i.features)
                .any(|f| matches!(f.descriptor, Descriptor::Real(_)))
        {
            let all: Vec<Feature> = data.images.iter().flat_map(|i| i.features.iter().cloned()).collect();
            let ids: Vec<usize> = (0..all.len()).collect();
            MapIndex::Nearest(if all.is_empty() {
                None
            } else {
                Some(NnIndex::build_with_ids(&all, &ids)?)
            })
        } else {
            MapIndex::Identity(
                data.images
                    .iter()
                    .map(|i| IdentityIndex::build(&i.features))
                    .collect::<Result<_>>()?,
            )
        };
        Ok(Self { data, offsets, index })
    }

    pub fn data(&self) -> &MapData {
        &self.data
    }

    pub fn images(&self) -> &[MapImage] {
        &self.data.images
    }

    pub fn config_fingerprint(&self) -> u64 {
        self.data.config_fingerprint
    }

    pub fn projection(&self) -> Option<&Projection> {
        self.data.projection.as_ref()
    }

    pub fn num_features(&self) -> usize {
        self.data.images.iter().map(|i| i.features.len()).sum()
    }

    pub fn uses_identity_matching(&self) -> bool {
        matches!(self.index, MapIndex::Identity(_))
    }

    /// Global id of feature `j` of the image at list position `pos`.
    pub fn global_id(&self, pos: usize, j: usize) -> usize {
        self.offsets[pos] + j
    }

    pub(crate) fn identity_index(&self, pos: usize) -> Option<&IdentityIndex> {
        match &self.index {
            MapIndex::Identity(v) => v.get(pos),
            MapIndex::Nearest(_) => None,
        }
    }

    pub(crate) fn nn_index(&self) -> Option<&NnIndex> {
        match &self.index {
            MapIndex::Nearest(i) => i.as_ref(),
            MapIndex::Identity(_) => None,
        }
    }

    /// Bounding box `(min_x, min_y, max_x, max_y)` of all image footprints.
    pub fn extent(&self) -> Option<(f64, f64, f64, f64)> {
        let mut it = self
            .data
            .images
            .iter()
            .flat_map(|i| GrayImage::footprint(i.width, i.height, &i.pose));
        let first = it.next()?;
        Some(it.fold((first.0, first.1, first.0, first.1), |b, p| {
            (b.0.min(p.0), b.1.min(p.1), b.2.max(p.0), b.3.max(p.1))
        }))
    }

    /// Binary map file described in the module docs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = &self.data;
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAP_MAGIC);
        w.u32(MAP_VERSION);
        w.u64(d.config_fingerprint);
        w.u32(d.reference_feature_cap as u32);
        w.u64(d.seed);
        let real = !self.uses_identity_matching();
        w.buf.push(real as u8);
        if real {
            let (src, dim) = d
                .projection
                .as_ref()
                .map_or((0, 0), |p| (p.source_dim(), p.target_dim()));
            w.u32(src as u32);
            w.u32(dim as u32);
            if let Some(p) = &d.projection {
                p.mean.iter().for_each(|&v| w.f64(v));
                p.basis.iter().flatten().for_each(|&v| w.f64(v));
                p.variances.iter().for_each(|&v| w.f64(v));
            }
        }
        w.u32(d.images.len() as u32);
        for img in &d.images {
            w.u32(img.id as u32);
            w.f64(img.pose.x);
            w.f64(img.pose.y);
            w.f64(img.pose.theta);
            w.u32(img.width as u32);
            w.u32(img.height as u32);
        }
        for img in &d.images {
            w.u32(img.features.len() as u32);
            for f in &img.features {
                let k = &f.keypoint;
                w.f64(k.x);
                w.f64(k.y);
                w.f64(k.orientation);
                w.f64(k.size);
                w.f32(k.response);
                match &f.descriptor {
                    Descriptor::Binary(b) => {
                        w.u32(b.bits);
                        w.buf.push(b.len);
                    }
                    Descriptor::Real(v) => {
                        w.u32(v.len() as u32);
                        v.iter().for_each(|&x| w.f32(x));
                    }
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(8).map_err(|_| Error::VersionMismatch("file too short for a header".into()))?;
        if magic != MAP_MAGIC {
            return Err(Error::VersionMismatch("not a map file (bad magic)".into()));
        }
        let version = r.u32().map_err(|_| Error::VersionMismatch("truncated header".into()))?;
        if version != MAP_VERSION {
            return Err(Error::VersionMismatch(format!(
                "file version {version}, supported {MAP_VERSION}"
            )));
        }
        let config_fingerprint = r.u64()?;
        let reference_feature_cap = r.u32()? as usize;
        let seed = r.u64()?;
        let real = match r.u8()? {
            0 => false,
            1 => true,
            k => return Err(Error::Parse(format!("unknown descriptor kind {k}"))),
        };
        let projection = if real {
            let src = r.u32()? as usize;
            let dim = r.u32()? as usize;
            if src == 0 {
                None
            } else {
                let mean = (0..src).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let basis = (0..dim)
                    .map(|_| (0..src).map(|_| r.f64()).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                let variances = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Some(Projection { mean, basis, variances })
            }
        } else {
            None
        };
        let n = r.u32()? as usize;
        let mut images = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            images.push(MapImage {
                id: r.u32()? as usize,
                pose: Pose2D {
                    x: r.f64()?,
                    y: r.f64()?,
                    theta: r.f64()?,
                },
                width: r.u32()? as usize,
                height: r.u32()? as usize,
                features: Vec::new(),
            });
        }
        for img in &mut images {
            let count = r.u32()? as usize;
            img.features.reserve(count.min(1 << 20));
            for _ in 0..count {
                let keypoint = Keypoint {
                    x: r.f64()?,
                    y: r.f64()?,
                    orientation: r.f64()?,
                    size: r.f64()?,
                    response: r.f32()?,
                };
                let descriptor = if real {
                    let dim = r.u32()? as usize;
                    Descriptor::Real((0..dim).map(|_| r.f32()).collect::<Result<_>>()?)
                } else {
                    Descriptor::Binary(BitDescriptor {
                        bits: r.u32()?,
                        len: r.u8()?,
                    })
                };
                img.features.push(Feature { keypoint, descriptor });
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Parse("trailing bytes after map data".into()));
        }
        Self::from_data(MapData {
            config_fingerprint,
            reference_feature_cap,
            seed,
            projection,
            images,
        })
    }

    /// Structured-text export for debugging.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.data).expect("map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let data: MapData = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_data(data)
    }
}

/// Ids of images whose center lies within `radius` of `center`, nearest
/// first (ties by id).
pub fn nearby_reference_images(map: &ReferenceMap, center: &Pose2D, radius: f64) -> Vec<usize> {
    nearby_positions(map, center, radius)
        .into_iter()
        .map(|p| map.images()[p].id)
        .collect()
}

pub(crate) fn nearby_positions(map: &ReferenceMap, center: &Pose2D, radius: f64) -> Vec<usize> {
    let mut hits: Vec<(f64, usize, usize)> = map
        .images()
        .iter()
        .enumerate()
        .filter_map(|(pos, img)| {
            let d = img.pose.translation_distance(center);
            (d <= radius).then_some((d, img.id, pos))
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.into_iter().map(|h| h.2).collect()
}

pub fn save_map(map: &ReferenceMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, map.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Loads a map file; with `expected` given, the stored fingerprint must
/// match that config.
pub fn load_map(path: impl AsRef<Path>, expected: Option<&ParameterConfig>) -> Result<ReferenceMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let map = ReferenceMap::from_bytes(&bytes)?;
    if let Some(cfg) = expected {
        let want = cfg.map_fingerprint();
        if want != map.config_fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: want,
                found: map.config_fingerprint(),
            });
        }
    }
    Ok(map)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Parse("map file truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{TextureWorld, WorldSpec};

    fn world() -> TextureWorld {
        TextureWorld::generate(WorldSpec {
            seed: 3,
            width: 600,
            height: 500,
            ..WorldSpec::default()
        })
        .unwrap()
    }

    fn refs(world: &TextureWorld, poses: &[Pose2D]) -> Vec<(GrayImage, Pose2D)> {
        poses
            .iter()
            .map(|p| (world.render_view(p, 160, 120, 0.0, 0).unwrap(), *p))
            .collect()
    }

    fn grid_map(spacing: f64) -> ReferenceMap {
        let images = (0..9)
            .map(|i| MapImage {
                id: i,
                pose: Pose2D::new(100.0 + spacing * (i % 3) as f64, 100.0 + spacing * (i / 3) as f64, 0.0),
                width: 10,
                height: 10,
                features: vec![],
            })
            .collect();
        ReferenceMap::from_data(MapData {
            config_fingerprint: 0,
            reference_feature_cap: 0,
            seed: 0,
            projection: None,
            images,
        })
        .unwrap()
    }

    #[test]
    fn nearby_examples() {
        let map = grid_map(100.0);
        let center = Pose2D::new(200.0, 200.0, 0.0);
        assert_eq!(nearby_reference_images(&map, &center, 1e4).len(), 9);
        assert_eq!(nearby_reference_images(&map, &center, 1e-9), vec![4]);
        let mut five = nearby_reference_images(&map, &center, 120.0);
        assert_eq!(five[0], 4);
        five.sort();
        assert_eq!(five, vec![1, 3, 4, 5, 7]);
        // Diagonal neighbors sit at 141.4 px.
        assert_eq!(nearby_reference_images(&map, &center, 150.0).len(), 9);
    }

    #[test]
    fn n_r_caps_features_per_image() {
        let w = world();
        let poses: Vec<Pose2D> = (0..10)
            .map(|i| Pose2D::from_degrees(120.0 + 35.0 * i as f64, 200.0 + 10.0 * i as f64, 9.0 * i as f64))
            .collect();
        let mut cfg = ParameterConfig::identity_default();
        cfg.reference_feature_cap = 50;
        let map = build_map(&refs(&w, &poses), &cfg).unwrap();
        assert!(map.num_features() <= 500);
        assert!(map.images().iter().all(|i| i.features.len() <= 50));
        assert!(map.num_features() > 0);
    }

    #[test]
    fn identity_pose_keeps_image_frame_and_rotation_moves_keypoints() {
        let w = world();
        let cfg = ParameterConfig::identity_default();
        let img = w.render_view(&Pose2D::new(300.0, 250.0, 0.0), 160, 120, 0.0, 0).unwrap();
        let local = extract_features(&img, &cfg.detector, &DescriptorKind::for_config(&cfg));
        let at_identity = build_map(&[(img.clone(), Pose2D::identity())], &cfg).unwrap();
        let kps: Vec<_> = at_identity.images()[0].features.iter().map(|f| f.keypoint).collect();
        let expected: Vec<_> = local.iter().take(850).map(|f| f.keypoint).collect();
        assert_eq!(kps, expected);

        let pose = Pose2D::from_degrees(40.0, -7.0, 90.0);
        let rotated = build_map(&[(img, pose)], &cfg).unwrap();
        for (f, l) in rotated.images()[0].features.iter().zip(&local) {
            let (x, y) = (-l.keypoint.y + 40.0, l.keypoint.x - 7.0);
            assert!((f.keypoint.x - x).abs() < 1e-9 && (f.keypoint.y - y).abs() < 1e-9);
            let (bx, by) = pose.inverse_transform_point(f.keypoint.x, f.keypoint.y);
            assert!((bx - l.keypoint.x).abs() < 1e-6 && (by - l.keypoint.y).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_input() {
        assert!(matches!(
            build_map(&[], &ParameterConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn file_round_trip_and_errors() {
        let w = world();
        let poses = [Pose2D::new(200.0, 200.0, 0.3), Pose2D::new(330.0, 260.0, -1.0)];
        let dir = tempfile::tempdir().unwrap();
        for cfg in [ParameterConfig::identity_default(), ParameterConfig::nearest_default()] {
            let map = build_map(&refs(&w, &poses), &cfg).unwrap();
            let path = dir.path().join("m.bin");
            save_map(&map, &path).unwrap();
            let back = load_map(&path, Some(&cfg)).unwrap();
            assert_eq!(back, map);
            assert_eq!(back.to_bytes(), map.to_bytes());
            assert_eq!(ReferenceMap::from_json(&map.to_json()).unwrap(), map);

            let mut other = cfg.clone();
            other.seed += 1;
            assert!(matches!(
                load_map(&path, Some(&other)),
                Err(Error::FingerprintMismatch { .. })
            ));
            assert!(load_map(&path, None).is_ok());

            let mut bytes = map.to_bytes();
            bytes[8] = 9;
            assert!(matches!(ReferenceMap::from_bytes(&bytes), Err(Error::VersionMismatch(_))));
            bytes[0] = b'X';
            assert!(matches!(ReferenceMap::from_bytes(&bytes), Err(Error::VersionMismatch(_))));
        }
        assert!(matches!(
            load_map(dir.path().join("missing.bin"), None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn build_is_deterministic() {
        let w = world();
        let poses = [Pose2D::new(200.0, 200.0, 0.3), Pose2D::new(330.0, 260.0, -1.0)];
        let cfg = ParameterConfig::nearest_default();
        let a = build_map(&refs(&w, &poses), &cfg).unwrap();
        let b = build_map(&refs(&w, &poses), &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}
