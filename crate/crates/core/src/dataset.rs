//! Synthetic datasets: a reference grid, global queries and test image sets
//! rendered from one texture world.
//!
//! # Directory layout
//!
//! ```text
//! dataset.toml                 generator spec
//! references.csv               id,file,x,y,theta_rad
//! references/ref_0000.png
//! queries.csv                  id,file,x,y,theta_rad
//! queries/query_0000.png
//! test_sets/set_000/test_set.json
//! test_sets/set_000/query_00.png
//! ```
//!
//! `test_set.json` lists the query files with ground truth poses and, per
//! query, the ids of its inlier and outlier reference images.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::TestImageSet;
use crate::geometry::{convex_intersection_area, Pose2D};
use crate::imaging::{load_image, save_image, GrayImage, TextureWorld, WorldSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub world: WorldSpec,
    pub image_width: usize,
    pub image_height: usize,
    /// Reference grid spacing in pixels.
    pub reference_spacing_x: f64,
    pub reference_spacing_y: f64,
    /// Uniform orientation jitter of reference images, degrees.
    pub reference_rotation_jitter_deg: f64,
    pub num_queries: usize,
    pub num_test_sets: usize,
    pub test_set_size: usize,
    /// Distance between consecutive test queries, pixels.
    pub test_step: f64,
    pub inlier_refs_per_query: usize,
    pub outlier_refs_per_set: usize,
    pub reference_noise: f64,
    pub query_noise: f64,
    /// Seeds poses and pixel noise; the texture has its own seed.
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            world: WorldSpec {
                width: 1200,
                height: 1200,
                ..WorldSpec::default()
            },
            image_width: 320,
            image_height: 240,
            reference_spacing_x: 160.0,
            reference_spacing_y: 120.0,
            reference_rotation_jitter_deg: 5.0,
            num_queries: 100,
            num_test_sets: 3,
            test_set_size: 10,
            test_step: 15.0,
            inlier_refs_per_query: 10,
            outlier_refs_per_set: 10,
            reference_noise: 0.0,
            query_noise: 0.0,
            seed: 1,
        }
    }
}

impl DatasetSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    /// Distance from the world border that keeps any rotated view inside.
    fn margin(&self) -> f64 {
        let hx = (self.image_width as f64 - 1.0) / 2.0;
        let hy = (self.image_height as f64 - 1.0) / 2.0;
        hx.hypot(hy) + 1.0
    }

    /// Range of image centers `(min_x, min_y, max_x, max_y)` covered by the
    /// reference grid.
    pub fn center_box(&self) -> (f64, f64, f64, f64) {
        let m = self.margin();
        let xs = grid(m, self.world.width as f64 - 1.0 - m, self.reference_spacing_x);
        let ys = grid(m, self.world.height as f64 - 1.0 - m, self.reference_spacing_y);
        (xs[0], ys[0], *xs.last().unwrap(), *ys.last().unwrap())
    }

    fn validate(&self) -> Result<()> {
        if self.image_width < 16 || self.image_height < 16 {
            return Err(Error::InvalidParameter("images must be at least 16x16".into()));
        }
        if !(self.reference_spacing_x > 0.0 && self.reference_spacing_y > 0.0 && self.test_step >= 0.0) {
            return Err(Error::InvalidParameter("spacings must be positive".into()));
        }
        let m = self.margin();
        if (self.world.width as f64) < 2.0 * m + 1.0 || (self.world.height as f64) < 2.0 * m + 1.0 {
            return Err(Error::InvalidParameter("world too small for the image size".into()));
        }
        Ok(())
    }
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).floor() as usize + 1;
    (0..n).map(|i| lo + i as f64 * step).collect()
}

fn stream_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut x = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x ^= x >> 31;
    x.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub references: Vec<(GrayImage, Pose2D)>,
    pub queries: Vec<(GrayImage, Pose2D)>,
    pub test_sets: Vec<TestImageSet>,
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        spec.validate()?;
        let world = TextureWorld::generate(spec.world.clone())?;
        Self::generate_in(&world, spec)
    }

    /// Renders a dataset in an existing world; `spec.world` is ignored.
    pub fn generate_in(world: &TextureWorld, spec: &DatasetSpec) -> Result<Self> {
        let mut spec = spec.clone();
        spec.world = world.spec().clone();
        spec.validate()?;
        let (w, h) = (spec.image_width, spec.image_height);
        let (x0, y0, x1, y1) = spec.center_box();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, 0, 0));
        let jitter = spec.reference_rotation_jitter_deg.to_radians();

        let mut ref_poses = Vec::new();
        for y in grid(y0, y1 + 1e-9, spec.reference_spacing_y) {
            for x in grid(x0, x1 + 1e-9, spec.reference_spacing_x) {
                let t = if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
                ref_poses.push(Pose2D::new(x, y, t));
            }
        }
        let render = |pose: &Pose2D, noise: f64, seed: u64| world.render_view(pose, w, h, noise, seed);
        let references = ref_poses
            .iter()
            .enumerate()
            .map(|(i, p)| Ok((render(p, spec.reference_noise, stream_seed(spec.seed, 1, i as u64))?, *p)))
            .collect::<Result<Vec<_>>>()?;

        let random_pose = |rng: &mut ChaCha8Rng| {
            Pose2D::new(
                rng.random_range(x0..=x1),
                rng.random_range(y0..=y1),
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            )
        };
        let queries = (0..spec.num_queries)
            .map(|i| {
                let p = random_pose(&mut rng);
                Ok((render(&p, spec.query_noise, stream_seed(spec.seed, 2, i as u64))?, p))
            })
            .collect::<Result<Vec<_>>>()?;

        let footprints: Vec<_> = ref_poses.iter().map(|p| GrayImage::footprint(w, h, p)).collect();
        let mut test_sets = Vec::with_capacity(spec.num_test_sets);
        for s in 0..spec.num_test_sets {
            let mut pose = random_pose(&mut rng);
            let mut heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let mut poses = Vec::with_capacity(spec.test_set_size);
            for _ in 0..spec.test_set_size {
                poses.push(pose);
                let mut next;
                let mut tries = 0;
                loop {
                    next = Pose2D::new(
                        pose.x + spec.test_step * heading.cos(),
                        pose.y + spec.test_step * heading.sin(),
                        pose.theta + rng.random_range(-0.05..0.05),
                    );
                    if (x0..=x1).contains(&next.x) && (y0..=y1).contains(&next.y) || tries > 100 {
                        break;
                    }
                    heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    tries += 1;
                }
                heading += rng.random_range(-0.2..0.2);
                pose = Pose2D::new(next.x.clamp(x0, x1), next.y.clamp(y0, y1), next.theta);
            }
            let qfoot: Vec<_> = poses.iter().map(|p| GrayImage::footprint(w, h, p)).collect();
            let overlaps = |q: &[(f64, f64); 4], r: usize| convex_intersection_area(q, &footprints[r]) > 0.0;
            let inlier_refs: Vec<Vec<usize>> = poses
                .iter()
                .zip(&qfoot)
                .map(|(p, q)| {
                    let mut ids: Vec<usize> = (0..ref_poses.len()).filter(|&r| overlaps(q, r)).collect();
                    ids.sort_by(|&a, &b| {
                        ref_poses[a]
                            .translation_distance(p)
                            .total_cmp(&ref_poses[b].translation_distance(p))
                            .then(a.cmp(&b))
                    });
                    ids.truncate(spec.inlier_refs_per_query);
                    ids
                })
                .collect();
            let mut free: Vec<usize> = (0..ref_poses.len())
                .filter(|&r| qfoot.iter().all(|q| !overlaps(q, r)))
                .collect();
            free.shuffle(&mut rng);
            free.truncate(spec.outlier_refs_per_set);
            free.sort_unstable();
            let images = poses
                .iter()
                .enumerate()
                .map(|(i, p)| Ok((render(p, spec.query_noise, stream_seed(spec.seed, 3 + s as u64, i as u64))?, *p)))
                .collect::<Result<Vec<_>>>()?;
            let mut used: Vec<usize> = inlier_refs.iter().flatten().chain(&free).copied().collect();
            used.sort_unstable();
            used.dedup();
            test_sets.push(TestImageSet {
                queries: images,
                references: used.iter().map(|&r| (r, references[r].0.clone(), references[r].1)).collect(),
                outlier_refs: vec![free; poses.len()],
                inlier_refs,
            });
        }
        Ok(Self {
            spec,
            references,
            queries,
            test_sets,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mkdir(dir)?;
        write_text(&dir.join("dataset.toml"), &self.spec.to_toml())?;
        save_posed(dir, "references", "ref", &self.references)?;
        save_posed(dir, "queries", "query", &self.queries)?;
        for (s, set) in self.test_sets.iter().enumerate() {
            let sub = dir.join("test_sets").join(format!("set_{s:03}"));
            mkdir(&sub)?;
            let mut files = Vec::new();
            for (i, (img, pose)) in set.queries.iter().enumerate() {
                let name = format!("query_{i:02}.png");
                save_image(img, sub.join(&name))?;
                files.push(TestQueryEntry { file: name, pose: *pose });
            }
            let meta = TestSetFile {
                queries: files,
                inlier_refs: set.inlier_refs.clone(),
                outlier_refs: set.outlier_refs.clone(),
            };
            write_text(
                &sub.join("test_set.json"),
                &serde_json::to_string_pretty(&meta).expect("serializes"),
            )?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spec = DatasetSpec::from_toml(&read_text(&dir.join("dataset.toml"))?)?;
        let references = load_posed(dir, "references")?;
        let queries = load_posed(dir, "queries")?;
        let mut test_sets = Vec::new();
        for s in 0.. {
            let sub = dir.join("test_sets").join(format!("set_{s:03}"));
            if !sub.exists() {
                break;
            }
            let meta: TestSetFile = serde_json::from_str(&read_text(&sub.join("test_set.json"))?)
                .map_err(|e| Error::Parse(e.to_string()))?;
            let images = meta
                .queries
                .iter()
                .map(|q| Ok((load_image(sub.join(&q.file))?, q.pose)))
                .collect::<Result<Vec<_>>>()?;
            let mut used: Vec<usize> = meta.inlier_refs.iter().chain(&meta.outlier_refs).flatten().copied().collect();
            used.sort_unstable();
            used.dedup();
            let refs = used
                .iter()
                .map(|&r| {
                    let (img, pose) = references
                        .get(r)
                        .ok_or_else(|| Error::Parse(format!("test set references unknown image {r}")))?;
                    Ok((r, img.clone(), *pose))
                })
                .collect::<Result<Vec<_>>>()?;
            test_sets.push(TestImageSet {
                queries: images,
                references: refs,
                inlier_refs: meta.inlier_refs,
                outlier_refs: meta.outlier_refs,
            });
        }
        Ok(Self {
            spec,
            references,
            queries,
            test_sets,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TestQueryEntry {
    file: String,
    pose: Pose2D,
}

#[derive(Serialize, Deserialize)]
struct TestSetFile {
    queries: Vec<TestQueryEntry>,
    inlier_refs: Vec<Vec<usize>>,
    outlier_refs: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PoseRow {
    pub id: usize,
    pub file: String,
    pub x: f64,
    pub y: f64,
    pub theta_rad: f64,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn save_posed(dir: &Path, sub: &str, prefix: &str, items: &[(GrayImage, Pose2D)]) -> Result<()> {
    let folder = dir.join(sub);
    std::fs::create_dir_all(&folder).map_err(|e| Error::io(&folder, e))?;
    let csv_path = dir.join(format!("{sub}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    for (i, (img, pose)) in items.iter().enumerate() {
        let file = format!("{sub}/{prefix}_{i:04}.png");
        save_image(img, dir.join(&file))?;
        w.serialize(PoseRow {
            id: i,
            file,
            x: pose.x,
            y: pose.y,
            theta_rad: pose.theta,
        })
        .map_err(|e| csv_error(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))
}

/// Reads a pose CSV (`id,file,x,y,theta_rad`) and the images it names,
/// relative to `dir`.
pub fn load_posed(dir: &Path, sub: &str) -> Result<Vec<(GrayImage, Pose2D)>> {
    let csv_path = dir.join(format!("{sub}.csv"));
    let mut r = csv::Reader::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize::<PoseRow>() {
        let row = row.map_err(|e| csv_error(&csv_path, e))?;
        out.push((load_image(dir.join(&row.file))?, Pose2D::new(row.x, row.y, row.theta_rad)));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(PathBuf::from(path), io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse(format!("{}: {e}", path.display()))
    }
}
