//! Inlier/outlier evaluation on test images, model-input estimation,
//! baseline predictors, global evaluation and CSR diagnostics.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{MatchingVariant, ParameterConfig};
use crate::error::{Error, Result};
use crate::features::{extract_features, DescriptorKind, Feature};
use crate::geometry::{Pose2D, SuccessThresholds};
use crate::imaging::GrayImage;
use crate::localization::{localize_features, LocalizationResult, MatchLabel};
use crate::mapping::{assemble_map, ExtractedImage, ReferenceMap};
use crate::prediction::{estimate_expected_v, CountDistribution, PredictionInputs};

/// Consecutive test queries with their local reference images.
#[derive(Debug, Clone, PartialEq)]
pub struct TestImageSet {
    pub queries: Vec<(GrayImage, Pose2D)>,
    /// `(id, image, pose)` of every reference image used below.
    pub references: Vec<(usize, GrayImage, Pose2D)>,
    /// Per query: ids of the closest overlapping reference images.
    pub inlier_refs: Vec<Vec<usize>>,
    /// Per query: ids of reference images without overlap.
    pub outlier_refs: Vec<Vec<usize>>,
}

/// Observables of one localization attempt.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub num_query_features: usize,
    pub num_matches: usize,
    pub num_occupied_cells: usize,
    pub num_inliers: usize,
    pub num_outliers: usize,
    pub peak_votes: usize,
    pub peak_inliers: usize,
    /// Labeled inliers per cell, descending, zero cells omitted.
    pub per_cell_inliers: Vec<usize>,
    /// Votes per occupied cell, descending.
    pub cell_counts: Vec<usize>,
    pub success: bool,
    /// Deterministic localization cost proxy, see [`work_units`].
    pub work: f64,
}

impl EvalRecord {
    fn from_result(res: &LocalizationResult, labels: Option<&[MatchLabel]>, success: bool, work: f64) -> Self {
        let num_inliers = labels.map_or(0, |l| l.iter().filter(|l| l.is_inlier).count());
        let mut cell_counts = res.histogram.counts();
        cell_counts.sort_unstable_by(|a, b| b.cmp(a));
        Self {
            num_query_features: res.stats.num_query_features,
            num_matches: res.stats.num_matches,
            num_occupied_cells: res.stats.num_occupied_cells,
            num_inliers,
            num_outliers: res.stats.num_matches - num_inliers,
            peak_votes: res.stats.peak_votes,
            peak_inliers: res.stats.inliers_on_peak.unwrap_or(0),
            per_cell_inliers: res.stats.per_cell_inliers.clone(),
            cell_counts,
            success,
            work,
        }
    }

    fn empty(num_query_features: usize, work: f64) -> Self {
        Self {
            num_query_features,
            work,
            ..Self::default()
        }
    }

    pub const CSV_HEADER: &'static str =
        "num_query_features,num_matches,num_occupied_cells,num_inliers,num_outliers,peak_votes,peak_inliers,per_cell_inliers,success,work";

    /// One CSV row; the inlier profile is `;`-separated.
    pub fn to_csv_row(&self) -> String {
        let profile: Vec<String> = self.per_cell_inliers.iter().map(|c| c.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.num_query_features,
            self.num_matches,
            self.num_occupied_cells,
            self.num_inliers,
            self.num_outliers,
            self.peak_votes,
            self.peak_inliers,
            profile.join(";"),
            self.success,
            self.work
        )
    }
}

pub fn records_to_csv(records: &[EvalRecord]) -> String {
    let mut s = String::from(EvalRecord::CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    s
}

/// Cost proxy for one localization attempt: scale-space work on the image,
/// descriptor work per query feature, and one unit per match.
pub fn work_units(config: &ParameterConfig, image_pixels: usize, num_query_features: usize, num_matches: usize) -> f64 {
    let per_feature = match config.matching {
        MatchingVariant::Identity => config.kept_bits as f64,
        MatchingVariant::Nearest { projection_dim } => 128.0 + projection_dim as f64,
    };
    image_pixels as f64 * (config.detector.num_scales + 2) as f64 / 1000.0
        + num_query_features as f64 * per_feature / 16.0
        + num_matches as f64
}

/// Test set with all features extracted for one detector/descriptor setting.
///
/// Query-side and map-side knobs that do not change extraction (`|F_q|`,
/// `n_r`, cell size, RANSAC) can vary between evaluations of one prepared
/// set.
#[derive(Debug, Clone)]
pub struct PreparedTestSet {
    kind: DescriptorKind,
    detector: crate::config::DetectorParams,
    queries: Vec<(Vec<Feature>, Pose2D, usize)>,
    references: HashMap<usize, ExtractedImage>,
    inlier_refs: Vec<Vec<usize>>,
    outlier_refs: Vec<Vec<usize>>,
}

impl PreparedTestSet {
    pub fn prepare(set: &TestImageSet, config: &ParameterConfig) -> Self {
        let kind = DescriptorKind::for_config(config);
        let queries = set
            .queries
            .par_iter()
            .map(|(img, truth)| {
                (
                    extract_features(img, &config.detector, &kind),
                    *truth,
                    img.width() * img.height(),
                )
            })
            .collect();
        let references = set
            .references
            .par_iter()
            .map(|(id, img, pose)| (*id, ExtractedImage::extract(*id, img, *pose, config)))
            .collect();
        Self {
            kind,
            detector: config.detector.clone(),
            queries,
            references,
            inlier_refs: set.inlier_refs.clone(),
            outlier_refs: set.outlier_refs.clone(),
        }
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn num_outlier_refs(&self) -> f64 {
        let n: usize = self.outlier_refs.iter().map(Vec::len).sum();
        n as f64 / self.outlier_refs.len().max(1) as f64
    }

    fn check(&self, config: &ParameterConfig) -> Result<()> {
        if DescriptorKind::for_config(config) != self.kind || config.detector != self.detector {
            return Err(Error::ConfigMismatch(
                "test set was prepared with different extraction settings".into(),
            ));
        }
        Ok(())
    }

    fn mini_map(&self, ids: &[usize], config: &ParameterConfig) -> Result<Option<ReferenceMap>> {
        let extracted: Vec<ExtractedImage> = ids
            .iter()
            .map(|id| {
                self.references
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown reference image {id}")))
            })
            .collect::<Result<_>>()?;
        match assemble_map(&extracted, config) {
            Ok(m) if m.num_features() > 0 => Ok(Some(m)),
            Ok(_) | Err(Error::DegenerateInput(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn run(&self, config: &ParameterConfig, inlier: bool) -> Result<Vec<EvalRecord>> {
        self.check(config)?;
        let thresholds = SuccessThresholds::default();
        let refs = if inlier { &self.inlier_refs } else { &self.outlier_refs };
        self.queries
            .par_iter()
            .zip(refs)
            .map(|((features, truth, pixels), ids)| {
                let fq = features.len().min(config.query_feature_cap);
                let Some(map) = self.mini_map(ids, config)? else {
                    return Ok(EvalRecord::empty(fq, work_units(config, *pixels, fq, 0)));
                };
                let mut res = localize_features(features, &map, config, None)?;
                let work = work_units(config, *pixels, fq, res.stats.num_matches);
                let success = res.is_success(truth, &thresholds);
                if inlier {
                    let labels = res.annotate(truth, &thresholds);
                    Ok(EvalRecord::from_result(&res, Some(&labels), success, work))
                } else {
                    Ok(EvalRecord::from_result(&res, None, success, work))
                }
            })
            .collect()
    }

    /// One attempt per query against its overlapping reference images;
    /// matches are labeled by the inlier oracle.
    pub fn inlier_records(&self, config: &ParameterConfig) -> Result<Vec<EvalRecord>> {
        self.run(config, true)
    }

    /// One attempt per query against non-overlapping reference images; all
    /// matches count as outliers.
    pub fn outlier_records(&self, config: &ParameterConfig) -> Result<Vec<EvalRecord>> {
        self.run(config, false)
    }
}

pub fn run_inlier_evaluation(set: &TestImageSet, config: &ParameterConfig) -> Result<Vec<EvalRecord>> {
    PreparedTestSet::prepare(set, config).inlier_records(config)
}

pub fn run_outlier_evaluation(set: &TestImageSet, config: &ParameterConfig) -> Result<Vec<EvalRecord>> {
    PreparedTestSet::prepare(set, config).outlier_records(config)
}

/// Outliers per occupied cell, pooled over records.
pub fn outliers_per_occupied_cell(outlier_records: &[EvalRecord]) -> f64 {
    let cells: usize = outlier_records.iter().map(|r| r.num_occupied_cells).sum();
    let outliers: usize = outlier_records.iter().map(|r| r.num_matches).sum();
    if cells == 0 {
        0.0
    } else {
        outliers as f64 / cells as f64
    }
}

/// Builds model inputs from evaluation records.
///
/// `E[|F_q|]` averages both record kinds. `E[O]` is the mean outlier-match
/// count (nearest variant) or outliers per occupied cell times
/// `expected_v` (identity variant). Inlier profiles are averaged by rank.
pub fn estimate_model_inputs(
    inlier_records: &[EvalRecord],
    outlier_records: &[EvalRecord],
    expected_v: f64,
    variant: &MatchingVariant,
) -> Result<PredictionInputs> {
    if inlier_records.is_empty() || outlier_records.is_empty() {
        return Err(Error::EmptyRecords("need inlier and outlier records".into()));
    }
    let all = inlier_records.len() + outlier_records.len();
    let fq = inlier_records
        .iter()
        .chain(outlier_records)
        .map(|r| r.num_query_features as f64)
        .sum::<f64>()
        / all as f64;
    let expected_o = match variant {
        MatchingVariant::Nearest { .. } => {
            outlier_records.iter().map(|r| r.num_matches as f64).sum::<f64>() / outlier_records.len() as f64
        }
        MatchingVariant::Identity => outliers_per_occupied_cell(outlier_records) * expected_v,
    };
    let ranks = inlier_records.iter().map(|r| r.per_cell_inliers.len()).max().unwrap_or(0);
    let mut profile: Vec<f64> = (0..ranks)
        .map(|k| {
            inlier_records
                .iter()
                .map(|r| r.per_cell_inliers.get(k).copied().unwrap_or(0) as f64)
                .sum::<f64>()
                / inlier_records.len() as f64
        })
        .collect();
    while profile.last() == Some(&0.0) {
        profile.pop();
    }
    let expected_v = expected_v.max(1.0).max(profile.len() as f64);
    PredictionInputs::new(expected_v, fq, expected_o, &profile)
}

/// `E[|V|]` for the full map together with the cell count used to scale
/// per-cell outlier density into `E[O]` (identity variant).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub expected_v: f64,
    pub outlier_scale_v: f64,
}

/// How `E[|V|]` for the full map is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpectedCells {
    /// A known value.
    Fixed { expected_v: f64 },
    /// Per-reference-image average measured elsewhere, times map size.
    PerImage {
        per_image_avg_v: f64,
        num_reference_images: usize,
    },
    /// Taken from the outlier evaluation itself.
    ///
    /// Per-image occupied cells times map size gives the unsaturated count,
    /// which also scales `E[O]`. On a map covering `map_area` square pixels
    /// (0 = unbounded) the votes of all images share at most
    /// `map_area / cell^2` cells; `E[|V|]` is the expected occupancy of
    /// `N` uniform cells by the map's outliers, where `N` is the per-image
    /// CSR cell count (see [`csr_cell_count`]) times map size, capped at the
    /// area bound.
    FromOutlierEvaluation { num_reference_images: usize, map_area: f64 },
}

impl ExpectedCells {
    pub fn estimate(&self, outlier_records: &[EvalRecord], outlier_refs_per_query: f64, cell_size: f64) -> CellEstimate {
        let same = |v: f64| CellEstimate {
            expected_v: v.max(1.0),
            outlier_scale_v: v.max(1.0),
        };
        match *self {
            ExpectedCells::Fixed { expected_v } => same(expected_v),
            ExpectedCells::PerImage {
                per_image_avg_v,
                num_reference_images,
            } => same(estimate_expected_v(per_image_avg_v, num_reference_images)),
            ExpectedCells::FromOutlierEvaluation {
                num_reference_images,
                map_area,
            } => {
                let n = outlier_records.len().max(1) as f64;
                let scale = num_reference_images as f64 / outlier_refs_per_query.max(1.0);
                let avg_v = outlier_records.iter().map(|r| r.num_occupied_cells as f64).sum::<f64>() / n;
                let unsaturated = (avg_v * scale).max(1.0);
                if !(map_area > 0.0) {
                    return same(unsaturated);
                }
                let avg_o = outlier_records.iter().map(|r| r.num_matches as f64).sum::<f64>() / n;
                let avg_n = outlier_records
                    .iter()
                    .filter(|r| r.num_occupied_cells > 0)
                    .map(|r| csr_cell_count(r.num_matches, r.num_occupied_cells).unwrap_or(f64::INFINITY))
                    .sum::<f64>()
                    / n;
                let cells = (avg_n * scale).min(map_area / (cell_size * cell_size)).max(1.0);
                let votes = avg_o * scale;
                CellEstimate {
                    expected_v: (cells * -(-votes / cells).exp_m1()).min(unsaturated).max(1.0),
                    outlier_scale_v: unsaturated,
                }
            }
        }
    }

    pub fn resolve(&self, outlier_records: &[EvalRecord], outlier_refs_per_query: f64, cell_size: f64) -> f64 {
        self.estimate(outlier_records, outlier_refs_per_query, cell_size).expected_v
    }
}

/// [`estimate_model_inputs`] with `E[O]` scaled by `cells.outlier_scale_v`
/// and `E[|V|]` set to `cells.expected_v`.
pub fn model_inputs(
    inlier_records: &[EvalRecord],
    outlier_records: &[EvalRecord],
    cells: &CellEstimate,
    variant: &MatchingVariant,
) -> Result<PredictionInputs> {
    let mut inputs = estimate_model_inputs(inlier_records, outlier_records, cells.outlier_scale_v, variant)?;
    inputs.expected_v = cells.expected_v.max(1.0).max(inputs.inlier_cells.len() as f64);
    inputs.validate()?;
    Ok(inputs)
}

/// Inlier and outlier records of one configuration with what the model
/// needs to turn them into inputs; the interchange format for saved
/// evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordBundle {
    pub config: ParameterConfig,
    pub inlier: Vec<EvalRecord>,
    pub outlier: Vec<EvalRecord>,
    pub outlier_refs_per_query: f64,
    pub expected_cells: ExpectedCells,
}

impl RecordBundle {
    /// Runs the inlier and outlier evaluations over `sets`.
    pub fn evaluate(sets: &[TestImageSet], config: &ParameterConfig, expected_cells: ExpectedCells) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::EmptyInput("no test image sets".into()));
        }
        let mut inlier = Vec::new();
        let mut outlier = Vec::new();
        let mut refs = 0.0;
        for set in sets {
            let p = PreparedTestSet::prepare(set, config);
            inlier.extend(p.inlier_records(config)?);
            outlier.extend(p.outlier_records(config)?);
            refs += p.num_outlier_refs();
        }
        Ok(Self {
            config: config.clone(),
            inlier,
            outlier,
            outlier_refs_per_query: refs / sets.len() as f64,
            expected_cells,
        })
    }

    pub fn cell_estimate(&self) -> CellEstimate {
        self.expected_cells
            .estimate(&self.outlier, self.outlier_refs_per_query, self.config.cell_size)
    }

    pub fn model_inputs(&self) -> Result<PredictionInputs> {
        model_inputs(&self.inlier, &self.outlier, &self.cell_estimate(), &self.config.matching)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Average occupied cells per reference image over global attempts.
pub fn per_image_average_v(attempts: &[GlobalAttempt], num_reference_images: usize) -> f64 {
    if attempts.is_empty() || num_reference_images == 0 {
        return 0.0;
    }
    attempts.iter().map(|a| a.stats.num_occupied_cells as f64).sum::<f64>()
        / attempts.len() as f64
        / num_reference_images as f64
}

/// Fraction of inlier attempts whose peak holds >= 2 inliers and more votes
/// than the largest peak of any outlier attempt.
pub fn local_success_rate(inlier_records: &[EvalRecord], outlier_records: &[EvalRecord]) -> f64 {
    if inlier_records.is_empty() {
        return 0.0;
    }
    let max_out = outlier_records.iter().map(|r| r.peak_votes).max().unwrap_or(0);
    let ok = inlier_records
        .iter()
        .filter(|r| r.peak_inliers >= 2 && r.peak_votes > max_out)
        .count();
    ok as f64 / inlier_records.len() as f64
}

/// Labeled inliers over all matches of both evaluations.
pub fn inlier_ratio(inlier_records: &[EvalRecord], outlier_records: &[EvalRecord]) -> f64 {
    let matches: usize = inlier_records.iter().chain(outlier_records).map(|r| r.num_matches).sum();
    let inliers: usize = inlier_records.iter().chain(outlier_records).map(|r| r.num_inliers).sum();
    if matches == 0 {
        0.0
    } else {
        inliers as f64 / matches as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalAttempt {
    pub truth: Pose2D,
    pub estimate: Option<Pose2D>,
    pub success: bool,
    pub stats: crate::localization::LocalizationStats,
}

/// Localizes every query against the full map without a prior.
pub fn global_evaluation(
    queries: &[(GrayImage, Pose2D)],
    map: &ReferenceMap,
    config: &ParameterConfig,
) -> Result<Vec<GlobalAttempt>> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("no global queries".into()));
    }
    let thresholds = SuccessThresholds::default();
    queries
        .par_iter()
        .map(|(img, truth)| {
            let res = crate::localization::localize(img, map, config, None)?;
            Ok(GlobalAttempt {
                truth: *truth,
                estimate: res.estimated_pose,
                success: res.is_success(truth, &thresholds),
                stats: res.stats,
            })
        })
        .collect()
}

/// Extracts every query once; [`global_evaluation_features`] truncates to
/// the config's query cap.
pub fn extract_queries(queries: &[(GrayImage, Pose2D)], config: &ParameterConfig) -> Vec<(Vec<Feature>, Pose2D)> {
    let kind = DescriptorKind::for_config(config);
    queries
        .par_iter()
        .map(|(img, truth)| (extract_features(img, &config.detector, &kind), *truth))
        .collect()
}

/// [`global_evaluation`] on pre-extracted queries.
pub fn global_evaluation_features(
    queries: &[(Vec<Feature>, Pose2D)],
    map: &ReferenceMap,
    config: &ParameterConfig,
) -> Result<Vec<GlobalAttempt>> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("no global queries".into()));
    }
    let thresholds = SuccessThresholds::default();
    queries
        .par_iter()
        .map(|(features, truth)| {
            let res = localize_features(features, map, config, None)?;
            Ok(GlobalAttempt {
                truth: *truth,
                estimate: res.estimated_pose,
                success: res.is_success(truth, &thresholds),
                stats: res.stats,
            })
        })
        .collect()
}

/// Bounding-box area of all image footprints, square pixels.
pub fn footprint_area(images: &[(GrayImage, Pose2D)]) -> f64 {
    let mut it = images
        .iter()
        .flat_map(|(img, pose)| GrayImage::footprint(img.width(), img.height(), pose));
    let Some(first) = it.next() else { return 0.0 };
    let b = it.fold((first.0, first.1, first.0, first.1), |b, p| {
        (b.0.min(p.0), b.1.min(p.1), b.2.max(p.0), b.3.max(p.1))
    });
    (b.2 - b.0) * (b.3 - b.1)
}

pub fn global_success_rate(queries: &[(GrayImage, Pose2D)], map: &ReferenceMap, config: &ParameterConfig) -> Result<f64> {
    let attempts = global_evaluation(queries, map, config)?;
    Ok(success_fraction(&attempts))
}

pub fn success_fraction(attempts: &[GlobalAttempt]) -> f64 {
    if attempts.is_empty() {
        return 0.0;
    }
    attempts.iter().filter(|a| a.success).count() as f64 / attempts.len() as f64
}

/// Empirical against predicted ratio-of-cells histograms. Index `k` holds
/// the fraction of occupied cells with `k` votes (index 0 is unused).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrDiagnostic {
    pub empirical: Vec<f64>,
    pub predicted: Vec<f64>,
    pub total_variation: f64,
}

impl CsrDiagnostic {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("votes,empirical_ratio,predicted_ratio\n");
        for k in 1..self.empirical.len().max(self.predicted.len()) {
            s.push_str(&format!(
                "{},{},{}\n",
                k,
                self.empirical.get(k).copied().unwrap_or(0.0),
                self.predicted.get(k).copied().unwrap_or(0.0)
            ));
        }
        s
    }
}

/// Number of equally likely cells `N` under which `votes` uniform votes
/// occupy `occupied` cells on average: `N (1 - (1 - 1/N)^votes) = occupied`.
/// `None` when every vote has its own cell (the limit `N -> inf`).
pub fn csr_cell_count(votes: usize, occupied: usize) -> Option<f64> {
    assert!(occupied >= 1 && occupied <= votes, "need 1 <= occupied <= votes");
    if occupied == votes {
        return None;
    }
    let o = votes as f64;
    let filled = |n: f64| n * -(o * (-1.0 / n).ln_1p()).exp_m1();
    let target = occupied as f64;
    let (mut lo, mut hi) = (target, target * 2.0);
    while filled(hi) < target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if filled(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-9 * hi {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Compares outlier vote counts per occupied cell with the CSR binomial.
///
/// Only occupied cells are observed. Each record is modeled as its votes
/// falling uniformly on [`csr_cell_count`] cells, which reproduces the
/// observed occupancy; the prediction for occupied cells is that
/// `Binomial(O, 1/N)` conditioned on at least one vote, weighted by the
/// record's `|V|`. With many votes per cell `N` equals `|V|`.
pub fn csr_diagnostic(outlier_records: &[EvalRecord]) -> Result<CsrDiagnostic> {
    let used: Vec<&EvalRecord> = outlier_records.iter().filter(|r| r.num_occupied_cells > 0).collect();
    if used.is_empty() {
        return Err(Error::EmptyRecords("no outlier record with votes".into()));
    }
    let total_cells: usize = used.iter().map(|r| r.num_occupied_cells).sum();
    let mut empirical = vec![0.0; 2];
    let mut predicted = vec![0.0; 2];
    for r in &used {
        for &c in &r.cell_counts {
            if empirical.len() <= c {
                empirical.resize(c + 1, 0.0);
            }
            empirical[c] += 1.0 / total_cells as f64;
        }
        let w = r.num_occupied_cells as f64 / total_cells as f64;
        let Some(cells) = csr_cell_count(r.num_matches, r.num_occupied_cells) else {
            predicted[1] += w;
            continue;
        };
        let d = CountDistribution::binomial(r.num_matches as u64, 1.0 / cells).expect("probability in range");
        let nonzero = 1.0 - d.prob(0);
        for k in d.start.max(1)..d.end() {
            if predicted.len() <= k {
                predicted.resize(k + 1, 0.0);
            }
            predicted[k] += w * d.prob(k) / nonzero;
        }
    }
    let n = empirical.len().max(predicted.len());
    empirical.resize(n, 0.0);
    predicted.resize(n, 0.0);
    let total_variation = 0.5 * empirical.iter().zip(&predicted).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok(CsrDiagnostic {
        empirical,
        predicted,
        total_variation,
    })
}
