//! Global localization (match, vote, peak, RANSAC) and the inlier oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ParameterConfig, RansacParams};
use crate::error::{Error, Result};
use crate::features::{extract_features, project, Descriptor, DescriptorKind, Feature, Keypoint, Match};
use crate::geometry::{fit_rigid, is_success, Pose2D, SuccessThresholds};
use crate::imaging::GrayImage;
use crate::mapping::{nearby_positions, ReferenceMap};
use crate::voting::{cast_votes, vote_position, VoteHistogram, VotingPeak};

/// Restricts identity matching to reference images near a pose estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior {
    pub center: Pose2D,
    pub radius: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalizationStats {
    pub num_query_features: usize,
    pub num_matches: usize,
    pub num_occupied_cells: usize,
    pub peak_votes: usize,
    /// Filled in by [`LocalizationResult::annotate`].
    pub inliers_on_peak: Option<usize>,
    /// Labeled inliers per cell, descending, zero cells omitted.
    pub per_cell_inliers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub estimated_pose: Option<Pose2D>,
    pub peak: Option<VotingPeak>,
    pub stats: LocalizationStats,
    pub matches: Vec<Match>,
    pub histogram: VoteHistogram,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchLabel {
    pub measure1: bool,
    pub measure2: bool,
    pub measure3: bool,
    pub is_inlier: bool,
}

/// Strongest `query_feature_cap` features of a query image, image frame.
pub fn extract_query_features(img: &GrayImage, config: &ParameterConfig) -> Vec<Feature> {
    let mut f = extract_features(img, &config.detector, &DescriptorKind::for_config(config));
    f.truncate(config.query_feature_cap);
    f
}

pub fn localize(
    query: &GrayImage,
    map: &ReferenceMap,
    config: &ParameterConfig,
    prior: Option<Prior>,
) -> Result<LocalizationResult> {
    check_map(map, config)?;
    localize_features(&extract_query_features(query, config), map, config, prior)
}

fn check_map(map: &ReferenceMap, config: &ParameterConfig) -> Result<()> {
    if map.config_fingerprint() != config.map_fingerprint() {
        return Err(Error::ConfigMismatch(format!(
            "map fingerprint {:016x}, config {:016x}",
            map.config_fingerprint(),
            config.map_fingerprint()
        )));
    }
    if map.num_features() == 0 {
        return Err(Error::MapEmpty);
    }
    Ok(())
}

/// Localization from pre-extracted image-frame query features. At most
/// `query_feature_cap` features are used.
pub fn localize_features(
    features: &[Feature],
    map: &ReferenceMap,
    config: &ParameterConfig,
    prior: Option<Prior>,
) -> Result<LocalizationResult> {
    check_map(map, config)?;
    let features = &features[..features.len().min(config.query_feature_cap)];
    let matches = match_against_map(features, map, prior)?;
    let histogram = cast_votes(&matches, config.cell_size);
    let peak = histogram.find_peak().ok();
    let estimated_pose = match &peak {
        Some(p) if p.vote_count >= 2 => {
            let peak_matches: Vec<Match> = p.match_ids.iter().map(|&i| matches[i]).collect();
            estimate_pose_ransac(&peak_matches, &config.ransac, config.seed)?
        }
        _ => None,
    };
    let stats = LocalizationStats {
        num_query_features: features.len(),
        num_matches: matches.len(),
        num_occupied_cells: histogram.occupied_cells(),
        peak_votes: peak.as_ref().map_or(0, |p| p.vote_count),
        inliers_on_peak: None,
        per_cell_inliers: Vec::new(),
    };
    Ok(LocalizationResult {
        estimated_pose,
        peak,
        stats,
        matches,
        histogram,
    })
}

/// Matches query features against the map with its own strategy. The prior,
/// if any, restricts identity matching to nearby images.
pub fn match_against_map(features: &[Feature], map: &ReferenceMap, prior: Option<Prior>) -> Result<Vec<Match>> {
    if map.uses_identity_matching() {
        let mut positions: Vec<usize> = match prior {
            Some(p) => nearby_positions(map, &p.center, p.radius),
            None => (0..map.images().len()).collect(),
        };
        positions.sort_unstable();
        let mut out = Vec::new();
        for (qi, f) in features.iter().enumerate() {
            let d = f
                .descriptor
                .as_binary()
                .ok_or_else(|| Error::KindMismatch("identity map needs binary query descriptors".into()))?;
            for &pos in &positions {
                let index = map.identity_index(pos).expect("identity map");
                if matches!(index.bits(), Some(b) if b != d.len) {
                    return Err(Error::KindMismatch(format!(
                        "query has {} bits, map {}",
                        d.len,
                        index.bits().unwrap()
                    )));
                }
                let img = &map.images()[pos];
                for &j in index.lookup(d.bits) {
                    out.push(Match {
                        query: qi,
                        reference: map.global_id(pos, j),
                        query_keypoint: f.keypoint,
                        reference_keypoint: img.features[j].keypoint,
                    });
                }
            }
        }
        Ok(out)
    } else {
        let Some(index) = map.nn_index() else {
            return Err(Error::MapEmpty);
        };
        let projected: Vec<Feature> = match map.projection() {
            Some(p) => features
                .iter()
                .map(|f| match &f.descriptor {
                    Descriptor::Real(v) if v.len() == p.source_dim() => Ok(Feature {
                        keypoint: f.keypoint,
                        descriptor: Descriptor::Real(project(p, v)),
                    }),
                    _ => Err(Error::KindMismatch("query descriptors do not fit the map projection".into())),
                })
                .collect::<Result<_>>()?,
            None => features.to_vec(),
        };
        crate::features::match_nearest(&projected, index)
    }
}

/// Rigid pose mapping the query keypoint positions of two matches onto
/// their reference keypoint positions. `None` for coincident points.
pub fn two_point_pose(a: &Match, b: &Match) -> Option<Pose2D> {
    let (qa, qb) = (&a.query_keypoint, &b.query_keypoint);
    let (ra, rb) = (&a.reference_keypoint, &b.reference_keypoint);
    if (qa.x - qb.x).hypot(qa.y - qb.y) < 1e-9 || (ra.x - rb.x).hypot(ra.y - rb.y) < 1e-9 {
        return None;
    }
    fit_rigid(&[(qa.x, qa.y), (qb.x, qb.y)], &[(ra.x, ra.y), (rb.x, rb.y)])
}

fn residual(pose: &Pose2D, m: &Match) -> f64 {
    let (x, y) = pose.transform_point(m.query_keypoint.x, m.query_keypoint.y);
    (x - m.reference_keypoint.x).hypot(y - m.reference_keypoint.y)
}

/// Two-point RANSAC over keypoint positions with least-squares refinement.
///
/// Every pair is tried when there are at most `iterations` pairs, otherwise
/// `iterations` random pairs. A sampled pair always belongs to its own
/// consensus set, so any non-degenerate input yields a pose. Ties in
/// consensus size go to the smaller residual sum.
pub fn estimate_pose_ransac(matches: &[Match], params: &RansacParams, seed: u64) -> Result<Option<Pose2D>> {
    let k = matches.len();
    if k < 2 {
        return Err(Error::TooFewMatches(k));
    }
    let tol = params.inlier_tolerance;
    let mut best: Option<(usize, f64, Vec<usize>, Pose2D)> = None;
    let mut try_pair = |i: usize, j: usize| {
        let Some(model) = two_point_pose(&matches[i], &matches[j]) else {
            return;
        };
        let mut consensus = Vec::new();
        let mut err = 0.0;
        for (n, m) in matches.iter().enumerate() {
            let r = residual(&model, m);
            if r <= tol || n == i || n == j {
                consensus.push(n);
                err += r;
            }
        }
        let better = match &best {
            None => true,
            Some((c, e, _, _)) => consensus.len() > *c || (consensus.len() == *c && err < *e),
        };
        if better {
            best = Some((consensus.len(), err, consensus, model));
        }
    };
    let pairs = k * (k - 1) / 2;
    if pairs <= params.iterations {
        for i in 0..k {
            for j in i + 1..k {
                try_pair(i, j);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..params.iterations {
            let i = rng.random_range(0..k);
            let mut j = rng.random_range(0..k - 1);
            if j >= i {
                j += 1;
            }
            try_pair(i.min(j), i.max(j));
        }
    }
    let Some((count, _, consensus, model)) = best else {
        return Ok(None);
    };
    if count < 2 {
        return Ok(None);
    }
    let src: Vec<_> = consensus
        .iter()
        .map(|&n| (matches[n].query_keypoint.x, matches[n].query_keypoint.y))
        .collect();
    let dst: Vec<_> = consensus
        .iter()
        .map(|&n| (matches[n].reference_keypoint.x, matches[n].reference_keypoint.y))
        .collect();
    Ok(Some(fit_rigid(&src, &dst).unwrap_or(model)))
}

/// Match at the query image origin voting exactly for `truth`.
fn fake_match(truth: &Pose2D, template: &Match) -> Match {
    Match {
        query: usize::MAX,
        reference: usize::MAX,
        query_keypoint: Keypoint::new(0.0, 0.0, 0.0, template.query_keypoint.size),
        reference_keypoint: Keypoint::new(truth.x, truth.y, truth.theta, template.reference_keypoint.size),
    }
}

/// Labels every match with the three inlier measures; `hist` must be the
/// histogram cast from `matches`.
pub fn label_matches(
    matches: &[Match],
    truth: &Pose2D,
    thresholds: &SuccessThresholds,
    hist: &VoteHistogram,
) -> Vec<MatchLabel> {
    let ok = |p: Option<Pose2D>| p.is_some_and(|p| is_success(&p, truth, thresholds));
    let mut labels: Vec<MatchLabel> = matches
        .iter()
        .map(|m| MatchLabel {
            measure1: vote_position(m).translation_distance(truth) <= thresholds.max_position_error,
            measure3: ok(two_point_pose(m, &fake_match(truth, m))),
            ..MatchLabel::default()
        })
        .collect();
    for (_, ids) in hist.cells() {
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                if labels[i].measure2 && labels[j].measure2 {
                    continue;
                }
                if ok(two_point_pose(&matches[i], &matches[j])) {
                    labels[i].measure2 = true;
                    labels[j].measure2 = true;
                }
            }
        }
    }
    for l in &mut labels {
        l.is_inlier = l.measure1 || l.measure2 || l.measure3;
    }
    labels
}

impl LocalizationResult {
    pub fn is_success(&self, truth: &Pose2D, thresholds: &SuccessThresholds) -> bool {
        self.estimated_pose
            .is_some_and(|p| is_success(&p, truth, thresholds))
    }

    /// Labels the matches against `truth` and fills the inlier statistics.
    pub fn annotate(&mut self, truth: &Pose2D, thresholds: &SuccessThresholds) -> Vec<MatchLabel> {
        let labels = label_matches(&self.matches, truth, thresholds, &self.histogram);
        let mut per_cell: Vec<usize> = self
            .histogram
            .cells()
            .map(|(_, ids)| ids.iter().filter(|&&i| labels[i].is_inlier).count())
            .filter(|&c| c > 0)
            .collect();
        per_cell.sort_unstable_by(|a, b| b.cmp(a));
        self.stats.per_cell_inliers = per_cell;
        self.stats.inliers_on_peak = Some(self.peak.as_ref().map_or(0, |p| {
            p.match_ids.iter().filter(|&&i| labels[i].is_inlier).count()
        }));
        labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corr(truth: &Pose2D, q: (f64, f64)) -> Match {
        let (x, y) = truth.transform_point(q.0, q.1);
        Match {
            query: 0,
            reference: 0,
            query_keypoint: Keypoint::new(q.0, q.1, 0.2, 3.0),
            reference_keypoint: Keypoint::new(x, y, 0.2 + truth.theta, 3.0),
        }
    }

    fn rand_match(rng: &mut ChaCha8Rng) -> Match {
        Match {
            query: 0,
            reference: 0,
            query_keypoint: Keypoint::new(rng.random_range(-150.0..150.0), rng.random_range(-110.0..110.0), 0.0, 3.0),
            reference_keypoint: Keypoint::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0), 0.0, 3.0),
        }
    }

    #[test]
    fn exact_correspondences_are_recovered() {
        let truth = Pose2D::from_degrees(412.0, 280.5, 33.0);
        let ms: Vec<_> = (0..10)
            .map(|i| corr(&truth, (-90.0 + 17.0 * i as f64, 40.0 - 9.0 * i as f64)))
            .collect();
        let p = estimate_pose_ransac(&ms, &RansacParams::default(), 1).unwrap().unwrap();
        assert!((p.x - truth.x).abs() < 1e-6 && (p.y - truth.y).abs() < 1e-6);
        assert!((p.theta - truth.theta).abs() < 1e-6);
    }

    #[test]
    fn ransac_with_outliers() {
        let mut fails = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let truth = Pose2D::new(rng.random_range(200.0..800.0), rng.random_range(200.0..800.0), rng.random_range(-3.0..3.0));
            let mut ms: Vec<_> = (0..5)
                .map(|_| corr(&truth, (rng.random_range(-150.0..150.0), rng.random_range(-110.0..110.0))))
                .collect();
            ms.extend((0..50).map(|_| rand_match(&mut rng)));
            let p = estimate_pose_ransac(&ms, &RansacParams::default(), seed).unwrap().unwrap();
            let err = crate::geometry::pose_error(&p, &truth);
            if err.position > 1.0 || err.orientation_deg > 0.1 {
                fails += 1;
            }
        }
        assert!(fails <= 1, "{fails} failures");
    }

    #[test]
    fn ransac_minimal_and_too_few() {
        let ms = [
            corr(&Pose2D::identity(), (0.0, 0.0)),
            Match {
                reference_keypoint: Keypoint::new(500.0, 0.0, 0.0, 1.0),
                ..corr(&Pose2D::identity(), (10.0, 0.0))
            },
        ];
        assert!(estimate_pose_ransac(&ms, &RansacParams::default(), 0).unwrap().is_some());
        assert!(matches!(
            estimate_pose_ransac(&ms[..1], &RansacParams::default(), 0),
            Err(Error::TooFewMatches(1))
        ));
    }

    #[test]
    fn label_examples() {
        let truth = Pose2D::from_degrees(500.0, 400.0, 20.0);
        let th = SuccessThresholds::default();
        let good = [corr(&truth, (60.0, -30.0)), corr(&truth, (-70.0, 50.0))];
        let h = cast_votes(&good, 75.0);
        let l = label_matches(&good, &truth, &th, &h);
        assert!(l.iter().all(|l| l.measure1 && l.measure2 && l.measure3 && l.is_inlier));

        let mut far = corr(&truth, (60.0, -30.0));
        far.reference_keypoint.x += 100.0;
        let h = cast_votes(&[far], 75.0);
        let l = label_matches(&[far], &truth, &th, &h);
        assert_eq!(l[0], MatchLabel::default());
    }

    proptest! {
        #[test]
        fn measure2_is_symmetric(seed in 0u64..500, n in 2usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = Pose2D::new(120.0, 130.0, rng.random_range(-3.0..3.0));
            let ms: Vec<Match> = (0..n)
                .map(|i| {
                    if i % 3 == 0 {
                        let mut m = corr(&truth, (rng.random_range(-150.0..150.0), rng.random_range(-110.0..110.0)));
                        m.reference_keypoint.x += rng.random_range(-3.0..3.0);
                        m
                    } else {
                        let mut m = rand_match(&mut rng);
                        m.reference_keypoint.x = rng.random_range(0.0..300.0);
                        m.reference_keypoint.y = rng.random_range(0.0..300.0);
                        m
                    }
                })
                .collect();
            let h = cast_votes(&ms, 150.0);
            let labels = label_matches(&ms, &truth, &SuccessThresholds::default(), &h);
            let ok = |a: &Match, b: &Match| two_point_pose(a, b)
                .is_some_and(|p| is_success(&p, &truth, &SuccessThresholds::default()));
            for (i, li) in labels.iter().enumerate() {
                let partners: Vec<usize> = h.votes_in(&h.cell_of_match(i)).iter().copied()
                    .filter(|&j| j != i && ok(&ms[i], &ms[j])).collect();
                prop_assert_eq!(li.measure2, !partners.is_empty());
                for j in partners {
                    prop_assert!(labels[j].measure2);
                }
            }
        }
    }
}
