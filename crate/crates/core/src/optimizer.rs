//! Model-driven parameter search: random sampling over a ten-dimensional
//! grid, gated local optimization and best-configuration tracking.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{MatchingVariant, ParameterConfig};
use crate::error::{Error, Result};
use crate::evaluation::{model_inputs, ExpectedCells, PreparedTestSet, TestImageSet};
use crate::prediction::{predict_success_rate, scale_inputs_for_nr, PredictionInputs};

/// Gap below the best prediction within which candidates are still refined.
pub const LOCAL_GATE: f64 = 0.05;
/// Margin of the superiority rule.
pub const SUPERIORITY_MARGIN: f64 = 0.005;
/// Local optimization runs at least this many iterations.
pub const MIN_LOCAL_ITERATIONS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    QueryFeatureCap,
    ReferenceFeatureCap,
    CellSize,
    KeptBits,
    ResponseThreshold,
    NumScales,
    EdgeRejection,
    PatchSize,
    SamplingRadius,
    ComparisonCount,
}

impl Param {
    pub const ALL: [Param; 10] = [
        Param::QueryFeatureCap,
        Param::ReferenceFeatureCap,
        Param::CellSize,
        Param::KeptBits,
        Param::ResponseThreshold,
        Param::NumScales,
        Param::EdgeRejection,
        Param::PatchSize,
        Param::SamplingRadius,
        Param::ComparisonCount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::QueryFeatureCap => "query_feature_cap",
            Param::ReferenceFeatureCap => "reference_feature_cap",
            Param::CellSize => "cell_size",
            Param::KeptBits => "kept_bits",
            Param::ResponseThreshold => "response_threshold",
            Param::NumScales => "num_scales",
            Param::EdgeRejection => "edge_rejection",
            Param::PatchSize => "patch_size",
            Param::SamplingRadius => "sampling_radius",
            Param::ComparisonCount => "comparison_count",
        }
    }

    pub fn get(self, c: &ParameterConfig) -> f64 {
        match self {
            Param::QueryFeatureCap => c.query_feature_cap as f64,
            Param::ReferenceFeatureCap => c.reference_feature_cap as f64,
            Param::CellSize => c.cell_size,
            Param::KeptBits => c.kept_bits as f64,
            Param::ResponseThreshold => c.detector.response_threshold,
            Param::NumScales => c.detector.num_scales as f64,
            Param::EdgeRejection => c.detector.edge_rejection,
            Param::PatchSize => c.detector.patch_size as f64,
            Param::SamplingRadius => c.descriptor.sampling_radius,
            Param::ComparisonCount => c.descriptor.comparison_count as f64,
        }
    }

    pub fn set(self, c: &mut ParameterConfig, v: f64) {
        let n = v.round().max(0.0) as usize;
        match self {
            Param::QueryFeatureCap => c.query_feature_cap = n,
            Param::ReferenceFeatureCap => c.reference_feature_cap = n,
            Param::CellSize => c.cell_size = v,
            Param::KeptBits => c.kept_bits = n,
            Param::ResponseThreshold => c.detector.response_threshold = v,
            Param::NumScales => c.detector.num_scales = n,
            Param::EdgeRejection => c.detector.edge_rejection = v,
            Param::PatchSize => c.detector.patch_size = n,
            Param::SamplingRadius => c.descriptor.sampling_radius = v,
            Param::ComparisonCount => c.descriptor.comparison_count = n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Range {
    pub fn new(min: f64, max: f64, step: f64) -> Self {
        Self { min, max, step }
    }

    pub fn fixed(v: f64) -> Self {
        Self::new(v, v, 1.0)
    }

    /// Number of grid values.
    pub fn len(&self) -> usize {
        ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, i: usize) -> f64 {
        let v = self.min + i as f64 * self.step;
        // Avoid drift like 0.30000000000000004 in logs.
        (v * 1e9).round() / 1e9
    }

    /// Grid index nearest to `v`.
    pub fn index_of(&self, v: f64) -> usize {
        (((v - self.min) / self.step).round().max(0.0) as usize).min(self.len() - 1)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min - 1e-9 && v <= self.max + 1e-9 && (self.value(self.index_of(v)) - v).abs() < 1e-6
    }
}

/// Value grid for the ten tuned parameters. Fields not tuned (variant,
/// RANSAC, seed) come from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub base: ParameterConfig,
    pub ranges: Vec<(Param, Range)>,
}

impl ParameterSpace {
    pub fn new(base: ParameterConfig, ranges: Vec<(Param, Range)>) -> Result<Self> {
        let s = Self { base, ranges };
        s.validate()?;
        Ok(s)
    }

    /// Desk-scale grid around the identity defaults.
    pub fn identity_default() -> Self {
        Self {
            base: ParameterConfig::identity_default(),
            ranges: vec![
                (Param::QueryFeatureCap, Range::new(100.0, 1000.0, 50.0)),
                (Param::ReferenceFeatureCap, Range::new(50.0, 1000.0, 50.0)),
                (Param::CellSize, Range::new(25.0, 150.0, 25.0)),
                (Param::KeptBits, Range::new(10.0, 20.0, 1.0)),
                (Param::ResponseThreshold, Range::new(0.5, 6.0, 0.5)),
                (Param::NumScales, Range::new(1.0, 4.0, 1.0)),
                (Param::EdgeRejection, Range::new(4.0, 16.0, 2.0)),
                (Param::PatchSize, Range::new(12.0, 32.0, 4.0)),
                (Param::SamplingRadius, Range::new(6.0, 16.0, 2.0)),
                (Param::ComparisonCount, Range::new(24.0, 64.0, 8.0)),
            ],
        }
    }

    /// Desk-scale grid around the nearest-neighbor defaults.
    pub fn nearest_default() -> Self {
        let mut s = Self::identity_default();
        s.base = ParameterConfig::nearest_default();
        s.ranges[0].1 = Range::new(100.0, 2000.0, 100.0);
        s.ranges[1].1 = Range::new(5.0, 100.0, 5.0);
        s
    }

    pub fn range(&self, p: Param) -> Option<Range> {
        self.ranges.iter().find(|(q, _)| *q == p).map(|(_, r)| *r)
    }

    pub fn validate(&self) -> Result<()> {
        for (p, r) in &self.ranges {
            if !(r.max >= r.min) || !(r.step > 0.0) {
                return Err(Error::InvalidParameter(format!("bad range for {}", p.name())));
            }
        }
        for p in Param::ALL {
            if self.ranges.iter().filter(|(q, _)| *q == p).count() > 1 {
                return Err(Error::InvalidParameter(format!("duplicate range for {}", p.name())));
            }
        }
        // Every grid point has to be a valid config.
        let mut lo = self.base.clone();
        let mut hi = self.base.clone();
        for (p, r) in &self.ranges {
            p.set(&mut lo, r.min);
            p.set(&mut hi, r.value(r.len() - 1));
        }
        let worst_bits = hi.kept_bits;
        let worst_pool = lo.descriptor.comparison_count;
        let mut probe = lo.clone();
        probe.kept_bits = worst_bits;
        probe.descriptor.comparison_count = worst_pool;
        lo.validate()?;
        hi.validate()?;
        probe.validate()
    }

    /// Number of distinct configurations.
    pub fn cardinality(&self) -> u128 {
        self.ranges.iter().map(|(_, r)| r.len() as u128).product()
    }

    pub fn contains(&self, c: &ParameterConfig) -> bool {
        self.ranges.iter().all(|(p, r)| r.contains(p.get(c)))
    }

    /// Grid values at -2, -1, +1, +2 steps from the config's value, clamped
    /// to the range, deduplicated and without the current value.
    pub fn neighbors(&self, c: &ParameterConfig, p: Param) -> Vec<f64> {
        let Some(r) = self.range(p) else {
            return Vec::new();
        };
        let i = r.index_of(p.get(c)) as i64;
        let top = r.len() as i64 - 1;
        let mut out: Vec<i64> = Vec::new();
        for d in [-2, -1, 1, 2] {
            let j = (i + d).clamp(0, top);
            if j != i && !out.contains(&j) {
                out.push(j);
            }
        }
        out.into_iter().map(|j| r.value(j as usize)).collect()
    }
}

/// Draws every tuned parameter uniformly from its grid.
pub fn sample_config(space: &ParameterSpace, rng: &mut impl Rng) -> ParameterConfig {
    let mut c = space.base.clone();
    for (p, r) in &space.ranges {
        p.set(&mut c, r.value(rng.random_range(0..r.len())));
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredConfig {
    pub config: ParameterConfig,
    pub predicted_success: f64,
    /// Mean per-query localization cost; see [`TimeMode`].
    pub eval_time: f64,
    pub inputs: PredictionInputs,
}

/// How `eval_time` is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    /// Deterministic work-unit proxy; logs are byte-reproducible.
    #[default]
    Work,
    /// Measured seconds per attempt.
    WallClock,
}

/// Scores configurations without touching the full map.
pub trait ConfigEvaluator: Sync {
    fn evaluate(&self, config: &ParameterConfig) -> Result<ScoredConfig>;
    /// Localization attempts run so far.
    fn localization_calls(&self) -> usize;
}

/// Inlier/outlier evaluation on test image sets followed by the prediction
/// model. Extracted test sets are cached per extraction setting.
pub struct ModelEvaluator {
    sets: Vec<TestImageSet>,
    expected_cells: ExpectedCells,
    time_mode: TimeMode,
    cache: Mutex<Vec<(String, std::sync::Arc<Vec<PreparedTestSet>>)>>,
    cache_size: usize,
    calls: AtomicUsize,
}

impl ModelEvaluator {
    pub fn new(sets: Vec<TestImageSet>, expected_cells: ExpectedCells, time_mode: TimeMode) -> Self {
        Self {
            sets,
            expected_cells,
            time_mode,
            cache: Mutex::new(Vec::new()),
            cache_size: 4,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of cached extraction settings; 0 disables caching.
    pub fn with_cache_size(mut self, n: usize) -> Self {
        self.cache_size = n;
        self
    }

    fn extraction_key(config: &ParameterConfig) -> String {
        let descriptor = match config.matching {
            MatchingVariant::Identity => format!("{:?}", config.descriptor_params()),
            MatchingVariant::Nearest { .. } => "real".to_string(),
        };
        format!("{:?}|{}", config.detector, descriptor)
    }

    fn prepared(&self, config: &ParameterConfig) -> std::sync::Arc<Vec<PreparedTestSet>> {
        let key = Self::extraction_key(config);
        if let Some((_, p)) = self.cache.lock().unwrap().iter().find(|(k, _)| *k == key) {
            return p.clone();
        }
        let p = std::sync::Arc::new(self.sets.iter().map(|s| PreparedTestSet::prepare(s, config)).collect::<Vec<_>>());
        if self.cache_size > 0 {
            let mut cache = self.cache.lock().unwrap();
            if cache.len() >= self.cache_size {
                cache.remove(0);
            }
            cache.push((key, p.clone()));
        }
        p
    }
}

impl ConfigEvaluator for ModelEvaluator {
    fn evaluate(&self, config: &ParameterConfig) -> Result<ScoredConfig> {
        config.validate()?;
        let start = Instant::now();
        let prepared = self.prepared(config);
        let mut inlier = Vec::new();
        let mut outlier = Vec::new();
        for p in prepared.iter() {
            inlier.extend(p.inlier_records(config)?);
            outlier.extend(p.outlier_records(config)?);
        }
        let attempts = inlier.len() + outlier.len();
        self.calls.fetch_add(attempts, Ordering::Relaxed);
        let outlier_refs = prepared.iter().map(|p| p.num_outlier_refs()).sum::<f64>() / prepared.len().max(1) as f64;
        let cells = self.expected_cells.estimate(&outlier, outlier_refs, config.cell_size);
        let inputs = model_inputs(&inlier, &outlier, &cells, &config.matching)?;
        let predicted_success = predict_success_rate(&inputs);
        let eval_time = match self.time_mode {
            TimeMode::Work => inlier.iter().chain(&outlier).map(|r| r.work).sum::<f64>() / attempts.max(1) as f64,
            TimeMode::WallClock => start.elapsed().as_secs_f64() / attempts.max(1) as f64,
        };
        Ok(ScoredConfig {
            config: config.clone(),
            predicted_success,
            eval_time,
            inputs,
        })
    }

    fn localization_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Evaluates `config` on the test sets once, without caching.
pub fn evaluate_config(config: &ParameterConfig, sets: &[TestImageSet], expected_cells: ExpectedCells) -> Result<ScoredConfig> {
    ModelEvaluator::new(sets.to_vec(), expected_cells, TimeMode::Work)
        .with_cache_size(0)
        .evaluate(config)
}

pub fn should_locally_optimize(candidate: &ScoredConfig, best: Option<&ScoredConfig>) -> bool {
    match best {
        None => true,
        Some(b) => candidate.predicted_success >= b.predicted_success - LOCAL_GATE - 1e-12,
    }
}

pub fn is_superior(a: &ScoredConfig, b: &ScoredConfig) -> bool {
    const EPS: f64 = 1e-12;
    a.predicted_success >= b.predicted_success + SUPERIORITY_MARGIN - EPS
        || (a.predicted_success >= b.predicted_success - SUPERIORITY_MARGIN - EPS && a.eval_time < b.eval_time)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalOptions {
    pub min_iterations: usize,
    /// Hard stop against endless improvement chains.
    pub max_iterations: usize,
    /// Predict `n_r` changes by scaling instead of re-evaluating.
    pub nr_shortcut: bool,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self {
            min_iterations: MIN_LOCAL_ITERATIONS,
            max_iterations: 200,
            nr_shortcut: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Sample,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: usize,
    pub phase: Phase,
    pub config: ParameterConfig,
    pub predicted_success: f64,
    pub eval_time: f64,
    /// Became the tracked best.
    pub accepted: bool,
}

/// Tracks the best configuration. A candidate replaces the best only if it
/// is superior and within the margin of the highest prediction seen, so the
/// best never drifts down through chains of faster, slightly worse configs.
#[derive(Debug, Clone, Default)]
pub struct BestTracker {
    best: Option<ScoredConfig>,
    max_seen: f64,
}

impl BestTracker {
    pub fn best(&self) -> Option<&ScoredConfig> {
        self.best.as_ref()
    }

    pub fn offer(&mut self, c: &ScoredConfig) -> bool {
        self.max_seen = self.max_seen.max(c.predicted_success);
        let take = match &self.best {
            None => true,
            Some(b) => is_superior(c, b) && c.predicted_success >= self.max_seen - SUPERIORITY_MARGIN - 1e-12,
        };
        if take {
            self.best = Some(c.clone());
        }
        take
    }
}

fn log_entry(iteration: usize, phase: Phase, c: &ScoredConfig, accepted: bool) -> LogEntry {
    LogEntry {
        iteration,
        phase,
        config: c.config.clone(),
        predicted_success: c.predicted_success,
        eval_time: c.eval_time,
        accepted,
    }
}

/// Hill climbing on one random parameter per iteration.
///
/// Each iteration tests the neighbors of one parameter and moves to the best
/// superior one. Stops after the first non-improving iteration once
/// `min_iterations` have run.
pub fn local_optimize(
    start: &ScoredConfig,
    space: &ParameterSpace,
    evaluator: &dyn ConfigEvaluator,
    rng: &mut impl Rng,
    options: &LocalOptions,
) -> Result<ScoredConfig> {
    local_optimize_with(start, space, evaluator, rng, options, &mut |_| {})
}

fn local_optimize_with(
    start: &ScoredConfig,
    space: &ParameterSpace,
    evaluator: &dyn ConfigEvaluator,
    rng: &mut impl Rng,
    options: &LocalOptions,
    on_eval: &mut dyn FnMut(&ScoredConfig),
) -> Result<ScoredConfig> {
    let params: Vec<Param> = space.ranges.iter().map(|(p, _)| *p).collect();
    let mut current = start.clone();
    let mut iteration = 0;
    while iteration < options.max_iterations {
        iteration += 1;
        let Some(&p) = params.choose(rng) else { break };
        let mut winner: Option<ScoredConfig> = None;
        for v in space.neighbors(&current.config, p) {
            let mut cfg = current.config.clone();
            p.set(&mut cfg, v);
            let scored = if p == Param::ReferenceFeatureCap && options.nr_shortcut {
                let inputs = scale_inputs_for_nr(&current.inputs, current.config.reference_feature_cap, cfg.reference_feature_cap);
                ScoredConfig {
                    predicted_success: predict_success_rate(&inputs),
                    config: cfg,
                    eval_time: current.eval_time,
                    inputs,
                }
            } else {
                evaluator.evaluate(&cfg)?
            };
            on_eval(&scored);
            if is_superior(&scored, &current) {
                let better = match &winner {
                    None => true,
                    Some(w) => {
                        scored.predicted_success > w.predicted_success
                            || (scored.predicted_success == w.predicted_success && scored.eval_time < w.eval_time)
                    }
                };
                if better {
                    winner = Some(scored);
                }
            }
        }
        match winner {
            Some(w) => current = w,
            None if iteration >= options.min_iterations => break,
            None => {}
        }
    }
    Ok(current)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Iterations(usize),
    WallClock(Duration),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best: ScoredConfig,
    pub log: Vec<LogEntry>,
}

impl OptimizationResult {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("iteration,phase,");
        s.push_str(&Param::ALL.map(|p| p.name()).join(","));
        s.push_str(",predicted_success,eval_time,accepted\n");
        for e in &self.log {
            let phase = match e.phase {
                Phase::Sample => "sample",
                Phase::Local => "local",
            };
            let values: Vec<String> = Param::ALL.iter().map(|p| p.get(&e.config).to_string()).collect();
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.iteration,
                phase,
                values.join(","),
                e.predicted_success,
                e.eval_time,
                e.accepted
            ));
        }
        s
    }
}

/// Sample, gate, refine and track until the budget is used up.
pub fn run_optimization(
    space: &ParameterSpace,
    evaluator: &dyn ConfigEvaluator,
    budget: Budget,
    seed: u64,
    options: &LocalOptions,
) -> Result<OptimizationResult> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracker = BestTracker::default();
    let mut log = Vec::new();
    let started = Instant::now();
    let mut iteration = 0;
    loop {
        let more = match budget {
            Budget::Iterations(n) => iteration < n,
            Budget::WallClock(d) => iteration == 0 || started.elapsed() < d,
        };
        if !more {
            break;
        }
        iteration += 1;
        let candidate = evaluator.evaluate(&sample_config(space, &mut rng))?;
        let gate = should_locally_optimize(&candidate, tracker.best());
        let accepted = tracker.offer(&candidate);
        log.push(log_entry(iteration, Phase::Sample, &candidate, accepted));
        if gate {
            let mut on_eval = |c: &ScoredConfig| {
                let accepted = tracker.offer(c);
                log.push(log_entry(iteration, Phase::Local, c, accepted));
            };
            local_optimize_with(&candidate, space, evaluator, &mut rng, options, &mut on_eval)?;
        }
    }
    let best = tracker.best.ok_or_else(|| Error::EmptyInput("optimization budget is zero".into()))?;
    Ok(OptimizationResult { best, log })
}

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs paired samples");
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scored(p: f64, t: f64) -> ScoredConfig {
        ScoredConfig {
            config: ParameterConfig::identity_default(),
            predicted_success: p,
            eval_time: t,
            inputs: PredictionInputs::new(10.0, 100.0, 10.0, &[]).unwrap(),
        }
    }

    #[test]
    fn gate_examples() {
        assert!(!should_locally_optimize(&scored(0.80, 1.0), Some(&scored(0.86, 1.0))));
        assert!(should_locally_optimize(&scored(0.81, 1.0), Some(&scored(0.86, 1.0))));
        assert!(should_locally_optimize(&scored(0.0, 1.0), None));
    }

    #[test]
    fn superiority_examples() {
        assert!(is_superior(&scored(0.900, 2.0), &scored(0.894, 1.0)));
        assert!(is_superior(&scored(0.894, 1.0), &scored(0.896, 2.0)));
        assert!(!is_superior(&scored(0.80, 0.0), &scored(0.86, 9.0)));
        assert!(!is_superior(&scored(0.894, 2.0), &scored(0.896, 1.0)));
        // Exactly at the margins.
        assert!(is_superior(&scored(0.905, 2.0), &scored(0.900, 1.0)));
        assert!(is_superior(&scored(0.895, 0.5), &scored(0.900, 1.0)));
        assert!(!is_superior(&scored(0.8949, 0.5), &scored(0.900, 1.0)));
    }

    #[test]
    fn neighbors_are_clamped_and_deduplicated() {
        let space = ParameterSpace::identity_default();
        let mut c = space.base.clone();
        c.kept_bits = 10;
        assert_eq!(space.neighbors(&c, Param::KeptBits), vec![11.0, 12.0]);
        c.kept_bits = 11;
        assert_eq!(space.neighbors(&c, Param::KeptBits), vec![10.0, 12.0, 13.0]);
        c.kept_bits = 15;
        assert_eq!(space.neighbors(&c, Param::KeptBits), vec![13.0, 14.0, 16.0, 17.0]);
        c.kept_bits = 20;
        assert_eq!(space.neighbors(&c, Param::KeptBits), vec![18.0, 19.0]);
        c.detector.num_scales = 1;
        let r = Range::new(1.0, 2.0, 1.0);
        let s = ParameterSpace::new(space.base.clone(), vec![(Param::NumScales, r)]).unwrap();
        assert_eq!(s.neighbors(&c, Param::NumScales), vec![2.0]);
    }

    #[test]
    fn degenerate_space_and_cardinality() {
        let base = ParameterConfig::identity_default();
        let ranges = Param::ALL.iter().map(|&p| (p, Range::fixed(p.get(&base)))).collect();
        let space = ParameterSpace::new(base.clone(), ranges).unwrap();
        assert_eq!(space.cardinality(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_config(&space, &mut rng), base);
        assert!(ParameterSpace::identity_default().cardinality() > 1_000_000_000);
        let bad = ParameterSpace::new(base, vec![(Param::CellSize, Range::new(2.0, 1.0, 1.0))]);
        assert!(bad.is_err());
    }

    #[test]
    fn two_value_parameter_is_uniform() {
        let base = ParameterConfig::identity_default();
        let space = ParameterSpace::new(base, vec![(Param::NumScales, Range::new(1.0, 2.0, 1.0))]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ones = (0..10_000)
            .filter(|_| sample_config(&space, &mut rng).detector.num_scales == 1)
            .count();
        assert!((ones as f64 / 10_000.0 - 0.5).abs() <= 0.02, "{ones}");
    }

    /// Scores configs with a closed-form function of their parameters.
    struct Synthetic {
        calls: AtomicUsize,
        score: fn(&ParameterConfig) -> f64,
    }

    impl ConfigEvaluator for Synthetic {
        fn evaluate(&self, config: &ParameterConfig) -> Result<ScoredConfig> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            let p = (self.score)(config).clamp(0.0, 1.0);
            Ok(ScoredConfig {
                config: config.clone(),
                predicted_success: p,
                eval_time: config.query_feature_cap as f64,
                inputs: PredictionInputs::new(100.0, 1000.0, 100.0, &[p * 20.0]).unwrap(),
            })
        }
        fn localization_calls(&self) -> usize {
            self.calls.load(Ordering::Relaxed)
        }
    }

    #[test]
    fn flat_landscape_returns_start_after_min_iterations() {
        let space = ParameterSpace::identity_default();
        let eval = Synthetic {
            calls: AtomicUsize::new(0),
            score: |_| 0.5,
        };
        let mut start = eval.evaluate(&space.base).unwrap();
        // Make every neighbor look equally slow so nothing is superior.
        start.eval_time = 0.0;
        let options = LocalOptions {
            nr_shortcut: false,
            ..LocalOptions::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = local_optimize(&start, &space, &eval, &mut rng, &options).unwrap();
        assert_eq!(out, start);
        let calls = eval.localization_calls() - 1;
        assert!(calls >= 12 * 2 && calls <= 12 * 4, "{calls}");
    }

    #[test]
    fn nr_moves_run_no_evaluations() {
        let base = ParameterConfig::identity_default();
        let space = ParameterSpace::new(base, vec![(Param::ReferenceFeatureCap, Range::new(50.0, 1000.0, 50.0))]).unwrap();
        let eval = Synthetic {
            calls: AtomicUsize::new(0),
            score: |_| 0.5,
        };
        let start = eval.evaluate(&space.base).unwrap();
        let before = eval.localization_calls();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = local_optimize(&start, &space, &eval, &mut rng, &LocalOptions::default()).unwrap();
        assert_eq!(eval.localization_calls(), before);
        assert!(out.config.reference_feature_cap >= start.config.reference_feature_cap);
    }

    #[test]
    fn climbs_toward_the_optimum() {
        let space = ParameterSpace::identity_default();
        let eval = Synthetic {
            calls: AtomicUsize::new(0),
            score: |c| 1.0 - (c.kept_bits as f64 - 14.0).abs() * 0.05 - (c.cell_size - 75.0).abs() * 0.002,
        };
        let mut c = space.base.clone();
        c.kept_bits = 20;
        c.cell_size = 150.0;
        let start = eval.evaluate(&c).unwrap();
        let options = LocalOptions {
            min_iterations: 40,
            ..LocalOptions::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = local_optimize(&start, &space, &eval, &mut rng, &options).unwrap();
        assert!(out.predicted_success > start.predicted_success + 0.2);
    }

    #[test]
    fn optimization_log_and_tracking() {
        let space = ParameterSpace::identity_default();
        let eval = Synthetic {
            calls: AtomicUsize::new(0),
            score: |c| 0.4 + c.kept_bits as f64 * 0.01 + c.detector.num_scales as f64 * 0.02,
        };
        let res = run_optimization(&space, &eval, Budget::Iterations(5), 11, &LocalOptions::default()).unwrap();
        assert_eq!(res.log.iter().filter(|e| e.phase == Phase::Sample).count(), 5);
        for e in &res.log {
            assert!(space.contains(&e.config));
            assert!(res.best.predicted_success >= e.predicted_success - SUPERIORITY_MARGIN - 1e-12);
        }
        let again = run_optimization(&space, &eval, Budget::Iterations(5), 11, &LocalOptions::default()).unwrap();
        assert_eq!(res.log_csv(), again.log_csv());
        let one = run_optimization(&space, &eval, Budget::Iterations(1), 11, &LocalOptions::default()).unwrap();
        let best_logged = one
            .log
            .iter()
            .map(|e| e.predicted_success)
            .fold(0.0, f64::max);
        assert!(one.best.predicted_success >= best_logged - SUPERIORITY_MARGIN);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
    }

    proptest! {
        #[test]
        fn sampled_configs_stay_in_space(seed in any::<u64>()) {
            let space = ParameterSpace::identity_default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = sample_config(&space, &mut rng);
            prop_assert!(space.contains(&c));
            prop_assert!(c.validate().is_ok());
        }

        #[test]
        fn tracker_never_regresses(scores in prop::collection::vec((0.0f64..1.0, 0.0f64..10.0), 1..60)) {
            let mut t = BestTracker::default();
            let mut max_seen = 0.0f64;
            for (p, time) in scores {
                let c = scored(p, time);
                let old = t.best().cloned();
                max_seen = max_seen.max(p);
                if t.offer(&c) {
                    if let Some(o) = old {
                        prop_assert!(is_superior(&c, &o));
                    }
                }
                prop_assert!(t.best().unwrap().predicted_success >= max_seen - SUPERIORITY_MARGIN - 1e-12);
            }
        }
    }
}
