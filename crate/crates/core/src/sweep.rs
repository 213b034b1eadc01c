//! Reference-feature-cap sweeps: global, local and predicted success per
//! `n_r`.

use serde::{Deserialize, Serialize};

use crate::config::ParameterConfig;
use crate::error::{Error, Result};
use crate::evaluation::{
    extract_queries, global_evaluation_features, inlier_ratio, local_success_rate, model_inputs, success_fraction,
    EvalRecord, ExpectedCells, PreparedTestSet, TestImageSet,
};
use crate::geometry::Pose2D;
use crate::imaging::GrayImage;
use crate::mapping::{assemble_map, extract_references};
use crate::optimizer::spearman;
use crate::prediction::{predict_success_rate, scale_inputs_for_nr, PredictionInputs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Re-run the test-image evaluation per `n_r`.
    Rescan,
    /// Evaluate once at the config's `n_r` and scale the model inputs.
    Shortcut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub nr: usize,
    pub global_success: Option<f64>,
    pub local_success: Option<f64>,
    pub predicted_success: f64,
    pub inlier_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Inlier/outlier evaluation passes run over the test sets.
    pub evaluation_passes: usize,
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("nr,global_success,local_success,predicted_success,inlier_ratio\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.nr,
                cell(r.global_success),
                cell(r.local_success),
                r.predicted_success,
                cell(r.inlier_ratio)
            ));
        }
        s
    }

    fn paired(&self) -> (Vec<f64>, Vec<f64>) {
        self.rows
            .iter()
            .filter_map(|r| r.global_success.map(|g| (r.predicted_success, g)))
            .unzip()
    }

    /// Mean absolute difference between predicted and global success.
    pub fn mean_abs_error(&self) -> Option<f64> {
        let (p, g) = self.paired();
        if p.is_empty() {
            return None;
        }
        Some(p.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
    }

    /// Rank correlation between predicted and global curves.
    pub fn spearman(&self) -> Option<f64> {
        let (p, g) = self.paired();
        (p.len() >= 2).then(|| spearman(&p, &g))
    }
}

/// Full map and query set for the global column.
#[derive(Debug, Clone, Copy)]
pub struct GlobalSetup<'a> {
    pub references: &'a [(GrayImage, Pose2D)],
    pub queries: &'a [(GrayImage, Pose2D)],
}

/// Predicted success per `n_r` by scaling inputs measured at `anchor_nr`.
pub fn shortcut_curve(anchor: &PredictionInputs, anchor_nr: usize, nrs: &[usize]) -> Vec<f64> {
    nrs.iter()
        .map(|&n| predict_success_rate(&scale_inputs_for_nr(anchor, anchor_nr, n)))
        .collect()
}

fn evaluate(prepared: &[PreparedTestSet], config: &ParameterConfig) -> Result<(Vec<EvalRecord>, Vec<EvalRecord>)> {
    let mut inl = Vec::new();
    let mut outl = Vec::new();
    for p in prepared {
        inl.extend(p.inlier_records(config)?);
        outl.extend(p.outlier_records(config)?);
    }
    Ok((inl, outl))
}

pub fn sweep_nr(
    test_sets: &[TestImageSet],
    global: Option<GlobalSetup<'_>>,
    config: &ParameterConfig,
    nrs: &[usize],
    mode: SweepMode,
    cells: ExpectedCells,
) -> Result<SweepResult> {
    if nrs.is_empty() || nrs.contains(&0) {
        return Err(Error::InvalidParameter("n_r list must be non-empty and positive".into()));
    }
    if test_sets.is_empty() {
        return Err(Error::EmptyInput("no test image sets".into()));
    }
    let prepared: Vec<PreparedTestSet> = test_sets.iter().map(|s| PreparedTestSet::prepare(s, config)).collect();
    let outlier_refs = prepared.iter().map(|p| p.num_outlier_refs()).sum::<f64>() / prepared.len() as f64;
    let with_nr = |nr: usize| {
        let mut c = config.clone();
        c.reference_feature_cap = nr;
        c
    };
    let score = |cfg: &ParameterConfig| -> Result<(PredictionInputs, f64, f64)> {
        let (inl, outl) = evaluate(&prepared, cfg)?;
        let est = cells.estimate(&outl, outlier_refs, cfg.cell_size);
        let inputs = model_inputs(&inl, &outl, &est, &cfg.matching)?;
        Ok((inputs, local_success_rate(&inl, &outl), inlier_ratio(&inl, &outl)))
    };

    let mut rows = Vec::with_capacity(nrs.len());
    let mut evaluation_passes = 0;
    match mode {
        SweepMode::Rescan => {
            for &nr in nrs {
                let (inputs, local, ratio) = score(&with_nr(nr))?;
                evaluation_passes += 1;
                rows.push(SweepRow {
                    nr,
                    global_success: None,
                    local_success: Some(local),
                    predicted_success: predict_success_rate(&inputs),
                    inlier_ratio: Some(ratio),
                });
            }
        }
        SweepMode::Shortcut => {
            let anchor_nr = config.reference_feature_cap;
            let (inputs, local, ratio) = score(config)?;
            evaluation_passes += 1;
            for (&nr, p) in nrs.iter().zip(shortcut_curve(&inputs, anchor_nr, nrs)) {
                let at_anchor = nr == anchor_nr;
                rows.push(SweepRow {
                    nr,
                    global_success: None,
                    local_success: at_anchor.then_some(local),
                    predicted_success: p,
                    inlier_ratio: at_anchor.then_some(ratio),
                });
            }
        }
    }

    if let Some(g) = global {
        let extracted = extract_references(g.references, config);
        let queries = extract_queries(g.queries, config);
        for row in &mut rows {
            let cfg = with_nr(row.nr);
            let map = assemble_map(&extracted, &cfg)?;
            row.global_success = Some(success_fraction(&global_evaluation_features(&queries, &map, &cfg)?));
        }
    }
    Ok(SweepResult { rows, evaluation_passes })
}
