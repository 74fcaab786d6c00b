//! Inference: score aggregation, self-classification correction, final
//! detection post-processing, and evaluation metrics.
//!
//! Matrices at this boundary are proposals x classes, the transpose of the
//! training-side layout; [`to_inference_layout`] converts.

mod metrics;

pub use metrics::{eval_corloc, eval_ilc, eval_map, ApMethod, MapReport};

use serde::{Deserialize, Serialize};

use crate::boxgeom::{nms, BBox, ImageBounds};
use crate::error::{Error, Result};
use crate::gradcore::Matrix;
use crate::rcnn::{apply_regression, RegressionMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

/// Classes x proposals to proposals x classes.
pub fn to_inference_layout(training: &Matrix) -> Matrix {
    training.transpose()
}

/// Element-wise mean of same-shaped score matrices.
pub fn aggregate(members: &[Matrix]) -> Result<Matrix> {
    let first = members
        .first()
        .ok_or_else(|| Error::shape("at least one score matrix", "none"))?;
    let mut sum = Matrix::zeros(first.rows(), first.cols());
    for m in members {
        sum.add_assign(m)?;
    }
    sum.scale(1.0 / members.len() as f64);
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SccParams {
    pub lambda: f64,
    pub tau_midn: f64,
    /// With no confident proposal, leave the scores untouched instead of
    /// scaling every class.
    pub empty_is_noop: bool,
}

impl Default for SccParams {
    fn default() -> Self {
        SccParams {
            lambda: 0.01,
            tau_midn: 0.001,
            empty_is_noop: true,
        }
    }
}

/// Classes the MIDN scores (proposals x classes) predict as present: the
/// arg-max class of every proposal whose best score exceeds `tau_midn`.
/// `None` when no proposal is confident.
pub fn midn_present_classes(midn: &Matrix, tau_midn: f64) -> Option<Vec<bool>> {
    let mut present = vec![false; midn.cols()];
    let mut any = false;
    for i in 0..midn.rows() {
        let row = midn.row(i);
        let mut best = 0;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        if !row.is_empty() && row[best] > tau_midn {
            present[best] = true;
            any = true;
        }
    }
    any.then_some(present)
}

/// Self-classification correction: scale the pipeline score columns of the
/// classes MIDN considers absent by `lambda`. The background column is never
/// touched.
pub fn scc(f: &Matrix, midn: &Matrix, params: &SccParams) -> Result<Matrix> {
    if f.rows() != midn.rows() || f.cols() != midn.cols() + 1 {
        return Err(Error::shape(
            format!("{} x {}", midn.rows(), midn.cols() + 1),
            format!("{} x {}", f.rows(), f.cols()),
        ));
    }
    let present = match midn_present_classes(midn, params.tau_midn) {
        Some(p) => p,
        None if params.empty_is_noop => return Ok(f.clone()),
        None => vec![false; midn.cols()],
    };
    let mut out = f.clone();
    for (c, _) in present.iter().enumerate().filter(|(_, &p)| !p) {
        for i in 0..out.rows() {
            out[(i, c)] *= params.lambda;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    pub score_threshold: f64,
    pub nms_threshold: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            score_threshold: 1e-3,
            nms_threshold: 0.3,
        }
    }
}

/// Threshold, refine and suppress per foreground class. `scores` is
/// proposals x (C+1); `deltas` is regression outputs x proposals.
/// Detections come out grouped by class, descending score within a class.
pub fn detect(
    scores: &Matrix,
    boxes: &[BBox],
    deltas: &Matrix,
    mode: RegressionMode,
    bounds: ImageBounds,
    params: &DetectParams,
) -> Result<Vec<Detection>> {
    if scores.rows() != boxes.len() || scores.cols() < 1 {
        return Err(Error::shape(
            format!("{} proposal rows", boxes.len()),
            format!("{} x {}", scores.rows(), scores.cols()),
        ));
    }
    let n_classes = scores.cols() - 1;
    let mut out = Vec::new();
    for c in 0..n_classes {
        let cand: Vec<usize> = (0..boxes.len())
            .filter(|&i| scores[(i, c)] > params.score_threshold)
            .collect();
        if cand.is_empty() {
            continue;
        }
        let cand_boxes: Vec<BBox> = cand.iter().map(|&i| boxes[i]).collect();
        let cand_deltas = select_columns(deltas, &cand);
        let refined = apply_regression(
            &cand_boxes,
            &cand_deltas,
            &vec![c; cand.len()],
            mode,
            bounds,
        )?;
        let cand_scores: Vec<f64> = cand.iter().map(|&i| scores[(i, c)]).collect();
        for k in nms(&refined, &cand_scores, params.nms_threshold)? {
            out.push(Detection {
                bbox: refined[k],
                class: c,
                score: cand_scores[k],
            });
        }
    }
    Ok(out)
}

fn select_columns(m: &Matrix, cols: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), cols.len());
    for r in 0..m.rows() {
        for (k, &c) in cols.iter().enumerate() {
            out[(r, k)] = m[(r, c)];
        }
    }
    out
}
