//! Multiple instance detection head: two-stream fusion, image-level
//! aggregation, the image-label BCE loss and rank-based class tolerance.

use serde::{Deserialize, Serialize};

use crate::boxgeom::BBox;
use crate::error::{Error, Result};
use crate::gradcore::{
    softmax_over_classes, softmax_over_classes_backward, softmax_over_proposals,
    softmax_over_proposals_backward, LossValue, Matrix,
};

/// Lower/upper clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct MidnScores {
    /// Column-softmaxed classification stream.
    pub cls_prob: Matrix,
    /// Row-softmaxed detection stream.
    pub det_prob: Matrix,
    /// Fused proposal scores, classes x proposals.
    pub x_box: Matrix,
    /// Per-class sum of `x_box` over proposals.
    pub x_img: Vec<f64>,
}

/// A labelled image. Ground truth is kept for evaluation and is never read by
/// the training losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub labels: Vec<bool>,
    pub gt: Vec<(BBox, usize)>,
}

impl ImageRecord {
    pub fn present_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(c, &y)| y.then_some(c))
    }
}

pub fn midn_forward(x_cls: &Matrix, x_det: &Matrix) -> Result<MidnScores> {
    x_cls.check_same(x_det)?;
    let cls_prob = softmax_over_classes(x_cls);
    let det_prob = softmax_over_proposals(x_det);
    let x_box = cls_prob.hadamard(&det_prob)?;
    let x_img = x_box.row_sums();
    Ok(MidnScores {
        cls_prob,
        det_prob,
        x_box,
        x_img,
    })
}

/// Class-weighted binary cross-entropy on image scores. The returned gradient
/// is with respect to `x_img` (a `C x 1` matrix); clamped entries get zero
/// gradient.
pub fn midn_loss(x_img: &[f64], labels: &[bool], class_weights: &[f64]) -> Result<LossValue> {
    if x_img.len() != labels.len() || x_img.len() != class_weights.len() {
        return Err(Error::shape(
            format!("{} classes", x_img.len()),
            format!("{} labels, {} weights", labels.len(), class_weights.len()),
        ));
    }
    let mut value = 0.0;
    let mut grad = Matrix::zeros(x_img.len(), 1);
    for (c, ((&x, &y), &w)) in x_img.iter().zip(labels).zip(class_weights).enumerate() {
        let p = x.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let inside = p == x;
        if y {
            value -= w * p.ln();
            if inside {
                grad[(c, 0)] = -w / p;
            }
        } else {
            value -= w * (1.0 - p).ln();
            if inside {
                grad[(c, 0)] = w / (1.0 - p);
            }
        }
    }
    Ok(LossValue { value, grad })
}

/// Gradients of the image loss with respect to both streams' logits.
pub fn midn_backward(scores: &MidnScores, grad_img: &Matrix) -> (Matrix, Matrix) {
    let (classes, proposals) = scores.x_box.shape();
    let mut g_cls = Matrix::zeros(classes, proposals);
    let mut g_det = Matrix::zeros(classes, proposals);
    for c in 0..classes {
        let g = grad_img[(c, 0)];
        for i in 0..proposals {
            g_cls[(c, i)] = g * scores.det_prob[(c, i)];
            g_det[(c, i)] = g * scores.cls_prob[(c, i)];
        }
    }
    (
        softmax_over_classes_backward(&scores.cls_prob, &g_cls),
        softmax_over_proposals_backward(&scores.det_prob, &g_det),
    )
}

/// How the rank windows of the tolerance rule are closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankInterval {
    /// `[N_p, N_p + T_n)` and `[0, N_p)`.
    HalfOpen,
    /// `[N_p, N_p + T_n]` and `[0, N_p]`.
    Inclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MctParams {
    pub t_n: usize,
    pub a: f64,
    pub interval: RankInterval,
    /// Only down-weight absent classes when some present class was tolerated.
    pub gated: bool,
}

impl Default for MctParams {
    fn default() -> Self {
        MctParams {
            t_n: 1,
            a: 0.4,
            interval: RankInterval::HalfOpen,
            gated: true,
        }
    }
}

/// Misclassification-tolerance class weights for the image loss.
///
/// Classes are ranked by `x_img` descending (ties by class index). Present
/// classes ranked just below the top `N_p` and absent classes ranked inside
/// the top `N_p` receive weight `a`; everything else gets 1.
pub fn mct_weights(x_img: &[f64], labels: &[bool], params: &MctParams) -> Vec<f64> {
    let n_classes = x_img.len();
    let n_present = labels.iter().filter(|&&y| y).count();
    let mut weights = vec![1.0; n_classes];
    if n_present == 0 {
        return weights;
    }
    let order = crate::boxgeom::descending_order(x_img);
    let mut rank = vec![0usize; n_classes];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    let (present_hi, absent_hi) = match params.interval {
        RankInterval::HalfOpen => (n_present + params.t_n, n_present),
        RankInterval::Inclusive => (n_present + params.t_n + 1, n_present + 1),
    };
    let tolerated: Vec<usize> = (0..n_classes)
        .filter(|&c| labels[c] && rank[c] >= n_present && rank[c] < present_hi)
        .collect();
    if params.gated && tolerated.is_empty() {
        return weights;
    }
    for c in tolerated {
        weights[c] = params.a;
    }
    for c in 0..n_classes {
        if !labels[c] && rank[c] < absent_hi {
            weights[c] = params.a;
        }
    }
    weights
}
