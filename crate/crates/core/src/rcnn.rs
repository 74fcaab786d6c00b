//! Final detection head: a C+1 way classifier plus box regression, trained
//! from the last refinement stage's seeds.

use serde::{Deserialize, Serialize};

use crate::boxgeom::{BBox, ImageBounds};
use crate::error::{Error, Result};
use crate::gradcore::{LossValue, Matrix};
use crate::sce::{assign_mcc_targets, mcc_loss, FarWeight, SeedSet};

/// Upper clamp on predicted log-scale deltas.
pub const MAX_LOG_SCALE: f64 = 4.135166556742356; // ln(1000 / 16)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionMode {
    /// One delta 4-vector per proposal.
    ClassAgnostic,
    /// One delta 4-vector per proposal and foreground class.
    PerClass,
}

impl RegressionMode {
    pub fn outputs(self, n_classes: usize) -> usize {
        match self {
            RegressionMode::ClassAgnostic => 4,
            RegressionMode::PerClass => 4 * n_classes,
        }
    }

    fn row_offset(self, class: usize) -> usize {
        match self {
            RegressionMode::ClassAgnostic => 0,
            RegressionMode::PerClass => 4 * class,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcnnTargets {
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    /// `(dx, dy, dw, dh)` for foreground proposals with non-degenerate boxes.
    pub regression: Vec<Option<[f64; 4]>>,
}

impl RcnnTargets {
    pub fn foreground_count(&self) -> usize {
        self.regression.iter().filter(|r| r.is_some()).count()
    }
}

/// Center/log-size parameterization of `target` relative to `proposal`.
pub fn encode_deltas(proposal: &BBox, target: &BBox) -> [f64; 4] {
    let (px, py) = proposal.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    let (sx, sy) = target.center();
    let (sw, sh) = (target.width(), target.height());
    [
        (sx - px) / pw,
        (sy - py) / ph,
        (sw / pw).ln(),
        (sh / ph).ln(),
    ]
}

/// Inverse of [`encode_deltas`], with log-size deltas clamped to
/// [`MAX_LOG_SCALE`]. No clipping.
pub fn decode_deltas(proposal: &BBox, d: [f64; 4]) -> BBox {
    let (px, py) = proposal.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    let cx = px + d[0] * pw;
    let cy = py + d[1] * ph;
    let w = pw * d[2].min(MAX_LOG_SCALE).exp();
    let h = ph * d[3].min(MAX_LOG_SCALE).exp();
    BBox::from_center(cx, cy, w, h)
}

pub fn assign_rcnn_targets(
    boxes: &[BBox],
    seeds: &SeedSet,
    n_classes: usize,
    tau_h: f64,
    far: FarWeight,
) -> Result<RcnnTargets> {
    let t = assign_mcc_targets(boxes, seeds, n_classes, tau_h, far)?;
    let mut regression = Vec::with_capacity(boxes.len());
    for (i, &label) in t.labels.iter().enumerate() {
        if label == n_classes {
            regression.push(None);
        } else if boxes[i].is_degenerate() {
            log::warn!("degenerate foreground proposal {i} excluded from regression");
            regression.push(None);
        } else {
            let seed = &seeds.seeds[t.seed_index[i]].bbox;
            regression.push(Some(encode_deltas(&boxes[i], seed)));
        }
    }
    Ok(RcnnTargets {
        labels: t.labels,
        weights: t.weights,
        regression,
    })
}

pub fn smooth_l1(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.5 * u * u
    } else {
        u.abs() - 0.5
    }
}

pub fn smooth_l1_grad(u: f64) -> f64 {
    u.clamp(-1.0, 1.0)
}

/// Loss of the head, split into its two terms. Gradients are with respect to
/// the classifier logits and the raw deltas.
#[derive(Debug, Clone)]
pub struct RcnnLoss {
    pub cls: LossValue,
    pub reg: LossValue,
}

impl RcnnLoss {
    pub fn value(&self) -> f64 {
        self.cls.value + self.reg.value
    }
}

/// Weighted cross-entropy plus sample-weighted smooth-L1 averaged over the
/// foreground proposals. `deltas` is outputs x proposals.
pub fn rcnn_loss(
    cls_probs: &Matrix,
    deltas: &Matrix,
    targets: &RcnnTargets,
    mode: RegressionMode,
) -> Result<RcnnLoss> {
    let cls = mcc_loss(cls_probs, &targets.labels, &targets.weights)?;
    let n = cls_probs.cols();
    let n_classes = cls_probs.rows() - 1;
    if deltas.shape() != (mode.outputs(n_classes), n) {
        return Err(Error::shape(
            format!("{} x {n}", mode.outputs(n_classes)),
            format!("{} x {}", deltas.rows(), deltas.cols()),
        ));
    }
    let mut reg = LossValue::zero(deltas.rows(), n);
    let fg = targets.foreground_count();
    if fg > 0 {
        let inv = 1.0 / fg as f64;
        for (i, t) in targets.regression.iter().enumerate() {
            let Some(t) = t else { continue };
            let w = targets.weights[i];
            let off = mode.row_offset(targets.labels[i]);
            for k in 0..4 {
                let u = deltas[(off + k, i)] - t[k];
                reg.value += inv * w * smooth_l1(u);
                reg.grad[(off + k, i)] = inv * w * smooth_l1_grad(u);
            }
        }
    }
    Ok(RcnnLoss { cls, reg })
}

/// Decode per-proposal deltas (outputs x proposals) and clip to the canvas.
/// `classes` picks the delta block for per-class regression.
pub fn apply_regression(
    boxes: &[BBox],
    deltas: &Matrix,
    classes: &[usize],
    mode: RegressionMode,
    bounds: ImageBounds,
) -> Result<Vec<BBox>> {
    if deltas.cols() != boxes.len() || classes.len() != boxes.len() {
        return Err(Error::shape(
            format!("{} proposals", boxes.len()),
            format!("{} deltas, {} classes", deltas.cols(), classes.len()),
        ));
    }
    Ok(boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let off = mode.row_offset(classes[i]);
            let d = [
                deltas[(off, i)],
                deltas[(off + 1, i)],
                deltas[(off + 2, i)],
                deltas[(off + 3, i)],
            ];
            decode_deltas(b, d).clip(bounds)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sce::{Seed, SeedOrigin};

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    const BIG: ImageBounds = ImageBounds {
        width: 1000.0,
        height: 1000.0,
    };

    fn one_seed(bbox: BBox, class: usize) -> SeedSet {
        SeedSet {
            seeds: vec![Seed {
                bbox,
                class,
                confidence: 1.0,
                origin: SeedOrigin::Base,
                proposal: 0,
            }],
        }
    }

    #[test]
    fn target_examples() {
        let s = b(0., 0., 20., 10.);
        let t = assign_rcnn_targets(&[s], &one_seed(s, 2), 3, 0.5, FarWeight::NearestSeed).unwrap();
        assert_eq!(t.labels, vec![2]);
        assert_eq!(t.regression, vec![Some([0.0; 4])]);

        // proposal (0,0,10,10) has IoU 0.5 with the seed (0,0,20,10)
        let t = assign_rcnn_targets(
            &[b(0., 0., 10., 10.), b(500., 500., 510., 510.)],
            &one_seed(s, 0),
            3,
            0.5,
            FarWeight::NearestSeed,
        )
        .unwrap();
        let d = t.regression[0].unwrap();
        assert!((d[0] - 0.5).abs() < 1e-15 && d[1] == 0.0);
        assert!((d[2] - 2f64.ln()).abs() < 1e-15 && d[3] == 0.0);
        assert_eq!((t.labels[1], t.regression[1]), (3, None));
    }

    #[test]
    fn degenerate_foreground_is_excluded() {
        let s = b(0., 0., 0., 10.);
        let t = assign_rcnn_targets(
            &[s],
            &one_seed(b(0., 0., 10., 10.), 0),
            1,
            0.0,
            FarWeight::One,
        )
        .unwrap();
        assert_eq!(t.labels, vec![0]);
        assert_eq!(t.regression, vec![None]);
    }

    #[test]
    fn smooth_l1_values_and_continuity() {
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-0.5), 0.125);
        let eps = 1e-9;
        for x in [1.0, -1.0] {
            assert!((smooth_l1(x - eps) - smooth_l1(x + eps)).abs() < 1e-8);
            assert!((smooth_l1_grad(x - eps) - smooth_l1_grad(x + eps)).abs() < 1e-8);
        }
    }

    #[test]
    fn loss_examples() {
        let probs = Matrix::from_vec(2, 1, vec![0.5, 0.5]).unwrap();
        let bg = RcnnTargets {
            labels: vec![1],
            weights: vec![1.0],
            regression: vec![None],
        };
        let l = rcnn_loss(
            &probs,
            &Matrix::zeros(4, 1),
            &bg,
            RegressionMode::ClassAgnostic,
        )
        .unwrap();
        assert_eq!(l.reg.value, 0.0);
        assert!((l.cls.value - std::f64::consts::LN_2).abs() < 1e-15);

        let fg = RcnnTargets {
            labels: vec![0],
            weights: vec![1.0],
            regression: vec![Some([0.1, -0.2, 0.3, 0.0])],
        };
        let deltas = Matrix::from_vec(4, 1, vec![0.1, -0.2, 0.3, 0.0]).unwrap();
        let l = rcnn_loss(&probs, &deltas, &fg, RegressionMode::ClassAgnostic).unwrap();
        assert_eq!(l.reg.value, 0.0);

        let deltas = Matrix::from_vec(4, 1, vec![2.1, -0.2, 0.3, 0.0]).unwrap();
        let l = rcnn_loss(&probs, &deltas, &fg, RegressionMode::ClassAgnostic).unwrap();
        assert!((l.reg.value - 1.5).abs() < 1e-12);
    }

    #[test]
    fn apply_examples() {
        let p = b(0., 0., 10., 10.);
        let out = apply_regression(
            &[p],
            &Matrix::zeros(4, 1),
            &[0],
            RegressionMode::ClassAgnostic,
            BIG,
        )
        .unwrap();
        assert_eq!(out, vec![p]);

        let d = Matrix::from_vec(4, 1, vec![0.5, 0.0, 2f64.ln(), 0.0]).unwrap();
        let out = apply_regression(&[p], &d, &[0], RegressionMode::ClassAgnostic, BIG).unwrap();
        // inverse of the (0,0,10,10) -> (0,0,20,10) encoding
        let e = b(0., 0., 20., 10.);
        for (u, v) in [
            (out[0].x1, e.x1),
            (out[0].y1, e.y1),
            (out[0].x2, e.x2),
            (out[0].y2, e.y2),
        ] {
            assert!((u - v).abs() < 1e-12);
        }

        let huge = Matrix::from_vec(4, 1, vec![0.0, 0.0, 50.0, 50.0]).unwrap();
        let out = apply_regression(&[p], &huge, &[0], RegressionMode::ClassAgnostic, BIG).unwrap();
        assert!(out[0].x2.is_finite());
    }

    #[test]
    fn per_class_blocks() {
        let p = b(0., 0., 10., 10.);
        let mut d = Matrix::zeros(8, 1);
        d[(4, 0)] = 0.5;
        let out = apply_regression(&[p], &d, &[1], RegressionMode::PerClass, BIG).unwrap();
        assert_eq!(out[0], b(5., 0., 15., 10.));
        let out = apply_regression(&[p], &d, &[0], RegressionMode::PerClass, BIG).unwrap();
        assert_eq!(out[0], p);
    }
}
