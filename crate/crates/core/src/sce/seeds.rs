use std::fmt;

use serde::{Deserialize, Serialize};

use crate::boxgeom::{iou, nms, BBox};
use crate::error::{Error, Result};
use crate::gradcore::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedOrigin {
    Base,
    Finetuned,
}

impl fmt::Display for SeedOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeedOrigin::Base => "base",
            SeedOrigin::Finetuned => "finetuned",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub bbox: BBox,
    pub class: usize,
    pub confidence: f64,
    pub origin: SeedOrigin,
    /// Index of the proposal the seed was taken from.
    pub proposal: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedSet {
    pub seeds: Vec<Seed>,
}

impl SeedSet {
    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn boxes(&self) -> Vec<BBox> {
        self.seeds.iter().map(|s| s.bbox).collect()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.seeds.iter().map(|s| s.class).collect()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Seed> {
        self.seeds.iter()
    }
}

fn check_scores(scores: &Matrix, labels: &[bool], boxes: &[BBox]) -> Result<()> {
    if scores.rows() < labels.len() || scores.cols() != boxes.len() {
        return Err(Error::shape(
            format!("at least {} x {}", labels.len(), boxes.len()),
            format!("{} x {}", scores.rows(), scores.cols()),
        ));
    }
    Ok(())
}

/// Base seeds from a class-wise soft threshold followed by class-wise NMS.
///
/// `scores` is classes x proposals; only the first `labels.len()` rows are
/// read, so a C+1 row classifier output can be passed directly.
pub fn mine_base_seeds(
    scores: &Matrix,
    labels: &[bool],
    boxes: &[BBox],
    alpha: f64,
    tau_nms: f64,
) -> Result<SeedSet> {
    check_scores(scores, labels, boxes)?;
    let mut out = SeedSet::default();
    if boxes.is_empty() {
        return Ok(out);
    }
    for (c, _) in labels.iter().enumerate().filter(|(_, &y)| y) {
        let row = scores.row(c);
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let threshold = alpha * top;
        let picked: Vec<usize> = (0..row.len()).filter(|&i| row[i] >= threshold).collect();
        let picked_boxes: Vec<BBox> = picked.iter().map(|&i| boxes[i]).collect();
        let picked_scores: Vec<f64> = picked.iter().map(|&i| row[i]).collect();
        for k in nms(&picked_boxes, &picked_scores, tau_nms)? {
            let i = picked[k];
            out.seeds.push(Seed {
                bbox: boxes[i],
                class: c,
                confidence: row[i],
                origin: SeedOrigin::Base,
                proposal: i,
            });
        }
    }
    Ok(out)
}

/// One seed per present class: the top-scoring proposal (lowest index on ties).
pub fn mine_top1_seeds(scores: &Matrix, labels: &[bool], boxes: &[BBox]) -> Result<SeedSet> {
    check_scores(scores, labels, boxes)?;
    let mut out = SeedSet::default();
    if boxes.is_empty() {
        return Ok(out);
    }
    for (c, _) in labels.iter().enumerate().filter(|(_, &y)| y) {
        let row = scores.row(c);
        let mut best = 0;
        for i in 1..row.len() {
            if row[i] > row[best] {
                best = i;
            }
        }
        out.seeds.push(Seed {
            bbox: boxes[best],
            class: c,
            confidence: row[best],
            origin: SeedOrigin::Base,
            proposal: best,
        });
    }
    Ok(out)
}

/// Move each base seed to the surrounding proposal (IoU >= `tau_sur`) with the
/// highest intra-class score, keeping the base seeds.
pub fn icbc_finetune_seeds(
    base: &SeedSet,
    boxes: &[BBox],
    icbc: &Matrix,
    tau_sur: f64,
) -> Result<SeedSet> {
    if icbc.cols() != boxes.len() {
        return Err(Error::shape(
            format!("{} proposals", boxes.len()),
            icbc.cols().to_string(),
        ));
    }
    let mut out = base.clone();
    for seed in &base.seeds {
        let row = icbc.row(seed.class);
        let mut best: Option<usize> = None;
        for (j, b) in boxes.iter().enumerate() {
            if iou(b, &seed.bbox) >= tau_sur && best.is_none_or(|k| row[j] > row[k]) {
                best = Some(j);
            }
        }
        let Some(j) = best else { continue };
        let duplicate = out
            .seeds
            .iter()
            .any(|s| s.class == seed.class && s.bbox == boxes[j]);
        if !duplicate {
            out.seeds.push(Seed {
                bbox: boxes[j],
                class: seed.class,
                confidence: seed.confidence,
                origin: SeedOrigin::Finetuned,
                proposal: j,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn single_proposal_is_the_seed() {
        let scores = Matrix::from_rows(&[vec![0.42]]).unwrap();
        let seeds = mine_base_seeds(&scores, &[true], &[b(0., 0., 5., 5.)], 0.9, 0.1).unwrap();
        assert_eq!(seeds.len(), 1);
        assert_eq!(seeds.seeds[0].confidence, 0.42);
        assert_eq!(seeds.seeds[0].origin, SeedOrigin::Base);
    }

    #[test]
    fn soft_threshold_hand_trace() {
        let scores = Matrix::from_rows(&[vec![0.95, 0.90, 0.50]]).unwrap();
        // Proposals 0 and 1 barely overlap (IoU 0.05 at most).
        let far = [
            b(0., 0., 10., 10.),
            b(9., 0., 19., 10.),
            b(50., 50., 60., 60.),
        ];
        assert!(iou(&far[0], &far[1]) <= 0.1);
        let s = mine_base_seeds(&scores, &[true], &far, 0.9, 0.1).unwrap();
        assert_eq!(s.iter().map(|s| s.proposal).collect::<Vec<_>>(), vec![0, 1]);

        let near = [
            b(0., 0., 10., 10.),
            b(2., 0., 12., 10.),
            b(50., 50., 60., 60.),
        ];
        let s = mine_base_seeds(&scores, &[true], &near, 0.9, 0.1).unwrap();
        assert_eq!(s.iter().map(|s| s.proposal).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn absent_classes_yield_no_seeds() {
        let scores = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5]]).unwrap();
        let boxes = [b(0., 0., 10., 10.), b(20., 20., 30., 30.)];
        let s = mine_base_seeds(&scores, &[false, true], &boxes, 0.9, 0.1).unwrap();
        assert_eq!(s.classes(), vec![1]);
        let s = mine_top1_seeds(&scores, &[true, true], &boxes).unwrap();
        assert_eq!(s.iter().map(|s| s.proposal).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn finetune_self_only_is_deduplicated() {
        let boxes = [b(0., 0., 10., 10.), b(40., 40., 50., 50.)];
        let icbc = Matrix::from_rows(&[vec![0.3, 0.9]]).unwrap();
        let base = mine_top1_seeds(
            &Matrix::from_rows(&[vec![0.8, 0.1]]).unwrap(),
            &[true],
            &boxes,
        )
        .unwrap();
        let out = icbc_finetune_seeds(&base, &boxes, &icbc, 0.5).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn finetune_moves_to_better_neighbor() {
        // IoU(A, B) = 75 / 125 = 0.6
        let boxes = [
            b(0., 0., 10., 10.),
            b(2.5, 0., 12.5, 10.),
            b(100., 0., 110., 10.),
        ];
        assert!((iou(&boxes[0], &boxes[1]) - 0.6).abs() < 1e-12);
        let base = SeedSet {
            seeds: vec![Seed {
                bbox: boxes[0],
                class: 0,
                confidence: 0.7,
                origin: SeedOrigin::Base,
                proposal: 0,
            }],
        };
        let icbc = Matrix::from_rows(&[vec![0.4, 0.6, 0.99]]).unwrap();
        let out = icbc_finetune_seeds(&base, &boxes, &icbc, 0.5).unwrap();
        assert_eq!(out.len(), 2);
        let ft = &out.seeds[1];
        assert_eq!((ft.proposal, ft.class, ft.confidence), (1, 0, 0.7));
        assert_eq!(ft.origin, SeedOrigin::Finetuned);
    }
}
