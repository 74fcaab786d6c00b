use serde::{Deserialize, Serialize};

use super::ImageDetections;
use crate::boxgeom::iou;
use crate::error::{Error, Result};
use crate::midn::ImageRecord;

pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMethod {
    /// Mean of the interpolated precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
    /// Area under the monotone precision envelope.
    AllPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    /// `None` for classes without ground truth.
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
}

fn check_alignment(dets: &[ImageDetections], truth: &[ImageRecord]) -> Result<()> {
    if dets.len() != truth.len() {
        return Err(Error::shape(
            format!("{} images", truth.len()),
            dets.len().to_string(),
        ));
    }
    for (d, t) in dets.iter().zip(truth) {
        if d.image_id != t.id {
            return Err(Error::shape(t.id.clone(), d.image_id.clone()));
        }
    }
    Ok(())
}

fn average_precision(tp: &[bool], n_gt: usize, method: ApMethod) -> f64 {
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / n_gt as f64);
        precision.push(hits as f64 / (k + 1) as f64);
    }
    match method {
        ApMethod::ElevenPoint => {
            let mut ap = 0.0;
            for step in 0..=10 {
                let t = step as f64 / 10.0;
                let p = recall
                    .iter()
                    .zip(&precision)
                    .filter(|(r, _)| **r >= t)
                    .map(|(_, p)| *p)
                    .fold(0.0, f64::max);
                ap += p;
            }
            ap / 11.0
        }
        ApMethod::AllPoint => {
            let mut mrec = vec![0.0];
            mrec.extend(&recall);
            mrec.push(1.0);
            let mut mpre = vec![0.0];
            mpre.extend(&precision);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            (1..mrec.len())
                .map(|i| (mrec[i] - mrec[i - 1]) * mpre[i])
                .sum()
        }
    }
}

/// Dataset mean average precision at IoU 0.5.
///
/// Detections of a class are processed across the dataset in descending score
/// (ties by image order, then list order). A detection is a true positive when
/// its best-overlapping still unmatched ground-truth box of the same class has
/// IoU >= 0.5; that box is then consumed.
pub fn eval_map(
    dets: &[ImageDetections],
    truth: &[ImageRecord],
    n_classes: usize,
    method: ApMethod,
) -> Result<MapReport> {
    check_alignment(dets, truth)?;
    let mut per_class_ap = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let n_gt: usize = truth
            .iter()
            .map(|t| t.gt.iter().filter(|g| g.1 == c).count())
            .sum();
        if n_gt == 0 {
            log::info!("class {c} has no ground truth; excluded from mAP");
            per_class_ap.push(None);
            continue;
        }
        let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
        for (img, d) in dets.iter().enumerate() {
            for (k, det) in d.detections.iter().enumerate() {
                if det.class == c {
                    ranked.push((det.score, img, k));
                }
            }
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut matched: Vec<Vec<bool>> = truth.iter().map(|t| vec![false; t.gt.len()]).collect();
        let mut tp = Vec::with_capacity(ranked.len());
        for &(_, img, k) in &ranked {
            let bbox = dets[img].detections[k].bbox;
            let mut best: Option<(usize, f64)> = None;
            for (g, (gb, gc)) in truth[img].gt.iter().enumerate() {
                if *gc != c || matched[img][g] {
                    continue;
                }
                let v = iou(&bbox, gb);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, v)) if v >= MATCH_IOU => {
                    matched[img][g] = true;
                    tp.push(true);
                }
                _ => tp.push(false),
            }
        }
        per_class_ap.push(Some(average_precision(&tp, n_gt, method)));
    }
    let defined: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
    let map = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(MapReport { per_class_ap, map })
}

/// Fraction of (image, present class) pairs whose top-scoring detection of
/// that class hits a ground-truth box of the class at IoU >= 0.5.
pub fn eval_corloc(dets: &[ImageDetections], truth: &[ImageRecord]) -> Result<f64> {
    check_alignment(dets, truth)?;
    let mut pairs = 0usize;
    let mut correct = 0usize;
    for (d, t) in dets.iter().zip(truth) {
        for c in t.present_classes() {
            pairs += 1;
            let mut top: Option<&super::Detection> = None;
            for det in d.detections.iter().filter(|det| det.class == c) {
                if top.is_none_or(|best| det.score > best.score) {
                    top = Some(det);
                }
            }
            let hit = top.is_some_and(|det| {
                t.gt.iter()
                    .any(|(gb, gc)| *gc == c && iou(&det.bbox, gb) >= MATCH_IOU)
            });
            correct += hit as usize;
        }
    }
    Ok(if pairs == 0 {
        0.0
    } else {
        correct as f64 / pairs as f64
    })
}

/// Image-level classification accuracy of the emitted detections: the share
/// whose class is among the image's labels. `None` without detections.
pub fn eval_ilc(dets: &[ImageDetections], truth: &[ImageRecord]) -> Result<Option<f64>> {
    check_alignment(dets, truth)?;
    let mut total = 0usize;
    let mut positive = 0usize;
    for (d, t) in dets.iter().zip(truth) {
        for det in &d.detections {
            total += 1;
            positive += t.labels.get(det.class).copied().unwrap_or(false) as usize;
        }
    }
    Ok((total > 0).then(|| positive as f64 / total as f64))
}
