//! Brute-force reference implementations, written independently of the
//! production code paths they are compared against.

use crate::boxgeom::BBox;
use crate::gradcore::Matrix;
use crate::inference::{Detection, ImageDetections};
use crate::midn::ImageRecord;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    let area = |r: &BBox| (r.x2 - r.x1).max(0.0) * (r.y2 - r.y1).max(0.0);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Repeatedly take the best remaining box (lowest index on ties) and drop
/// everything overlapping it by more than `thr`.
pub fn nms(boxes: &[BBox], scores: &[f64], thr: f64) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; boxes.len()];
    let mut keep = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..boxes.len() {
            if alive[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        keep.push(b);
        alive[b] = false;
        for j in 0..boxes.len() {
            if alive[j] && iou(&boxes[b], &boxes[j]) > thr {
                alive[j] = false;
            }
        }
    }
    keep
}

/// `(max_iou, seed_index)` per proposal, lowest index among equal maxima.
pub fn assign(proposals: &[BBox], seeds: &[BBox]) -> Vec<(f64, usize)> {
    proposals
        .iter()
        .map(|p| {
            let ious: Vec<f64> = seeds.iter().map(|s| iou(p, s)).collect();
            let m = ious.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let j = ious.iter().position(|&v| v == m).unwrap_or(0);
            (m, j)
        })
        .collect()
}

/// Base seeds as `(proposal, class, score)` in mining order.
pub fn mine_base_seeds(
    scores: &Matrix,
    labels: &[bool],
    boxes: &[BBox],
    alpha: f64,
    tau_nms: f64,
) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for c in 0..labels.len() {
        if !labels[c] || boxes.is_empty() {
            continue;
        }
        let row: Vec<f64> = (0..boxes.len()).map(|i| scores[(c, i)]).collect();
        let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cand: Vec<usize> = (0..row.len()).filter(|&i| row[i] >= alpha * top).collect();
        let cb: Vec<BBox> = cand.iter().map(|&i| boxes[i]).collect();
        let cs: Vec<f64> = cand.iter().map(|&i| row[i]).collect();
        for k in nms(&cb, &cs, tau_nms) {
            out.push((cand[k], c, row[cand[k]]));
        }
    }
    out
}

/// The correction written out loop by loop on proposals x classes
/// matrices.
pub fn scc(f: &Matrix, m: &Matrix, lambda: f64, tau_midn: f64, empty_is_noop: bool) -> Matrix {
    let n_classes = m.cols();
    let mut ind = Vec::new();
    for i in 0..m.rows() {
        let mx = (0..n_classes)
            .map(|c| m[(i, c)])
            .fold(f64::NEG_INFINITY, f64::max);
        if mx > tau_midn {
            ind.push(i);
        }
    }
    if ind.is_empty() && empty_is_noop {
        return f.clone();
    }
    let mut c_i: Vec<usize> = Vec::new();
    for &i in &ind {
        let mut arg = 0;
        for c in 0..n_classes {
            if m[(i, c)] > m[(i, arg)] {
                arg = c;
            }
        }
        if !c_i.contains(&arg) {
            c_i.push(arg);
        }
    }
    let mut out = f.clone();
    for c in (0..n_classes).filter(|c| !c_i.contains(c)) {
        for i in 0..f.rows() {
            out[(i, c)] = f[(i, c)] * lambda;
        }
    }
    out
}

/// 11-point interpolated AP straight from the precision/recall table.
fn ap11(tp: &[bool], n_gt: usize) -> f64 {
    let mut pts = Vec::new();
    for k in 1..=tp.len() {
        let hits = tp[..k].iter().filter(|&&t| t).count() as f64;
        pts.push((hits / n_gt as f64, hits / k as f64));
    }
    let mut sum = 0.0;
    for t in 0..=10 {
        let thr = t as f64 / 10.0;
        let best = pts
            .iter()
            .filter(|(r, _)| *r >= thr)
            .map(|&(_, p)| p)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 11.0
}

/// mAP at IoU 0.5 by exhaustive per-class matching. Returns per-class AP
/// (`None` without ground truth) and their mean.
pub fn eval_map(
    dets: &[ImageDetections],
    truth: &[ImageRecord],
    n_classes: usize,
) -> (Vec<Option<f64>>, f64) {
    let mut aps = Vec::new();
    for c in 0..n_classes {
        let n_gt = truth
            .iter()
            .flat_map(|t| &t.gt)
            .filter(|g| g.1 == c)
            .count();
        if n_gt == 0 {
            aps.push(None);
            continue;
        }
        let mut all: Vec<(usize, usize, Detection)> = Vec::new();
        for (img, d) in dets.iter().enumerate() {
            for (k, det) in d.detections.iter().enumerate() {
                if det.class == c {
                    all.push((img, k, *det));
                }
            }
        }
        // selection sort: highest score, then earliest image, then earliest index
        let mut ranked = Vec::new();
        while !all.is_empty() {
            let mut b = 0;
            for j in 1..all.len() {
                let (x, y) = (&all[j], &all[b]);
                if x.2.score > y.2.score || (x.2.score == y.2.score && (x.0, x.1) < (y.0, y.1)) {
                    b = j;
                }
            }
            ranked.push(all.remove(b));
        }
        let mut used: Vec<Vec<bool>> = truth.iter().map(|t| vec![false; t.gt.len()]).collect();
        let mut tp = Vec::new();
        for (img, _, det) in ranked {
            let mut best: Option<(usize, f64)> = None;
            for (g, (gb, gc)) in truth[img].gt.iter().enumerate() {
                if *gc == c && !used[img][g] {
                    let v = iou(&det.bbox, gb);
                    if v >= 0.5 && best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((g, v));
                    }
                }
            }
            match best {
                Some((g, _)) => {
                    used[img][g] = true;
                    tp.push(true);
                }
                None => tp.push(false),
            }
        }
        aps.push(Some(ap11(&tp, n_gt)));
    }
    let defined: Vec<f64> = aps.iter().flatten().copied().collect();
    let map = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    (aps, map)
}
