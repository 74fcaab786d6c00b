//! Axis-aligned box geometry.
//!
//! Boxes use continuous corner coordinates: `(x1, y1)` is the top-left corner,
//! `(x2, y2)` the bottom-right, and area is `(x2 - x1) * (y2 - y1)` with no
//! pixel `+1` convention.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Checked constructor; rejects reversed corners and non-finite values.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let ok = [x1, y1, x2, y2].iter().all(|v| v.is_finite()) && x1 <= x2 && y1 <= y2;
        if ok {
            Ok(BBox { x1, y1, x2, y2 })
        } else {
            Err(Error::InvalidBox { x1, y1, x2, y2 })
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox {
            x1: cx - 0.5 * w,
            y1: cy - 0.5 * h,
            x2: cx + 0.5 * w,
            y2: cy + 0.5 * h,
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn is_degenerate(&self) -> bool {
        self.width() <= 0.0 || self.height() <= 0.0
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x1 >= self.x1 && other.y1 >= self.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    /// Clip to the canvas `[0, width] x [0, height]`.
    pub fn clip(&self, bounds: ImageBounds) -> BBox {
        let cx = |v: f64| v.clamp(0.0, bounds.width);
        let cy = |v: f64| v.clamp(0.0, bounds.height);
        BBox {
            x1: cx(self.x1),
            y1: cy(self.y1),
            x2: cx(self.x2),
            y2: cy(self.y2),
        }
    }
}

/// Canvas extent used for clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageBounds {
    pub width: f64,
    pub height: f64,
}

/// Intersection over union. Two boxes with zero union area have IoU 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxAssignment {
    pub max_iou: f64,
    pub seed_index: usize,
    pub seed_class: usize,
}

/// For every proposal, the seed of maximum IoU (ties go to the lowest seed index).
pub fn assign_to_seeds(
    proposals: &[BBox],
    seeds: &[BBox],
    seed_classes: &[usize],
) -> Result<Vec<BoxAssignment>> {
    if seeds.is_empty() {
        return Err(Error::NoSeeds("<assignment>".into()));
    }
    if seeds.len() != seed_classes.len() {
        return Err(Error::shape(
            format!("{} seed classes", seeds.len()),
            seed_classes.len().to_string(),
        ));
    }
    Ok(proposals
        .iter()
        .map(|p| {
            let mut best = (0usize, iou(p, &seeds[0]));
            for (j, s) in seeds.iter().enumerate().skip(1) {
                let v = iou(p, s);
                if v > best.1 {
                    best = (j, v);
                }
            }
            BoxAssignment {
                max_iou: best.1,
                seed_index: best.0,
                seed_class: seed_classes[best.0],
            }
        })
        .collect())
}

/// Indices ordered by descending score, ties by ascending index.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy non-maximum suppression.
///
/// Returns kept indices in selection order. A box is suppressed when its IoU
/// with an already kept box is strictly greater than `iou_threshold`.
pub fn nms(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(Error::shape(
            format!("{} scores", boxes.len()),
            scores.len().to_string(),
        ));
    }
    let order = descending_order(scores);
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&boxes[i], &boxes[j]) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    Ok(keep)
}

/// Randomly rescale width and height within `[(1-theta)s, (1+theta)s]`
/// around a fixed center, then clip to the canvas.
pub fn scale_box<R: Rng + ?Sized>(b: &BBox, theta: f64, bounds: ImageBounds, rng: &mut R) -> BBox {
    let (cx, cy) = b.center();
    let (w, h) = (b.width(), b.height());
    let sw = rng.random_range(1.0 - theta..=1.0 + theta);
    let sh = rng.random_range(1.0 - theta..=1.0 + theta);
    if theta == 0.0 {
        return b.clip(bounds);
    }
    BBox::from_center(cx, cy, w * sw, h * sh).clip(bounds)
}

/// Partition a box into `n x n` equal cells in row-major order.
pub fn grid_boxes(b: &BBox, n: usize) -> Vec<BBox> {
    let n = n.max(1);
    let xs: Vec<f64> = (0..=n)
        .map(|k| {
            if k == n {
                b.x2
            } else {
                b.x1 + b.width() * k as f64 / n as f64
            }
        })
        .collect();
    let ys: Vec<f64> = (0..=n)
        .map(|k| {
            if k == n {
                b.y2
            } else {
                b.y1 + b.height() * k as f64 / n as f64
            }
        })
        .collect();
    let mut cells = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            cells.push(BBox {
                x1: xs[c],
                y1: ys[r],
                x2: xs[c + 1],
                y2: ys[r + 1],
            });
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    const BIG: ImageBounds = ImageBounds {
        width: 1000.0,
        height: 1000.0,
    };

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(20., 20., 30., 30.)), 0.0);
        assert!((iou(&b(0., 0., 10., 10.), &b(5., 0., 15., 10.)) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&b(5., 5., 5., 5.), &b(5., 5., 5., 5.)), 0.0);
    }

    #[test]
    fn rejects_reversed_corners() {
        assert!(BBox::new(10., 0., 0., 5.).is_err());
        assert!(BBox::new(0., 0., f64::NAN, 5.).is_err());
    }

    #[test]
    fn assignment_edge_cases() {
        let seed = b(0., 0., 10., 10.);
        let a = assign_to_seeds(&[seed], &[seed], &[3]).unwrap();
        assert_eq!(a[0].max_iou, 1.0);
        assert_eq!((a[0].seed_index, a[0].seed_class), (0, 3));

        let far = b(100., 100., 110., 110.);
        let a = assign_to_seeds(&[far], &[seed, b(20., 0., 30., 10.)], &[1, 2]).unwrap();
        assert_eq!(
            (a[0].max_iou, a[0].seed_index, a[0].seed_class),
            (0.0, 0, 1)
        );

        assert!(matches!(
            assign_to_seeds(&[far], &[], &[]),
            Err(Error::NoSeeds(_))
        ));
    }

    #[test]
    fn nms_examples() {
        assert_eq!(nms(&[b(0., 0., 1., 1.)], &[0.3], 0.5).unwrap(), vec![0]);
        let x = b(0., 0., 10., 10.);
        assert_eq!(nms(&[x, x], &[0.9, 0.8], 0.1).unwrap(), vec![0]);
        assert!(nms(&[], &[], 0.5).unwrap().is_empty());
        assert!(nms(&[x], &[0.1, 0.2], 0.5).is_err());
    }

    #[test]
    fn nms_score_ties_prefer_lower_index() {
        let x = b(0., 0., 10., 10.);
        assert_eq!(nms(&[x, x, x], &[0.5, 0.7, 0.7], 0.5).unwrap(), vec![1]);
    }

    #[test]
    fn nms_threshold_one_keeps_duplicates() {
        let x = b(0., 0., 10., 10.);
        assert_eq!(nms(&[x, x], &[0.9, 0.8], 1.0).unwrap(), vec![0, 1]);
    }

    #[test]
    fn scale_box_zero_theta_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = b(3., 4., 17., 29.);
        assert_eq!(scale_box(&x, 0.0, BIG, &mut rng), x);
    }

    #[test]
    fn scale_box_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = b(0., 0., 20., 20.);
        let bounds = ImageBounds {
            width: 100.0,
            height: 100.0,
        };
        let shifted = b(40., 40., 60., 60.);
        for _ in 0..1000 {
            let s = scale_box(&shifted, 0.5, bounds, &mut rng);
            assert!(s.width() >= 10.0 - 1e-12 && s.width() <= 30.0 + 1e-12);
            assert!(s.height() >= 10.0 - 1e-12 && s.height() <= 30.0 + 1e-12);
            let (cx, cy) = s.center();
            assert!((cx - 50.0).abs() < 1e-12 && (cy - 50.0).abs() < 1e-12);
        }
        // at the canvas corner the scaled box is clipped
        for _ in 0..100 {
            let s = scale_box(&x, 0.5, bounds, &mut rng);
            assert!(s.x1 >= 0.0 && s.y1 >= 0.0);
        }
    }

    #[test]
    fn scale_box_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = b(5., 5., 5., 5.);
        for _ in 0..20 {
            let s = scale_box(&x, 0.5, BIG, &mut rng);
            assert_eq!(s.center(), (5.0, 5.0));
            assert_eq!((s.width(), s.height()), (0.0, 0.0));
        }
    }

    #[test]
    fn grid_examples() {
        let cells = grid_boxes(&b(0., 0., 20., 20.), 2);
        assert_eq!(
            cells,
            vec![
                b(0., 0., 10., 10.),
                b(10., 0., 20., 10.),
                b(0., 10., 10., 20.),
                b(10., 10., 20., 20.)
            ]
        );
        let x = b(1.5, 2.5, 7.25, 9.0);
        assert_eq!(grid_boxes(&x, 1), vec![x]);

        let cells = grid_boxes(&b(0., 0., 30., 30.), 3);
        assert_eq!(cells.len(), 9);
        let total: f64 = cells.iter().map(BBox::area).sum();
        assert!((total - 900.0).abs() < 1e-9);
        for i in 0..9 {
            for j in i + 1..9 {
                assert_eq!(cells[i].intersection_area(&cells[j]), 0.0);
            }
        }
    }
}
