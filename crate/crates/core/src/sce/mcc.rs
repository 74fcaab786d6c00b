use serde::{Deserialize, Serialize};

use super::SeedSet;
use crate::boxgeom::{assign_to_seeds, BBox};
use crate::error::{Error, Result};
use crate::gradcore::{linear_forward, softmax_over_classes, LinearHead, LossValue, Matrix};
use crate::midn::PROB_CLAMP;

/// Weight given to proposals that do not overlap any seed at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FarWeight {
    /// Confidence of the seed chosen by the tie rule (the first seed).
    NearestSeed,
    One,
}

/// Per-proposal pseudo labels; label `n_classes` is background.
#[derive(Debug, Clone, PartialEq)]
pub struct MccTargets {
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub max_iou: Vec<f64>,
    pub seed_index: Vec<usize>,
}

/// Column-softmax probabilities over C+1 outputs, classes x proposals.
pub fn mcc_forward(head: &LinearHead, features: &Matrix) -> Result<Matrix> {
    Ok(softmax_over_classes(
        &linear_forward(head, features)?.transpose(),
    ))
}

pub fn assign_mcc_targets(
    boxes: &[BBox],
    seeds: &SeedSet,
    n_classes: usize,
    tau_h: f64,
    far: FarWeight,
) -> Result<MccTargets> {
    if seeds.is_empty() {
        return Err(Error::NoSeeds("<mcc targets>".into()));
    }
    let assignments = assign_to_seeds(boxes, &seeds.boxes(), &seeds.classes())?;
    let mut t = MccTargets {
        labels: Vec::with_capacity(boxes.len()),
        weights: Vec::with_capacity(boxes.len()),
        max_iou: Vec::with_capacity(boxes.len()),
        seed_index: Vec::with_capacity(boxes.len()),
    };
    for a in assignments {
        let label = if a.max_iou >= tau_h {
            a.seed_class
        } else {
            n_classes
        };
        let weight = if a.max_iou == 0.0 && far == FarWeight::One {
            1.0
        } else {
            seeds.seeds[a.seed_index].confidence
        };
        t.labels.push(label);
        t.weights.push(weight);
        t.max_iou.push(a.max_iou);
        t.seed_index.push(a.seed_index);
    }
    Ok(t)
}

/// Weighted cross-entropy averaged over proposals. `probs` are column-softmax
/// outputs; the gradient is with respect to the pre-softmax logits.
pub fn mcc_loss(probs: &Matrix, labels: &[usize], weights: &[f64]) -> Result<LossValue> {
    let (classes, n) = probs.shape();
    if labels.len() != n || weights.len() != n {
        return Err(Error::shape(
            format!("{n} proposals"),
            format!("{} labels, {} weights", labels.len(), weights.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::shape(format!("label < {classes}"), bad.to_string()));
    }
    if n == 0 {
        return Ok(LossValue::zero(classes, 0));
    }
    let inv = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(classes, n);
    for i in 0..n {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let x = probs[(labels[i], i)];
        let p = x.clamp(PROB_CLAMP, 1.0);
        value -= inv * w * p.ln();
        if p == x {
            for c in 0..classes {
                let indicator = if c == labels[i] { 1.0 } else { 0.0 };
                grad[(c, i)] = inv * w * (probs[(c, i)] - indicator);
            }
        }
    }
    Ok(LossValue { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sce::{Seed, SeedOrigin};

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn seeds(list: &[(BBox, usize, f64)]) -> SeedSet {
        SeedSet {
            seeds: list
                .iter()
                .map(|&(bbox, class, confidence)| Seed {
                    bbox,
                    class,
                    confidence,
                    origin: SeedOrigin::Base,
                    proposal: 0,
                })
                .collect(),
        }
    }

    #[test]
    fn target_rules() {
        let s = seeds(&[
            (b(0., 0., 10., 10.), 3, 0.9),
            (b(50., 0., 60., 10.), 1, 0.6),
        ]);
        let props = [
            b(0., 0., 10., 10.),
            b(0., 0., 3., 10.),
            b(200., 200., 210., 210.),
            b(52., 0., 60., 10.),
        ];
        let t = assign_mcc_targets(&props, &s, 4, 0.5, FarWeight::NearestSeed).unwrap();
        assert_eq!(t.labels, vec![3, 4, 4, 1]);
        assert_eq!(t.weights, vec![0.9, 0.9, 0.9, 0.6]);

        let t = assign_mcc_targets(&props, &s, 4, 0.5, FarWeight::One).unwrap();
        assert_eq!(t.weights, vec![0.9, 0.9, 1.0, 0.6]);

        assert!(assign_mcc_targets(&props, &SeedSet::default(), 4, 0.5, FarWeight::One).is_err());
    }

    #[test]
    fn loss_examples() {
        let p = Matrix::from_vec(2, 1, vec![0.5, 0.5]).unwrap();
        let l = mcc_loss(&p, &[0], &[1.0]).unwrap();
        assert!((l.value - std::f64::consts::LN_2).abs() < 1e-8);
        assert_eq!(mcc_loss(&p, &[1], &[0.0]).unwrap().value, 0.0);
        assert!(mcc_loss(&p, &[2], &[1.0]).is_err());
    }
}
