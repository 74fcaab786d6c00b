use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{RegionFeatures, SeedSet};
use crate::boxgeom::{assign_to_seeds, grid_boxes, scale_box, BBox, ImageBounds};
use crate::error::{Error, Result};
use crate::gradcore::{linear_forward, sigmoid, LinearHead, LossValue, Matrix};
use crate::midn::PROB_CLAMP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Pos,
    Neg,
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcbcSample {
    pub region: BBox,
    pub kind: SampleKind,
    pub class: usize,
    /// Proposal row for IoU samples, `None` for synthesized grid cells.
    pub proposal: Option<usize>,
}

/// Training set `U` of the intra-class classifier with its per-class targets
/// and weights, both classes x samples.
#[derive(Debug, Clone)]
pub struct IcbcSampleSet {
    pub samples: Vec<IcbcSample>,
    pub targets: Matrix,
    pub weights: Matrix,
}

impl IcbcSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature rows for `U`: proposal rows are copied, grid cells go through
    /// the region feature model.
    pub fn features(
        &self,
        proposal_features: &Matrix,
        source: &dyn RegionFeatures,
    ) -> Result<Matrix> {
        let dim = proposal_features.cols();
        let synthesized: Vec<BBox> = self
            .samples
            .iter()
            .filter(|s| s.proposal.is_none())
            .map(|s| s.region)
            .collect();
        let synth = source.region_features(&synthesized);
        if !synthesized.is_empty() && synth.cols() != dim {
            return Err(Error::shape(
                format!("feature dim {dim}"),
                synth.cols().to_string(),
            ));
        }
        let mut out = Matrix::zeros(self.samples.len(), dim);
        let mut k = 0;
        for (row, s) in self.samples.iter().enumerate() {
            let src = match s.proposal {
                Some(i) => proposal_features.row(i),
                None => {
                    k += 1;
                    synth.row(k - 1)
                }
            };
            out.row_mut(row).copy_from_slice(src);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcbcParams {
    pub tau_l: f64,
    pub tau_h: f64,
    pub theta: f64,
    pub grid_n: usize,
    pub q: f64,
    pub gridding: bool,
}

impl Default for IcbcParams {
    fn default() -> Self {
        IcbcParams {
            tau_l: 0.1,
            tau_h: 0.5,
            theta: 0.5,
            grid_n: 2,
            q: 1.5,
            gridding: true,
        }
    }
}

/// Sigmoid scores, classes x regions.
pub fn icbc_forward(head: &LinearHead, features: &Matrix) -> Result<Matrix> {
    Ok(sigmoid(&linear_forward(head, features)?).transpose())
}

/// IoU sampling around the seeds plus gridding of randomly rescaled seeds.
pub fn sample_icbc<R: Rng + ?Sized>(
    boxes: &[BBox],
    seeds: &SeedSet,
    n_classes: usize,
    params: &IcbcParams,
    bounds: ImageBounds,
    rng: &mut R,
) -> Result<IcbcSampleSet> {
    if seeds.is_empty() {
        return Err(Error::NoSeeds("<icbc sampling>".into()));
    }
    let assignments = assign_to_seeds(boxes, &seeds.boxes(), &seeds.classes())?;
    let mut samples = Vec::new();
    let mut conf = Vec::new();
    for (i, a) in assignments.iter().enumerate() {
        let kind = if a.max_iou >= params.tau_h {
            SampleKind::Pos
        } else if a.max_iou >= params.tau_l {
            SampleKind::Neg
        } else {
            continue;
        };
        samples.push(IcbcSample {
            region: boxes[i],
            kind,
            class: a.seed_class,
            proposal: Some(i),
        });
        conf.push(seeds.seeds[a.seed_index].confidence);
    }
    if params.gridding {
        for seed in seeds.iter() {
            let scaled = scale_box(&seed.bbox, params.theta, bounds, rng);
            for cell in grid_boxes(&scaled, params.grid_n) {
                samples.push(IcbcSample {
                    region: cell,
                    kind: SampleKind::Grid,
                    class: seed.class,
                    proposal: None,
                });
                conf.push(params.q);
            }
        }
    }
    let mut targets = Matrix::zeros(n_classes, samples.len());
    let mut weights = Matrix::zeros(n_classes, samples.len());
    for (i, (s, &w)) in samples.iter().zip(&conf).enumerate() {
        weights[(s.class, i)] = w;
        if s.kind == SampleKind::Pos {
            targets[(s.class, i)] = 1.0;
        }
    }
    Ok(IcbcSampleSet {
        samples,
        targets,
        weights,
    })
}

/// Weighted BCE averaged over `|U|`. `scores` are sigmoid outputs; the
/// gradient is returned with respect to the pre-sigmoid logits.
pub fn icbc_loss(scores: &Matrix, set: &IcbcSampleSet) -> Result<LossValue> {
    scores.check_same(&set.targets)?;
    let (classes, n) = scores.shape();
    if n == 0 {
        log::debug!("empty ICBC sample set, stage skipped");
        return Ok(LossValue::zero(classes, 0));
    }
    let mut value = 0.0;
    let mut grad = Matrix::zeros(classes, n);
    let inv = 1.0 / n as f64;
    for c in 0..classes {
        for i in 0..n {
            let w = set.weights[(c, i)];
            if w == 0.0 {
                continue;
            }
            let x = scores[(c, i)];
            let y = set.targets[(c, i)];
            let p = x.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            value -= inv * w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            if p == x {
                grad[(c, i)] = inv * w * (x - y);
            }
        }
    }
    Ok(LossValue { value, grad })
}
