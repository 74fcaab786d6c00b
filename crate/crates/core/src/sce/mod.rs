//! Self-classification enhancement: one refinement stage pairs a multi-class
//! (C+1 way) classifier with an intra-class binary classifier, and mines its
//! pseudo seeds from the previous stage's scores.

mod icbc;
mod mcc;
mod seeds;

pub use icbc::{
    icbc_forward, icbc_loss, sample_icbc, IcbcParams, IcbcSample, IcbcSampleSet, SampleKind,
};
pub use mcc::{assign_mcc_targets, mcc_forward, mcc_loss, FarWeight, MccTargets};
pub use seeds::{icbc_finetune_seeds, mine_base_seeds, mine_top1_seeds, Seed, SeedOrigin, SeedSet};

use crate::boxgeom::BBox;
use crate::gradcore::Matrix;

/// Produces backbone features for arbitrary regions of one image.
pub trait RegionFeatures {
    fn feature_dim(&self) -> usize;
    fn region_features(&self, boxes: &[BBox]) -> Matrix;
}
