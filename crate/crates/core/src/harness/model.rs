//! The full set of trainable heads and its binary checkpoint.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::rng::stream;
use crate::error::{Error, Result};
use crate::gradcore::{
    linear_forward, read_head, sgd_step, write_head, HeadGrads, LinearHead, Matrix,
};
use crate::inference::to_inference_layout;
use crate::midn::{midn_forward, MidnScores};
use crate::rcnn::RegressionMode;
use crate::sce::{icbc_forward, mcc_forward};

const CHECKPOINT_MAGIC: &[u8; 8] = b"WSODCKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub regression: RegressionMode,
    pub midn_cls: LinearHead,
    pub midn_det: LinearHead,
    pub mcc: Vec<LinearHead>,
    pub icbc: Vec<LinearHead>,
    pub rcnn_cls: LinearHead,
    pub rcnn_reg: LinearHead,
}

/// Gradients for every head of a [`Model`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub midn_cls: HeadGrads,
    pub midn_det: HeadGrads,
    pub mcc: Vec<HeadGrads>,
    pub icbc: Vec<HeadGrads>,
    pub rcnn_cls: HeadGrads,
    pub rcnn_reg: HeadGrads,
}

impl ModelGrads {
    pub fn zeros_like(m: &Model) -> Self {
        ModelGrads {
            midn_cls: HeadGrads::zeros_like(&m.midn_cls),
            midn_det: HeadGrads::zeros_like(&m.midn_det),
            mcc: m.mcc.iter().map(HeadGrads::zeros_like).collect(),
            icbc: m.icbc.iter().map(HeadGrads::zeros_like).collect(),
            rcnn_cls: HeadGrads::zeros_like(&m.rcnn_cls),
            rcnn_reg: HeadGrads::zeros_like(&m.rcnn_reg),
        }
    }

    pub fn accumulate(&mut self, o: &ModelGrads) -> Result<()> {
        self.midn_cls.accumulate(&o.midn_cls)?;
        self.midn_det.accumulate(&o.midn_det)?;
        for (a, b) in self.mcc.iter_mut().zip(&o.mcc) {
            a.accumulate(b)?;
        }
        for (a, b) in self.icbc.iter_mut().zip(&o.icbc) {
            a.accumulate(b)?;
        }
        self.rcnn_cls.accumulate(&o.rcnn_cls)?;
        self.rcnn_reg.accumulate(&o.rcnn_reg)
    }

    pub fn scale(&mut self, k: f64) {
        self.midn_cls.scale(k);
        self.midn_det.scale(k);
        self.mcc.iter_mut().for_each(|g| g.scale(k));
        self.icbc.iter_mut().for_each(|g| g.scale(k));
        self.rcnn_cls.scale(k);
        self.rcnn_reg.scale(k);
    }
}

/// All scores of one image, training-side layout (classes x proposals).
#[derive(Debug, Clone)]
pub struct SceneScores {
    pub midn: MidnScores,
    pub mcc: Vec<Matrix>,
    pub rcnn_cls: Matrix,
    /// Regression outputs x proposals.
    pub rcnn_deltas: Matrix,
}

impl SceneScores {
    /// Pipeline members (every MCC stage, then the R-CNN classifier) and the
    /// MIDN fused scores, all proposals x classes.
    pub fn pipeline_members(&self) -> (Vec<Matrix>, Matrix) {
        let mut members: Vec<Matrix> = self.mcc.iter().map(to_inference_layout).collect();
        members.push(to_inference_layout(&self.rcnn_cls));
        (members, to_inference_layout(&self.midn.x_box))
    }
}

impl Model {
    /// Gaussian initialization; each head draws from its own stream.
    pub fn init(config: &RunConfig) -> Self {
        let c = config.data.n_classes;
        let d = config.feature_dim();
        let std = config.model.init_std;
        let seed = config.seed;
        let head = |name: &str, out: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream(seed, &["init", name]));
            LinearHead::gaussian(d, out, std, &mut rng)
        };
        let stages = config.model.stages;
        Model {
            n_classes: c,
            feature_dim: d,
            regression: config.model.regression,
            midn_cls: head("midn_cls", c),
            midn_det: head("midn_det", c),
            mcc: (0..stages)
                .map(|t| head(&format!("mcc{t}"), c + 1))
                .collect(),
            icbc: (0..stages).map(|t| head(&format!("icbc{t}"), c)).collect(),
            rcnn_cls: head("rcnn_cls", c + 1),
            rcnn_reg: head("rcnn_reg", config.model.regression.outputs(c)),
        }
    }

    pub fn stages(&self) -> usize {
        self.mcc.len()
    }

    pub fn midn(&self, features: &Matrix) -> Result<MidnScores> {
        let x_cls = linear_forward(&self.midn_cls, features)?.transpose();
        let x_det = linear_forward(&self.midn_det, features)?.transpose();
        midn_forward(&x_cls, &x_det)
    }

    pub fn icbc_scores(&self, stage: usize, features: &Matrix) -> Result<Matrix> {
        icbc_forward(&self.icbc[stage], features)
    }

    pub fn score(&self, features: &Matrix) -> Result<SceneScores> {
        let midn = self.midn(features)?;
        let mcc = self
            .mcc
            .iter()
            .map(|h| mcc_forward(h, features))
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneScores {
            midn,
            mcc,
            rcnn_cls: mcc_forward(&self.rcnn_cls, features)?,
            rcnn_deltas: linear_forward(&self.rcnn_reg, features)?.transpose(),
        })
    }

    /// One SGD step on every head. ICBC heads are left alone when `icbc` is
    /// false so a disabled branch stays at its initialization.
    pub fn apply(
        &mut self,
        g: &ModelGrads,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
        icbc: bool,
    ) -> Result<()> {
        let step = |h: &mut LinearHead, g: &HeadGrads| sgd_step(h, g, lr, momentum, weight_decay);
        step(&mut self.midn_cls, &g.midn_cls)?;
        step(&mut self.midn_det, &g.midn_det)?;
        for (h, gh) in self.mcc.iter_mut().zip(&g.mcc) {
            step(h, gh)?;
        }
        if icbc {
            for (h, gh) in self.icbc.iter_mut().zip(&g.icbc) {
                step(h, gh)?;
            }
        }
        step(&mut self.rcnn_cls, &g.rcnn_cls)?;
        step(&mut self.rcnn_reg, &g.rcnn_reg)
    }

    fn heads(&self) -> Vec<&LinearHead> {
        let mut v = vec![&self.midn_cls, &self.midn_det];
        v.extend(&self.mcc);
        v.extend(&self.icbc);
        v.push(&self.rcnn_cls);
        v.push(&self.rcnn_reg);
        v
    }

    /// Header (`WSODCKPT`, version, classes, feature dim, stages, regression
    /// mode, all `u32` little-endian), then every head in the
    /// [`write_head`] layout: MIDN cls/det, MCC stages, ICBC stages, R-CNN
    /// cls/reg.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let mode = match self.regression {
            RegressionMode::ClassAgnostic => 0u32,
            RegressionMode::PerClass => 1,
        };
        for v in [
            CHECKPOINT_VERSION,
            self.n_classes as u32,
            self.feature_dim as u32,
            self.stages() as u32,
            mode,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for h in self.heads() {
            write_head(w, h)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Model> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut word = || -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let version = word()?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n_classes = word()?;
        let feature_dim = word()?;
        let stages = word()?;
        let regression = match word()? {
            0 => RegressionMode::ClassAgnostic,
            1 => RegressionMode::PerClass,
            m => return Err(Error::Checkpoint(format!("unknown regression mode {m}"))),
        };
        let mut next = |out: usize| -> Result<LinearHead> {
            let h = read_head(r)?;
            if h.in_dim() != feature_dim || h.out_dim() != out {
                return Err(Error::Checkpoint(format!(
                    "head is {}x{}, expected {feature_dim}x{out}",
                    h.in_dim(),
                    h.out_dim()
                )));
            }
            Ok(h)
        };
        let c = n_classes;
        Ok(Model {
            n_classes,
            feature_dim,
            regression,
            midn_cls: next(c)?,
            midn_det: next(c)?,
            mcc: (0..stages).map(|_| next(c + 1)).collect::<Result<_>>()?,
            icbc: (0..stages).map(|_| next(c)).collect::<Result<_>>()?,
            rcnn_cls: next(c + 1)?,
            rcnn_reg: next(regression.outputs(c))?,
        })
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("writing to memory");
        buf
    }

    /// Parameters only; momentum buffers are not compared.
    pub fn same_parameters(&self, other: &Model) -> bool {
        self.checkpoint_bytes() == other.checkpoint_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.model.regression = RegressionMode::PerClass;
        let m = Model::init(&cfg);
        let bytes = m.checkpoint_bytes();
        let back = Model::read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.checkpoint_bytes(), bytes);
        assert_eq!(back.rcnn_reg.out_dim(), 20);
        assert!(Model::read_checkpoint(&mut &bytes[..bytes.len() - 1]).is_err());
        assert!(Model::read_checkpoint(&mut &b"WSODCKPX"[..]).is_err());
    }

    #[test]
    fn init_streams_are_independent_of_stage_count() {
        let a = Model::init(&RunConfig::default());
        let mut cfg = RunConfig::default();
        cfg.model.stages = 1;
        let b = Model::init(&cfg);
        assert_eq!(a.mcc[0], b.mcc[0]);
        assert_eq!(a.rcnn_cls, b.rcnn_cls);
    }
}
