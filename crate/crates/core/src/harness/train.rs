//! The joint training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, SeedMining};
use super::data::{FeatureModel, PreparedScene};
use super::model::{Model, ModelGrads};
use super::rng::stream;
use crate::error::{Error, Result};
use crate::gradcore::Matrix;
use crate::midn::{mct_weights, midn_backward, midn_loss};
use crate::rcnn::{assign_rcnn_targets, rcnn_loss};
use crate::sce::{
    assign_mcc_targets, icbc_finetune_seeds, icbc_loss, mcc_forward, mcc_loss, mine_base_seeds,
    mine_top1_seeds, sample_icbc, SeedSet,
};

/// Loss components of one image, or their batch mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub midn: f64,
    pub mcc: Vec<f64>,
    /// Unweighted; the total uses `gamma * icbc`.
    pub icbc: Vec<f64>,
    pub rcnn_cls: f64,
    pub rcnn_reg: f64,
}

impl LossBreakdown {
    fn zeros(stages: usize) -> Self {
        LossBreakdown {
            midn: 0.0,
            mcc: vec![0.0; stages],
            icbc: vec![0.0; stages],
            rcnn_cls: 0.0,
            rcnn_reg: 0.0,
        }
    }

    pub fn total(&self, gamma: f64) -> f64 {
        let mut t = self.midn;
        for (m, i) in self.mcc.iter().zip(&self.icbc) {
            t += m + gamma * i;
        }
        t + self.rcnn_cls + self.rcnn_reg
    }

    fn add_scaled(&mut self, o: &LossBreakdown, k: f64) {
        self.midn += k * o.midn;
        self.mcc
            .iter_mut()
            .zip(&o.mcc)
            .for_each(|(a, b)| *a += k * b);
        self.icbc
            .iter_mut()
            .zip(&o.icbc)
            .for_each(|(a, b)| *a += k * b);
        self.rcnn_cls += k * o.rcnn_cls;
        self.rcnn_reg += k * o.rcnn_reg;
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub total: f64,
}

pub fn learning_rate(config: &RunConfig, step: usize) -> f64 {
    if step >= config.train.lr_drop_at {
        config.train.lr * config.train.lr_drop_factor
    } else {
        config.train.lr
    }
}

fn check_finite(v: f64, image: &str, stage: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        log::error!("non-finite {stage} loss on image {image}");
        Err(Error::NonFinite {
            image: image.to_string(),
            stage: stage.to_string(),
        })
    }
}

/// Seeds from classes x proposals scores under the configured strategy.
pub fn mine_seeds(config: &RunConfig, scores: &Matrix, scene: &PreparedScene) -> Result<SeedSet> {
    let labels = &scene.scene.labels;
    match config.ablation.seed_mining {
        SeedMining::Top1 => mine_top1_seeds(scores, labels, &scene.proposals),
        SeedMining::SoftThreshold => mine_base_seeds(
            scores,
            labels,
            &scene.proposals,
            config.mining.alpha,
            config.mining.tau_nms,
        ),
    }
}

/// Forward, losses and gradients of one image. `step` feeds the gridding
/// stream and the schedule switches.
pub fn image_step(
    model: &Model,
    config: &RunConfig,
    scene: &PreparedScene,
    step: usize,
) -> Result<(LossBreakdown, ModelGrads)> {
    let id = scene.scene.id.as_str();
    let feats = &scene.features;
    let boxes = &scene.proposals;
    let labels = &scene.scene.labels;
    let c = model.n_classes;
    let stages = model.stages();
    let mut losses = LossBreakdown::zeros(stages);
    let mut grads = ModelGrads::zeros_like(model);

    let midn = model.midn(feats)?;
    let weights = if config.ablation.mct && step >= config.mct.start_iteration {
        mct_weights(&midn.x_img, labels, &config.mct_params())
    } else {
        vec![1.0; c]
    };
    let l_midn = midn_loss(&midn.x_img, labels, &weights)?;
    check_finite(l_midn.value, id, "midn")?;
    losses.midn = l_midn.value;
    let (g_cls, g_det) = midn_backward(&midn, &l_midn.grad);
    grads.midn_cls = model.midn_cls.backward(feats, &g_cls.transpose())?;
    grads.midn_det = model.midn_det.backward(feats, &g_det.transpose())?;
    if step < config.train.midn_warmup {
        return Ok((losses, grads));
    }

    let feature_model = FeatureModel {
        scene: &scene.scene,
        cfg: &config.features,
        n_classes: c,
    };
    let icbc_params = config.icbc_params();
    let mut previous = midn.x_box;
    let mut last_icbc: Option<Matrix> = None;
    for t in 0..stages {
        let base = mine_seeds(config, &previous, scene)?;
        let mut seeds = base.clone();
        if config.ablation.icbc {
            let mut rng = ChaCha8Rng::seed_from_u64(stream(
                config.seed,
                &["grid", &step.to_string(), id, &t.to_string()],
            ));
            let set = sample_icbc(boxes, &base, c, &icbc_params, scene.scene.bounds, &mut rng)?;
            if !set.is_empty() {
                let u_feats = set.features(feats, &feature_model)?;
                let scores = model.icbc_scores(t, &u_feats)?;
                let l = icbc_loss(&scores, &set)?;
                check_finite(l.value, id, &format!("icbc{t}"))?;
                losses.icbc[t] = l.value;
                let mut g = l.grad.transpose();
                g.scale(config.loss.gamma);
                grads.icbc[t] = model.icbc[t].backward(&u_feats, &g)?;
            }
            let all = model.icbc_scores(t, feats)?;
            if config.ablation.igsm_finetune {
                seeds = icbc_finetune_seeds(&base, boxes, &all, config.mining.tau_sur)?;
            }
            last_icbc = Some(all);
        }
        let targets = assign_mcc_targets(
            boxes,
            &seeds,
            c,
            config.icbc.tau_h,
            config.mining.far_weight,
        )?;
        let probs = mcc_forward(&model.mcc[t], feats)?;
        let l = mcc_loss(&probs, &targets.labels, &targets.weights)?;
        check_finite(l.value, id, &format!("mcc{t}"))?;
        losses.mcc[t] = l.value;
        grads.mcc[t] = model.mcc[t].backward(feats, &l.grad.transpose())?;
        previous = probs;
    }

    let base = mine_seeds(config, &previous, scene)?;
    let seeds = match (&last_icbc, config.ablation.igsm_finetune) {
        (Some(icbc), true) => icbc_finetune_seeds(&base, boxes, icbc, config.mining.tau_sur)?,
        _ => base,
    };
    let targets = assign_rcnn_targets(
        boxes,
        &seeds,
        c,
        config.icbc.tau_h,
        config.mining.far_weight,
    )?;
    let cls_probs = mcc_forward(&model.rcnn_cls, feats)?;
    let deltas = crate::gradcore::linear_forward(&model.rcnn_reg, feats)?.transpose();
    let l = rcnn_loss(&cls_probs, &deltas, &targets, model.regression)?;
    check_finite(l.value(), id, "rcnn")?;
    losses.rcnn_cls = l.cls.value;
    losses.rcnn_reg = l.reg.value;
    grads.rcnn_cls = model.rcnn_cls.backward(feats, &l.cls.grad.transpose())?;
    grads.rcnn_reg = model.rcnn_reg.backward(feats, &l.reg.grad.transpose())?;
    Ok((losses, grads))
}

/// Training output: final model and one log line per iteration.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogLine>,
}

impl TrainOutcome {
    pub fn log_text(&self) -> String {
        log_text(&self.log)
    }
}

pub fn log_text(lines: &[LogLine]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&serde_json::to_string(l).expect("log line serializes"));
        out.push('\n');
    }
    out
}

/// Train from the configured initialization.
pub fn train(config: &RunConfig, scenes: &[PreparedScene]) -> Result<TrainOutcome> {
    train_observed(config, scenes, 0, |_, _| Ok(()))
}

/// Train, calling `observe(step, model)` after every `every`-th update
/// (never when `every` is 0).
pub fn train_observed<F>(
    config: &RunConfig,
    scenes: &[PreparedScene],
    every: usize,
    mut observe: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &Model) -> Result<()>,
{
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::Config("no training scenes".into()));
    }
    let mut model = Model::init(config);
    let mut shuffle = ChaCha8Rng::seed_from_u64(stream(config.seed, &["shuffle"]));
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let batch = config.train.batch;
    let mut log = Vec::with_capacity(config.train.iterations);
    for step in 0..config.train.iterations {
        let mut sum = ModelGrads::zeros_like(&model);
        let mut mean = LossBreakdown::zeros(model.stages());
        for _ in 0..batch {
            if cursor == order.len() {
                order = (0..scenes.len()).collect();
                order.shuffle(&mut shuffle);
                cursor = 0;
            }
            let scene = &scenes[order[cursor]];
            cursor += 1;
            let (losses, grads) = image_step(&model, config, scene, step)?;
            sum.accumulate(&grads)?;
            mean.add_scaled(&losses, 1.0 / batch as f64);
        }
        sum.scale(1.0 / batch as f64);
        let lr = learning_rate(config, step);
        model.apply(
            &sum,
            lr,
            config.train.momentum,
            config.train.weight_decay,
            config.ablation.icbc,
        )?;
        let total = mean.total(config.loss.gamma);
        if step % 100 == 0 {
            log::debug!("step {step}: total {total:.5}");
        }
        log.push(LogLine {
            step,
            lr,
            losses: mean,
            total,
        });
        if every > 0 && (step + 1) % every == 0 {
            observe(step + 1, &model)?;
        }
    }
    Ok(TrainOutcome { model, log })
}
