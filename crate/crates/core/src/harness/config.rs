//! Run configuration: TOML on disk, dotted-key overrides, canonical digest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::inference::{ApMethod, DetectParams, SccParams};
use crate::midn::{MctParams, RankInterval};
use crate::rcnn::RegressionMode;
use crate::sce::{FarWeight, IcbcParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub features: FeatureConfig,
    pub mining: MiningConfig,
    pub icbc: IcbcConfig,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub mct: MctConfig,
    pub scc: SccConfig,
    pub train: TrainConfig,
    pub detect: DetectConfig,
    pub ablation: AblationSwitches,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub canvas_width: f64,
    pub canvas_height: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_object_size: f64,
    pub max_object_size: f64,
    pub min_part_ratio: f64,
    pub max_part_ratio: f64,
    /// Chance that an additional object repeats a class already in the scene.
    pub repeat_class_prob: f64,
    pub max_same_class_iou: f64,
    pub placement_retries: usize,
    pub jitter_copies: usize,
    pub max_jitter: f64,
    pub window_sizes: Vec<f64>,
    pub random_proposals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub s_part: f64,
    pub s_full: f64,
    pub noise_dims: usize,
    pub noise_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMining {
    /// One top-scoring proposal per present class.
    Top1,
    /// Class-wise soft threshold `alpha * max` followed by NMS.
    SoftThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningConfig {
    pub alpha: f64,
    pub tau_nms: f64,
    pub tau_sur: f64,
    pub far_weight: FarWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcbcConfig {
    pub tau_l: f64,
    pub tau_h: f64,
    pub theta: f64,
    pub grid_n: usize,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub stages: usize,
    pub init_std: f64,
    pub regression: RegressionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MctConfig {
    pub t_n: usize,
    pub a: f64,
    pub interval: RankInterval,
    pub gated: bool,
    pub start_iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SccConfig {
    pub lambda: f64,
    pub tau_midn: f64,
    pub empty_is_noop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub iterations: usize,
    pub lr_drop_at: usize,
    pub lr_drop_factor: f64,
    /// Iterations during which only the MIDN loss is optimized.
    pub midn_warmup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    pub score_threshold: f64,
    pub nms_threshold: f64,
    pub ap_method: ApMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSwitches {
    pub icbc: bool,
    pub gridding: bool,
    pub seed_mining: SeedMining,
    pub igsm_finetune: bool,
    pub scc: bool,
    pub mct: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataConfig {
                n_train: 200,
                n_test: 100,
                n_classes: 5,
                canvas_width: 256.0,
                canvas_height: 256.0,
                min_objects: 1,
                max_objects: 4,
                min_object_size: 48.0,
                max_object_size: 128.0,
                min_part_ratio: 0.05,
                max_part_ratio: 0.4,
                repeat_class_prob: 0.3,
                max_same_class_iou: 0.3,
                placement_retries: 50,
                jitter_copies: 8,
                max_jitter: 0.3,
                window_sizes: vec![48.0, 96.0, 160.0],
                random_proposals: 110,
            },
            features: FeatureConfig {
                s_part: 5.0,
                s_full: 3.0,
                noise_dims: 8,
                noise_scale: 0.1,
            },
            mining: MiningConfig {
                alpha: 0.9,
                tau_nms: 0.1,
                tau_sur: 0.5,
                far_weight: FarWeight::NearestSeed,
            },
            icbc: IcbcConfig {
                tau_l: 0.1,
                tau_h: 0.5,
                theta: 0.5,
                grid_n: 2,
                q: 1.5,
            },
            loss: LossConfig { gamma: 0.1 },
            model: ModelConfig {
                stages: 3,
                init_std: 0.01,
                regression: RegressionMode::ClassAgnostic,
            },
            mct: MctConfig {
                t_n: 1,
                a: 0.4,
                interval: RankInterval::HalfOpen,
                gated: true,
                start_iteration: 0,
            },
            scc: SccConfig {
                lambda: 0.01,
                tau_midn: 0.001,
                empty_is_noop: true,
            },
            train: TrainConfig {
                lr: 1e-3,
                momentum: 0.9,
                weight_decay: 5e-4,
                batch: 4,
                iterations: 3000,
                lr_drop_at: 2400,
                lr_drop_factor: 0.1,
                midn_warmup: 0,
            },
            detect: DetectConfig {
                score_threshold: 1e-3,
                nms_threshold: 0.3,
                ap_method: ApMethod::ElevenPoint,
            },
            ablation: AblationSwitches {
                icbc: true,
                gridding: true,
                seed_mining: SeedMining::SoftThreshold,
                igsm_finetune: true,
                scc: true,
                mct: true,
            },
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Override one dotted key (`train.lr=0.01`). The value is parsed as the
    /// type of the existing entry; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        let (last, path) = parts.split_last().expect("split yields one part");
        let mut table = &mut root;
        for p in path {
            table = table
                .get_mut(*p)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        }
        let slot = table
            .get_mut(*last)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        let bad =
            |e: &dyn std::fmt::Display| Error::Config(format!("invalid value for `{key}`: {e}"));
        *slot = match slot {
            toml::Value::Integer(_) => toml::Value::Integer(value.parse().map_err(|e| bad(&e))?),
            toml::Value::Float(_) => toml::Value::Float(value.parse().map_err(|e| bad(&e))?),
            toml::Value::Boolean(_) => toml::Value::Boolean(value.parse().map_err(|e| bad(&e))?),
            toml::Value::String(_) => toml::Value::String(value.to_string()),
            toml::Value::Array(_) => {
                let parsed: toml::Table =
                    toml::from_str(&format!("v = {value}")).map_err(|e| bad(&e))?;
                parsed["v"].clone()
            }
            _ => return Err(Error::Config(format!("`{key}` is a section, not a value"))),
        };
        let updated: RunConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| bad(&e.message().to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        let d = &self.data;
        if d.n_classes == 0 {
            return fail("data.n_classes must be positive");
        }
        if d.min_objects == 0 || d.min_objects > d.max_objects {
            return fail("data.min_objects must be in 1..=max_objects");
        }
        if !(0.0 < d.min_part_ratio
            && d.min_part_ratio <= d.max_part_ratio
            && d.max_part_ratio < 1.0)
        {
            return fail("data part ratios must satisfy 0 < min <= max < 1");
        }
        if d.max_object_size > d.canvas_width.min(d.canvas_height) || d.min_object_size <= 0.0 {
            return fail("data object sizes must fit the canvas");
        }
        if self.model.stages == 0 {
            return fail("model.stages must be positive");
        }
        if self.train.batch == 0 {
            return fail("train.batch must be positive");
        }
        if !(0.0..1.0).contains(&self.icbc.theta) {
            return fail("icbc.theta must be in [0, 1)");
        }
        if self.icbc.grid_n == 0 {
            return fail("icbc.grid_n must be positive");
        }
        if self.ablation.igsm_finetune && !self.ablation.icbc {
            return fail("ablation.igsm_finetune requires ablation.icbc");
        }
        Ok(())
    }

    pub fn icbc_params(&self) -> IcbcParams {
        IcbcParams {
            tau_l: self.icbc.tau_l,
            tau_h: self.icbc.tau_h,
            theta: self.icbc.theta,
            grid_n: self.icbc.grid_n,
            q: self.icbc.q,
            gridding: self.ablation.gridding,
        }
    }

    pub fn mct_params(&self) -> MctParams {
        MctParams {
            t_n: self.mct.t_n,
            a: self.mct.a,
            interval: self.mct.interval,
            gated: self.mct.gated,
        }
    }

    pub fn scc_params(&self) -> SccParams {
        SccParams {
            lambda: self.scc.lambda,
            tau_midn: self.scc.tau_midn,
            empty_is_noop: self.scc.empty_is_noop,
        }
    }

    pub fn detect_params(&self) -> DetectParams {
        DetectParams {
            score_threshold: self.detect.score_threshold,
            nms_threshold: self.detect.nms_threshold,
        }
    }

    /// The configuration with inference-only switches neutralized; two
    /// configs with equal training views produce identical checkpoints.
    pub fn training_view(&self) -> RunConfig {
        let mut t = self.clone();
        t.ablation.scc = false;
        t.scc = RunConfig::default().scc;
        t.detect = RunConfig::default().detect;
        t
    }

    /// Feature dimension: two per class plus the noise block.
    pub fn feature_dim(&self) -> usize {
        2 * self.data.n_classes + self.features.noise_dims
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_digest() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        assert_eq!(cfg.digest().len(), 64);
    }

    #[test]
    fn overrides() {
        let mut cfg = RunConfig::default();
        cfg.set("train.lr", "0.01").unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        cfg.set("ablation.seed_mining", "top1").unwrap();
        assert_eq!(cfg.ablation.seed_mining, SeedMining::Top1);
        cfg.set("seed", "7").unwrap();
        assert_eq!(cfg.seed, 7);
        cfg.set("data.window_sizes", "[16.0, 32.0]").unwrap();
        assert_eq!(cfg.data.window_sizes, vec![16.0, 32.0]);
        assert_ne!(cfg.digest(), RunConfig::default().digest());

        let err = cfg.set("train.nope", "1").unwrap_err().to_string();
        assert!(err.contains("train.nope"), "{err}");
        let err = cfg.set("train.lr", "fast").unwrap_err().to_string();
        assert!(err.contains("train.lr"), "{err}");
        assert!(cfg.set("ablation.seed_mining", "best").is_err());
        assert!(cfg.set("train", "1").is_err());
    }

    #[test]
    fn finetune_requires_icbc() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("ablation.icbc", "false").is_err());
        cfg.set("ablation.igsm_finetune", "false").unwrap();
        cfg.set("ablation.icbc", "false").unwrap();
    }

    #[test]
    fn unknown_fields_rejected_in_files() {
        let mut text = RunConfig::default().to_toml();
        text.push_str("\n[extra]\nx = 1\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }
}
