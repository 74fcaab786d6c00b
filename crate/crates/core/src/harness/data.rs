//! Synthetic scenes, procedural proposals and the frozen region feature model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DataConfig, FeatureConfig, RunConfig};
use super::rng::stream;
use crate::boxgeom::{iou, BBox, ImageBounds};
use crate::gradcore::Matrix;
use crate::midn::ImageRecord;
use crate::sce::RegionFeatures;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: usize,
    /// Full object extent; this is the evaluation ground truth.
    pub extent: BBox,
    /// Discriminative part, strictly inside the extent.
    pub part: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub id: String,
    /// Per-scene key for the feature noise.
    pub key: u64,
    pub bounds: ImageBounds,
    pub objects: Vec<SceneObject>,
    pub labels: Vec<bool>,
}

impl SyntheticScene {
    pub fn record(&self) -> ImageRecord {
        ImageRecord {
            id: self.id.clone(),
            labels: self.labels.clone(),
            gt: self.objects.iter().map(|o| (o.extent, o.class)).collect(),
        }
    }
}

/// A scene with its proposals and their features.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub scene: SyntheticScene,
    pub proposals: Vec<BBox>,
    pub features: Matrix,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<PreparedScene>,
    pub test: Vec<PreparedScene>,
}

impl Dataset {
    pub fn train_records(&self) -> Vec<ImageRecord> {
        self.train.iter().map(|s| s.scene.record()).collect()
    }

    pub fn test_records(&self) -> Vec<ImageRecord> {
        self.test.iter().map(|s| s.scene.record()).collect()
    }
}

fn place_object(cfg: &DataConfig, class: usize, rng: &mut ChaCha8Rng) -> SceneObject {
    let w = rng.random_range(cfg.min_object_size..=cfg.max_object_size);
    let h = rng.random_range(cfg.min_object_size..=cfg.max_object_size);
    let x1 = rng.random_range(0.0..=cfg.canvas_width - w);
    let y1 = rng.random_range(0.0..=cfg.canvas_height - h);
    let extent = BBox {
        x1,
        y1,
        x2: x1 + w,
        y2: y1 + h,
    };
    let ratio = rng.random_range(cfg.min_part_ratio..=cfg.max_part_ratio);
    // split the area ratio between the two sides, each side strictly shorter
    let max_side = 0.95;
    let lo = (ratio / max_side).max(ratio.sqrt() * 0.7);
    let hi = max_side.min(ratio.sqrt() / 0.7);
    let fw = if lo < hi {
        rng.random_range(lo..=hi)
    } else {
        ratio.sqrt()
    };
    let fh = ratio / fw;
    let (pw, ph) = (w * fw, h * fh);
    let px = x1 + rng.random_range(0.0..=1.0) * (w - pw);
    let py = y1 + rng.random_range(0.0..=1.0) * (h - ph);
    let part = BBox {
        x1: px,
        y1: py,
        x2: px + pw,
        y2: py + ph,
    };
    SceneObject {
        class,
        extent,
        part,
    }
}

pub fn gen_scene(cfg: &DataConfig, id: String, key: u64, rng: &mut ChaCha8Rng) -> SyntheticScene {
    let n_objects = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let class = if !objects.is_empty() && rng.random_bool(cfg.repeat_class_prob) {
            objects[rng.random_range(0..objects.len())].class
        } else {
            rng.random_range(0..cfg.n_classes)
        };
        let mut placed = None;
        for _ in 0..cfg.placement_retries {
            let cand = place_object(cfg, class, rng);
            let clash = objects
                .iter()
                .any(|o| iou(&o.extent, &cand.extent) > cfg.max_same_class_iou);
            if !clash {
                placed = Some(cand);
                break;
            }
        }
        match placed {
            Some(o) => objects.push(o),
            None => log::debug!("scene {id}: no room for a class-{class} object, skipped"),
        }
    }
    let mut labels = vec![false; cfg.n_classes];
    for o in &objects {
        labels[o.class] = true;
    }
    SyntheticScene {
        id,
        key,
        bounds: ImageBounds {
            width: cfg.canvas_width,
            height: cfg.canvas_height,
        },
        objects,
        labels,
    }
}

fn jitter(b: &BBox, amount: f64, bounds: ImageBounds, rng: &mut ChaCha8Rng) -> BBox {
    let (w, h) = (b.width(), b.height());
    let mut d = || rng.random_range(-amount..=amount);
    let (x1, x2) = (b.x1 + d() * w, b.x2 + d() * w);
    let (y1, y2) = (b.y1 + d() * h, b.y2 + d() * h);
    BBox {
        x1: x1.min(x2),
        y1: y1.min(y2),
        x2: x1.max(x2),
        y2: y1.max(y2),
    }
    .clip(bounds)
}

/// Jittered copies of every extent and part, sliding windows at each
/// configured size and uniform random boxes; exact duplicates removed.
pub fn gen_proposals(scene: &SyntheticScene, cfg: &DataConfig, seed: u64) -> Vec<BBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream(seed, &["proposals", &scene.key.to_string()]));
    let bounds = scene.bounds;
    let mut out: Vec<BBox> = Vec::new();
    for o in &scene.objects {
        for target in [o.extent, o.part] {
            for k in 0..cfg.jitter_copies {
                let amount = if cfg.jitter_copies > 1 {
                    cfg.max_jitter * k as f64 / (cfg.jitter_copies - 1) as f64
                } else {
                    0.0
                };
                out.push(jitter(&target, amount, bounds, &mut rng));
            }
        }
    }
    for &size in &cfg.window_sizes {
        let stride = (size / 2.0).max(1.0);
        let mut y = 0.0;
        while y + size <= bounds.height + 1e-9 {
            let mut x = 0.0;
            while x + size <= bounds.width + 1e-9 {
                out.push(BBox {
                    x1: x,
                    y1: y,
                    x2: x + size,
                    y2: y + size,
                });
                x += stride;
            }
            y += stride;
        }
    }
    for _ in 0..cfg.random_proposals {
        let (a, b) = (
            rng.random_range(0.0..bounds.width),
            rng.random_range(0.0..bounds.width),
        );
        let (c, d) = (
            rng.random_range(0.0..bounds.height),
            rng.random_range(0.0..bounds.height),
        );
        out.push(BBox {
            x1: a.min(b),
            y1: c.min(d),
            x2: a.max(b),
            y2: c.max(d),
        });
    }
    let mut unique: Vec<BBox> = Vec::with_capacity(out.len());
    for b in out {
        if !b.is_degenerate() && !unique.contains(&b) {
            unique.push(b);
        }
    }
    unique
}

/// Frozen stand-in for a CNN backbone with region pooling.
///
/// For each class `c` the region gets `s_part * max IoU` with the parts and
/// `s_full * max IoU` with the extents of class-`c` objects, followed by a
/// block of noise that is a pure function of the scene key and the region.
#[derive(Debug, Clone, Copy)]
pub struct FeatureModel<'a> {
    pub scene: &'a SyntheticScene,
    pub cfg: &'a FeatureConfig,
    pub n_classes: usize,
}

impl FeatureModel<'_> {
    pub fn feature_row(&self, b: &BBox, out: &mut [f64]) {
        out.fill(0.0);
        for o in &self.scene.objects {
            let part = iou(b, &o.part) * self.cfg.s_part;
            let full = iou(b, &o.extent) * self.cfg.s_full;
            out[2 * o.class] = out[2 * o.class].max(part);
            out[2 * o.class + 1] = out[2 * o.class + 1].max(full);
        }
        if self.cfg.noise_dims > 0 {
            let mut key = self.scene.key ^ 0x9e37_79b9_7f4a_7c15;
            for v in [b.x1, b.y1, b.x2, b.y2] {
                key = super::rng::mix(key ^ v.to_bits());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            for v in &mut out[2 * self.n_classes..] {
                *v = self.cfg.noise_scale * rng.random_range(-1.0..1.0);
            }
        }
    }
}

impl RegionFeatures for FeatureModel<'_> {
    fn feature_dim(&self) -> usize {
        2 * self.n_classes + self.cfg.noise_dims
    }

    fn region_features(&self, boxes: &[BBox]) -> Matrix {
        let mut m = Matrix::zeros(boxes.len(), self.feature_dim());
        for (i, b) in boxes.iter().enumerate() {
            self.feature_row(b, m.row_mut(i));
        }
        m
    }
}

pub fn prepare_scene(scene: SyntheticScene, config: &RunConfig, seed: u64) -> PreparedScene {
    let proposals = gen_proposals(&scene, &config.data, seed);
    let model = FeatureModel {
        scene: &scene,
        cfg: &config.features,
        n_classes: config.data.n_classes,
    };
    let features = model.region_features(&proposals);
    PreparedScene {
        scene,
        proposals,
        features,
    }
}

/// Deterministic train and test splits for `seed`.
pub fn gen_dataset(config: &RunConfig, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(stream(seed, &["scenes"]));
    let cfg = &config.data;
    let mut make = |split: &str, n: usize, offset: usize| -> Vec<PreparedScene> {
        (0..n)
            .map(|i| {
                let key = super::rng::mix(seed ^ ((offset + i) as u64 + 1));
                let scene = gen_scene(cfg, format!("{split}_{i:04}"), key, &mut rng);
                prepare_scene(scene, config, seed)
            })
            .collect()
    };
    let train = make("train", cfg.n_train, 0);
    let test = make("test", cfg.n_test, cfg.n_train);
    Dataset { train, test }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.data.n_train = 40;
        cfg.data.n_test = 10;
        cfg
    }

    #[test]
    fn scenes_satisfy_invariants() {
        let cfg = small();
        let ds = gen_dataset(&cfg, 3);
        for p in ds.train.iter().chain(&ds.test) {
            let s = &p.scene;
            assert!(!s.objects.is_empty() && s.objects.len() <= 4);
            for o in &s.objects {
                assert!(o.extent.contains(&o.part) && o.part != o.extent);
                let r = o.part.area() / o.extent.area();
                assert!((0.05 - 1e-9..=0.4 + 1e-9).contains(&r), "ratio {r}");
                assert!(s.labels[o.class]);
            }
            for (c, &y) in s.labels.iter().enumerate() {
                assert_eq!(y, s.objects.iter().any(|o| o.class == c));
            }
            for (i, a) in s.objects.iter().enumerate() {
                for b in &s.objects[i + 1..] {
                    if a.class == b.class {
                        assert!(iou(&a.extent, &b.extent) <= 0.3);
                    }
                }
            }
            assert!(
                (150..=300).contains(&p.proposals.len()),
                "{}",
                p.proposals.len()
            );
            assert_eq!(p.features.cols(), cfg.feature_dim());
        }
    }

    #[test]
    fn proposals_cover_extents_and_parts() {
        let cfg = small();
        let ds = gen_dataset(&cfg, 11);
        for p in &ds.train {
            for o in &p.scene.objects {
                for t in [o.extent, o.part] {
                    let best = p.proposals.iter().map(|b| iou(b, &t)).fold(0.0, f64::max);
                    assert!(best >= 0.7);
                }
            }
        }
    }

    #[test]
    fn determinism() {
        let cfg = small();
        let a = gen_dataset(&cfg, 5);
        let b = gen_dataset(&cfg, 5);
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.scene, y.scene);
            assert_eq!(x.proposals, y.proposals);
            assert_eq!(x.features, y.features);
        }
        let c = gen_dataset(&cfg, 6);
        assert_ne!(a.train[0].scene, c.train[0].scene);
    }

    #[test]
    fn feature_examples() {
        let cfg = small();
        let obj = SceneObject {
            class: 2,
            extent: BBox::new(10., 10., 110., 110.).unwrap(),
            part: BBox::new(20., 20., 50., 60.).unwrap(),
        };
        let scene = SyntheticScene {
            id: "s".into(),
            key: 1,
            bounds: ImageBounds {
                width: 256.,
                height: 256.,
            },
            labels: vec![false, false, true, false, false],
            objects: vec![obj.clone()],
        };
        let fm = FeatureModel {
            scene: &scene,
            cfg: &cfg.features,
            n_classes: 5,
        };
        let far = fm.region_features(&[BBox::new(200., 200., 250., 250.).unwrap()]);
        assert!(far.row(0)[..10].iter().all(|&v| v == 0.0));
        assert!(far.row(0)[10..].iter().any(|&v| v != 0.0));

        let on_part = fm.region_features(&[obj.part]);
        assert_eq!(on_part[(0, 4)], cfg.features.s_part);
        assert_eq!(
            on_part[(0, 5)],
            cfg.features.s_full * obj.part.area() / obj.extent.area()
        );

        let again = fm.region_features(&[obj.part]);
        assert_eq!(on_part, again);
    }
}
