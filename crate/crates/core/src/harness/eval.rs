//! Inference over a split, the detections stream and the metrics document.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::{Dataset, PreparedScene};
use super::model::Model;
use crate::error::Result;
use crate::gradcore::Matrix;
use crate::inference::{aggregate, detect, eval_corloc, eval_ilc, eval_map, scc, ImageDetections};

/// Which score matrix feeds the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    /// Aggregated pipeline scores, corrected when the config enables SCC.
    Configured,
    /// Aggregated pipeline scores, never corrected.
    Pipeline,
    /// Aggregated pipeline scores, always corrected.
    Corrected,
    /// MIDN fused scores with an all-zero background column.
    Midn,
}

fn pad_background(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols() + 1);
    for i in 0..m.rows() {
        out.row_mut(i)[..m.cols()].copy_from_slice(m.row(i));
    }
    out
}

pub fn detect_scene(
    model: &Model,
    config: &RunConfig,
    scene: &PreparedScene,
    source: ScoreSource,
) -> Result<ImageDetections> {
    let s = model.score(&scene.features)?;
    let (members, midn) = s.pipeline_members();
    let f = aggregate(&members)?;
    let scores = match source {
        ScoreSource::Pipeline => f,
        ScoreSource::Configured if !config.ablation.scc => f,
        ScoreSource::Configured | ScoreSource::Corrected => scc(&f, &midn, &config.scc_params())?,
        ScoreSource::Midn => pad_background(&midn),
    };
    let detections = detect(
        &scores,
        &scene.proposals,
        &s.rcnn_deltas,
        model.regression,
        scene.scene.bounds,
        &config.detect_params(),
    )?;
    Ok(ImageDetections {
        image_id: scene.scene.id.clone(),
        detections,
    })
}

pub fn detect_split(
    model: &Model,
    config: &RunConfig,
    scenes: &[PreparedScene],
    source: ScoreSource,
) -> Result<Vec<ImageDetections>> {
    scenes
        .iter()
        .map(|s| detect_scene(model, config, s, source))
        .collect()
}

/// One record per line: `image_id class_id score x1 y1 x2 y2`, sorted by
/// image id, class id, then descending score.
pub fn format_detections(dets: &[ImageDetections]) -> String {
    let mut sorted: Vec<&ImageDetections> = dets.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut out = String::new();
    for img in sorted {
        let mut rows: Vec<_> = img.detections.iter().collect();
        rows.sort_by(|a, b| a.class.cmp(&b.class).then(b.score.total_cmp(&a.score)));
        for d in rows {
            writeln!(
                out,
                "{} {} {:.6} {:.2} {:.2} {:.2} {:.2}",
                img.image_id, d.class, d.score, d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2
            )
            .expect("writing to a string");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub config_digest: String,
    /// Test split, `null` for classes without ground truth.
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
    /// Train split.
    pub corloc: f64,
    /// Test split detections; `null` when nothing was detected.
    pub ilc_accuracy: Option<f64>,
}

impl MetricsDoc {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: MetricsDoc,
    /// Test split detections.
    pub detections: Vec<ImageDetections>,
}

/// mAP and ILC accuracy on the test split, CorLoc on the train split.
pub fn evaluate_with(
    model: &Model,
    config: &RunConfig,
    data: &Dataset,
    source: ScoreSource,
) -> Result<Evaluation> {
    let test = detect_split(model, config, &data.test, source)?;
    let train = detect_split(model, config, &data.train, source)?;
    let test_truth = data.test_records();
    let report = eval_map(
        &test,
        &test_truth,
        config.data.n_classes,
        config.detect.ap_method,
    )?;
    let metrics = MetricsDoc {
        config_digest: config.digest(),
        per_class_ap: report.per_class_ap,
        map: report.map,
        corloc: eval_corloc(&train, &data.train_records())?,
        ilc_accuracy: eval_ilc(&test, &test_truth)?,
    };
    Ok(Evaluation {
        metrics,
        detections: test,
    })
}

pub fn evaluate(model: &Model, config: &RunConfig, data: &Dataset) -> Result<Evaluation> {
    evaluate_with(model, config, data, ScoreSource::Configured)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxgeom::BBox;
    use crate::inference::Detection;

    #[test]
    fn detection_stream_format_and_order() {
        let b = BBox::new(1.0, 2.0, 3.5, 4.25).unwrap();
        let dets = vec![
            ImageDetections {
                image_id: "test_0001".into(),
                detections: vec![Detection {
                    bbox: b,
                    class: 0,
                    score: 0.5,
                }],
            },
            ImageDetections {
                image_id: "test_0000".into(),
                detections: vec![
                    Detection {
                        bbox: b,
                        class: 1,
                        score: 0.25,
                    },
                    Detection {
                        bbox: b,
                        class: 0,
                        score: 0.125,
                    },
                    Detection {
                        bbox: b,
                        class: 1,
                        score: 0.75,
                    },
                ],
            },
        ];
        let text = format_detections(&dets);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines,
            vec![
                "test_0000 0 0.125000 1.00 2.00 3.50 4.25",
                "test_0000 1 0.750000 1.00 2.00 3.50 4.25",
                "test_0000 1 0.250000 1.00 2.00 3.50 4.25",
                "test_0001 0 0.500000 1.00 2.00 3.50 4.25",
            ]
        );
    }
}
