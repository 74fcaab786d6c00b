//! The cumulative component ladder.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, SeedMining};
use super::data::Dataset;
use super::eval::{evaluate, MetricsDoc};
use super::model::Model;
use super::train::{train, TrainOutcome};
use crate::error::Result;

pub const LADDER: [&str; 5] = ["baseline", "+icbc", "+igsm", "+scc", "+mct"];

/// Ladder configurations derived from `config`: only the component switches
/// differ between rungs.
pub fn ladder(config: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let mut cfg = config.clone();
    cfg.ablation.icbc = false;
    cfg.ablation.seed_mining = SeedMining::Top1;
    cfg.ablation.igsm_finetune = false;
    cfg.ablation.scc = false;
    cfg.ablation.mct = false;
    let mut out = vec![(LADDER[0], cfg.clone())];
    cfg.ablation.icbc = true;
    out.push((LADDER[1], cfg.clone()));
    cfg.ablation.seed_mining = SeedMining::SoftThreshold;
    cfg.ablation.igsm_finetune = true;
    out.push((LADDER[2], cfg.clone()));
    cfg.ablation.scc = true;
    out.push((LADDER[3], cfg.clone()));
    cfg.ablation.mct = true;
    out.push((LADDER[4], cfg));
    out
}

#[derive(Debug, Clone)]
pub struct VariantRun {
    pub name: &'static str,
    pub config: RunConfig,
    pub model: Model,
    pub log: Vec<super::train::LogLine>,
    pub metrics: MetricsDoc,
    /// Checkpoint reused from an earlier rung with the same training view.
    pub reused_from: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub config_digest: String,
    pub map: f64,
    pub corloc: f64,
    pub ilc_accuracy: Option<f64>,
}

/// Train and evaluate every rung on the same data. Rungs whose training view
/// matches an earlier rung reuse its checkpoint.
pub fn run_ablation(config: &RunConfig, data: &Dataset) -> Result<Vec<VariantRun>> {
    let mut runs: Vec<VariantRun> = Vec::new();
    for (name, cfg) in ladder(config) {
        let view = cfg.training_view().digest();
        let earlier = runs
            .iter()
            .find(|r| r.config.training_view().digest() == view);
        let (outcome, reused_from) = match earlier {
            Some(r) => (
                TrainOutcome {
                    model: r.model.clone(),
                    log: r.log.clone(),
                },
                Some(r.name),
            ),
            None => {
                log::info!("training {name}");
                (train(&cfg, &data.train)?, None)
            }
        };
        let metrics = evaluate(&outcome.model, &cfg, data)?.metrics;
        log::info!("{name}: mAP {:.4}", metrics.map);
        runs.push(VariantRun {
            name,
            config: cfg,
            model: outcome.model,
            log: outcome.log,
            metrics,
            reused_from,
        });
    }
    Ok(runs)
}

pub fn rows(runs: &[VariantRun]) -> Vec<AblationRow> {
    runs.iter()
        .map(|r| AblationRow {
            variant: r.name.to_string(),
            config_digest: r.metrics.config_digest.clone(),
            map: r.metrics.map,
            corloc: r.metrics.corloc,
            ilc_accuracy: r.metrics.ilc_accuracy,
        })
        .collect()
}

/// Tab-separated comparison table with a header line.
pub fn comparison_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant\tmap\tcorloc\tilc_accuracy\tconfig_digest\n");
    for r in rows {
        let ilc = r
            .ilc_accuracy
            .map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{}\t{}",
            r.variant, r.map, r.corloc, ilc, r.config_digest
        )
        .expect("writing to a string");
    }
    out
}
