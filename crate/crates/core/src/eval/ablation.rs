//! Trains and evaluates one model variant on a fixed split.

use crate::error::Result;
use crate::inference::{multi_step_inference, InferenceOutput};
use crate::tkg::{select_test_users, TestSet, Tkg};
use crate::trainer::{train, EpochLog, TrainConfig, Variant};

use super::metrics::{evaluate, MetricsReport};
use super::popular::popular_baseline;

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub report: MetricsReport,
    pub log: Vec<EpochLog>,
    pub inference: InferenceOutput,
}

/// Label used in reports: the variant, suffixed with the cell when it is
/// not the default.
pub fn variant_label(cfg: &TrainConfig) -> String {
    if cfg.cell == TrainConfig::default().cell {
        cfg.variant.to_string()
    } else {
        format!("{}/{}", cfg.variant, cfg.cell)
    }
}

pub fn run_variant(variant: Variant, train_tkg: &Tkg, test: &TestSet, cfg: &TrainConfig) -> Result<AblationRun> {
    let cfg = TrainConfig { variant, ..cfg.clone() };
    let out = train(train_tkg, &cfg)?;
    let users = select_test_users(test);
    let inference = multi_step_inference(&out.params, train_tkg, &users, test.horizon, &cfg)?;
    let report = evaluate(&inference.predictions, test, &variant_label(&cfg))?;
    Ok(AblationRun {
        report,
        log: out.log,
        inference,
    })
}

pub fn run_ablation(variant: Variant, train_tkg: &Tkg, test: &TestSet, cfg: &TrainConfig) -> Result<MetricsReport> {
    run_variant(variant, train_tkg, test, cfg).map(|r| r.report)
}

pub fn run_popular(train_tkg: &Tkg, test: &TestSet) -> Result<MetricsReport> {
    let ranking = popular_baseline(train_tkg)?;
    let predictions = ranking.predictions(&select_test_users(test), test.horizon);
    evaluate(&predictions, test, "popular")
}
