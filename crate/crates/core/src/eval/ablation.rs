use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cv::{cross_validate, CvOptions, CvReport};
use crate::data::{ImageCollection, SplitPlan};
use crate::densenet::{ModelConfig, Network};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config_id: String,
    pub growth_rate: usize,
    pub compression: f64,
    pub params: usize,
    pub memory_bytes: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub reports: Vec<CvReport>,
}

pub fn config_id(k: usize, phi: f64) -> String {
    format!("densenet-k{k}-phi{phi}")
}

/// One [`cross_validate`] per `(k, φ)` in `grid`, all other fields taken from `base`.
pub fn ablate(
    data: &ImageCollection,
    base: &ModelConfig,
    grid: &[(usize, f64)],
    train_cfg: &TrainConfig,
    plan: &SplitPlan,
    opts: &CvOptions<'_>,
) -> Result<AblationResult> {
    if grid.is_empty() {
        return Err(Error::Empty("ablation grid"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    let mut reports = Vec::with_capacity(grid.len());
    for &(k, phi) in grid {
        let cfg = ModelConfig {
            growth_rate: k,
            compression: phi,
            stem_channels: if base.stem_channels == 2 * base.growth_rate { 2 * k } else { base.stem_channels },
            ..base.clone()
        };
        let counts = Network::<f32>::build(cfg.clone(), 0)?.count_params();
        let report = cross_validate(data, &cfg, train_cfg, plan, opts)?;
        rows.push(AblationRow {
            config_id: config_id(k, phi),
            growth_rate: k,
            compression: phi,
            params: counts.total_params,
            memory_bytes: counts.memory_bytes,
            accuracy: report.mean.accuracy,
            precision: report.mean.precision,
            recall: report.mean.recall,
            f1: report.mean.f1,
        });
        reports.push(report);
    }
    Ok(AblationResult { rows, reports })
}

impl AblationResult {
    /// Fixed-width table: Model, k, φ, Params, Memory, Accuracy, Precision, Recall, F1.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>4} {:>5} {:>9} {:>10} {:>9} {:>9} {:>9} {:>9}\n",
            "Model", "k", "phi", "Params", "Memory", "Accuracy", "Precision", "Recall", "F1"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<24} {:>4} {:>5} {:>8.3}M {:>8.2}MB {:>8.2}% {:>8.2}% {:>8.2}% {:>8.2}%",
                r.config_id,
                r.growth_rate,
                r.compression,
                r.params as f64 / 1e6,
                r.memory_bytes as f64 / 1e6,
                100.0 * r.accuracy,
                100.0 * r.precision,
                100.0 * r.recall,
                100.0 * r.f1
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,k,phi,params,memory_bytes,accuracy,precision,recall,f1\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.config_id, r.growth_rate, r.compression, r.params, r.memory_bytes, r.accuracy, r.precision, r.recall, r.f1
            );
        }
        out
    }

    /// Writes `ablation.txt`, `ablation.csv`, `ablation.json` and one
    /// `confusion_<config>.csv` (pooled over repetitions) per row.
    pub fn write_report(&self, dir: impl AsRef<Path>, class_names: &[String]) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("ablation.txt"), self.table())?;
        fs::write(dir.join("ablation.csv"), self.to_csv())?;
        fs::write(dir.join("ablation.json"), serde_json::to_vec_pretty(self)?)?;
        for (row, report) in self.rows.iter().zip(&self.reports) {
            let csv = report.pooled_confusion().to_csv(class_names);
            fs::write(dir.join(format!("confusion_{}.csv", row.config_id)), csv)?;
        }
        Ok(())
    }
}
