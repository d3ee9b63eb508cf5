//! Evaluation reports, weekly series, modality mask-out and prediction export.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FieldSample, Split, ZoneThresholds};
use crate::error::{Error, Result};
use crate::metrics::{bucket_metrics, summarize, BucketMetrics, Metrics};
use crate::model::{ModalityMask, Model, ModelConfig};
use crate::tensor::Tensor;
use crate::train::{train, TrainConfig, TrainHistory};

/// Pooled metrics of one prediction week.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeeklyPoint {
    /// 1-based week index.
    pub week: usize,
    pub day_of_year: u32,
    pub metrics: Metrics,
}

/// Metrics of one model on one split. `overall` and `per_block` use the
/// final week's maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub n_samples: usize,
    pub n_pixels: usize,
    pub overall: BucketMetrics,
    pub weekly: Vec<WeeklyPoint>,
    pub per_block: BTreeMap<String, Metrics>,
}

/// Predictions in t/ha for every sample, shape [T,H,W] each.
pub fn predict_all(model: &Model, samples: &[&FieldSample]) -> Result<Vec<Tensor>> {
    samples.iter().map(|s| model.predict(s)).collect()
}

fn week_slice(pred: &Tensor, week: usize) -> &[f64] {
    let plane = pred.shape()[1] * pred.shape()[2];
    &pred.data()[week * plane..(week + 1) * plane]
}

/// Per-week metrics pooled over all pixels of all samples.
pub fn weekly_from_predictions(samples: &[&FieldSample], preds: &[Tensor]) -> Result<Vec<WeeklyPoint>> {
    let t = preds.first().map(|p| p.shape()[0]).ok_or_else(|| Error::Data("no samples".into()))?;
    (0..t)
        .map(|w| {
            let (mut p, mut y) = (Vec::new(), Vec::new());
            for (s, pr) in samples.iter().zip(preds) {
                p.extend_from_slice(week_slice(pr, w));
                y.extend_from_slice(s.target.data());
            }
            Ok(WeeklyPoint {
                week: w + 1,
                day_of_year: samples[0].days[w],
                metrics: summarize(&p, &y)?,
            })
        })
        .collect()
}

pub fn weekly_eval(model: &Model, samples: &[&FieldSample]) -> Result<Vec<WeeklyPoint>> {
    let preds = predict_all(model, samples)?;
    weekly_from_predictions(samples, &preds)
}

pub fn evaluate(model: &Model, samples: &[&FieldSample], split: &str, thresholds: ZoneThresholds) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data(format!("split {split} has no samples")));
    }
    let preds = predict_all(model, samples)?;
    let last = preds[0].shape()[0] - 1;
    let (mut p, mut y) = (Vec::new(), Vec::new());
    let mut blocks: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (s, pr) in samples.iter().zip(&preds) {
        let wk = week_slice(pr, last);
        p.extend_from_slice(wk);
        y.extend_from_slice(s.target.data());
        let e = blocks.entry(s.block_id.clone()).or_default();
        e.0.extend_from_slice(wk);
        e.1.extend_from_slice(s.target.data());
    }
    Ok(EvalReport {
        split: split.to_string(),
        n_samples: samples.len(),
        n_pixels: y.len(),
        overall: bucket_metrics(&p, &y, thresholds)?,
        weekly: weekly_from_predictions(samples, &preds)?,
        per_block: blocks
            .into_iter()
            .map(|(k, (p, y))| summarize(&p, &y).map(|m| (k, m)))
            .collect::<Result<_>>()?,
    })
}

pub fn evaluate_split(model: &Model, dataset: &Dataset, split: Split) -> Result<EvalReport> {
    evaluate(model, &dataset.samples_in(split), split.name(), ZoneThresholds::default())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

pub fn weekly_csv(points: &[WeeklyPoint]) -> String {
    let mut s = String::from("week,day_of_year,r2,mae,rmse,mape\n");
    for p in points {
        let m = &p.metrics;
        let _ = writeln!(s, "{},{},{},{},{},{}", p.week, p.day_of_year, fmt_opt(m.r2), m.mae, m.rmse, m.mape);
    }
    s
}

/// The four input configurations of the mask-out study; "mngm" is the
/// management-text modality.
pub const MASKOUT_VARIANTS: [(&str, ModalityMask); 4] = [
    ("full", ModalityMask::FULL),
    ("mngm-maskout", ModalityMask::NO_CONTEXT),
    ("climate-maskout", ModalityMask::NO_CLIMATE),
    ("mngm-climate-maskout", ModalityMask::IMAGE_ONLY),
];

/// One trained variant; `error` is set (and metrics absent) when its
/// training or evaluation failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskoutRow {
    pub variant: String,
    pub use_climate: bool,
    pub use_context: bool,
    pub train: Option<Metrics>,
    pub val: Option<Metrics>,
    pub test: Option<Metrics>,
    pub error: Option<String>,
}

pub struct MaskoutRun {
    pub rows: Vec<MaskoutRow>,
    pub models: Vec<Option<(Model, TrainHistory)>>,
}

impl MaskoutRun {
    /// One line per variant and split, final-week metrics.
    pub fn csv(&self) -> String {
        let mut s = String::from("variant,split,r2,mae,rmse,mape\n");
        for r in &self.rows {
            for (split, m) in [("train", &r.train), ("val", &r.val), ("test", &r.test)] {
                match m {
                    Some(m) => {
                        let _ = writeln!(s, "{},{split},{},{},{},{}", r.variant, fmt_opt(m.r2), m.mae, m.rmse, m.mape);
                    }
                    None => {
                        let _ = writeln!(s, "{},{split},NA,NA,NA,NA", r.variant);
                    }
                }
            }
        }
        s
    }

    pub fn test_r2(&self, variant: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant)?.test.as_ref()?.r2
    }
}

fn maskout_variant(
    config: &ModelConfig,
    model_seed: u64,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<([Metrics; 3], Model, TrainHistory)> {
    let (model, hist) = train(config.clone(), model_seed, dataset, cfg)?;
    let m = |split| evaluate_split(&model, dataset, split).map(|r| r.overall.all);
    let metrics = [m(Split::Train)?, m(Split::Val)?, m(Split::Test)?];
    Ok((metrics, model, hist))
}

/// Trains one model per variant from the same seeds and budget. A failing
/// variant is reported in its row and does not stop the others.
pub fn run_maskout(
    config: &ModelConfig,
    model_seed: u64,
    dataset: &Dataset,
    train_cfg: &TrainConfig,
    variants: &[(&str, ModalityMask)],
) -> MaskoutRun {
    let mut run = MaskoutRun {
        rows: Vec::new(),
        models: Vec::new(),
    };
    for &(name, mask) in variants {
        let cfg = TrainConfig {
            use_climate: mask.use_climate,
            use_context: mask.use_context,
            ..train_cfg.clone()
        };
        let mut row = MaskoutRow {
            variant: name.to_string(),
            use_climate: mask.use_climate,
            use_context: mask.use_context,
            train: None,
            val: None,
            test: None,
            error: None,
        };
        match maskout_variant(config, model_seed, dataset, &cfg) {
            Ok(([tr, va, te], model, hist)) => {
                (row.train, row.val, row.test) = (Some(tr), Some(va), Some(te));
                run.models.push(Some((model, hist)));
            }
            Err(e) => {
                row.error = Some(e.to_string());
                run.models.push(None);
            }
        }
        run.rows.push(row);
    }
    run
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplePredictionSummary {
    pub file: String,
    pub block_id: String,
    pub year: u32,
    pub crop_index: usize,
    pub weekly: Vec<WeeklyPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub n_samples: usize,
    /// Pooled over all exported samples.
    pub weekly: Vec<WeeklyPoint>,
    pub samples: Vec<SamplePredictionSummary>,
}

/// Per-sample CSV files (`week,row,col,pred_t_ha,truth_t_ha`) keyed by file
/// name, and a summary with per-week metrics.
pub fn predict_export(model: &Model, samples: &[&FieldSample]) -> Result<(Vec<(String, String)>, PredictionSummary)> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to predict".into()));
    }
    let preds = predict_all(model, samples)?;
    let mut files = Vec::with_capacity(samples.len());
    let mut per_sample = Vec::with_capacity(samples.len());
    for (i, (s, pr)) in samples.iter().zip(&preds).enumerate() {
        let [t, h, w] = [pr.shape()[0], pr.shape()[1], pr.shape()[2]];
        let mut csv = String::from("week,row,col,pred_t_ha,truth_t_ha\n");
        for wk in 0..t {
            let plane = week_slice(pr, wk);
            for r in 0..h {
                for c in 0..w {
                    let k = r * w + c;
                    let _ = writeln!(csv, "{},{r},{c},{},{}", wk + 1, plane[k], s.target.data()[k]);
                }
            }
        }
        let file = format!("sample_{i:05}.csv");
        per_sample.push(SamplePredictionSummary {
            file: file.clone(),
            block_id: s.block_id.clone(),
            year: s.year,
            crop_index: s.crop_index,
            weekly: weekly_from_predictions(&[s], std::slice::from_ref(pr))?,
        });
        files.push((file, csv));
    }
    let summary = PredictionSummary {
        n_samples: samples.len(),
        weekly: weekly_from_predictions(samples, &preds)?,
        samples: per_sample,
    };
    Ok((files, summary))
}
