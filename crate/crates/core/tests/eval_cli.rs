mod common;

use std::path::Path;
use std::process::Command;

use cmavit::dataset::{Dataset, GenConfig, Split, ZoneThresholds};
use cmavit::eval::*;
use cmavit::metrics::*;
use cmavit::model::{ModalityMask, Model, ModelConfig};
use cmavit::train::TrainConfig;
use common::*;
use proptest::prelude::*;

#[test]
fn metric_examples() {
    let y = [12.0, 25.0, 40.0, 61.0];
    let m = compute_metrics(&y, &y).unwrap();
    assert_eq!((m.r2, m.mae, m.rmse, m.mape), (Some(1.0), 0.0, 0.0, 0.0));
    let mean = [34.5; 4];
    assert!(compute_metrics(&mean, &y).unwrap().r2.unwrap().abs() < 1e-15);
    let m = compute_metrics(&[11.0, 18.0], &[10.0, 20.0]).unwrap();
    assert!((m.mae - 1.5).abs() < 1e-15 && (m.rmse - 2.5f64.sqrt()).abs() < 1e-15 && (m.mape - 10.0).abs() < 1e-12);
    assert!(compute_metrics(&[1.0], &[2.0]).is_err());
    assert!(compute_metrics(&[1.0, 2.0], &[5.0, 5.0]).is_err());
    let z = summarize(&[1.0, 3.0, 5.0], &[0.0, 2.0, 4.0]).unwrap();
    assert_eq!(z.mape_excluded, 1);
    assert!((z.mape - 37.5).abs() < 1e-12);
}

#[test]
fn bucket_examples() {
    let thr = ZoneThresholds::default();
    let b = bucket_metrics(&[28.0, 33.0], &[30.0, 30.0], thr).unwrap();
    assert!(b.ler.is_none() && b.her.is_none() && b.cr.is_some());

    // Two pixels per range.
    let truth = [10.0, 20.0, 30.0, 50.0, 60.0, 70.0];
    let pred = [12.0, 17.0, 30.0, 54.0, 55.0, 71.0];
    let b = bucket_metrics(&pred, &truth, thr).unwrap();
    let ler = b.ler.unwrap();
    assert!((ler.mae - 2.5).abs() < 1e-12);
    assert!((ler.rmse - 6.5f64.sqrt()).abs() < 1e-12);
    assert!((ler.mape - 17.5).abs() < 1e-12);
    assert!((ler.r2.unwrap() - (1.0 - 13.0 / 50.0)).abs() < 1e-12);
    let cr = b.cr.unwrap();
    assert!((cr.mae - 2.0).abs() < 1e-12 && (cr.mape - 4.0).abs() < 1e-12);
    let her = b.her.unwrap();
    assert!((her.mae - 3.0).abs() < 1e-12 && (her.rmse - 13f64.sqrt()).abs() < 1e-12);
    assert_eq!(ler.count + cr.count + her.count, b.all.count);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metric_invariants(
        pairs in prop::collection::vec((0.0f64..80.0, 0.0f64..80.0), 2..60),
        c in 0.1f64..20.0,
    ) {
        let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let thr = ZoneThresholds::default();
        let b = bucket_metrics(&pred, &truth, thr).unwrap();
        let all = &b.all;
        prop_assert!(all.rmse >= all.mae - 1e-12 && all.mae >= 0.0 && all.mape >= 0.0);
        let parts: Vec<&Metrics> = [&b.ler, &b.cr, &b.her].into_iter().flatten().collect();
        prop_assert_eq!(parts.iter().map(|m| m.count).sum::<usize>(), all.count);
        let recombined = parts.iter().map(|m| m.mae * m.count as f64).sum::<f64>() / all.count as f64;
        prop_assert!((recombined - all.mae).abs() < 1e-12);

        let sp: Vec<f64> = pred.iter().map(|v| v * c).collect();
        let st: Vec<f64> = truth.iter().map(|v| v * c).collect();
        let scaled = summarize(&sp, &st).unwrap();
        prop_assert!((scaled.mae - c * all.mae).abs() < 1e-12 * (1.0 + c * all.mae));
        prop_assert!((scaled.rmse - c * all.rmse).abs() < 1e-12 * (1.0 + c * all.rmse));
        prop_assert!((scaled.mape - all.mape).abs() < 1e-12 * (1.0 + all.mape));
        if let (Some(a), Some(s)) = (all.r2, scaled.r2) {
            prop_assert!((a - s).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        max_epochs: 2,
        early_stop_patience: 2,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn weekly_series_has_one_row_per_week() {
    let ds = tiny_dataset(1, 3);
    let (model, _) = cmavit::train::train(ModelConfig::tiny(), 1, &ds, &quick_train()).unwrap();
    let points = weekly_eval(&model, &ds.samples_in(Split::Val)).unwrap();
    assert_eq!(points.len(), 3);
    assert_eq!(points.iter().map(|p| p.week).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert_eq!(weekly_csv(&points).lines().count(), 4);
    let report = evaluate_split(&model, &ds, Split::Test).unwrap();
    assert_eq!(report.weekly.len(), 3);
    assert_eq!(report.n_pixels, report.n_samples * 256);
    assert_eq!(report.overall.all.count, report.n_pixels);
    assert!(report.per_block.values().all(|m| m.count % 256 == 0));
}

#[test]
fn time_degenerate_series_is_flat() {
    let cfg = GenConfig {
        n_cultivars: 2,
        blocks_per_cultivar: 3,
        years: vec![2017],
        timesteps: 4,
        time_degenerate: true,
        ..GenConfig::default()
    };
    let ds = Dataset::synthesize(2, cfg).unwrap();
    let mc = ModelConfig { timesteps: 4, ..ModelConfig::tiny() };
    let (model, _) = cmavit::train::train(mc, 1, &ds, &TrainConfig { use_climate: false, ..quick_train() }).unwrap();
    let points = weekly_eval(&model, &ds.samples_in(Split::Val)).unwrap();
    let mapes: Vec<f64> = points.iter().map(|p| p.metrics.mape).collect();
    let spread = mapes.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - mapes.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 0.05 * mapes[0], "{mapes:?}");
}

#[test]
fn prediction_export_round_trip() {
    let ds = Dataset::synthesize(3, GenConfig { n_cultivars: 2, blocks_per_cultivar: 3, years: vec![2017], field_px: 16, ..GenConfig::default() }).unwrap();
    let model = Model::new(ModelConfig::default(), 1, cmavit::dataset::NormStats::fit(&ds.samples_in(Split::Train)).unwrap(), ModalityMask::FULL).unwrap();
    let test = ds.samples_in(Split::Test);
    let (files, summary) = predict_export(&model, &test).unwrap();
    let (again, summary2) = predict_export(&model, &test).unwrap();
    assert_eq!(files, again);
    assert_eq!(summary, summary2);
    assert_eq!(files.len(), test.len());
    for ((_, csv), s) in files.iter().zip(&summary.samples) {
        let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
        assert_eq!(rows.len(), 15 * 16 * 16);
        for week in 1..=15 {
            let (p, y): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r[0] == week as f64).map(|r| (r[3], r[4])).unzip();
            let m = summarize(&p, &y).unwrap();
            assert!((m.mape - s.weekly[week - 1].metrics.mape).abs() < 1e-9);
        }
    }
}

#[test]
fn maskout_report_shape_and_reproducibility() {
    let ds = tiny_dataset(4, 3);
    let run = |ds: &Dataset| run_maskout(&ModelConfig::tiny(), 2, ds, &quick_train(), &MASKOUT_VARIANTS);
    let a = run(&ds);
    assert_eq!(a.rows.len(), 4);
    assert!(a.rows.iter().all(|r| r.error.is_none() && r.train.is_some() && r.val.is_some() && r.test.is_some()));
    assert_eq!(a.csv().lines().count(), 1 + 12);
    assert_eq!(a.csv(), run(&ds).csv());
    let names: Vec<&str> = a.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["full", "mngm-maskout", "climate-maskout", "mngm-climate-maskout"]);
}

#[test]
fn failing_variant_only_marks_its_row() {
    let ds = tiny_dataset(5, 3);
    let bad = ModelConfig { timesteps: 4, ..ModelConfig::tiny() };
    let run = run_maskout(&bad, 2, &ds, &quick_train(), &MASKOUT_VARIANTS[..2]);
    assert_eq!(run.rows.len(), 2);
    assert!(run.rows.iter().all(|r| r.error.is_some() && r.test.is_none()));
    assert!(run.csv().contains("full,test,NA,NA,NA,NA"));
}

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_cmavit")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn write_configs(dir: &Path) -> (String, String) {
    let gen = dir.join("gen.json");
    std::fs::write(&gen, r#"{"n_cultivars": 2, "blocks_per_cultivar": 3, "years": [2017], "timesteps": 3, "field_px": 16}"#).unwrap();
    let train = dir.join("train.json");
    std::fs::write(
        &train,
        r#"{"max_epochs": 2, "early_stop_patience": 2, "batch_size": 2, "lr": 0.001,
            "model": {"d_model": 8, "n_heads": 2, "n_layers": 1, "mlp_hidden": 16, "timesteps": 3, "dropout": 0.1}}"#,
    )
    .unwrap();
    (gen.to_string_lossy().into_owned(), train.to_string_lossy().into_owned())
}

#[test]
fn cli_pipeline_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let (gen, train) = write_configs(dir.path());
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let root = dir.path().join(run);
        let p = |s: &str| root.join(s).to_string_lossy().into_owned();
        assert_eq!(cli(&["synth", "--seed", "3", "--config", &gen, "--out", &p("ds")]).0, 0);
        assert_eq!(cli(&["train", "--seed", "4", "--config", &train, "--dataset", &p("ds"), "--out", &p("ck")]).0, 0);
        for cmd in ["eval", "weekly", "predict"] {
            assert_eq!(cli(&[cmd, "--dataset", &p("ds"), "--ckpt", &p("ck"), "--out", &p("rep")]).0, 0, "{cmd}");
        }
        assert_eq!(cli(&["maskout", "--seed", "4", "--config", &train, "--dataset", &p("ds"), "--out", &p("mask")]).0, 0);
        outputs.push(root);
    }
    let history = String::from_utf8(read(&outputs[0].join("ck/history.csv"))).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_loss,val_mape\n"));
    assert_eq!(history.lines().count(), 3);
    for f in [
        "ds/manifest.json",
        "ds/samples/00000.bin",
        "ck/history.csv",
        "ck/params.bin",
        "ck/norm.json",
        "rep/eval_test.json",
        "rep/weekly_val.csv",
        "rep/summary.json",
        "rep/sample_00000.csv",
        "mask/maskout.csv",
        "mask/maskout.json",
    ] {
        assert_eq!(read(&outputs[0].join(f)), read(&outputs[1].join(f)), "{f}");
    }
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (gen, _) = write_configs(dir.path());
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    assert_eq!(cli(&["frobnicate"]).0, 2);
    assert_eq!(cli(&["train", "--config", &p("missing.json"), "--dataset", &p("ds"), "--out", &p("ck")]).0, 2);
    std::fs::write(p("bad.json"), r#"{"max_epochs": 5, "early_stop_patience": 9}"#).unwrap();
    assert_eq!(cli(&["train", "--config", &p("bad.json"), "--dataset", &p("ds"), "--out", &p("ck")]).0, 2);
    assert_eq!(cli(&["train", "--out", &p("ck")]).0, 2);
    let (code, err) = cli(&["eval", "--dataset", &p("nowhere"), "--ckpt", &p("ck"), "--out", &p("r")]);
    assert_eq!(code, 3, "{err}");
    assert_eq!(cli(&["synth", "--seed", "1", "--config", &gen, "--out", &p("ds")]).0, 0);
    std::fs::write(p("ds/manifest.json"), "{").unwrap();
    assert_eq!(cli(&["train", "--dataset", &p("ds"), "--out", &p("ck")]).0, 3);
}
