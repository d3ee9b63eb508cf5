//! Regression metrics and yield-range bucketing.

use serde::{Deserialize, Serialize};

use crate::dataset::{YieldBucket, ZoneThresholds};
use crate::error::{dim_err, Error, Result};

/// Truth values with |y| below this are left out of MAPE (and counted).
pub const MAPE_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when the truth has zero variance or fewer than two points.
    pub r2: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    /// Percent, over points with |truth| ≥ `MAPE_EPS`; 0 if there are none.
    pub mape: f64,
    pub count: usize,
    pub mape_excluded: usize,
}

/// Metrics without the definedness checks of [`compute_metrics`].
pub fn summarize(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(dim_err!("{} predictions for {} truths", pred.len(), truth.len()));
    }
    let n = truth.len();
    if n == 0 {
        return Err(Error::Data("metrics of an empty set".into()));
    }
    let nf = n as f64;
    let mean_t = truth.iter().sum::<f64>() / nf;
    let (mut abs, mut sq, mut ss_tot, mut pct, mut n_pct) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (&p, &y) in pred.iter().zip(truth) {
        let e = p - y;
        abs += e.abs();
        sq += e * e;
        ss_tot += (y - mean_t) * (y - mean_t);
        if y.abs() >= MAPE_EPS {
            pct += (e / y).abs();
            n_pct += 1;
        }
    }
    let r2 = (n >= 2 && ss_tot > 0.0).then(|| 1.0 - sq / ss_tot);
    Ok(Metrics {
        r2,
        mae: abs / nf,
        rmse: (sq / nf).sqrt(),
        mape: if n_pct > 0 { 100.0 * pct / n_pct as f64 } else { 0.0 },
        count: n,
        mape_excluded: n - n_pct,
    })
}

/// R², MAE, RMSE and MAPE of `pred` against `truth`.
pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if truth.len() < 2 {
        return Err(Error::Data(format!("R² undefined for {} points", truth.len())));
    }
    let m = summarize(pred, truth)?;
    if m.r2.is_none() {
        return Err(Error::Data("R² undefined: truth has zero variance".into()));
    }
    Ok(m)
}

/// Metrics overall and per yield range; ranges assigned by truth value.
/// Empty ranges are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub all: Metrics,
    pub ler: Option<Metrics>,
    pub cr: Option<Metrics>,
    pub her: Option<Metrics>,
}

impl BucketMetrics {
    pub fn get(&self, b: YieldBucket) -> Option<&Metrics> {
        match b {
            YieldBucket::Ler => self.ler.as_ref(),
            YieldBucket::Cr => self.cr.as_ref(),
            YieldBucket::Her => self.her.as_ref(),
        }
    }
}

pub fn bucket_metrics(pred: &[f64], truth: &[f64], thresholds: ZoneThresholds) -> Result<BucketMetrics> {
    let all = summarize(pred, truth)?;
    let mut parts = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for (&p, &y) in pred.iter().zip(truth) {
        let slot = &mut parts[YieldBucket::of(y, thresholds).label() as usize - 1];
        slot.0.push(p);
        slot.1.push(y);
    }
    let mut out = parts
        .iter()
        .map(|(p, y)| if y.is_empty() { Ok(None) } else { summarize(p, y).map(Some) })
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    Ok(BucketMetrics {
        all,
        ler: out.next().flatten(),
        cr: out.next().flatten(),
        her: out.next().flatten(),
    })
}
