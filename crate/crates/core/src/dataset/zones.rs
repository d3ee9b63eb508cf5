//! Yield ranges, zone maps and cost-sensitive resampling weights.

use serde::{Deserialize, Serialize};

use super::{FieldSample, N_CHANNELS};
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoneThresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for ZoneThresholds {
    fn default() -> Self {
        Self { low: 22.0, high: 54.0 }
    }
}

/// Low-extreme, common and high-extreme yield ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum YieldBucket {
    Ler,
    Cr,
    Her,
}

impl YieldBucket {
    pub const ALL: [YieldBucket; 3] = [YieldBucket::Ler, YieldBucket::Cr, YieldBucket::Her];

    /// `Ler` below `low`, `Her` above `high`, `Cr` on the closed interval.
    pub fn of(value: f64, thr: ZoneThresholds) -> Self {
        if value < thr.low {
            YieldBucket::Ler
        } else if value > thr.high {
            YieldBucket::Her
        } else {
            YieldBucket::Cr
        }
    }

    /// Zone class label: 1, 2 or 3.
    pub fn label(self) -> u8 {
        match self {
            YieldBucket::Ler => 1,
            YieldBucket::Cr => 2,
            YieldBucket::Her => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            YieldBucket::Ler => "LER",
            YieldBucket::Cr => "CR",
            YieldBucket::Her => "HER",
        }
    }

    fn index(self) -> usize {
        self.label() as usize - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZoneMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
    pub thresholds: ZoneThresholds,
}

impl ZoneMap {
    pub fn uniform(height: usize, width: usize, label: u8, thresholds: ZoneThresholds) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
            thresholds,
        }
    }
}

pub fn classify_yield_zones(target: &Tensor, thresholds: ZoneThresholds) -> Result<ZoneMap> {
    let (height, width) = target.dims2()?;
    Ok(ZoneMap {
        height,
        width,
        labels: target
            .data()
            .iter()
            .map(|&y| YieldBucket::of(y, thresholds).label())
            .collect(),
        thresholds,
    })
}

/// Multiplies every channel of every timestep by the zone label of its
/// pixel. Climate, text and target are left untouched.
pub fn apply_yieldzone(sample: &FieldSample, zones: &ZoneMap) -> Result<FieldSample> {
    let (h, w) = (sample.height(), sample.width());
    if zones.height != h || zones.width != w || zones.labels.len() != h * w {
        return Err(dim_err!("zone map {}×{} vs sample {h}×{w}", zones.height, zones.width));
    }
    let mut out = sample.clone();
    for plane in out.image.data_mut().chunks_mut(h * w) {
        for (v, &z) in plane.iter_mut().zip(&zones.labels) {
            *v *= z as f64;
        }
    }
    debug_assert_eq!(out.image.len(), sample.timesteps() * N_CHANNELS * h * w);
    Ok(out)
}

/// Inverse bucket-frequency weights normalized to sum to one.
pub fn csr_weights_for_values(values: &[f64], thresholds: ZoneThresholds) -> Vec<f64> {
    let buckets: Vec<YieldBucket> = values.iter().map(|&v| YieldBucket::of(v, thresholds)).collect();
    let mut freq = [0usize; 3];
    for b in &buckets {
        freq[b.index()] += 1;
    }
    let raw: Vec<f64> = buckets.iter().map(|b| 1.0 / freq[b.index()] as f64).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// CSR weights bucketed by each sample's mean target.
pub fn csr_weights(samples: &[&FieldSample], thresholds: ZoneThresholds) -> Vec<f64> {
    let means: Vec<f64> = samples.iter().map(|s| s.mean_target()).collect();
    csr_weights_for_values(&means, thresholds)
}
