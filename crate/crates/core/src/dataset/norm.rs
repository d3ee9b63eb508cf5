use serde::{Deserialize, Serialize};

use super::{FieldSample, N_CHANNELS, N_CLIMATE};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel standardization statistics, fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub image_mean: Vec<f64>,
    pub image_std: Vec<f64>,
    pub climate_mean: Vec<f64>,
    pub climate_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

fn mean_std(sum: f64, sum2: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0);
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            image_mean: vec![0.0; N_CHANNELS],
            image_std: vec![1.0; N_CHANNELS],
            climate_mean: vec![0.0; N_CLIMATE],
            climate_std: vec![1.0; N_CLIMATE],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    pub fn fit(samples: &[&FieldSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("cannot fit normalization on zero samples".into()));
        }
        let mut img = [(0.0, 0.0, 0.0); N_CHANNELS];
        let mut clim = [(0.0, 0.0, 0.0); N_CLIMATE];
        let (mut ts, mut ts2, mut tn) = (0.0, 0.0, 0.0);
        for s in samples {
            let plane = s.height() * s.width();
            for (i, chunk) in s.image.data().chunks(plane).enumerate() {
                let acc = &mut img[i % N_CHANNELS];
                for &v in chunk {
                    acc.0 += v;
                    acc.1 += v * v;
                }
                acc.2 += plane as f64;
            }
            for row in s.climate.data().chunks(N_CLIMATE) {
                for (acc, &v) in clim.iter_mut().zip(row) {
                    acc.0 += v;
                    acc.1 += v * v;
                    acc.2 += 1.0;
                }
            }
            for &y in s.target.data() {
                ts += y;
                ts2 += y * y;
                tn += 1.0;
            }
        }
        let (image_mean, image_std) = img.iter().map(|a| mean_std(a.0, a.1, a.2)).unzip();
        let (climate_mean, climate_std) = clim.iter().map(|a| mean_std(a.0, a.1, a.2)).unzip();
        let (target_mean, target_std) = mean_std(ts, ts2, tn);
        Ok(Self {
            image_mean,
            image_std,
            climate_mean,
            climate_std,
            target_mean,
            target_std,
        })
    }

    pub fn normalize_image(&self, image: &Tensor) -> Tensor {
        let s = image.shape();
        let plane = s[2] * s[3];
        let mut out = image.clone();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let c = i % N_CHANNELS;
            for v in chunk {
                *v = (*v - self.image_mean[c]) / self.image_std[c];
            }
        }
        out
    }

    pub fn normalize_climate(&self, climate: &Tensor) -> Tensor {
        let mut out = climate.clone();
        for row in out.data_mut().chunks_mut(N_CLIMATE) {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - self.climate_mean[c]) / self.climate_std[c];
            }
        }
        out
    }

    pub fn normalize_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn denormalize_target(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }
}
