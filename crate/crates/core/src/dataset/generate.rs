//! Synthetic vineyard generator.
//!
//! Each block-season yield map is
//!
//! ```text
//! y(x) = base + cultivar_offset + FERTILITY_GAIN·f − CLIMATE_GAIN·c + SPATIAL_GAIN·s(x) + ε
//! ```
//!
//! where `f ∈ {−1, 0, 1}` is the block's vigor class (only stated in the
//! management text), `c` is the season's heat anomaly (only visible in the
//! climate series), and `s` is a smooth unit-variance field that only shows
//! up in the canopy channels, with an amplitude that grows over the season.

use serde::{Deserialize, Serialize};

use super::{encode_doy, make_patches, FieldSample, CROP_PX, N_CHANNELS, N_CLIMATE};
use crate::error::{param_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CULTIVARS: [(&str, &str); 8] = [
    ("CS", "Cabernet Sauvignon"),
    ("Ch", "Chardonnay"),
    ("MB", "Malvasia Bianca"),
    ("Me", "Merlot"),
    ("MoA", "Muscat of Alexandria"),
    ("Ries", "Riesling"),
    ("Sym", "Symphony"),
    ("Syr", "Syrah"),
];

const BASE_YIELD: f64 = 38.0;
const CULTIVAR_SPREAD: f64 = 1.5;
const FERTILITY_GAIN: f64 = 10.0;
const CLIMATE_GAIN: f64 = 5.0;
const SPATIAL_GAIN: f64 = 6.0;
const PIXEL_NOISE: f64 = 0.5;
const VIGOR_WORDS: [&str; 3] = ["low", "medium", "high"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n_cultivars: usize,
    pub blocks_per_cultivar: usize,
    pub years: Vec<u32>,
    pub timesteps: usize,
    /// Edge length of each block's square field in pixels.
    pub field_px: usize,
    /// First and last observation day (April 1 .. July 15 by default).
    pub first_day: u32,
    pub last_day: u32,
    /// Repeat the first week's image for every week.
    pub time_degenerate: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_cultivars: 8,
            blocks_per_cultivar: 9,
            years: vec![2016, 2017, 2018],
            timesteps: 15,
            field_px: 16,
            first_day: 91,
            last_day: 196,
            time_degenerate: false,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cultivars == 0 || self.blocks_per_cultivar == 0 || self.years.is_empty() {
            return Err(param_err!("generator needs at least one cultivar, block and year"));
        }
        if self.n_cultivars > CULTIVARS.len() {
            return Err(param_err!("at most {} cultivars", CULTIVARS.len()));
        }
        if self.timesteps == 0 {
            return Err(param_err!("timesteps must be positive"));
        }
        if self.field_px < CROP_PX {
            return Err(param_err!("field of {} px is smaller than one crop", self.field_px));
        }
        if !(1..=365).contains(&self.first_day) || !(self.first_day..=365).contains(&self.last_day) {
            return Err(param_err!("observation window {}..{}", self.first_day, self.last_day));
        }
        Ok(())
    }

    /// Uniformly spaced observation days.
    pub fn observation_days(&self) -> Vec<u32> {
        let t = self.timesteps;
        if t == 1 {
            return vec![self.first_day];
        }
        let span = (self.last_day - self.first_day) as f64;
        (0..t)
            .map(|i| self.first_day + (span * i as f64 / (t - 1) as f64).round() as u32)
            .collect()
    }
}

/// Generator internals behind one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleLatent {
    pub fertility: f64,
    pub climate_anomaly: f64,
}

struct Block {
    id: String,
    cultivar: String,
    cultivar_offset: f64,
    fertility: i32,
    text: String,
    index: u64,
}

fn make_blocks(seed: u64, cfg: &GenConfig) -> Vec<Block> {
    let mut blocks = Vec::new();
    for (ci, &(code, name)) in CULTIVARS.iter().take(cfg.n_cultivars).enumerate() {
        let mut rng = Rng::derive(seed, &[1, ci as u64]);
        let cultivar_offset = CULTIVAR_SPREAD * rng.normal();
        let shift = rng.below(3);
        for k in 0..cfg.blocks_per_cultivar {
            let index = (ci * cfg.blocks_per_cultivar + k) as u64;
            let mut brng = Rng::derive(seed, &[2, index]);
            let level = (k + shift) % 3;
            let trellis = ["VSP", "quadrilateral", "single wire"][brng.below(3)];
            let soil = ["loam", "sandy loam", "clay loam"][brng.below(3)];
            let row = [3.0, 3.4, 3.7][brng.below(3)];
            let vine = [1.5, 1.8, 2.1][brng.below(3)];
            let ph = 6.0 + 0.1 * brng.below(15) as f64;
            let text = format!(
                "Cultivar {name}. Trellis {trellis}. Row spacing {row:.1} m, vine spacing {vine:.1} m. \
                 Soil {soil}, pH {ph:.1}. Vigor {}.",
                VIGOR_WORDS[level]
            );
            blocks.push(Block {
                id: format!("{code}-{:02}", k + 1),
                cultivar: name.to_string(),
                cultivar_offset,
                fertility: level as i32 - 1,
                text,
                index,
            });
        }
    }
    blocks
}

/// Smooth zero-mean unit-variance random field on an n×n grid.
fn smooth_field(rng: &mut Rng, n: usize) -> Vec<f64> {
    let mut f = vec![0.0; n * n];
    let nf = n as f64;
    for _ in 0..5 {
        let (cx, cy) = (rng.uniform(-0.1, 1.1) * nf, rng.uniform(-0.1, 1.1) * nf);
        let width = rng.uniform(0.2, 0.45) * nf;
        let amp = rng.uniform(-1.0, 1.0);
        for r in 0..n {
            for c in 0..n {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                f[r * n + c] += amp * (-d2 / (2.0 * width * width)).exp();
            }
        }
    }
    let (gx, gy) = (rng.normal() * 0.3, rng.normal() * 0.3);
    for r in 0..n {
        for c in 0..n {
            f[r * n + c] += gx * c as f64 / nf + gy * r as f64 / nf;
        }
    }
    let mean = f.iter().sum::<f64>() / f.len() as f64;
    let std = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f.len() as f64).sqrt();
    f.iter().map(|v| (v - mean) / std.max(1e-9)).collect()
}

fn climate_series(rng: &mut Rng, anomaly: f64, t: usize) -> Tensor {
    let mut data = Vec::with_capacity(t * N_CLIMATE);
    for i in 0..t {
        let season = if t > 1 { i as f64 / (t - 1) as f64 } else { 0.0 };
        let tmin = 8.0 + 8.0 * season + 1.5 * anomaly + 0.7 * rng.normal();
        let tmax = (tmin + 14.0 + 1.0 * anomaly + 0.7 * rng.normal()).max(tmin + 0.5);
        let prcp = (8.0 * (1.0 - season) - 2.0 * anomaly + 1.5 * rng.normal()).max(0.0);
        let vp = (0.8 + 0.6 * season + 0.15 * anomaly + 0.05 * rng.normal()).max(0.05);
        data.extend_from_slice(&[tmin, tmax, prcp, vp]);
    }
    Tensor::new(vec![t, N_CLIMATE], data).expect("climate shape")
}

fn canopy_image(rng: &mut Rng, spatial: &[f64], days: &[u32], n: usize, degenerate: bool) -> Result<Tensor> {
    let t = days.len();
    let plane = n * n;
    let mut data = vec![0.0; t * N_CHANNELS * plane];
    for ti in 0..t {
        let src = if degenerate { 0 } else { ti };
        let season = if t > 1 { src as f64 / (t - 1) as f64 } else { 1.0 };
        let growth = 0.3 + 0.7 * season;
        let emergence = (src + 1) as f64 / t as f64;
        let doy = encode_doy(days[src])?;
        for p in 0..plane {
            let v = (growth * (0.55 + 0.25 * spatial[p] * emergence)).clamp(0.0, 1.0);
            let px = [
                0.15 - 0.10 * v + 0.01 * rng.normal(),
                0.12 - 0.03 * v + 0.01 * rng.normal(),
                0.08 - 0.04 * v + 0.01 * rng.normal(),
                0.20 + 0.50 * v + 0.01 * rng.normal(),
                0.30 + 0.30 * v + 0.03 * rng.normal(),
                0.15 + 0.35 * v + 0.03 * rng.normal(),
            ];
            for (ch, val) in px.iter().enumerate() {
                data[(ti * N_CHANNELS + ch) * plane + p] = val.clamp(0.0, 1.0);
            }
            data[(ti * N_CHANNELS + N_CHANNELS - 1) * plane + p] = doy;
        }
    }
    if degenerate {
        let first = data[..N_CHANNELS * plane].to_vec();
        for chunk in data.chunks_mut(N_CHANNELS * plane) {
            chunk.copy_from_slice(&first);
        }
    }
    Tensor::new(vec![t, N_CHANNELS, n, n], data)
}

/// Generates every (block, year, crop) sample together with the generator
/// latents behind it. Output depends only on `seed` and `cfg`.
pub fn generate_with_latents(seed: u64, cfg: &GenConfig) -> Result<Vec<(FieldSample, SampleLatent)>> {
    cfg.validate()?;
    let days = cfg.observation_days();
    let n = cfg.field_px;
    let mut out = Vec::new();
    for block in make_blocks(seed, cfg) {
        let soil = smooth_field(&mut Rng::derive(seed, &[3, block.index]), n);
        for &year in &cfg.years {
            let mut rng = Rng::derive(seed, &[4, block.index, year as u64]);
            let anomaly = rng.normal();
            let season_field = smooth_field(&mut rng, n);
            let spatial: Vec<f64> = soil
                .iter()
                .zip(&season_field)
                .map(|(a, b)| 0.8 * a + 0.6 * b)
                .collect();
            let level = BASE_YIELD + block.cultivar_offset + FERTILITY_GAIN * block.fertility as f64
                - CLIMATE_GAIN * anomaly;
            let target = Tensor::from_fn(&[n, n], |p| {
                (level + SPATIAL_GAIN * spatial[p] + PIXEL_NOISE * rng.normal()).max(1.0)
            });
            let climate = climate_series(&mut rng, anomaly, cfg.timesteps);
            let image = canopy_image(&mut rng, &spatial, &days, n, cfg.time_degenerate)?;
            for (crop_index, (img, tgt)) in make_patches(&image, &target, CROP_PX)?.into_iter().enumerate() {
                let sample = FieldSample {
                    image: img,
                    climate: climate.clone(),
                    context_text: block.text.clone(),
                    target: tgt,
                    block_id: block.id.clone(),
                    cultivar: block.cultivar.clone(),
                    year,
                    crop_index,
                    days: days.clone(),
                };
                let latent = SampleLatent {
                    fertility: block.fertility as f64,
                    climate_anomaly: anomaly,
                };
                out.push((sample, latent));
            }
        }
    }
    Ok(out)
}

pub fn generate_blocks(seed: u64, cfg: &GenConfig) -> Result<Vec<FieldSample>> {
    Ok(generate_with_latents(seed, cfg)?.into_iter().map(|(s, _)| s).collect())
}
