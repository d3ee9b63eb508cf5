//! Synthetic vineyard data, preprocessing and block-hold-out splitting.

mod generate;
mod norm;
mod split;
mod store;
mod zones;

use crate::error::{dim_err, param_err, Error, Result};
use crate::tensor::Tensor;

pub use generate::{generate_blocks, generate_with_latents, GenConfig, SampleLatent, CULTIVARS};
pub use norm::NormStats;
pub use split::{split_bho, Split, SplitManifest};
pub use store::{load_dataset, save_dataset, MANIFEST_FILE};
pub use zones::{
    apply_yieldzone, classify_yield_zones, csr_weights, csr_weights_for_values, YieldBucket, ZoneMap,
    ZoneThresholds,
};

/// Image channel order.
pub const CHANNEL_NAMES: [&str; 7] = ["S2-R", "S2-G", "S2-B", "S2-NIR", "S1-VV", "S1-VH", "DOY"];
pub const N_CHANNELS: usize = 7;
pub const DOY_CHANNEL: usize = 6;
/// Climate column order: Tmin °C, Tmax °C, precipitation mm, vapour pressure kPa.
pub const CLIMATE_NAMES: [&str; 4] = ["Tmin", "Tmax", "Prcp", "VP"];
pub const N_CLIMATE: usize = 4;
pub const CROP_PX: usize = 16;

/// Cyclical day-of-year encoding `sin(2π·day/365)`.
pub fn encode_doy(day_of_year: u32) -> Result<f64> {
    if !(1..=365).contains(&day_of_year) {
        return Err(param_err!("day of year {day_of_year} outside 1..=365"));
    }
    Ok((std::f64::consts::TAU * day_of_year as f64 / 365.0).sin())
}

/// One crop of one block in one season.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    /// T×C×H×W
    pub image: Tensor,
    /// T×4
    pub climate: Tensor,
    pub context_text: String,
    /// H×W, t/ha
    pub target: Tensor,
    pub block_id: String,
    pub cultivar: String,
    pub year: u32,
    /// Row-major crop position within the block's field.
    pub crop_index: usize,
    /// Observation day-of-year per timestep.
    pub days: Vec<u32>,
}

impl FieldSample {
    pub fn timesteps(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[3]
    }

    /// Checks every structural and value invariant of a sample.
    pub fn validate(&self, timesteps: usize) -> Result<()> {
        let s = self.image.shape();
        if s.len() != 4 || s[0] != timesteps || s[1] != N_CHANNELS {
            return Err(dim_err!("image shape {s:?}, expected [{timesteps}, {N_CHANNELS}, H, W]"));
        }
        let (h, w) = (s[2], s[3]);
        if self.target.shape() != [h, w] {
            return Err(dim_err!("target shape {:?} vs image {h}×{w}", self.target.shape()));
        }
        if self.climate.shape() != [timesteps, N_CLIMATE] {
            return Err(dim_err!("climate shape {:?}", self.climate.shape()));
        }
        if self.days.len() != timesteps {
            return Err(dim_err!("{} observation days for {timesteps} steps", self.days.len()));
        }
        if !self.image.all_finite() || !self.climate.all_finite() || !self.target.all_finite() {
            return Err(Error::Data(format!("{}: non-finite values", self.block_id)));
        }
        let plane = h * w;
        for (t, &day) in self.days.iter().enumerate() {
            let doy = encode_doy(day)?;
            let off = (t * N_CHANNELS + DOY_CHANNEL) * plane;
            if self.image.data()[off..off + plane].iter().any(|&v| v != doy) {
                return Err(Error::Data(format!("{}: DOY channel of step {t} is not {doy}", self.block_id)));
            }
        }
        for row in self.climate.data().chunks(N_CLIMATE) {
            if row[0] > row[1] {
                return Err(Error::Data(format!("{}: Tmin {} > Tmax {}", self.block_id, row[0], row[1])));
            }
        }
        if self.target.data().iter().any(|&y| y < 0.0) {
            return Err(Error::Data(format!("{}: negative yield", self.block_id)));
        }
        Ok(())
    }

    pub fn mean_target(&self) -> f64 {
        self.target.data().iter().sum::<f64>() / self.target.len() as f64
    }
}

/// Non-overlapping `size`×`size` tiling of a field image (T×C×H×W) and its
/// yield map (H×W). Crops are emitted row-major (left to right, then top to
/// bottom); trailing rows/columns that do not fill a crop are dropped.
pub fn make_patches(image: &Tensor, target: &Tensor, size: usize) -> Result<Vec<(Tensor, Tensor)>> {
    let s = image.shape();
    if s.len() != 4 {
        return Err(dim_err!("field image must be T×C×H×W, got {s:?}"));
    }
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    if target.shape() != [h, w] {
        return Err(dim_err!("target {:?} does not match field {h}×{w}", target.shape()));
    }
    if size == 0 || h < size || w < size {
        return Err(param_err!("field {h}×{w} smaller than crop size {size}"));
    }
    let mut crops = Vec::new();
    for r0 in (0..=h - size).step_by(size) {
        for c0 in (0..=w - size).step_by(size) {
            let img = Tensor::from_fn(&[t, c, size, size], |i| {
                let (tc, rem) = (i / (size * size), i % (size * size));
                let (r, col) = (rem / size, rem % size);
                image.data()[(tc * h + r0 + r) * w + c0 + col]
            });
            let tgt = Tensor::from_fn(&[size, size], |i| {
                target.data()[(r0 + i / size) * w + c0 + i % size]
            });
            crops.push((img, tgt));
        }
    }
    Ok(crops)
}

/// A generated or loaded dataset with its block-hold-out split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub config: GenConfig,
    pub samples: Vec<FieldSample>,
    pub split: SplitManifest,
}

impl Dataset {
    pub fn synthesize(seed: u64, config: GenConfig) -> Result<Self> {
        let samples = generate_blocks(seed, &config)?;
        let mut blocks: Vec<(String, String)> = samples
            .iter()
            .map(|s| (s.block_id.clone(), s.cultivar.clone()))
            .collect();
        blocks.dedup();
        let split = split_bho(&blocks, seed)?;
        Ok(Self {
            seed,
            config,
            samples,
            split,
        })
    }

    pub fn samples_in(&self, split: Split) -> Vec<&FieldSample> {
        self.samples
            .iter()
            .filter(|s| self.split.split_of(&s.block_id) == Some(split))
            .collect()
    }

    pub fn timesteps(&self) -> usize {
        self.config.timesteps
    }
}
