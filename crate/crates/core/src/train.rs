//! Loss, batch sampling and the training loop (plain, cost-sensitive
//! resampling, and yield-zone conditional training).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    apply_yieldzone, classify_yield_zones, csr_weights, Dataset, FieldSample, NormStats, Split, ZoneThresholds,
};
use crate::error::{dim_err, param_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::metrics::summarize;
use crate::model::{forward, ModalityMask, Model, ModelInput};
use crate::optim::{AdamW, AdamWState};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use crate::dataset::apply_yieldzone as yieldzone;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "plain")]
    Plain,
    #[serde(rename = "csr")]
    Csr,
    #[serde(rename = "yieldzone")]
    YieldZone,
    #[serde(rename = "yieldzone+csr")]
    YieldZoneCsr,
}

impl Strategy {
    pub fn resamples(self) -> bool {
        matches!(self, Strategy::Csr | Strategy::YieldZoneCsr)
    }

    pub fn uses_zones(self) -> bool {
        matches!(self, Strategy::YieldZone | Strategy::YieldZoneCsr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub use_climate: bool,
    pub use_context: bool,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    pub zone_thresholds: ZoneThresholds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamW::default();
        Self {
            lr: opt.lr,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            weight_decay: opt.weight_decay,
            max_epochs: 300,
            early_stop_patience: 50,
            batch_size: 16,
            seed: 0,
            strategy: Strategy::Plain,
            use_climate: true,
            use_context: true,
            grad_clip: 1.0,
            zone_thresholds: ZoneThresholds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(param_err!("batch_size must be at least 1"));
        }
        if self.max_epochs == 0 || self.early_stop_patience > self.max_epochs {
            return Err(param_err!(
                "need 1 ≤ max_epochs and patience ({}) ≤ max_epochs ({})",
                self.early_stop_patience,
                self.max_epochs
            ));
        }
        if !(self.lr >= 0.0) || !(self.grad_clip > 0.0) {
            return Err(param_err!("lr must be ≥ 0 and grad_clip > 0"));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn modality_mask(&self) -> ModalityMask {
        ModalityMask {
            use_climate: self.use_climate,
            use_context: self.use_context,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mape: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the lowest validation loss.
    pub best_epoch: usize,
    pub seed: u64,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch].val_loss
    }

    /// `epoch,train_loss,val_loss,val_mape` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_mape\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.val_mape);
        }
        s
    }
}

/// Mean squared error of T weekly maps against one H×W target broadcast
/// over the weeks.
pub fn mse_loss(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    let s = g.shape(pred).to_vec();
    if s.len() != 3 || target.shape() != &s[1..] {
        return Err(dim_err!("prediction {s:?} vs target {:?}", target.shape()));
    }
    let neg = Tensor::from_fn(&s, |i| -target.data()[i % target.len()]);
    let diff = g.add_const(pred, &neg)?;
    let sq = g.mul(diff, diff)?;
    g.mean(sq)
}

/// `batch_size` i.i.d. draws with replacement from `n` items, uniform or
/// proportional to `weights`.
pub fn sample_batch(n: usize, weights: Option<&[f64]>, batch_size: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Usage("cannot sample from an empty set".into()));
    }
    let Some(w) = weights else {
        return Ok((0..batch_size).map(|_| rng.below(n)).collect());
    };
    if w.len() != n {
        return Err(dim_err!("{} weights for {n} items", w.len()));
    }
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &x in w {
        if !(x >= 0.0) {
            return Err(param_err!("negative or NaN sampling weight {x}"));
        }
        acc += x;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(param_err!("sampling weights sum to {acc}"));
    }
    Ok((0..batch_size)
        .map(|_| {
            let u = rng.next_f64() * acc;
            cdf.partition_point(|&c| c <= u).min(n - 1)
        })
        .collect())
}

/// A sample ready for the network, with its standardized target.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub input: ModelInput,
    pub target: Tensor,
}

impl Prepared {
    pub fn new(sample: &FieldSample, model: &Model) -> Self {
        let target = Tensor::from_fn(sample.target.shape(), |i| {
            model.norm.normalize_target(sample.target.data()[i])
        });
        Self {
            input: ModelInput::from_sample(sample, &model.norm, &model.config),
            target,
        }
    }
}

const KEY_EPOCH: u64 = 0xE0;
const KEY_DROPOUT: u64 = 0xD0;

/// Optimizer state bound to a model.
pub struct Trainer {
    pub model: Model,
    opt: AdamW,
    state: AdamWState,
    clip: f64,
}

impl Trainer {
    pub fn new(model: Model, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let state = AdamWState::new(model.params.tensors());
        Ok(Self {
            model,
            opt: cfg.optimizer(),
            state,
            clip: cfg.grad_clip,
        })
    }

    /// Mean loss and mean gradient (in parameter order) over a batch.
    /// `rngs` supplies one dropout stream per sample when training.
    pub fn loss_and_grads(&self, batch: &[&Prepared], rngs: Option<&mut [Rng]>) -> Result<(f64, Vec<Tensor>)> {
        let params = &self.model.params;
        let mut grads: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        let mut total = 0.0;
        let training = rngs.is_some();
        let mut fallback = Rng::new(0);
        let mut rngs = rngs;
        for (k, item) in batch.iter().enumerate() {
            let rng = match rngs.as_deref_mut() {
                Some(r) => &mut r[k],
                None => &mut fallback,
            };
            let mut g = Graph::new();
            let pred = forward(&mut g, params, &self.model.config, &item.input, self.model.mask, rng, training)?;
            let loss = mse_loss(&mut g, pred, &item.target)?;
            let l = g.value(loss).item();
            total += l;
            g.backward(loss)?;
            for (idx, var) in g.param_vars() {
                let gr = g.grad(var).expect("parameter leaf");
                for (a, b) in grads[idx].data_mut().iter_mut().zip(gr.data()) {
                    *a += b;
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for gr in &mut grads {
            for v in gr.data_mut() {
                *v *= inv;
            }
        }
        Ok((total * inv, grads))
    }

    /// Inference-mode mean loss over a batch.
    pub fn loss(&self, batch: &[&Prepared]) -> Result<f64> {
        let mut total = 0.0;
        let mut rng = Rng::new(0);
        for item in batch {
            let mut g = Graph::inference();
            let pred = forward(&mut g, &self.model.params, &self.model.config, &item.input, self.model.mask, &mut rng, false)?;
            let loss = mse_loss(&mut g, pred, &item.target)?;
            total += g.value(loss).item();
        }
        Ok(total / batch.len() as f64)
    }

    /// Clips the gradient to the configured global norm and applies AdamW.
    pub fn apply(&mut self, mut grads: Vec<Tensor>) -> Result<()> {
        let norm = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > self.clip {
            let s = self.clip / norm;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= s;
                }
            }
        }
        self.opt.step(self.model.params.tensors_mut(), &grads, &mut self.state)
    }

    /// One optimizer step on a batch; returns the batch loss before the step.
    pub fn step(&mut self, batch: &[&Prepared], rngs: Option<&mut [Rng]>) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(batch, rngs)?;
        self.apply(grads)?;
        Ok(loss)
    }
}

fn first_bad_param(model: &Model, grads: &[Tensor]) -> Option<String> {
    grads
        .iter()
        .position(|g| !g.all_finite())
        .map(|i| model.params.name(i).to_string())
}

/// Mean normalized loss and pooled final-week MAPE (t/ha) over a set.
pub fn evaluate_loss(model: &Model, samples: &[&FieldSample], prepared: &[Prepared]) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    let mut rng = Rng::new(0);
    for (s, p) in samples.iter().zip(prepared) {
        let mut g = Graph::inference();
        let out = forward(&mut g, &model.params, &model.config, &p.input, model.mask, &mut rng, false)?;
        let loss = mse_loss(&mut g, out, &p.target)?;
        total += g.value(loss).item();
        let maps = g.value(out).data();
        let plane = s.target.len();
        let last = &maps[maps.len() - plane..];
        pred.extend(last.iter().map(|&z| model.norm.denormalize_target(z)));
        truth.extend_from_slice(s.target.data());
    }
    let mape = summarize(&pred, &truth)?.mape;
    Ok((total / samples.len() as f64, mape))
}

/// Trains `model` on `train` with early stopping on `val` MSE and returns
/// the parameters of the best validation epoch.
pub fn train_on(
    model: Model,
    train: &[&FieldSample],
    val: &[&FieldSample],
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training needs non-empty train and val sets".into()));
    }
    let mut model = model;
    model.mask = cfg.modality_mask();
    let prepared: Vec<Prepared> = train
        .iter()
        .map(|s| -> Result<Prepared> {
            if cfg.strategy.uses_zones() {
                let zones = classify_yield_zones(&s.target, cfg.zone_thresholds)?;
                Ok(Prepared::new(&apply_yieldzone(s, &zones)?, &model))
            } else {
                Ok(Prepared::new(s, &model))
            }
        })
        .collect::<Result<_>>()?;
    let val_prepared: Vec<Prepared> = val.iter().map(|s| Prepared::new(s, &model)).collect();
    let weights = cfg.strategy.resamples().then(|| csr_weights(train, cfg.zone_thresholds));

    let mut trainer = Trainer::new(model, cfg)?;
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        seed: cfg.seed,
    };
    let mut best_params = trainer.model.params.clone();
    let mut since_best = 0usize;
    let n = prepared.len();
    for epoch in 0..cfg.max_epochs {
        let mut rng = Rng::derive(cfg.seed, &[KEY_EPOCH, epoch as u64]);
        let order = match &weights {
            Some(w) => sample_batch(n, Some(w), n, &mut rng)?,
            None => {
                let mut o: Vec<usize> = (0..n).collect();
                rng.shuffle(&mut o);
                o
            }
        };
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            let mut rngs: Vec<Rng> = (0..batch.len())
                .map(|k| Rng::derive(cfg.seed, &[KEY_DROPOUT, epoch as u64, b as u64, k as u64]))
                .collect();
            let (loss, grads) = trainer.loss_and_grads(&batch, Some(&mut rngs))?;
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                let param = first_bad_param(&trainer.model, &grads).unwrap_or_else(|| "<none>".into());
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} at epoch {epoch}, batch {b}; first non-finite gradient: {param}"
                )));
            }
            trainer.apply(grads)?;
            loss_sum += loss * batch.len() as f64;
        }
        let (val_loss, val_mape) = evaluate_loss(&trainer.model, val, &val_prepared)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n as f64,
            val_loss,
            val_mape,
        });
        if epoch == 0 || val_loss < history.best_val_loss() {
            history.best_epoch = epoch;
            best_params = trainer.model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.early_stop_patience {
            break;
        }
    }
    let mut model = trainer.model;
    model.params = best_params;
    Ok((model, history))
}

/// Fits normalization on the train split, initializes a model from
/// `model_seed` and trains it on the dataset's train/val splits.
pub fn train(
    config: crate::model::ModelConfig,
    model_seed: u64,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    let train = dataset.samples_in(Split::Train);
    let val = dataset.samples_in(Split::Val);
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("dataset split has an empty train or val set".into()));
    }
    let norm = NormStats::fit(&train)?;
    let model = Model::new(config, model_seed, norm, cfg.modality_mask())?;
    train_on(model, &train, &val, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_known_values() {
        let mut g = Graph::new();
        let target = Tensor::from_fn(&[2, 2], |i| i as f64);
        let same = g.constant(Tensor::from_fn(&[3, 2, 2], |i| (i % 4) as f64));
        let l = mse_loss(&mut g, same, &target).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let off = g.constant(Tensor::from_fn(&[3, 2, 2], |i| (i % 4) as f64 + 1.0));
        let l = mse_loss(&mut g, off, &target).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        let bad = g.constant(Tensor::zeros(&[3, 2, 3]));
        assert!(matches!(mse_loss(&mut g, bad, &target), Err(Error::Dimension(_))));
    }

    #[test]
    fn sampling_edge_cases() {
        let mut rng = Rng::new(1);
        assert!(sample_batch(0, None, 4, &mut rng).is_err());
        let only = sample_batch(4, Some(&[1.0, 0.0, 0.0, 0.0]), 1000, &mut rng).unwrap();
        assert!(only.iter().all(|&i| i == 0));
        let a = sample_batch(10, None, 50, &mut Rng::new(5)).unwrap();
        assert_eq!(a, sample_batch(10, None, 50, &mut Rng::new(5)).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { early_stop_patience: 400, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let s: Strategy = serde_json::from_str("\"yieldzone+csr\"").unwrap();
        assert_eq!(s, Strategy::YieldZoneCsr);
    }
}
