//! End-to-end training with Adam and a per-step cosine schedule.

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::corruptions::{augment, AugmentSpec};
use crate::data::{Dataset, CLASSES};
use crate::enhancer::Enhancer;
use crate::error::{config_err, Error, Result};
use crate::eval::evaluate;
use crate::image::Image;
use crate::model::{Model, ModelShape};
use crate::par::{self, Exec};
use crate::rng::{stream, Stream};
use crate::softhist::HistogramConfig;
use crate::tonecurve::MonoConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a fixed list of tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            cfg,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Arity {
                op: "adam",
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[k].len() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `lr0 · ½(1 + cos(π·step/total))`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    0.5 * lr0 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    pub seed: u64,
    pub enhancer: Enhancer,
    pub adam: AdamConfig,
    pub head_hidden: usize,
    pub hypernet_hidden: usize,
    pub histogram: HistogramConfig,
    pub mono_grid: usize,
    /// `None` disables augmentation.
    pub augment: Option<AugmentSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 1024,
            lr: 1e-3,
            lambda: 10.0,
            seed: 42,
            enhancer: Enhancer::GcArt,
            adam: AdamConfig::default(),
            head_hidden: 128,
            hypernet_hidden: 32,
            histogram: HistogramConfig::default(),
            mono_grid: 32,
            augment: Some(AugmentSpec::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(config_err("epochs and batch size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.head_hidden == 0 || self.hypernet_hidden == 0 {
            return Err(config_err("hidden widths must be positive"));
        }
        self.histogram.validate()?;
        self.mono().validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    pub fn mono(&self) -> MonoConfig {
        MonoConfig {
            grid: self.mono_grid,
            lambda: self.lambda,
        }
    }

    pub fn model_shape(&self, input: [usize; 3]) -> ModelShape {
        ModelShape {
            input,
            head_hidden: self.head_hidden,
            classes: CLASSES,
            hypernet_hidden: self.hypernet_hidden,
            histogram: self.histogram,
            mono: self.mono(),
        }
    }
}

/// Per-epoch training record. Losses are sample-weighted means over the epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub ce: f64,
    pub mono: f64,
    pub lr_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_acc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights after the final epoch.
    pub model: Model,
    pub log: Vec<EpochLog>,
}

/// Trains from a fresh initialization. The result depends only on the
/// config, the data and the seed, not on `exec`.
pub fn train(config: &TrainConfig, data: &Dataset, eval: Option<&Dataset>, exec: Exec) -> Result<TrainOutcome> {
    config.validate()?;
    let first = data.images.first().ok_or(Error::EmptyDataset)?;
    let mut model = Model::init(config.enhancer, &config.model_shape(first.shape()), config.seed)?;
    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let mut adam = Adam::new(config.adam, &sizes);
    let n = data.len();
    let per_epoch = n.div_ceil(config.batch_size);
    let total = config.epochs * per_epoch;
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(config.seed, Stream::Shuffle { epoch: epoch as u64 }));
        let (mut ce_sum, mut mono_sum) = (0.0, 0.0);
        let mut lr = config.lr;
        for batch in order.chunks(config.batch_size) {
            let images: Vec<Image> = par::map(batch, exec, |&i| match &config.augment {
                Some(spec) => {
                    let mut rng = stream(
                        config.seed,
                        Stream::Augment {
                            epoch: epoch as u64,
                            sample: i as u64,
                        },
                    );
                    augment(&data.images[i], spec, &mut rng)
                }
                None => data.images[i].clone(),
            });
            let labels: Vec<u8> = batch.iter().map(|&i| data.labels[i]).collect();

            let mut tape = Tape::new();
            let parts = model.loss(&mut tape, &images, &labels, true, exec)?;
            let grads = tape.backward(parts.total)?;
            let grads: Vec<Tensor> = parts
                .forward
                .vars
                .all()
                .into_iter()
                .map(|v| grads.get_or_zeros(v, &tape))
                .collect();
            let bs = batch.len() as f64;
            ce_sum += bs * scalar(&tape, parts.ce)?;
            if let Some(m) = parts.mono {
                mono_sum += bs * scalar(&tape, m)?;
            }
            lr = cosine_lr(step, total, config.lr);
            adam.step(&mut model.tensors_mut(), &grads, lr)?;
            step += 1;
        }
        let ce = ce_sum / n as f64;
        let mono = mono_sum / n as f64;
        let eval_acc = eval.map(|ds| evaluate(&model, ds, None, exec)).transpose()?;
        let entry = EpochLog {
            epoch: epoch + 1,
            train_loss: ce + config.lambda * mono,
            ce,
            mono,
            lr_end: lr,
            eval_acc,
        };
        info!(
            "epoch {}/{}: loss {:.5} (ce {:.5}, mono {:.3e}){}",
            entry.epoch,
            config.epochs,
            entry.train_loss,
            ce,
            mono,
            eval_acc.map(|a| format!(", eval {a:.2}%")).unwrap_or_default()
        );
        log.push(entry);
    }
    Ok(TrainOutcome { model, log })
}

fn scalar(tape: &Tape, v: crate::autodiff::Var) -> Result<f64> {
    tape.value(v)
        .item()
        .ok_or_else(|| Error::NonScalarLoss(tape.shape(v).to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3), 1e-3);
        assert!((cosine_lr(50, 100, 1e-3) - 5e-4).abs() < 1e-18);
        assert!(cosine_lr(100, 100, 1e-3).abs() < 1e-18);
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        let mut p = Tensor::from_vec(vec![1.0, 1.0, 1.0]);
        let g = Tensor::from_vec(vec![0.5, -2.0, 0.0]);
        let mut adam = Adam::new(AdamConfig::default(), &[3]);
        adam.step(&mut [&mut p], &[g], 0.1).unwrap();
        let d = p.data();
        assert!((d[0] - 0.9).abs() < 1e-7);
        assert!((d[1] - 1.1).abs() < 1e-7);
        assert_eq!(d[2], 1.0);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradients_leave_weights_unchanged() {
        let mut p = Tensor::from_vec(vec![0.3, -0.7]);
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &[2]);
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Tensor::zeros(vec![2])], 1e-3).unwrap();
        }
        assert_eq!(p, before);
    }

    fn small_config(enhancer: Enhancer) -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            head_hidden: 16,
            enhancer,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_exec_independent() {
        let data = synthetic(40, 1);
        let cfg = small_config(Enhancer::GcArt);
        let a = train(&cfg, &data, None, Exec::Parallel).unwrap();
        let b = train(&cfg, &data, None, Exec::Sequential).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        assert!(a.log.iter().all(|e| e.train_loss > 0.0 && e.train_loss.is_finite()));
    }

    #[test]
    fn classical_front_end_trains_head_only() {
        let data = synthetic(20, 2);
        let out = train(&small_config("he".parse().unwrap()), &data, Some(&data), Exec::Parallel).unwrap();
        assert!(out.model.gcart.is_none());
        assert!(out.log.iter().all(|e| e.mono == 0.0 && e.eval_acc.is_some()));
    }

    #[test]
    fn rejects_bad_config() {
        let data = synthetic(4, 0);
        for cfg in [
            TrainConfig { epochs: 0, ..small_config(Enhancer::None) },
            TrainConfig { lr: -1.0, ..small_config(Enhancer::None) },
            TrainConfig { mono_grid: 1, ..small_config(Enhancer::GcArt) },
        ] {
            assert!(train(&cfg, &data, None, Exec::Sequential).is_err());
        }
        assert!(train(&small_config(Enhancer::None), &Dataset::default(), None, Exec::Sequential).is_err());
    }
}
