//! Momentum SGD training with the poly schedule, two learning-rate tiers,
//! flip augmentation and frequency-based loss re-weighting.

pub mod metrics;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::data::{class_frequencies, Sample};
use crate::error::{Error, Result};
use crate::nn::{weighted_cross_entropy, OptimizerState};
use crate::rng;
use crate::segnet::{NetParams, Network, ParamGroup};
use crate::tensor::{FeatureMap, LabelMap, IGNORE_LABEL};

pub use metrics::{accumulate_confusion, evaluate, metrics_from_confusion, Metrics};

pub const POLY_POWER: f64 = 0.9;
/// Largest loss weight handed out by [`class_weights`].
pub const MAX_CLASS_WEIGHT: f64 = 16.0;
/// Cumulative frequency mass that counts as "frequent" classes.
pub const FREQUENT_MASS: f64 = 0.85;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_encoder: f64,
    /// Shared by the aggregation module, the dependency predictor and the decoder.
    pub lr_sca_decoder: f64,
    pub momentum: f64,
    pub poly_power: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub reweight: bool,
    /// Size of the rayon pool used for per-sample work inside a batch.
    pub threads: usize,
    /// Fraction of the training split held out for per-epoch validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_encoder: 1e-3,
            lr_sca_decoder: 1e-2,
            momentum: 0.9,
            poly_power: POLY_POWER,
            epochs: 50,
            batch_size: 3,
            seed: 0,
            reweight: true,
            threads: 1,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("lr_encoder", self.lr_encoder), ("lr_sca_decoder", self.lr_sca_decoder)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, format!("must be a finite non-negative rate, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", format!("must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.poly_power.is_finite() && self.poly_power > 0.0) {
            return Err(Error::config("poly_power", format!("must be positive, got {}", self.poly_power)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.threads == 0 {
            return Err(Error::config("threads", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction", format!("must lie in [0, 1), got {}", self.val_fraction)));
        }
        Ok(())
    }
}

/// Loss weights `w_i = 2^⌈log10(η / f_i)⌉`, clamped to `[1, 16]`.
///
/// `η` is the frequency of the last class needed, in descending frequency
/// order, to cover [`FREQUENT_MASS`] of all pixels. Absent classes get the
/// maximum weight. Frequencies are normalised first, so only ratios matter.
pub fn class_weights(freqs: &[f64]) -> Result<Vec<f64>> {
    if freqs.is_empty() {
        return Err(Error::data("class_weights: no classes"));
    }
    if let Some(bad) = freqs.iter().find(|f| !(f.is_finite() && **f >= 0.0)) {
        return Err(Error::data(format!("class_weights: invalid frequency {bad}")));
    }
    let total: f64 = freqs.iter().sum();
    if total <= 0.0 {
        return Err(Error::data("class_weights: all frequencies are zero"));
    }
    let norm: Vec<f64> = freqs.iter().map(|f| f / total).collect();
    let mut order: Vec<usize> = (0..norm.len()).collect();
    order.sort_by(|&a, &b| norm[b].total_cmp(&norm[a]));
    let mut cumulative = 0.0;
    let mut eta = norm[order[0]];
    for &c in &order {
        cumulative += norm[c];
        eta = norm[c];
        if cumulative >= FREQUENT_MASS - 1e-12 {
            break;
        }
    }
    Ok(norm
        .iter()
        .map(|&f| {
            if f == 0.0 {
                return MAX_CLASS_WEIGHT;
            }
            // The slack keeps exact powers of ten (η/f = 10) on the lower exponent.
            let exponent = ((eta / f).log10() - 1e-9).ceil();
            exponent.exp2().clamp(1.0, MAX_CLASS_WEIGHT)
        })
        .collect())
}

/// `base · (1 − iter / max_iter)^power`.
pub fn poly_lr_with_power(base: f64, iter: usize, max_iter: usize, power: f64) -> Result<f64> {
    if max_iter == 0 {
        return Err(Error::usage("poly_lr: max_iter must be positive"));
    }
    if iter > max_iter {
        return Err(Error::usage(format!("poly_lr: iteration {iter} exceeds max_iter {max_iter}")));
    }
    Ok(base * (1.0 - iter as f64 / max_iter as f64).powf(power))
}

/// [`poly_lr_with_power`] with the standard power 0.9.
pub fn poly_lr(base: f64, iter: usize, max_iter: usize) -> Result<f64> {
    poly_lr_with_power(base, iter, max_iter, POLY_POWER)
}

/// Mirrors columns: `c ↦ W − 1 − c` in both image and labels.
pub fn hflip(image: &FeatureMap, labels: &LabelMap) -> (FeatureMap, LabelMap) {
    (image.flip_horizontal(), labels.flip_horizontal())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub validation: Metrics,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<EpochRecord>,
    pub class_weights: Vec<f64>,
    /// Optimiser steps taken, equal to `epochs × batches per epoch`.
    pub iterations: usize,
}

/// Renders `history` as `epoch,mean_loss,ppa,caa,miou` with six decimals.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,mean_loss,ppa,caa,miou\n");
    for r in history {
        let v = &r.validation;
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.mean_loss, v.ppa, v.caa, v.miou
        )
        .expect("writing to a String");
    }
    out
}

const SPLIT_STREAM: u64 = 0x5e11;
const EPOCH_STREAM: u64 = 0xe90c;

/// Deterministic shuffle of `0..len` into (train, validation) index sets.
pub fn validation_split(len: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng::stream(seed, SPLIT_STREAM));
    let n_val = if len < 2 {
        0
    } else {
        ((len as f64 * fraction).round() as usize).min(len - 1)
    };
    let val = idx.split_off(len - n_val);
    (idx, val)
}

/// Loss and gradient of one sample; `loss` is the mean over its labelled pixels.
pub fn sample_gradient(net: &Network, sample: &Sample, weights: &[f64]) -> Result<(f64, NetParams)> {
    let pass = net.forward(&sample.image)?;
    let (loss, d_logits) = weighted_cross_entropy(&pass.logits, &sample.labels, weights, Some(IGNORE_LABEL))?;
    let grads = net.backward(&pass.cache, &d_logits)?;
    Ok((loss, grads))
}

/// Trains `net` on `samples` and returns the result with per-epoch history.
pub fn train(net: Network, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(net, samples, cfg, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    mut net: Network,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::data("cannot train on an empty dataset"));
    }
    let nc = net.config();
    for (k, s) in samples.iter().enumerate() {
        if s.image.dims() != (nc.input_height, nc.input_width, 3) {
            return Err(Error::shape(format!(
                "training sample {k} is {}, network expects {}x{}x3",
                s.image.shape_string(),
                nc.input_height,
                nc.input_width
            )));
        }
    }
    let classes = nc.classes;
    let (train_idx, val_idx) = validation_split(samples.len(), cfg.val_fraction, cfg.seed);
    let train_set: Vec<Sample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let val_set: Vec<Sample> = if val_idx.is_empty() {
        train_set.clone()
    } else {
        val_idx.iter().map(|&i| samples[i].clone()).collect()
    };
    let weights = if cfg.reweight {
        class_weights(&class_frequencies(&train_set, classes)?)?
    } else {
        vec![1.0; classes]
    };

    let batches = train_set.len().div_ceil(cfg.batch_size);
    let max_iter = cfg.epochs * batches;
    let sizes: Vec<usize> = net.params.tensors().iter().map(|t| t.data.len()).collect();
    let mut state = OptimizerState::new(&sizes, cfg.momentum)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::usage(format!("cannot start {} worker threads: {e}", cfg.threads)))?;
    let mut epoch_rng = rng::stream(cfg.seed, EPOCH_STREAM);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut epoch_rng);
        let flips: Vec<bool> = order.iter().map(|_| epoch_rng.gen_bool(0.5)).collect();
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let iteration = (epoch - 1) * batches + b;
            let batch: Vec<Sample> = chunk
                .iter()
                .zip(&flips[b * cfg.batch_size..])
                .map(|(&i, &flip)| {
                    if flip {
                        train_set[i].flip_horizontal()
                    } else {
                        train_set[i].clone()
                    }
                })
                .collect();
            let net_ref = &net;
            let results: Vec<(f64, NetParams)> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|s| sample_gradient(net_ref, s, &weights))
                    .collect::<Result<_>>()
            })?;
            let mut grad = net.params.zeros_like();
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                grad.add_assign(g);
            }
            let inv = 1.0 / batch.len() as f64;
            batch_loss *= inv;
            grad.scale(inv);
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    iteration: iteration + 1,
                    message: format!("batch loss is {batch_loss} in epoch {epoch}"),
                });
            }
            loss_sum += batch_loss;

            let lr_enc = poly_lr_with_power(cfg.lr_encoder, iteration, max_iter, cfg.poly_power)?;
            let lr_rest = poly_lr_with_power(cfg.lr_sca_decoder, iteration, max_iter, cfg.poly_power)?;
            let grad_views: Vec<&[f64]> = grad.tensors().into_iter().map(|t| t.data).collect();
            let mut param_views = net.params.tensors_mut();
            let lrs: Vec<f64> = param_views
                .iter()
                .map(|(group, _)| if *group == ParamGroup::Encoder { lr_enc } else { lr_rest })
                .collect();
            let mut slices: Vec<&mut [f64]> = param_views.iter_mut().map(|(_, p)| &mut **p).collect();
            state.step(&mut slices, &grad_views, &lrs)?;
            if net.params.tensors().iter().any(|t| t.data.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence {
                    iteration: iteration + 1,
                    message: "parameters became non-finite".to_string(),
                });
            }
        }
        let validation = pool.install(|| evaluate(&net, &val_set))?;
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / batches as f64,
            validation,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome {
        network: net,
        history,
        class_weights: weights,
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_examples() {
        // The first two classes cover 0.85 of the mass, so η is the second frequency.
        let w = class_weights(&[0.5, 0.35, 0.035, 0.007]).unwrap();
        assert_eq!(w, vec![1.0, 1.0, 2.0, 4.0]);
        let w = class_weights(&[0.9, 0.1, 0.0]).unwrap();
        assert_eq!(w, vec![1.0, 2.0, 16.0]);
        assert_eq!(class_weights(&[0.25; 4]).unwrap(), vec![1.0; 4]);
        assert!(class_weights(&[]).is_err());
        assert!(class_weights(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn schedule() {
        assert_eq!(poly_lr(0.01, 0, 100).unwrap(), 0.01);
        assert_eq!(poly_lr(0.01, 100, 100).unwrap(), 0.0);
        assert!((poly_lr(1.0, 50, 100).unwrap() - 0.5f64.powf(0.9)).abs() < 1e-12);
        assert!(matches!(poly_lr(1.0, 101, 100), Err(Error::Usage(_))));
    }

    #[test]
    fn flip_three_by_three() {
        let labels = LabelMap::from_vec(3, 3, vec![0, 1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        let (_, flipped) = hflip(&FeatureMap::zeros(3, 3, 3), &labels);
        assert_eq!(flipped.data(), &[2, 1, 0, 5, 4, 3, 8, 7, 6]);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (a, b) = validation_split(50, 0.1, 4);
        assert_eq!((a.len(), b.len()), (45, 5));
        assert_eq!(validation_split(50, 0.1, 4), (a.clone(), b.clone()));
        let mut all: Vec<usize> = a.into_iter().chain(b).collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(validation_split(1, 0.5, 0).1.len(), 0);
    }

    #[test]
    fn csv_format() {
        let m = metrics_from_confusion(vec![vec![3, 1], vec![2, 4]]).unwrap();
        let csv = history_csv(&[EpochRecord {
            epoch: 1,
            mean_loss: 0.5,
            validation: m,
        }]);
        assert_eq!(csv, "epoch,mean_loss,ppa,caa,miou\n1,0.500000,0.700000,0.708333,0.535714\n");
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "epochs"));
        let bad = TrainConfig { lr_encoder: -1.0, ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "lr_encoder"));
    }
}
