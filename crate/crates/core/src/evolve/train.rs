//! Training data, augmentation and the seeded training loops.
//!
//! Schedule: Adam (0.9, 0.999), minibatches of `batch_size` drawn from a
//! per-epoch seeded shuffle; learning rate constant for the first half of the
//! epochs, then linear decay to 10% at the last epoch. Fine-tuning uses the
//! same loop followed by the exact proximal map of the anchor penalty
//! `w * |p - p_old|^2` after every Adam step, so arbitrarily large anchors
//! stay stable.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gru::{backward, forward, sample_loss, Normalization, RecurrentPredictor, N_PARAMS, SEQ_LEN};
use super::FeatureVec;
use crate::error::{PemError, Result};
use crate::geom::wrap_angle;

/// A window of `SEQ_LEN` consecutive `(dt, feature)` samples and the next one.
/// `dt` is the time since the previous sample (the first entry's is unused).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub seq: Vec<(f64, FeatureVec)>,
    pub target_dt: f64,
    pub target: FeatureVec,
}

impl TrainSample {
    pub fn validate(&self) -> Result<()> {
        if self.seq.len() != SEQ_LEN {
            return Err(PemError::InvalidParameter(format!("sample window has {} entries, expected {SEQ_LEN}", self.seq.len())));
        }
        if self.seq[1..].iter().any(|s| !(s.0 > 0.0)) || !(self.target_dt > 0.0) {
            return Err(PemError::InvalidParameter("sample time steps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub max_rotation_rad: f64,
    pub max_translation_us: f64,
    pub scale_range: (f64, f64),
    /// Unambiguous delay range; translated delays are kept inside it.
    pub max_delay_us: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { max_rotation_rad: PI, max_translation_us: 0.1, scale_range: (0.5, 2.0), max_delay_us: 1.28 }
    }
}

/// Applies an explicit rotation (azimuth offset), translation (delay offset,
/// us) and time scale.
pub fn augment_with(sample: &TrainSample, rotation: f64, translation_us: f64, scale: f64) -> TrainSample {
    let tf = |f: &FeatureVec| -> FeatureVec { [f[0] + translation_us, wrap_angle(f[1] + rotation), f[2], f[3]] };
    TrainSample {
        seq: sample.seq.iter().map(|(dt, f)| (dt * scale, tf(f))).collect(),
        target_dt: sample.target_dt * scale,
        target: tf(&sample.target),
    }
}

/// Random rotation, translation and time scale drawn from `seed`. The
/// translation is clipped so every delay stays in `[0, max_delay_us)`.
pub fn augment(sample: &TrainSample, seed: u64, cfg: &AugmentConfig) -> TrainSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rot = if cfg.max_rotation_rad > 0.0 { rng.gen_range(-cfg.max_rotation_rad..=cfg.max_rotation_rad) } else { 0.0 };
    let mut shift = if cfg.max_translation_us > 0.0 { rng.gen_range(-cfg.max_translation_us..=cfg.max_translation_us) } else { 0.0 };
    let (lo, hi) = cfg.scale_range;
    let scale = if hi > lo { (rng.gen_range(lo.ln()..=hi.ln())).exp() } else { lo };
    let delays = sample.seq.iter().map(|s| s.1[0]).chain(std::iter::once(sample.target[0]));
    let (dmin, dmax) = delays.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| (a.min(d), b.max(d)));
    shift = shift.clamp(-dmin, (cfg.max_delay_us - dmax - 1e-9).max(-dmin));
    augment_with(sample, rot, shift, scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    pub augment_cfg: AugmentConfig,
    pub validation_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            learning_rate: 3e-3,
            batch_size: 32,
            seed: 0,
            augment: true,
            augment_cfg: AugmentConfig::default(),
            validation_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub predictor: RecurrentPredictor,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let (c1, c2) = (1.0 - B1.powi(self.t), 1.0 - B2.powi(self.t));
        for i in 0..p.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g[i] * g[i];
            p[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Mean normalized loss of `pred` on `data`.
pub fn evaluate(pred: &RecurrentPredictor, data: &[TrainSample]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let total: f64 = data
        .iter()
        .map(|s| {
            let out = pred.rates_normalized(&s.seq);
            let (delta, tau) = pred.norm.target(&s.seq[SEQ_LEN - 1].1, &s.target, s.target_dt);
            sample_loss(&out, &delta, tau).0
        })
        .sum();
    total / data.len() as f64
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ a.wrapping_mul(0xBF58_476D_1CE4_E5B9) ^ b.wrapping_mul(0x94D0_49BB_1331_11EB)
}

fn split(dataset: &[TrainSample], cfg: &TrainConfig) -> (Vec<TrainSample>, Vec<TrainSample>) {
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, 1, 0)));
    let n_val = ((dataset.len() as f64 * cfg.validation_frac).round() as usize).min(dataset.len().saturating_sub(1));
    let val = idx[..n_val].iter().map(|&i| dataset[i].clone()).collect();
    let tr = idx[n_val..].iter().map(|&i| dataset[i].clone()).collect();
    (tr, val)
}

fn run(
    mut pred: RecurrentPredictor,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
    anchor: Option<(&[f64], f64)>,
) -> Result<TrainReport> {
    for s in train_set {
        s.validate()?;
    }
    let initial = evaluate(&pred, train_set);
    let mut adam = Adam::new(N_PARAMS);
    let mut grad = vec![0.0; N_PARAMS];
    let mut train_curve = Vec::with_capacity(cfg.epochs);
    let mut val_curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let batch = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        let half = cfg.epochs / 2;
        let lr = if epoch < half || cfg.epochs <= 1 {
            cfg.learning_rate
        } else {
            let frac = (epoch - half) as f64 / (cfg.epochs - 1 - half).max(1) as f64;
            cfg.learning_rate * (1.0 - 0.9 * frac)
        };
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, 2, epoch as u64)));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                let aug;
                let s = if cfg.augment {
                    aug = augment(&train_set[i], mix(cfg.seed, 3 + epoch as u64, i as u64), &cfg.augment_cfg);
                    &aug
                } else {
                    &train_set[i]
                };
                let xs = pred.norm.inputs(&s.seq);
                let (out, trace) = forward(&pred.params, &xs);
                let (delta, tau) = pred.norm.target(&s.seq[SEQ_LEN - 1].1, &s.target, s.target_dt);
                let (loss, d_out) = sample_loss(&out, &delta, tau);
                epoch_loss += loss;
                backward(&pred.params, &trace, &d_out, &mut grad);
            }
            let inv = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            adam.step(&mut pred.params, &grad, lr);
            if let Some((old, w)) = anchor {
                // argmin_q |q - p|^2 / (2 lr) + w |q - old|^2
                let a = 2.0 * w * lr;
                for (p, o) in pred.params.iter_mut().zip(old) {
                    *p = (*p + a * o) / (1.0 + a);
                }
            }
        }
        epoch_loss /= train_set.len() as f64;
        if !epoch_loss.is_finite() || epoch_loss > 10.0 * initial.max(1e-12) {
            return Err(PemError::Diverged { epoch, loss: epoch_loss, initial });
        }
        train_curve.push(epoch_loss);
        val_curve.push(evaluate(&pred, val_set));
    }
    let final_loss = evaluate(&pred, train_set);
    Ok(TrainReport { predictor: pred, initial_loss: initial, final_loss, train_curve, val_curve })
}

/// Trains a fresh predictor; normalization is fitted on the un-augmented
/// training split and frozen.
pub fn train(dataset: &[TrainSample], cfg: &TrainConfig) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(PemError::InvalidParameter("training set is empty".into()));
    }
    let (tr, val) = split(dataset, cfg);
    let norm = Normalization::fit(tr.iter().map(|s| s.seq.as_slice()));
    run(RecurrentPredictor::init(norm, mix(cfg.seed, 4, 0)), &tr, &val, cfg, None)
}

/// Fine-tunes on new data with a quadratic anchor to the current parameters.
/// Normalization stays frozen.
pub fn continual_finetune(pred: &RecurrentPredictor, new_data: &[TrainSample], anchor_weight: f64, cfg: &TrainConfig) -> Result<TrainReport> {
    if !(anchor_weight >= 0.0) {
        return Err(PemError::InvalidParameter("anchor weight must be >= 0".into()));
    }
    if new_data.is_empty() {
        return Err(PemError::InvalidParameter("fine-tuning set is empty".into()));
    }
    let (tr, val) = split(new_data, cfg);
    let old = pred.params.clone();
    let anchor = (anchor_weight > 0.0).then_some((old.as_slice(), anchor_weight));
    run(pred.clone(), &tr, &val, cfg, anchor)
}

/// CSV with columns `sample,step,dt_s,delay_us,az_rad,el_rad,log_amp`; step
/// `SEQ_LEN` holds the target.
pub fn write_samples_csv<W: Write>(w: W, samples: &[TrainSample]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["sample", "step", "dt_s", "delay_us", "az_rad", "el_rad", "log_amp"])?;
    for (i, s) in samples.iter().enumerate() {
        let rows = s.seq.iter().copied().chain(std::iter::once((s.target_dt, s.target)));
        for (step, (dt, f)) in rows.enumerate() {
            wr.write_record(&[
                i.to_string(),
                step.to_string(),
                dt.to_string(),
                f[0].to_string(),
                f[1].to_string(),
                f[2].to_string(),
                f[3].to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(r: R) -> Result<Vec<TrainSample>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    let mut cur: Vec<(f64, FeatureVec)> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| PemError::Format("short sample row".into()))?
                .parse::<f64>()
                .map_err(|e| PemError::Format(format!("bad number in sample row: {e}")))
        };
        let step = num(1)? as usize;
        if step != cur.len() {
            return Err(PemError::Format(format!("sample rows out of order at step {step}")));
        }
        let f: FeatureVec = [num(3)?, num(4)?, num(5)?, num(6)?];
        if step == SEQ_LEN {
            out.push(TrainSample { seq: std::mem::take(&mut cur), target_dt: num(2)?, target: f });
        } else {
            cur.push((num(2)?, f));
        }
    }
    if !cur.is_empty() {
        return Err(PemError::Format("trailing incomplete sample".into()));
    }
    Ok(out)
}
