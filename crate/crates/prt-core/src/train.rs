//! Training loop for the transfer MLP: adaptive-moment optimizer,
//! seeded shuffling, deterministic gradient reduction, and per-epoch
//! loss reporting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bake::TransferDataset;
use crate::error::{Error, Result};
use crate::math::mix_seed;
use crate::mlp::{
    loss_and_grad, positional_encode, zero_gradients, ForwardScratch, Gradients, MlpConfig,
    MlpModel,
};

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Fraction of records held out up front for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8192,
            epochs: 200,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::input("batch size must be at least 1"));
        }
        if self.epochs < 1 {
            return Err(Error::input("epoch count must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::input("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::input("moment decays must lie in [0,1)"));
        }
        if !(0.0..=0.5).contains(&self.val_fraction) {
            return Err(Error::input("validation fraction must lie in [0, 0.5]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_l1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_l1: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_count: usize,
    pub val_count: usize,
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_train_l1(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_l1)
    }

    pub fn final_val_l1(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.val_l1)
    }
}

/// Adaptive-moment optimizer state (one slot per parameter).
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> AdamState {
        AdamState { m: zero_gradients(model), v: zero_gradients(model), t: 0 }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        };
        for (li, layer) in model.layers.iter_mut().enumerate() {
            update(&mut layer.w, &grads[li].w, &mut self.m[li].w, &mut self.v[li].w);
            update(&mut layer.b, &grads[li].b, &mut self.m[li].b, &mut self.v[li].b);
        }
    }
}

fn axpy_gradients(into: &mut Gradients, from: &Gradients, weight: f64) {
    for (a, b) in into.iter_mut().zip(from) {
        for (x, y) in a.w.iter_mut().zip(&b.w) {
            *x += weight * y;
        }
        for (x, y) in a.b.iter_mut().zip(&b.b) {
            *x += weight * y;
        }
    }
}

/// Batch loss/gradients with a deterministic parallel reduction: the
/// batch is cut into fixed chunks, per-chunk gradients are computed in
/// parallel, and the partial results are folded in chunk order so the
/// floating-point sum never depends on scheduling.
pub fn batched_loss_and_grad(
    model: &MlpModel,
    inputs: &[f64],
    targets: &[f64],
    grads: &mut Gradients,
) -> Result<f64> {
    const CHUNK: usize = 512;
    let in_dim = model.encoded_dim();
    let batch = inputs.len() / in_dim;
    if batch <= CHUNK {
        return loss_and_grad(model, inputs, targets, grads);
    }
    let out_dim = model.out_dim();
    let n_chunks = batch.div_ceil(CHUNK);
    let parts: Vec<Result<(f64, Gradients, usize)>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(batch);
            let mut g = zero_gradients(model);
            let l = loss_and_grad(
                model,
                &inputs[lo * in_dim..hi * in_dim],
                &targets[lo * out_dim..hi * out_dim],
                &mut g,
            )?;
            Ok((l, g, hi - lo))
        })
        .collect();
    for g in grads.iter_mut() {
        g.w.fill(0.0);
        g.b.fill(0.0);
    }
    let mut total = 0.0;
    for part in parts {
        let (l, g, n) = part?;
        let w = n as f64 / batch as f64;
        total += l * w;
        axpy_gradients(grads, &g, w);
    }
    Ok(total)
}

/// Mean l1 over a set of record indices, forward only.
fn eval_l1(
    model: &MlpModel,
    inputs: &[f64],
    targets: &[f64],
    indices: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let in_dim = model.encoded_dim();
    let out_dim = model.out_dim();
    let sums: Vec<Result<f64>> = indices
        .par_chunks(1024)
        .map(|chunk| {
            let mut scratch = ForwardScratch::default();
            let mut out = vec![0.0; out_dim];
            let mut sum = 0.0;
            for &ri in chunk {
                model.forward_encoded(&inputs[ri * in_dim..(ri + 1) * in_dim], &mut scratch, &mut out)?;
                for (p, t) in out.iter().zip(&targets[ri * out_dim..(ri + 1) * out_dim]) {
                    sum += (p - t).abs();
                }
            }
            Ok(sum)
        })
        .collect();
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    Ok(total / (indices.len() * out_dim) as f64)
}

/// Canonical record order: lexicographic by position, normal, then
/// coefficients, so training is invariant to the order records arrive
/// in.
fn canonical_order(dataset: &TransferDataset) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dataset.records.len()).collect();
    idx.sort_by(|&a, &b| {
        let ra = &dataset.records[a];
        let rb = &dataset.records[b];
        let ka = [ra.position.x, ra.position.y, ra.position.z, ra.normal.x, ra.normal.y, ra.normal.z];
        let kb = [rb.position.x, rb.position.y, rb.position.z, rb.normal.x, rb.normal.y, rb.normal.z];
        for (x, y) in ka.iter().zip(&kb) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        for (x, y) in ra.transfer.coeffs.iter().zip(&rb.transfer.coeffs) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });
    idx
}

pub fn train(
    dataset: &TransferDataset,
    mlp_cfg: &MlpConfig,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    mlp_cfg.validate()?;
    cfg.validate()?;
    if dataset.records.is_empty() {
        return Err(Error::input("dataset has no records"));
    }
    let mut model = MlpModel::init(mlp_cfg, dataset.norm, dataset.scale, dataset.order, cfg.seed)?;
    let n = dataset.records.len();
    let in_dim = model.encoded_dim();
    let out_dim = model.out_dim();

    // Encode every record once, in canonical order.
    let order = canonical_order(dataset);
    let mut inputs = vec![0.0; n * in_dim];
    let mut targets = vec![0.0; n * out_dim];
    let inv_scale = 1.0 / dataset.scale;
    let encode_results: Vec<Result<()>> = inputs
        .par_chunks_mut(in_dim)
        .zip(targets.par_chunks_mut(out_dim))
        .zip(order.par_iter())
        .map(|((enc, tgt), &ri)| {
            let rec = &dataset.records[ri];
            positional_encode(
                dataset.norm.to_unit(rec.position),
                rec.normal.normalized(),
                &model.pe,
                enc,
            )?;
            for (t, &c) in tgt.iter_mut().zip(&rec.transfer.coeffs) {
                *t = c * inv_scale;
            }
            Ok(())
        })
        .collect();
    for r in encode_results {
        r?;
    }

    // Hold the validation split out up front.
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, u64::MAX));
    perm.shuffle(&mut rng);
    let n_val = ((cfg.val_fraction * n as f64).round() as usize).min(n - 1);
    let (val_idx, rest) = perm.split_at(n_val);
    let mut train_idx: Vec<usize> = rest.to_vec();
    let val_idx: Vec<usize> = val_idx.to_vec();

    let mut adam = AdamState::new(&model);
    let mut grads = zero_gradients(&model);
    let max_batch = cfg.batch_size.min(train_idx.len());
    let mut batch_in = vec![0.0; max_batch * in_dim];
    let mut batch_tg = vec![0.0; max_batch * out_dim];
    let mut report = TrainReport { train_count: train_idx.len(), val_count: val_idx.len(), epochs: Vec::new() };

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64));
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let bn = batch.len();
            for (row, &ri) in batch.iter().enumerate() {
                batch_in[row * in_dim..(row + 1) * in_dim]
                    .copy_from_slice(&inputs[ri * in_dim..(ri + 1) * in_dim]);
                batch_tg[row * out_dim..(row + 1) * out_dim]
                    .copy_from_slice(&targets[ri * out_dim..(ri + 1) * out_dim]);
            }
            let loss = batched_loss_and_grad(
                &model,
                &batch_in[..bn * in_dim],
                &batch_tg[..bn * out_dim],
                &mut grads,
            )
            .map_err(|e| Error::data(format!("training diverged at epoch {epoch}: {e}")))?;
            if !loss.is_finite() {
                return Err(Error::data(format!("training diverged at epoch {epoch}")));
            }
            loss_sum += loss * bn as f64;
            adam.step(&mut model, &grads, cfg);
        }
        let train_l1 = loss_sum / train_idx.len() as f64;
        let val_l1 = if val_idx.is_empty() {
            None
        } else {
            Some(eval_l1(&model, &inputs, &targets, &val_idx)?)
        };
        report.epochs.push(EpochStats { train_l1, val_l1 });
    }
    Ok((model, report))
}
