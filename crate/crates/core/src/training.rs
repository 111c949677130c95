//! Penalized autoencoder training.
//!
//! The loss is the mean squared reconstruction error of the batch plus the
//! weighted ℓ¹-norm of the encoded high-pass stacks:
//!
//!   E = (1/B)·Σ ‖decode(encode(x_i)) − x_i‖² + (μ/B)·Σ Σ_l w_l·‖ξ_l‖₁
//!
//! where ξ_l runs over the h/v/d stacks only — the coarse low-pass and the
//! bypass stacks are never penalized.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::image::{batch_tensor, Image};
use crate::io;
use crate::ndtensor::{BnMode, Tape, Tensor};
use crate::par;
use crate::phantoms::derive_seed;
use crate::tfunet::{
    apply_running_updates, decode_vars, encode_vars, register_params, NetworkParams, RunningUpdates,
};

/// One evaluated training loss with its gradients.
#[derive(Debug)]
pub struct LossEval {
    pub total: f64,
    /// (1/B)·Σ ‖reconstruction − input‖².
    pub mse_term: f64,
    /// (μ/B)·Σ_l w_l·(‖h_l‖₁ + ‖v_l‖₁ + ‖d_l‖₁) over the batch.
    pub penalty_term: f64,
    /// Gradients in [`NetworkParams::visit_trainable`] order.
    pub grads: Vec<Tensor>,
    /// Batch-norm running-stat updates of the forward pass.
    pub updates: RunningUpdates,
}

/// Evaluate the training loss and its parameter gradients on one batch.
pub fn loss(params: &NetworkParams, batch: &Tensor, mu: f64, level_weights: &[f64]) -> Result<LossEval> {
    let (value, grads, updates) = loss_inner(params, batch, mu, level_weights, true)?;
    let grads = grads.expect("gradients requested");
    Ok(LossEval { total: value.0, mse_term: value.1, penalty_term: value.2, grads, updates })
}

/// Loss value only (no backward pass), in the given batch-norm mode.
pub fn loss_value(
    params: &NetworkParams,
    batch: &Tensor,
    mu: f64,
    level_weights: &[f64],
    mode: BnMode,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let (total, mse, pen, _) = build_loss(&mut tape, params, batch, mu, level_weights, mode, None)?;
    Ok((tape.value(total).item(), mse, pen))
}

type LossParts = (f64, f64, f64);

fn loss_inner(
    params: &NetworkParams,
    batch: &Tensor,
    mu: f64,
    level_weights: &[f64],
    backward: bool,
) -> Result<(LossParts, Option<Vec<Tensor>>, RunningUpdates)> {
    let mut tape = Tape::new();
    let mut updates: RunningUpdates = Vec::new();
    let (total, mse, pen, vars) =
        build_loss(&mut tape, params, batch, mu, level_weights, BnMode::Train, Some(&mut updates))?;
    let total_v = tape.value(total).item();
    if !total_v.is_finite() {
        return Err(Error::NonFinite { context: format!("training loss (mse {mse:e}, penalty {pen:e})") });
    }
    let grads = if backward {
        let g = tape.backward(total)?;
        let mut out = Vec::new();
        vars.visit(|_, v| out.push(g.get_or_zeros(&tape, v)));
        Some(out)
    } else {
        None
    };
    Ok(((total_v, mse, pen), grads, updates))
}

fn build_loss(
    tape: &mut Tape,
    params: &NetworkParams,
    batch: &Tensor,
    mu: f64,
    level_weights: &[f64],
    mode: BnMode,
    mut updates: Option<&mut RunningUpdates>,
) -> Result<(crate::ndtensor::Var, f64, f64, crate::tfunet::NetVars)> {
    let (bsz, _, _, _) = batch.dims4()?;
    if bsz == 0 {
        return Err(Error::arg("loss", "empty batch"));
    }
    if level_weights.len() != params.arch.levels {
        return Err(Error::arg(
            "loss",
            format!("{} level weights for {} levels", level_weights.len(), params.arch.levels),
        ));
    }
    let xv = tape.leaf(batch.clone());
    let vars = register_params(tape, params);
    let pyr = encode_vars(tape, params, &vars, xv, mode, updates.as_deref_mut())?;
    let out = decode_vars(tape, params, &vars, &pyr, mode, updates.as_deref_mut())?;

    let neg_x = tape.scale(xv, -1.0);
    let diff = tape.add(out, neg_x)?;
    let sq = tape.l2_norm_squared(diff);
    let mse = tape.scale(sq, 1.0 / bsz as f64);

    let mut pen_acc = None;
    for (l, &(h, v, d)) in pyr.levels.iter().enumerate() {
        let lh = tape.l1_norm(h);
        let lv = tape.l1_norm(v);
        let ld = tape.l1_norm(d);
        let hv = tape.add(lh, lv)?;
        let hvd = tape.add(hv, ld)?;
        let weighted = tape.scale(hvd, level_weights[l]);
        pen_acc = Some(match pen_acc {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    let pen = tape.scale(pen_acc.expect("at least one level"), mu / bsz as f64);
    let total = tape.add(mse, pen)?;
    let mse_v = tape.value(mse).item();
    let pen_v = tape.value(pen).item();
    Ok((total, mse_v, pen_v, vars))
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// First/second moment accumulators, aligned with
/// [`NetworkParams::visit_trainable`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> AdamState {
        let mut sizes = Vec::new();
        params.visit_trainable(|_, _, t| sizes.push(t.numel()));
        AdamState {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update on a flat parameter slice.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        param[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Apply Adam to every trainable tensor. `grads` must follow
/// [`NetworkParams::visit_trainable`] order.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    let mut count = 0;
    params.visit_trainable(|_, _, _| count += 1);
    if grads.len() != count || state.m.len() != count {
        return Err(Error::arg(
            "adam_step",
            format!("{} gradients / {} slots for {count} parameters", grads.len(), state.m.len()),
        ));
    }
    state.step += 1;
    let step = state.step;
    let mut idx = 0;
    let mut shape_err = None;
    params.visit_trainable_mut(|name, t| {
        let g = &grads[idx];
        if g.shape() != t.shape() {
            shape_err.get_or_insert_with(|| {
                Error::shape("adam_step", format!("gradient for {name}: {:?} vs {:?}", g.shape(), t.shape()))
            });
        } else {
            let (m, v) = (&mut state.m[idx], &mut state.v[idx]);
            t.update_data(|p| adam_update(p, g.data(), m, v, step, lr, beta1, beta2, eps));
        }
        idx += 1;
    });
    match shape_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

// ---------------------------------------------------------------------------
// Epoch loop
// ---------------------------------------------------------------------------

/// Per-epoch log row (the metrics CSV mirrors these fields).
#[derive(Clone, Copy, Debug)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean per-pixel squared reconstruction error over the validation set.
    pub val_mse: f64,
    /// Mean |coefficient| over the penalized (h/v/d) stacks of the
    /// validation set.
    pub mean_l1: f64,
}

pub const METRICS_CSV_HEADER: &str = "epoch,train_loss,val_loss,val_mse,mean_l1";

pub fn metrics_csv_row(m: &EpochMetrics) -> String {
    format!("{},{:e},{:e},{:e},{:e}", m.epoch, m.train_loss, m.val_loss, m.val_mse, m.mean_l1)
}

pub struct TrainOutcome {
    pub params: NetworkParams,
    pub adam: AdamState,
    pub metrics: Vec<EpochMetrics>,
}

/// Mid-training state for resuming.
pub struct ResumeState {
    pub params: NetworkParams,
    pub adam: AdamState,
    pub next_epoch: usize,
}

/// Run the epoch loop.
///
/// Data is reshuffled every epoch with a permutation derived from
/// (seed, epoch), so a resumed run walks the identical batch sequence.
/// Validation runs in eval mode with the current running statistics.
pub fn train(
    cfg: &TrainConfig,
    train_set: &[Image],
    val_set: &[Image],
    start: Option<ResumeState>,
    checkpoint_dir: Option<&Path>,
    progress: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::arg("train", "empty training set"));
    }
    let mu = cfg.mu.resolve(train_set.len());
    let weights = cfg.effective_level_weights()?;

    let (mut params, mut adam, first_epoch) = match start {
        Some(s) => (s.params, s.adam, s.next_epoch),
        None => {
            let p = crate::tfunet::init_params(&cfg.arch, cfg.seed)?;
            let a = AdamState::new(&p);
            (p, a, 0)
        }
    };

    let n = train_set.len();
    let mut metrics = Vec::new();
    for epoch in first_epoch..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64 + 1));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let views: Vec<&Image> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = batch_tensor(&views)?;
            let eval = loss(&params, &batch, mu, &weights).map_err(|e| match e {
                Error::NonFinite { .. } => Error::NonFiniteLoss { epoch, batch: batch_idx, value: f64::NAN },
                other => other,
            })?;
            loss_sum += eval.total * chunk.len() as f64;
            apply_running_updates(&mut params, eval.updates);
            adam_step(&mut params, &eval.grads, &mut adam, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)?;
        }
        let train_loss = loss_sum / n as f64;

        let row = validate_epoch(&params, val_set, mu, &weights, epoch, train_loss)?;
        if !row.val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: usize::MAX, value: row.val_loss });
        }
        progress(&row);
        metrics.push(row);

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs {
                save_checkpoint(&dir.join(format!("epoch-{:04}", epoch + 1)), &params, &adam, epoch + 1)?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(&dir.join("final"), &params, &adam, cfg.epochs)?;
    }
    Ok(TrainOutcome { params, adam, metrics })
}

fn validate_epoch(
    params: &NetworkParams,
    val_set: &[Image],
    mu: f64,
    weights: &[f64],
    epoch: usize,
    train_loss: f64,
) -> Result<EpochMetrics> {
    if val_set.is_empty() {
        return Ok(EpochMetrics { epoch, train_loss, val_loss: 0.0, val_mse: 0.0, mean_l1: 0.0 });
    }
    // (loss, sq_err, pixels, l1_sum, coef_count) per image, eval mode.
    let rows: Vec<Result<(f64, f64, usize, f64, usize)>> = par::map_indexed(val_set.len(), |i| {
        let img = &val_set[i];
        let x = img.to_tensor();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let vars = register_params(&mut tape, params);
        let pyr = encode_vars(&mut tape, params, &vars, xv, BnMode::Eval, None)?;
        let out = decode_vars(&mut tape, params, &vars, &pyr, BnMode::Eval, None)?;
        let sq: f64 = tape
            .value(out)
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let mut l1_sum = 0.0;
        let mut count = 0usize;
        let mut pen = 0.0;
        for (l, &(h, v, d)) in pyr.levels.iter().enumerate() {
            let mut lsum = 0.0;
            for var in [h, v, d] {
                let t = tape.value(var);
                lsum += t.data().iter().map(|v| v.abs()).sum::<f64>();
                count += t.numel();
            }
            l1_sum += lsum;
            pen += weights[l] * lsum;
        }
        Ok((sq + mu * pen, sq, img.pixels(), l1_sum, count))
    });
    let mut loss_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut px = 0usize;
    let mut l1 = 0.0;
    let mut coefs = 0usize;
    for r in rows {
        let (l, s, p, a, c) = r?;
        loss_sum += l;
        sq_sum += s;
        px += p;
        l1 += a;
        coefs += c;
    }
    Ok(EpochMetrics {
        epoch,
        train_loss,
        val_loss: loss_sum / val_set.len() as f64,
        val_mse: sq_sum / px as f64,
        mean_l1: l1 / coefs as f64,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const OPTIMIZER_MANIFEST: &str = "optimizer.json";
pub const OPTIMIZER_BLOB: &str = "optimizer.bin";

/// Write weights + optimizer state into `dir`.
pub fn save_checkpoint(dir: &Path, params: &NetworkParams, adam: &AdamState, next_epoch: usize) -> Result<()> {
    io::save_weights(dir, params)?;
    let mut records: Vec<(String, String, Tensor)> = Vec::new();
    let mut idx = 0;
    params.visit_trainable(|name, _, t| {
        records.push((format!("m.{name}"), "adam_m".into(), Tensor::from_raw(t.shape().to_vec(), adam.m[idx].clone())));
        records.push((format!("v.{name}"), "adam_v".into(), Tensor::from_raw(t.shape().to_vec(), adam.v[idx].clone())));
        idx += 1;
    });
    let meta = serde_json::json!({ "step": adam.step, "next_epoch": next_epoch });
    io::save_tensor_blob(&dir.join(OPTIMIZER_MANIFEST), &dir.join(OPTIMIZER_BLOB), "optimizer", meta, &records)
}

/// Load a checkpoint for resuming.
pub fn load_checkpoint(dir: &Path) -> Result<ResumeState> {
    let params = io::load_weights(dir)?;
    let (manifest, records) =
        io::load_tensor_blob(&dir.join(OPTIMIZER_MANIFEST), &dir.join(OPTIMIZER_BLOB), "optimizer")?;
    let step = manifest.meta.get("step").and_then(|v| v.as_u64()).ok_or(Error::Codec {
        format: "manifest",
        offset: 0,
        detail: "optimizer manifest missing step".into(),
    })?;
    let next_epoch = manifest.meta.get("next_epoch").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    let mut by_name: std::collections::HashMap<String, Vec<f64>> =
        records.into_iter().map(|r| (r.name, r.data)).collect();
    let mut adam = AdamState::new(&params);
    adam.step = step;
    let mut idx = 0;
    let mut missing = None;
    params.visit_trainable(|name, _, _| {
        match (by_name.remove(&format!("m.{name}")), by_name.remove(&format!("v.{name}"))) {
            (Some(m), Some(v)) => {
                adam.m[idx] = m;
                adam.v[idx] = v;
            }
            _ => {
                missing.get_or_insert_with(|| name.to_string());
            }
        }
        idx += 1;
    });
    if let Some(name) = missing {
        return Err(Error::WeightsMismatch { detail: format!("optimizer state missing for {name}") });
    }
    Ok(ResumeState { params, adam, next_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MuSetting;
    use crate::phantoms;
    use crate::tfunet::{autoencode, init_params, ArchConfig};

    fn tiny_cfg(bypass: bool) -> TrainConfig {
        let mut cfg = TrainConfig::reference(bypass);
        cfg.arch = ArchConfig { levels: 2, base_channels: 2, channel_growth: 2, kernel_size: 3, bypass };
        cfg.image_size = 16;
        cfg.epochs = 3;
        cfg.batch_size = 4;
        cfg.seed = 11;
        cfg
    }

    fn tiny_sets(n_train: usize, n_val: usize, size: usize) -> (Vec<Image>, Vec<Image>) {
        (
            phantoms::generate_dataset(n_train, size, 100).unwrap(),
            phantoms::generate_dataset(n_val, size, 200).unwrap(),
        )
    }

    #[test]
    fn mu_zero_reduces_to_pure_mse() {
        let arch = ArchConfig { levels: 2, base_channels: 2, channel_growth: 2, kernel_size: 3, bypass: true };
        let params = init_params(&arch, 3).unwrap();
        let (train_set, _) = tiny_sets(4, 1, 16);
        let views: Vec<&Image> = train_set.iter().collect();
        let batch = batch_tensor(&views).unwrap();
        let eval = loss(&params, &batch, 0.0, &[0.5, 0.25]).unwrap();
        assert_eq!(eval.penalty_term, 0.0);
        assert_eq!(eval.total, eval.mse_term);
    }

    #[test]
    fn zero_batch_with_zero_bias_params_has_zero_loss() {
        let arch = ArchConfig { levels: 2, base_channels: 2, channel_growth: 2, kernel_size: 3, bypass: false };
        let params = init_params(&arch, 5).unwrap(); // biases and betas are zero
        let batch = Tensor::zeros(vec![2, 1, 16, 16]);
        let eval = loss(&params, &batch, 1e-3, &[0.5, 0.25]).unwrap();
        assert_eq!(eval.total, 0.0);
        assert_eq!(eval.mse_term, 0.0);
        assert_eq!(eval.penalty_term, 0.0);
    }

    #[test]
    fn penalty_covers_exactly_the_highpass_stacks() {
        let arch = ArchConfig { levels: 2, base_channels: 2, channel_growth: 2, kernel_size: 3, bypass: true };
        let params = init_params(&arch, 7).unwrap();
        let (train_set, _) = tiny_sets(3, 1, 16);
        let views: Vec<&Image> = train_set.iter().collect();
        let batch = batch_tensor(&views).unwrap();
        let mu = 0.37;
        let w = [0.5, 0.25];
        let eval = loss(&params, &batch, mu, &w).unwrap();

        // Independent recomputation from the encoded pyramid: weighted l1 of
        // h/v/d only, averaged over the batch. Uses the same train-mode
        // statistics by re-running the forward pass.
        let mut tape = Tape::new();
        let xv = tape.leaf(batch.clone());
        let vars = register_params(&mut tape, &params);
        let pyr = encode_vars(&mut tape, &params, &vars, xv, BnMode::Train, None).unwrap();
        let mut expected = 0.0;
        for (l, &(h, v, d)) in pyr.levels.iter().enumerate() {
            let mut lsum = 0.0;
            for var in [h, v, d] {
                lsum += tape.value(var).data().iter().map(|v| v.abs()).sum::<f64>();
            }
            expected += w[l] * lsum;
        }
        expected *= mu / 3.0;
        assert!((eval.penalty_term - expected).abs() < 1e-12 * expected.max(1.0));
        assert!(eval.penalty_term > 0.0);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = [1.0];
        let mut m = [0.0];
        let mut v = [0.0];
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, 1e-3, 0.9, 0.999, 1e-8);
        // Bias-corrected m̂/√v̂ = 1 on the first step.
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-8, "p = {}", p[0]);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let arch = ArchConfig { levels: 1, base_channels: 2, channel_growth: 2, kernel_size: 3, bypass: false };
        let mut params = init_params(&arch, 9).unwrap();
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let mut grads = Vec::new();
        params.visit_trainable(|_, _, t| grads.push(Tensor::zeros(t.shape().to_vec())));
        adam_step(&mut params, &grads, &mut state, 1e-3, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let cfg = tiny_cfg(true);
        let (train_set, val_set) = tiny_sets(8, 2, 16);
        let a = train(&cfg, &train_set, &val_set, None, None, &mut |_| {}).unwrap();
        let b = train(&cfg, &train_set, &val_set, None, None, &mut |_| {}).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.adam.m, b.adam.m);
        for (ra, rb) in a.metrics.iter().zip(&b.metrics) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.val_loss.to_bits(), rb.val_loss.to_bits());
        }
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let mut cfg = tiny_cfg(false);
        cfg.epochs = 4;
        let (train_set, val_set) = tiny_sets(8, 2, 16);
        let full = train(&cfg, &train_set, &val_set, None, None, &mut |_| {}).unwrap();

        let mut cfg_half = cfg.clone();
        cfg_half.epochs = 2;
        let half = train(&cfg_half, &train_set, &val_set, None, None, &mut |_| {}).unwrap();

        // Through the checkpoint files.
        let dir = std::env::temp_dir().join(format!("tfsynth-ckpt-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        save_checkpoint(&dir, &half.params, &half.adam, 2).unwrap();
        let resume = load_checkpoint(&dir).unwrap();
        assert_eq!(resume.next_epoch, 2);
        let resumed = train(&cfg, &train_set, &val_set, Some(resume), None, &mut |_| {}).unwrap();
        assert_eq!(full.params, resumed.params);
        assert_eq!(full.adam.m, resumed.adam.m);
        assert_eq!(full.adam.step, resumed.adam.step);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn large_mu_collapses_highpass_coefficients() {
        let mut cfg = tiny_cfg(false);
        cfg.arch.levels = 1;
        cfg.epochs = 40;
        cfg.learning_rate = 2e-2;
        let (train_set, val_set) = tiny_sets(8, 2, 16);

        let mean_coef = |cfg: &TrainConfig| -> f64 {
            let out = train(cfg, &train_set, &val_set, None, None, &mut |_| {}).unwrap();
            let mut sum = 0.0;
            let mut count = 0usize;
            for img in &val_set {
                let (_, pyr) = autoencode(&out.params, &img.to_tensor(), BnMode::Eval).unwrap();
                for l in &pyr.levels {
                    for t in [&l.h, &l.v, &l.d] {
                        sum += t.data().iter().map(|v| v.abs()).sum::<f64>();
                        count += t.numel();
                    }
                }
            }
            sum / count as f64
        };

        let mut cfg_plain = cfg.clone();
        cfg_plain.mu = MuSetting::Fixed(0.0);
        let base = mean_coef(&cfg_plain);
        let mut cfg_sparse = cfg;
        cfg_sparse.mu = MuSetting::Fixed(1e3);
        let sparse = mean_coef(&cfg_sparse);
        assert!(
            sparse * 10.0 <= base,
            "mean |coef| with mu=1e3 is {sparse:e}, with mu=0 is {base:e}"
        );
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let arch = ArchConfig { levels: 1, base_channels: 2, channel_growth: 2, kernel_size: 3, bypass: false };
        let mut params = init_params(&arch, 13).unwrap();
        // Corrupt the output stage: downstream of every ReLU, so the NaN
        // reaches the loss instead of being masked to zero.
        params.output.weight.update_data(|d| d[0] = f64::NAN);
        let batch = Tensor::filled(vec![1, 1, 8, 8], 0.5).unwrap();
        match loss(&params, &batch, 0.0, &[0.5]) {
            Err(Error::NonFinite { context }) => assert!(context.contains("loss"), "{context}"),
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn validation_improves_on_a_small_run() {
        let mut cfg = tiny_cfg(true);
        cfg.epochs = 12;
        cfg.learning_rate = 1e-2;
        let (train_set, val_set) = tiny_sets(16, 4, 16);
        let out = train(&cfg, &train_set, &val_set, None, None, &mut |_| {}).unwrap();
        assert!(out.metrics.iter().all(|m| m.val_loss.is_finite()));
        let first = out.metrics.first().unwrap().val_mse;
        let last = out.metrics.last().unwrap().val_mse;
        assert!(last < first, "val mse {first} -> {last}");
    }
}
