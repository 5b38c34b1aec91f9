use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{labeled_batch, LabeledDataset, TransformedBatch};
use crate::error::{Error, Result};
use crate::model::{
    build_attention_mask, dot, forward_with_head, head_loss_on_features, summary_features, AdamW, AdamWConfig,
    AttentionMaskSpec, EncoderInput, GradScope, Gradients, HeadKind, TinyModel,
};
use crate::objective_space::ReprTag;

/// `g_w[k] = −⟨aux_k, val⟩` and `g_λ = −⟨end_train, val⟩`.
pub fn meta_gradients(aux_grads: &[Vec<f64>], val_grad: &[f64], end_train_grad: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = val_grad.len();
    for g in aux_grads.iter().map(Vec::as_slice).chain(std::iter::once(end_train_grad)) {
        if g.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: g.len() });
        }
    }
    let g_w = aux_grads.iter().map(|g| -dot(g, val_grad)).collect();
    Ok((g_w, -dot(end_train_grad, val_grad)))
}

/// `λ_e · g_E + (1 − λ_e) · Σ_k w_k g_k`, accumulated in the given order.
pub fn combine_gradients(lambda_e: f64, end: &Gradients, aux: &[Gradients], weights: &[f64]) -> Gradients {
    let mut out = Gradients::zeros(&(0..end.len()).map(|i| end.get(i).dim()).collect::<Vec<_>>());
    out.add_scaled(lambda_e, end);
    for (g, &w) in aux.iter().zip(weights) {
        out.add_scaled((1.0 - lambda_e) * w, g);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DevHeadConfig {
    pub sample_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Continue from the previous fit instead of re-initializing the head.
    pub warm_start: bool,
}

impl Default for DevHeadConfig {
    fn default() -> Self {
        DevHeadConfig {
            sample_size: 32,
            iterations: 10,
            lr: 1e-2,
            weight_decay: 0.1,
            warm_start: true,
        }
    }
}

pub fn bidirectional_mask(seq_len: usize) -> Result<AttentionMaskSpec> {
    // Bidirectional masks draw nothing from the generator.
    let mut unused = crate::rng::stream(0, crate::rng::Stream::Mask);
    build_attention_mask(ReprTag::Bidirectional, seq_len, &mut unused)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DevHeadFit {
    pub batch: TransformedBatch,
    /// Loss before each step, then the final loss.
    pub losses: Vec<f64>,
}

/// Fits the dev head on a sample of `pool` with the body frozen.
pub fn train_dev_head<R: Rng + ?Sized>(
    model: &mut TinyModel,
    ds: &LabeledDataset,
    pool: &[usize],
    seq_len: usize,
    cfg: &DevHeadConfig,
    rng: &mut R,
) -> Result<DevHeadFit> {
    if pool.is_empty() {
        return Err(Error::InvalidInput("dev-head pool is empty".into()));
    }
    let indices: Vec<usize> = if pool.len() <= cfg.sample_size {
        if pool.len() < cfg.sample_size {
            log::debug!(
                "dev-head pool has {} examples, fewer than the sample size {}; using all",
                pool.len(),
                cfg.sample_size
            );
        }
        pool.to_vec()
    } else {
        let mut picked: Vec<usize> = rand::seq::index::sample(rng, pool.len(), cfg.sample_size)
            .into_iter()
            .map(|i| pool[i])
            .collect();
        picked.sort_unstable();
        picked
    };
    let batch = labeled_batch(ds, &indices, seq_len);
    let labels = match &batch.targets {
        crate::corpus::Targets::ClassLabel(y) => y.clone(),
        _ => unreachable!("labeled batches carry class labels"),
    };
    let mask = bidirectional_mask(seq_len)?;
    let features = summary_features(model, &EncoderInput::from_batch(&batch), &mask)?;

    model.ensure_head(HeadKind::Dev, rng);
    if !cfg.warm_start {
        model.reset_head(HeadKind::Dev, rng);
    }
    let head = model.head_params(HeadKind::Dev);
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let mut losses = Vec::with_capacity(cfg.iterations + 1);
    for _ in 0..cfg.iterations {
        let (loss, mut tape) = head_loss_on_features(model, HeadKind::Dev, &features, &labels)?;
        let grads = tape.backward()?;
        losses.push(loss);
        opt.step(&mut model.params, &grads, &head);
    }
    losses.push(head_loss_on_features(model, HeadKind::Dev, &features, &labels)?.0);
    Ok(DevHeadFit { batch, losses })
}

/// Body gradient of the end-task loss on `batch` scored through the dev head.
pub fn validation_gradient(model: &TinyModel, batch: &TransformedBatch) -> Result<(f64, Vec<f64>)> {
    let mask = bidirectional_mask(batch.seq_len())?;
    let (loss, mut tape) = forward_with_head(model, batch, &mask, HeadKind::Dev)?;
    let grads = tape.backward()?;
    Ok((loss, grads.flatten(&model.params, GradScope::BodyOnly)))
}
